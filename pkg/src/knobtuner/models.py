"""Learning primitives shared across stages.

Random-forest regression with impurity-based feature importance drives
knob selection and the coarse-stage surrogate; PCA with standardization
compresses the internal-metric state for the RL critic. Both are written
against plain numpy so fits are deterministic for a fixed seed and
serialize to JSON for run resumability.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

FEATURE_RULES = ("all", "sqrt", "third")

# relative floor below which a split's SSE reduction is treated as noise
_SPLIT_EPS = 1e-12


@dataclass(frozen=True)
class ForestSpec:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: str = "all"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.features_per_split not in FEATURE_RULES:
            raise ValueError(f"features_per_split must be one of {FEATURE_RULES}")

    def n_features_to_scan(self, d: int) -> int:
        if self.features_per_split == "all":
            return d
        if self.features_per_split == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, d // 3)


@dataclass
class Tree:
    """Flat-array regression tree; feature == -1 marks a leaf."""
    feature: np.ndarray   # int32
    threshold: np.ndarray  # float64
    left: np.ndarray      # int32
    right: np.ndarray     # int32
    value: np.ndarray     # float64 (leaf mean; undefined at internal nodes)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            interior = feat >= 0
            if not interior.any():
                break
            rows = np.where(interior)[0]
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node]

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(
            feature=np.asarray(obj["feature"], dtype=np.int32),
            threshold=np.asarray(obj["threshold"], dtype=float),
            left=np.asarray(obj["left"], dtype=np.int32),
            right=np.asarray(obj["right"], dtype=np.int32),
            value=np.asarray(obj["value"], dtype=float),
        )


@dataclass
class ForestModel:
    trees: list
    importances: np.ndarray  # normalized to sum 1 when any split exists
    degenerate: bool         # constant target: no variance to explain
    spec: ForestSpec
    training_fingerprint: str

    @property
    def n_features(self) -> int:
        return len(self.importances)

    def to_json(self) -> dict:
        return {
            "trees": [t.to_json() for t in self.trees],
            "importances": self.importances.tolist(),
            "degenerate": self.degenerate,
            "spec": {
                "n_trees": self.spec.n_trees,
                "max_depth": self.spec.max_depth,
                "min_samples_leaf": self.spec.min_samples_leaf,
                "features_per_split": self.spec.features_per_split,
                "bootstrap": self.spec.bootstrap,
                "seed": self.spec.seed,
            },
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ForestModel":
        return cls(
            trees=[Tree.from_json(t) for t in obj["trees"]],
            importances=np.asarray(obj["importances"], dtype=float),
            degenerate=bool(obj["degenerate"]),
            spec=ForestSpec(**obj["spec"]),
            training_fingerprint=obj["training_fingerprint"],
        )


class _TreeBuilder:
    def __init__(self, X, y, spec: ForestSpec, rng: np.random.Generator):
        self.X = X
        self.y = y
        self.spec = spec
        self.rng = rng
        self.d = X.shape[1]
        self.n_scan = spec.n_features_to_scan(self.d)
        self.importance = np.zeros(self.d)
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def build(self, idx: np.ndarray) -> Tree:
        self._grow(idx, depth=0)
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=float),
        )

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        node = self._new_node()
        yn = self.y[idx]
        mean = float(yn.mean())
        self.value[node] = mean
        m = len(idx)
        if m < 2 * self.spec.min_samples_leaf:
            return node
        if self.spec.max_depth is not None and depth >= self.spec.max_depth:
            return node
        parent_sse = float(((yn - mean) ** 2).sum())
        if parent_sse <= 0.0:
            return node
        # feature subset is drawn before the split scan so the RNG stream
        # depends only on tree structure, not on X's scale
        if self.n_scan >= self.d:
            feats = np.arange(self.d)
        else:
            feats = np.sort(self.rng.choice(self.d, size=self.n_scan, replace=False))
        found = self._best_split(idx, yn, feats, parent_sse)
        if found is None:
            return node
        feat, thr, reduction, left_idx, right_idx = found
        self.importance[feat] += reduction / len(self.y)
        self.feature[node] = int(feat)
        self.threshold[node] = float(thr)
        self.left[node] = self._grow(left_idx, depth + 1)
        self.right[node] = self._grow(right_idx, depth + 1)
        return node

    def _best_split(self, idx, yn, feats, parent_sse):
        m = len(idx)
        Xn = self.X[np.ix_(idx, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        ys = yn[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum(ys * ys, axis=0)
        total = csum[-1, 0]
        total_sq = csq[-1, 0]
        k = np.arange(1, m, dtype=float)[:, None]
        left_sum, left_sq = csum[:-1, :], csq[:-1, :]
        sse_left = left_sq - left_sum ** 2 / k
        sse_right = (total_sq - left_sq) - (total - left_sum) ** 2 / (m - k)
        reduction = parent_sse - (sse_left + sse_right)
        valid = xs[1:, :] > xs[:-1, :]
        if self.spec.min_samples_leaf > 1:
            sizes_ok = (k >= self.spec.min_samples_leaf) & \
                       (m - k >= self.spec.min_samples_leaf)
            valid &= sizes_ok
        reduction = np.where(valid, reduction, -np.inf)
        # feature-major argmax: ties resolve to the lowest feature index,
        # then the lowest threshold
        flat = int(np.argmax(reduction.T))
        best = reduction.T.flat[flat]
        if not np.isfinite(best) or best <= _SPLIT_EPS * parent_sse:
            return None
        fi, pos = divmod(flat, m - 1)
        thr = 0.5 * (xs[pos, fi] + xs[pos + 1, fi])
        left_idx = idx[order[: pos + 1, fi]]
        right_idx = idx[order[pos + 1:, fi]]
        return feats[fi], thr, float(best), left_idx, right_idx


def _data_fingerprint(X: np.ndarray, y: np.ndarray, spec: ForestSpec) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    h.update(repr(spec).encode())
    return h.hexdigest()[:16]


def forest_fit(spec: ForestSpec, X, y) -> ForestModel:
    """Fit a regression forest; importances are per-feature SSE reduction
    (sample-weighted) summed over all trees and normalized to sum 1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be an (n, d) matrix")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite entries in training data")

    trees = []
    raw_importance = np.zeros(d)
    for t in range(spec.n_trees):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((spec.seed, t))))
        if spec.bootstrap:
            idx = np.sort(rng.integers(0, n, size=n))
        else:
            idx = np.arange(n)
        builder = _TreeBuilder(X, y, spec, rng)
        trees.append(builder.build(idx))
        raw_importance += builder.importance

    total = float(raw_importance.sum())
    degenerate = total <= 0.0
    importances = raw_importance / total if not degenerate else np.zeros(d)
    return ForestModel(
        trees=trees,
        importances=importances,
        degenerate=degenerate,
        spec=spec,
        training_fingerprint=_data_fingerprint(X, y, spec),
    )


def forest_predict(model: ForestModel, x) -> float:
    """Mean of per-tree leaf predictions for a single point."""
    return float(forest_predict_batch(model, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def forest_predict_batch(model: ForestModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"x has {X.shape[1]} features, model expects {model.n_features}")
    per_tree = np.stack([t.predict(X) for t in model.trees])
    return per_tree.mean(axis=0)


def forest_predict_with_spread(model: ForestModel, X):
    """(mean, std-across-trees) per row; the coarse backend's acquisition."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"x has {X.shape[1]} features, model expects {model.n_features}")
    per_tree = np.stack([t.predict(X) for t in model.trees])
    return per_tree.mean(axis=0), per_tree.std(axis=0)


def select_topk(importances, k: int) -> list:
    """Indices of the k largest importances, descending; ties break low-index."""
    imp = np.asarray(importances, dtype=float)
    d = len(imp)
    if not (1 <= k <= d):
        raise ValueError(f"k must be in [1, {d}], got {k}")
    return sorted(range(d), key=lambda i: (-imp[i], i))[:k]


@dataclass
class PCAModel:
    means: np.ndarray
    sds: np.ndarray                 # 1.0 for dropped constant channels
    components: np.ndarray          # k x p, rows orthonormal
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray
    dropped: np.ndarray             # boolean mask of constant channels

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> dict:
        return {
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "dropped": self.dropped.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PCAModel":
        return cls(
            means=np.asarray(obj["means"], dtype=float),
            sds=np.asarray(obj["sds"], dtype=float),
            components=np.asarray(obj["components"], dtype=float),
            explained_variance_ratio=np.asarray(obj["explained_variance_ratio"], dtype=float),
            eigenvalues=np.asarray(obj["eigenvalues"], dtype=float),
            dropped=np.asarray(obj["dropped"], dtype=bool),
        )


def pca_fit(X, n_components: int | None = None,
            variance_target: float | None = None) -> PCAModel:
    """Standardize, eigendecompose the sample covariance, keep the top
    components (fixed k, or the smallest k reaching the variance target).

    Constant channels are dropped before standardization and re-enter the
    component matrix as zero columns, so transforms stay 63-wide.
    """
    if (n_components is None) == (variance_target is None):
        raise ValueError("specify exactly one of n_components / variance_target")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("X must be an (n, p) matrix with n >= 2")
    n, p = X.shape
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    dropped = sds == 0.0
    safe_sds = np.where(dropped, 1.0, sds)
    Z = (X - means) / safe_sds
    Z[:, dropped] = 0.0
    active = ~dropped
    q = int(active.sum())
    if q == 0:
        raise ValueError("all channels constant; nothing to decompose")
    cov = (Z[:, active].T @ Z[:, active]) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    # sign convention: largest-|entry| coordinate positive, for stable output
    for j in range(q):
        col = eigvecs[:, j]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            eigvecs[:, j] = -col
    total = eigvals.sum()
    ratios = eigvals / total if total > 0 else np.zeros(q)
    if n_components is not None:
        if not (1 <= n_components <= q):
            raise ValueError(f"n_components must be in [1, {q}]")
        k = n_components
    else:
        if not (0.0 < variance_target <= 1.0):
            raise ValueError("variance_target must be in (0, 1]")
        cum = np.cumsum(ratios)
        k = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
        k = min(k, q)
    components = np.zeros((k, p))
    components[:, active] = eigvecs[:, :k].T
    return PCAModel(
        means=means,
        sds=safe_sds,
        components=components,
        explained_variance_ratio=ratios[:k],
        eigenvalues=eigvals[:k],
        dropped=dropped,
    )


def pca_transform(model: PCAModel, s) -> np.ndarray:
    """Project a state vector (or rows of a matrix) onto the components."""
    s = np.asarray(s, dtype=float)
    z = (s - model.means) / model.sds
    if z.ndim == 1:
        z = np.where(model.dropped, 0.0, z)
        return model.components @ z
    z[:, model.dropped] = 0.0
    return z @ model.components.T


def pca_reconstruct(model: PCAModel, z) -> np.ndarray:
    """Map component scores back to the original (standardized-undone) space."""
    z = np.asarray(z, dtype=float)
    back = z @ model.components if z.ndim > 1 else model.components.T @ z
    return back * model.sds + model.means
