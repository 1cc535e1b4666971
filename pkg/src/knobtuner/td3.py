"""Twin-delayed deterministic policy gradient over the reduced spaces.

The actor maps the PCA-compressed state to the top-K knob coordinates in
[0,1]; twin critics score (state, action) pairs and bootstrap from the
minimum of their targets with smoothed target actions; the actor and all
target networks update only every policy_delay critic steps. Networks are
plain numpy MLPs with hand-written backprop so gradients can be checked
against central finite differences, and every random draw comes from one
seeded stream.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------- MLP
@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden: tuple = (64, 64)
    output_activation: str = "identity"  # or "sigmoid"
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("network dims must be positive")
        if self.output_activation not in ("identity", "sigmoid"):
            raise ValueError("output_activation must be identity or sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP:
    """Fully-connected ReLU network; float64 end to end."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        dims = (spec.input_dim, *spec.hidden, spec.output_dim)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # ------------------------------------------------------------- forward
    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.spec.input_dim:
            raise ValueError(f"input has {a.shape[1]} features, network "
                             f"expects {self.spec.input_dim}")
        acts = [a]
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            if i < n_layers - 1:
                z = np.maximum(z, 0.0)
            elif self.spec.output_activation == "sigmoid":
                z = _sigmoid(z)
            acts.append(z)
        y = acts[-1][0] if single else acts[-1]
        return y, acts

    # ------------------------------------------------------------ backward
    def backward(self, acts, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. params and input.

        Returns ([(dW, db), ...], dinput); upstream must match the cached
        batch shape.
        """
        delta = np.atleast_2d(np.asarray(upstream, dtype=float)).copy()
        if self.spec.output_activation == "sigmoid":
            y = acts[-1]
            delta = delta * y * (1.0 - y)
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0.0)
            else:
                delta = delta @ self.weights[i].T
        return grads, delta

    # ----------------------------------------------------------- parameters
    def parameters(self):
        return list(zip(self.weights, self.biases))

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.spec = self.spec
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.weights]
                              + [b.ravel() for b in self.biases])

    def load_flat_parameters(self, vec: np.ndarray) -> None:
        pos = 0
        for W in self.weights:
            W[...] = vec[pos:pos + W.size].reshape(W.shape)
            pos += W.size
        for b in self.biases:
            b[...] = vec[pos:pos + b.size]
            pos += b.size
        if pos != len(vec):
            raise ValueError("parameter vector length mismatch")


def forward(net: MLP, x) -> np.ndarray:
    return net.forward(x)


def gradient(net: MLP, x, upstream):
    """Parameter and input gradients of sum(upstream * net(x))."""
    _, acts = net.forward_cached(x)
    return net.backward(acts, upstream)


def _sgd_step(net: MLP, grads, lr: float, momentum: float = 0.0,
              buffers=None, sign: float = -1.0):
    """In-place SGD update; sign=-1 descends, sign=+1 ascends."""
    if momentum > 0.0 and buffers is None:
        raise ValueError("momentum requires buffers")
    for i, (dW, db) in enumerate(grads):
        if momentum > 0.0:
            bW, bb = buffers[i]
            bW *= momentum
            bW += dW
            bb *= momentum
            bb += db
            dW, db = bW, bb
        net.weights[i] += sign * lr * dW
        net.biases[i] += sign * lr * db


def soft_update(target: MLP, main: MLP, tau: float) -> None:
    """theta' <- theta + (1 - tau) * (theta' - theta), exact contraction."""
    for Wt, Wm in zip(target.weights, main.weights):
        Wt[...] = Wm + (1.0 - tau) * (Wt - Wm)
    for bt, bm in zip(target.biases, main.biases):
        bt[...] = bm + (1.0 - tau) * (bt - bm)


# --------------------------------------------------------------- replay
@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "s_next", np.asarray(self.s_next, dtype=float))
        if np.any(self.a < 0.0) or np.any(self.a > 1.0):
            raise ValueError("action components must lie in [0, 1]")


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: list = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, t: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._pos] = t
            self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if len(self._data) < batch_size:
            raise ValueError(
                f"replay holds {len(self._data)} < batch_size {batch_size}")
        idx = rng.choice(len(self._data), size=batch_size, replace=False)
        return [self._data[i] for i in idx]


# ----------------------------------------------------------------- agent
@dataclass(frozen=True)
class TD3Config:
    state_dim: int = 13
    action_dim: int = 20
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    smoothing_sd: float = 0.2
    smoothing_clip: float = 0.5
    exploration_sd: float = 0.1
    exploration_decay: float = 0.97
    batch_size: int = 32
    buffer_capacity: int = 4096
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    momentum: float = 0.0
    episode_len: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")


@dataclass
class TrainReport:
    critic1_loss: float
    critic2_loss: float
    actor_updated: bool
    actor_objective: float | None = None


class TD3Agent:
    def __init__(self, cfg: TD3Config):
        self.cfg = cfg
        k, K = cfg.state_dim, cfg.action_dim
        seq = np.random.SeedSequence(cfg.seed)
        net_seeds = seq.generate_state(4)
        self.actor = MLP(NetworkSpec(k, K, cfg.hidden, "sigmoid",
                                     seed=int(net_seeds[0])))
        self.critic1 = MLP(NetworkSpec(k + K, 1, cfg.hidden, "identity",
                                       seed=int(net_seeds[1])))
        self.critic2 = MLP(NetworkSpec(k + K, 1, cfg.hidden, "identity",
                                       seed=int(net_seeds[2])))
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.replay = ReplayBuffer(cfg.buffer_capacity)
        self.update_counter = 0
        self.rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xA5))))
        self._momentum_buffers = {}
        if cfg.momentum > 0.0:
            for name, net in (("actor", self.actor), ("critic1", self.critic1),
                              ("critic2", self.critic2)):
                self._momentum_buffers[name] = [
                    (np.zeros_like(W), np.zeros_like(b))
                    for W, b in net.parameters()]

    # ------------------------------------------------------------- policy
    def warm_start_actor(self, action: np.ndarray, eps: float = 0.02) -> None:
        """Pin the actor's initial output to `action` regardless of state.

        Zeroing the final layer's weights and setting its biases to the
        logit of the target makes fine-tuning start from the incumbent
        configuration instead of an arbitrary point.
        """
        a = np.clip(np.asarray(action, dtype=float), eps, 1.0 - eps)
        self.actor.weights[-1][...] = 0.0
        self.actor.biases[-1][...] = np.log(a / (1.0 - a))
        self.actor_target = self.actor.copy()

    def select_action(self, s: np.ndarray, explore: bool,
                      noise_sd: float | None = None) -> np.ndarray:
        a = self.actor.forward(np.asarray(s, dtype=float))
        if explore:
            sd = self.cfg.exploration_sd if noise_sd is None else noise_sd
            a = a + self.rng.normal(0.0, sd, size=a.shape)
        return np.clip(a, 0.0, 1.0)

    # ------------------------------------------------------------- targets
    def td3_target(self, batch) -> np.ndarray:
        """r + gamma * (1-done) * min(Q1', Q2') at the smoothed target action."""
        S2 = np.stack([t.s_next for t in batch])
        R = np.array([t.r for t in batch])
        D = np.array([1.0 if t.done else 0.0 for t in batch])
        a2 = self.actor_target.forward(S2)
        if self.cfg.smoothing_sd > 0.0:
            eps = self.rng.normal(0.0, self.cfg.smoothing_sd, size=a2.shape)
            eps = np.clip(eps, -self.cfg.smoothing_clip, self.cfg.smoothing_clip)
            a2 = a2 + eps
        a2 = np.clip(a2, 0.0, 1.0)
        x2 = np.concatenate([S2, a2], axis=1)
        q1 = self.critic1_target.forward(x2)[:, 0]
        q2 = self.critic2_target.forward(x2)[:, 0]
        return R + self.cfg.gamma * (1.0 - D) * np.minimum(q1, q2)

    # -------------------------------------------------------------- train
    def train_step(self, batch) -> TrainReport:
        if not batch:
            raise ValueError("batch must be non-empty")
        cfg = self.cfg
        y = self.td3_target(batch)
        S = np.stack([t.s for t in batch])
        A = np.stack([t.a for t in batch])
        X = np.concatenate([S, A], axis=1)
        B = len(batch)

        losses = []
        for name, critic in (("critic1", self.critic1), ("critic2", self.critic2)):
            pred, acts = critic.forward_cached(X)
            err = pred[:, 0] - y
            losses.append(float(np.mean(err ** 2)))
            upstream = (2.0 * err / B)[:, None]
            grads, _ = critic.backward(acts, upstream)
            _sgd_step(critic, grads, cfg.critic_lr, cfg.momentum,
                      self._momentum_buffers.get(name), sign=-1.0)

        self.update_counter += 1
        actor_updated = self.update_counter % cfg.policy_delay == 0
        objective = None
        if actor_updated:
            a, actor_acts = self.actor.forward_cached(S)
            x = np.concatenate([S, a], axis=1)
            q, critic_acts = self.critic1.forward_cached(x)
            objective = float(np.mean(q))
            upstream = np.full((B, 1), 1.0 / B)
            _, dinput = self.critic1.backward(critic_acts, upstream)
            da = dinput[:, cfg.state_dim:]
            grads, _ = self.actor.backward(actor_acts, da)
            _sgd_step(self.actor, grads, cfg.actor_lr, cfg.momentum,
                      self._momentum_buffers.get("actor"), sign=+1.0)
            soft_update(self.actor_target, self.actor, cfg.tau)
            soft_update(self.critic1_target, self.critic1, cfg.tau)
            soft_update(self.critic2_target, self.critic2, cfg.tau)
        return TrainReport(critic1_loss=losses[0], critic2_loss=losses[1],
                           actor_updated=actor_updated, actor_objective=objective)

    # --------------------------------------------------------- checkpoints
    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": {
                "state_dim": self.cfg.state_dim,
                "action_dim": self.cfg.action_dim,
                "hidden": list(self.cfg.hidden),
                "gamma": self.cfg.gamma,
                "tau": self.cfg.tau,
                "policy_delay": self.cfg.policy_delay,
                "smoothing_sd": self.cfg.smoothing_sd,
                "smoothing_clip": self.cfg.smoothing_clip,
                "exploration_sd": self.cfg.exploration_sd,
                "exploration_decay": self.cfg.exploration_decay,
                "batch_size": self.cfg.batch_size,
                "buffer_capacity": self.cfg.buffer_capacity,
                "actor_lr": self.cfg.actor_lr,
                "critic_lr": self.cfg.critic_lr,
                "momentum": self.cfg.momentum,
                "episode_len": self.cfg.episode_len,
                "seed": self.cfg.seed,
            },
            "update_counter": self.update_counter,
            "replay_size": len(self.replay),
        }
        (directory / "agent.json").write_text(json.dumps(meta, indent=2) + "\n")
        arrays = {
            "actor": self.actor.flat_parameters(),
            "critic1": self.critic1.flat_parameters(),
            "critic2": self.critic2.flat_parameters(),
            "actor_target": self.actor_target.flat_parameters(),
            "critic1_target": self.critic1_target.flat_parameters(),
            "critic2_target": self.critic2_target.flat_parameters(),
            "rng_state": np.array([], dtype=np.uint64),
        }
        if len(self.replay):
            arrays["replay_s"] = np.stack([t.s for t in self.replay._data])
            arrays["replay_a"] = np.stack([t.a for t in self.replay._data])
            arrays["replay_r"] = np.array([t.r for t in self.replay._data])
            arrays["replay_s_next"] = np.stack([t.s_next for t in self.replay._data])
            arrays["replay_done"] = np.array([t.done for t in self.replay._data])
        np.savez(directory / "params.npz", **arrays)

    @classmethod
    def load(cls, directory) -> "TD3Agent":
        directory = Path(directory)
        meta = json.loads((directory / "agent.json").read_text())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfgd = dict(meta["config"])
        cfgd["hidden"] = tuple(cfgd["hidden"])
        agent = cls(TD3Config(**cfgd))
        data = np.load(directory / "params.npz")
        agent.actor.load_flat_parameters(data["actor"])
        agent.critic1.load_flat_parameters(data["critic1"])
        agent.critic2.load_flat_parameters(data["critic2"])
        agent.actor_target.load_flat_parameters(data["actor_target"])
        agent.critic1_target.load_flat_parameters(data["critic1_target"])
        agent.critic2_target.load_flat_parameters(data["critic2_target"])
        if "replay_s" in data:
            for i in range(len(data["replay_r"])):
                agent.replay.push(Transition(
                    s=data["replay_s"][i], a=data["replay_a"][i],
                    r=float(data["replay_r"][i]), s_next=data["replay_s_next"][i],
                    done=bool(data["replay_done"][i])))
        agent.update_counter = int(meta["update_counter"])
        return agent


# ------------------------------------------------------------------ tuning
STATE_CLIP = 5.0


class StateCodec:
    """Whiten PCA scores by their training eigenvalues and clip.

    The transform itself is untouched; this only conditions the RL
    networks' inputs so states far outside the warm-start distribution
    (common right after a hint jump) cannot blow up training.
    """

    def __init__(self, pca):
        self._pca = pca
        self._scale = 1.0 / np.sqrt(np.maximum(pca.eigenvalues, 1e-12))

    def encode(self, state: np.ndarray) -> np.ndarray:
        from .models import pca_transform
        z = pca_transform(self._pca, np.asarray(state, dtype=float))
        return np.clip(z * self._scale, -STATE_CLIP, STATE_CLIP)


def td3_tune(runner, pca, topk, budget: int, start: "object",
             start_state: np.ndarray, cfg: TD3Config,
             reference_fitness: float,
             baseline_fitness: float | None = None,
             agent_out: list | None = None):
    """Fine-tune the top-K knob coordinates from `start` for `budget` trials.

    Full actions keep the start configuration off the top-K coordinates.
    Rewards are relative fitness improvement over the stage-2 reference,
    clipped to [-1, 5]. The replay is pre-seeded from the pool's non-stale
    samples as terminal one-step transitions. Returns the best
    configuration seen (the start if nothing beat it).
    """
    from .knobspace import denormalize

    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not topk:
        raise ValueError("topk must be non-empty")
    topk = list(topk)
    cfg = replace(cfg, state_dim=pca.k, action_dim=len(topk))
    agent = TD3Agent(cfg)
    start_vec = np.asarray(start.normalized, dtype=float)
    agent.warm_start_actor(start_vec[topk])
    if agent_out is not None:
        agent_out.append(agent)

    f_ref = reference_fitness if reference_fitness > 0 else 1.0
    codec = StateCodec(pca)

    def reward_of(fit: float) -> float:
        return float(np.clip((fit - f_ref) / f_ref, -1.0, 5.0))

    for s in runner.pool.filtered(include_stale=False):
        z = codec.encode(s.state)
        agent.replay.push(Transition(s=z, a=np.clip(s.action[topk], 0.0, 1.0),
                                     r=reward_of(s.fitness), s_next=z, done=True))

    best_fit = -np.inf if baseline_fitness is None else baseline_fitness
    best_cfg = start
    s_prev = codec.encode(np.asarray(start_state, dtype=float))
    for step in range(1, budget + 1):
        sd = cfg.exploration_sd * cfg.exploration_decay ** (step - 1)
        a = agent.select_action(s_prev, explore=True, noise_sd=sd)
        full = start_vec.copy()
        full[topk] = a
        config = denormalize(runner.catalog, full)
        sample = runner.run(config, "td3")
        if sample is None:
            log.warning("td3 trial %d failed; transition discarded", step)
            continue
        s_t = codec.encode(sample.state)
        done = (step % cfg.episode_len == 0) or step == budget
        agent.replay.push(Transition(s=s_prev, a=a, r=reward_of(sample.fitness),
                                     s_next=s_t, done=done))
        s_prev = s_t
        if len(agent.replay) >= cfg.batch_size:
            batch = agent.replay.sample(cfg.batch_size, agent.rng)
            agent.train_step(batch)
        if sample.fitness > best_fit:
            best_fit, best_cfg = sample.fitness, config
    return best_cfg
