import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knobtuner.errors import CatalogError
from knobtuner.knobspace import (Configuration, KnobCatalog, KnobSpec,
                                 TrustRegion, clip_to_trust_region,
                                 default_configuration, denormalize,
                                 from_physical, load_catalog, normalize,
                                 round_half_up, save_catalog)


def make_catalog(*specs):
    return KnobCatalog(knobs=tuple(specs))


LIN_INT = KnobSpec(name="conns", kind="integer", min_value=100, max_value=10000,
                   default_value=151, scale="linear", unit="count")
LOG_REAL = KnobSpec(name="ratio", kind="real", min_value=1.0, max_value=10000.0,
                    default_value=10.0, scale="log")
ENUM5 = KnobSpec(name="mode", kind="enum", default_value="c",
                 enum_values=("a", "b", "c", "d", "e"))
BOOL = KnobSpec(name="flag", kind="boolean", default_value=True)
LOG_INT = KnobSpec(name="bytes", kind="integer", min_value=1024,
                   max_value=2 ** 40, default_value=1024 * 1024, scale="log",
                   unit="bytes")


class TestLoadCatalog:
    def test_loads_valid_file(self, tmp_path):
        path = tmp_path / "cat.json"
        path.write_text(json.dumps([
            {"name": "a", "kind": "integer", "min": 1, "max": 10, "default": 5},
            {"name": "b", "kind": "real", "min": 0.0, "max": 1.0, "default": 0.5},
            {"name": "c", "kind": "boolean", "default": False},
        ]))
        cat = load_catalog(path)
        assert cat.dimension == 3
        assert cat.names() == ["a", "b", "c"]

    def test_min_equal_max_names_knob(self, tmp_path):
        path = tmp_path / "cat.json"
        path.write_text(json.dumps([
            {"name": "broken", "kind": "integer", "min": 7, "max": 7, "default": 7},
        ]))
        with pytest.raises(CatalogError, match="broken"):
            load_catalog(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "cat.json"
        path.write_text("[{not json")
        with pytest.raises(CatalogError, match="invalid JSON"):
            load_catalog(path)

    def test_log_scale_requires_positive_min(self, tmp_path):
        path = tmp_path / "cat.json"
        path.write_text(json.dumps([
            {"name": "zlog", "kind": "integer", "min": 0, "max": 10,
             "default": 1, "scale": "log"},
        ]))
        with pytest.raises(CatalogError, match="zlog"):
            load_catalog(path)

    def test_default_outside_range(self, tmp_path):
        path = tmp_path / "cat.json"
        path.write_text(json.dumps([
            {"name": "oops", "kind": "real", "min": 0.0, "max": 1.0, "default": 2.0},
        ]))
        with pytest.raises(CatalogError, match="oops"):
            load_catalog(path)

    def test_duplicate_names_rejected(self):
        with pytest.raises(CatalogError, match="duplicate"):
            make_catalog(LIN_INT, LIN_INT)

    def test_shipped_mysql_catalog_has_266_knobs(self, mysql_catalog):
        assert mysql_catalog.dimension == 266

    def test_shipped_synthetic_catalog_has_50_knobs(self, syn_catalog):
        assert syn_catalog.dimension == 50

    def test_save_load_round_trip(self, tmp_path, syn_catalog):
        save_catalog(syn_catalog, tmp_path / "copy.json")
        again = load_catalog(tmp_path / "copy.json")
        assert again.fingerprint() == syn_catalog.fingerprint()


class TestDenormalize:
    def test_linear_integer_lower_endpoint(self):
        cat = make_catalog(LIN_INT)
        assert denormalize(cat, [0.0]).physical["conns"] == 100

    def test_linear_integer_upper_endpoint(self):
        cat = make_catalog(LIN_INT)
        assert denormalize(cat, [1.0]).physical["conns"] == 10000

    def test_log_midpoint_is_geometric(self):
        cat = make_catalog(LOG_REAL)
        assert denormalize(cat, [0.5]).physical["ratio"] == pytest.approx(100.0)

    def test_enum_floor_bucket(self):
        cat = make_catalog(ENUM5)
        # floor(0.9 * 5) = 4 -> fifth literal
        assert denormalize(cat, [0.9]).physical["mode"] == "e"
        assert denormalize(cat, [1.0]).physical["mode"] == "e"  # clamped
        assert denormalize(cat, [0.0]).physical["mode"] == "a"

    def test_boolean_threshold(self):
        cat = make_catalog(BOOL)
        assert denormalize(cat, [0.49]).physical["flag"] is False
        assert denormalize(cat, [0.5]).physical["flag"] is True

    def test_dimension_mismatch(self):
        cat = make_catalog(LIN_INT)
        with pytest.raises(CatalogError, match="dimension"):
            denormalize(cat, [0.1, 0.2])

    def test_out_of_unit_interval(self):
        cat = make_catalog(LIN_INT)
        with pytest.raises(CatalogError):
            denormalize(cat, [1.5])

    def test_deterministic(self):
        cat = make_catalog(LIN_INT, LOG_REAL, ENUM5, BOOL)
        v = np.array([0.3, 0.6, 0.2, 0.8])
        assert denormalize(cat, v).physical == denormalize(cat, v).physical

    def test_round_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(-0.5) == 0
        assert round_half_up(2.4999) == 2


class TestNormalize:
    def test_defaults_round_trip(self, syn_catalog):
        cfg = default_configuration(syn_catalog)
        again = denormalize(syn_catalog, normalize(syn_catalog, cfg.physical))
        assert again.physical == cfg.physical

    def test_integer_endpoint_maps_to_zero(self):
        cat = make_catalog(LIN_INT)
        v = normalize(cat, {"conns": 100})
        assert v[0] == 0.0

    def test_enum_preimage_in_owned_bucket(self):
        cat = make_catalog(ENUM5)
        v = normalize(cat, {"mode": "e"})
        assert 0.8 <= v[0] < 1.0

    def test_missing_knob(self):
        cat = make_catalog(LIN_INT, BOOL)
        with pytest.raises(CatalogError, match="missing"):
            normalize(cat, {"conns": 500})

    def test_out_of_range_value(self):
        cat = make_catalog(LIN_INT)
        with pytest.raises(CatalogError, match="outside"):
            normalize(cat, {"conns": 10001})

    def test_wrong_enum_literal(self):
        cat = make_catalog(ENUM5)
        with pytest.raises(CatalogError):
            normalize(cat, {"mode": "zz"})


class TestRoundTrip:
    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=5,
                    max_size=5))
    @settings(max_examples=200, deadline=None)
    def test_grid_round_trip(self, vals):
        cat = make_catalog(LIN_INT, LOG_REAL, ENUM5, BOOL, LOG_INT)
        cfg = denormalize(cat, vals)
        w = normalize(cat, cfg.physical)
        cfg2 = denormalize(cat, w)
        # integer/enum/boolean quantize exactly; reals within float noise
        for spec in cat.knobs:
            a, b = cfg.physical[spec.name], cfg2.physical[spec.name]
            if spec.kind == "real":
                assert b == pytest.approx(a, rel=1e-12)
            else:
                assert a == b
        w2 = normalize(cat, cfg2.physical)
        assert np.all(np.abs(w - w2) <= 1e-12)

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=200, deadline=None)
    def test_monotone_numeric(self, v1, v2):
        cat = make_catalog(LIN_INT, LOG_REAL, LOG_INT)
        lo, hi = sorted((v1, v2))
        a = denormalize(cat, [lo] * 3).physical
        b = denormalize(cat, [hi] * 3).physical
        for name in ("conns", "ratio", "bytes"):
            assert a[name] <= b[name]

    def test_representable_grid_integers(self):
        cat = make_catalog(LIN_INT)
        for value in (100, 101, 4242, 9999, 10000):
            v = normalize(cat, {"conns": value})
            assert denormalize(cat, v).physical["conns"] == value
            assert normalize(cat, {"conns": value})[0] == v[0]

    def test_representable_grid_log_integers(self):
        cat = make_catalog(LOG_INT)
        for value in (1024, 1025, 123456789, 2 ** 40 - 1, 2 ** 40):
            v = normalize(cat, {"bytes": value})
            assert denormalize(cat, v).physical["bytes"] == value


class TestTrustRegion:
    def test_inside_region_unchanged(self):
        tr = TrustRegion(center=np.full(3, 0.5), ratio=0.1)
        v = np.array([0.45, 0.5, 0.58])
        assert np.allclose(clip_to_trust_region(tr, v), v)

    def test_clamps_to_center_plus_ratio(self):
        tr = TrustRegion(center=np.array([0.5]), ratio=0.05)
        assert clip_to_trust_region(tr, np.array([0.9]))[0] == pytest.approx(0.55)

    def test_boundary_intersection_with_unit_box(self):
        tr = TrustRegion(center=np.array([0.02]), ratio=0.05)
        assert clip_to_trust_region(tr, np.array([0.0]))[0] == 0.0

    def test_dimension_mismatch(self):
        tr = TrustRegion(center=np.full(2, 0.5), ratio=0.1)
        with pytest.raises(ValueError, match="mismatch"):
            clip_to_trust_region(tr, np.zeros(3))

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            TrustRegion(center=np.array([0.5]), ratio=0.0)
        with pytest.raises(ValueError):
            TrustRegion(center=np.array([0.5]), ratio=1.5)

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=0.001, max_value=1.0),
           st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=4,
                    max_size=4))
    @settings(max_examples=200, deadline=None)
    def test_output_in_box_and_within_ratio(self, c, ratio, vals):
        tr = TrustRegion(center=np.full(4, c), ratio=ratio)
        out = clip_to_trust_region(tr, np.array(vals))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.all(np.abs(out - tr.center) <= ratio + 1e-15)


class TestConfiguration:
    def test_rejects_out_of_box_vector(self):
        with pytest.raises(ValueError):
            Configuration(normalized=np.array([1.2]), physical={"x": 1})

    def test_from_physical_quantizes(self):
        cat = make_catalog(LIN_INT)
        cfg = from_physical(cat, {"conns": 150})
        assert cfg.physical["conns"] == 150
        assert denormalize(cat, cfg.normalized).physical == cfg.physical
