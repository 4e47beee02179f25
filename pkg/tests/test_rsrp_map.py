import numpy as np
import pytest

from pdpgnet.errors import ConfigError, ParseError, SchemaError
from pdpgnet.rsrp_map import (MapGenConfig, RsrpTensor, TiltDictionary, TiltGainModel, generate_map, load_map,
                              query_rsrp, save_map)


def flat_gain_cfg(**kw):
    return MapGenConfig(area_m=(400.0, 400.0), grid_spacing_m=10.0,
                        tilt_gain=TiltGainModel(max_attenuation_db=0.0), **kw)


def test_shape_arithmetic():
    cfg = MapGenConfig(area_m=(400.0, 400.0), grid_spacing_m=100.0)
    t = generate_map(cfg, TiltDictionary.default(3), [(50, 50), (350, 350)])
    assert t.shape == (16, 3, 2)


def test_deterministic():
    cfg = MapGenConfig(grid_spacing_m=25.0, shadowing_sigma_db=6.0, rng_seed=11)
    a = generate_map(cfg, TiltDictionary.default(), [(100, 100), (300, 300)])
    b = generate_map(cfg, TiltDictionary.default(), [(100, 100), (300, 300)])
    assert a.values.tobytes() == b.values.tobytes()


def test_near_beats_far_without_shadowing():
    t = generate_map(flat_gain_cfg(), TiltDictionary.default(), [(205.0, 205.0)])
    near = query_rsrp(t, (205.0, 205.0), [4])
    far = query_rsrp(t, (305.0, 205.0), [4])
    assert near[0] > far[0]


def test_strictly_decreasing_with_distance():
    t = generate_map(flat_gain_cfg(), TiltDictionary.default(3), [(200.0, 200.0)])
    d = np.hypot(*(t.anchors - [200.0, 200.0]).T)
    for m in range(3):
        order = np.argsort(d)
        v, dd = t.values[order, m, 0], d[order]
        distinct = np.diff(dd) > 1e-9
        assert np.all(np.diff(v)[distinct] < 0)


def test_rsrp_depends_on_tilt():
    t = generate_map(MapGenConfig(grid_spacing_m=40.0), TiltDictionary.default(), [(100, 100), (300, 300)])
    assert np.all(np.ptp(t.values, axis=1).max(axis=0) > 1.0)


def test_values_bounded_and_finite():
    cfg = MapGenConfig(grid_spacing_m=20.0, shadowing_sigma_db=10.0)
    t = generate_map(cfg, TiltDictionary.default(), [(10, 10), (390, 390)])
    assert np.all(np.isfinite(t.values)) and t.values.max() <= cfg.max_rsrp_dbm


def test_bs_outside_area_rejected():
    with pytest.raises(ConfigError):
        generate_map(MapGenConfig(), TiltDictionary.default(), [(500, 10)])


@pytest.mark.parametrize("kw", [{"grid_spacing_m": 0.0}, {"pathloss_exponent": 1.5}])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        MapGenConfig(**kw)


def test_tilt_dictionary_invariants():
    assert TiltDictionary.default().count == 11
    with pytest.raises(ConfigError):
        TiltDictionary([(0, 5), (0, 5)])


def _tiny():
    anchors = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    values = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2) - 100.0
    return RsrpTensor(anchors, values, [(0, 0), (10, 10)], TiltDictionary([(0, 2), (0, 8)]))


def test_exact_hit_returns_row():
    t = _tiny()
    np.testing.assert_array_equal(t.query((10.0, 0.0), [1, 0]), [t.values[1, 1, 0], t.values[1, 0, 1]])


def test_tie_goes_to_lower_index():
    t = _tiny()
    assert t.nearest_anchor([(5.0, 0.0)])[0] == 0
    assert t.nearest_anchor([(5.0, 5.0)])[0] == 0  # three-way tie
    assert t.nearest_anchor([(10.0, 10.0)])[0] == 1  # tie between 1 and 2


def test_outside_hull_clamps():
    t = _tiny()
    assert t.nearest_anchor([(500.0, -3.0)])[0] == 1


def test_full_scale_lookup_is_fast():
    import time
    anchors = np.random.default_rng(0).uniform(0, 400, size=(24_573, 2))
    t = RsrpTensor(anchors, np.zeros((24_573, 1, 1)), [(200, 200)], TiltDictionary([(0, 5)]))
    t.nearest_anchor([(1, 1)])  # build the tree
    t0 = time.perf_counter()
    for _ in range(200):
        t.query(np.random.default_rng(1).uniform(0, 400, size=(80, 2)), [0])
    assert (time.perf_counter() - t0) / 200 < 5e-3


def test_round_trip(tmp_path, small_map):
    p = tmp_path / "m.bin"
    save_map(small_map, p)
    back = load_map(p)
    assert back == small_map
    assert back.values.tobytes() == small_map.values.tobytes()


def test_truncated_file(tmp_path, small_map):
    p = tmp_path / "m.bin"
    save_map(small_map, p)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 13])
    with pytest.raises(ParseError) as e:
        load_map(p)
    assert e.value.offset is not None


def test_header_body_mismatch(tmp_path):
    t4 = _tiny()
    p = tmp_path / "m.bin"
    save_map(t4, p)
    data = bytearray(p.read_bytes())
    # value-section shape sits right after header + anchors + bs + tilts
    off = 32 + 8 * (2 * 3 + 2 * 2 + 2 * 2)
    data[off + 16: off + 24] = (1).to_bytes(8, "little")
    p.write_bytes(bytes(data))
    with pytest.raises(SchemaError):
        load_map(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\x00" * 64)
    with pytest.raises(ParseError):
        load_map(p)
