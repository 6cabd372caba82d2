import numpy as np
import pytest
from hypothesis import given, strategies as st

from gdnet import sar_data as sd
from gdnet.errors import ConfigurationError, DimensionError, FormatError


def _write(path, data: bytes):
    path.write_bytes(data)
    return path


def test_load_p5_endpoints(tmp_path):
    f = _write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    img = sd.load_image(f)
    np.testing.assert_array_equal(img.pixels, [[0, 1], [1, 0]])
    assert (img.width, img.height, img.source_max) == (2, 2, 255)


def test_load_p2_with_comment(tmp_path):
    f = _write(tmp_path / "a.pgm", b"P2\n# plain\n3 1\n10\n0 5\n10\n")
    np.testing.assert_allclose(sd.load_image(f).pixels, [[0, 0.5, 1]])


def test_load_16bit(tmp_path):
    raster = np.array([[0, 1000], [65535, 300]])
    sd.write_pgm(tmp_path / "w.pgm", raster, maxval=65535)
    raw, maxval = sd.read_pgm(tmp_path / "w.pgm")
    assert maxval == 65535
    np.testing.assert_array_equal(raw, raster)


def test_reject_color(tmp_path):
    f = _write(tmp_path / "c.ppm", b"P6\n1 1\n255\n" + bytes([1, 2, 3]))
    with pytest.raises(FormatError):
        sd.load_image(f)


def test_reject_truncated(tmp_path):
    f = _write(tmp_path / "t.pgm", b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError):
        sd.load_image(f)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        sd.load_image(tmp_path / "nope.pgm")


def test_image_round_trip(tmp_path):
    grid = sd.min_max_normalize(np.random.default_rng(3).random((17, 23)))
    sd.save_image(tmp_path / "r.pgm", grid)
    back = sd.load_image(tmp_path / "r.pgm").pixels
    assert back.shape == grid.shape
    assert np.abs(back - grid).max() <= 1 / 255


def test_sixteen_bit_round_trip(tmp_path):
    grid = sd.min_max_normalize(np.random.default_rng(4).random((9, 11)) ** 4)
    sd.save_image(tmp_path / "r.pgm", grid, bits=16)
    raster, maxval = sd.read_pgm(tmp_path / "r.pgm")
    assert maxval == 65535
    assert np.abs(sd.load_image(tmp_path / "r.pgm").pixels - grid).max() <= 1 / 65535
    with pytest.raises(ConfigurationError):
        sd.save_image(tmp_path / "r.pgm", grid, bits=12)


def test_saved_scene_is_sixteen_bit(tmp_path):
    pair, gt = sd.synth_scene(0, 64, 64)
    paths = sd.save_scene(tmp_path, pair, gt)
    assert sd.read_pgm(paths["t1"])[1] == 65535
    assert np.array_equal(sd.read_change_map(paths["ground_truth"]), gt)


def test_normalize_constant_and_affine():
    assert not sd.min_max_normalize(np.full((3, 3), 7.0)).any()
    np.testing.assert_allclose(sd.min_max_normalize([10, 20, 30]), [0, 0.5, 1])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40).filter(lambda v: max(v) > min(v)))
def test_normalize_range(values):
    out = sd.min_max_normalize(values)
    assert out.min() == 0 and out.max() == 1


def _pair(a, b):
    return sd.SarImagePair(sd.SarImage(np.asarray(a, float)), sd.SarImage(np.asarray(b, float)))


def test_log_ratio_identity():
    x = np.random.default_rng(0).random((8, 8))
    assert not sd.log_ratio_di(_pair(x, x)).any()


def test_log_ratio_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert np.array_equal(sd.log_ratio_di(_pair(a, b)), sd.log_ratio_di(_pair(b, a)))


def test_log_ratio_raw_value():
    assert sd.log_ratio_raw(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(np.log(2), abs=1e-5)


def test_log_ratio_range_and_shape():
    rng = np.random.default_rng(2)
    di = sd.log_ratio_di(_pair(rng.random((9, 5)), rng.random((9, 5))))
    assert di.shape == (9, 5) and di.min() == 0 and di.max() == 1


def test_pair_dimension_mismatch():
    with pytest.raises(DimensionError):
        _pair(np.zeros((3, 3)), np.zeros((3, 4)))


# ------------------------------------------------------------------ synthetic scenes

def test_synth_deterministic():
    a_pair, a_gt = sd.synth_scene(5, 96, 80, 0.2)
    b_pair, b_gt = sd.synth_scene(5, 96, 80, 0.2)
    assert np.array_equal(a_pair.t1.pixels, b_pair.t1.pixels)
    assert np.array_equal(a_pair.t2.pixels, b_pair.t2.pixels)
    assert np.array_equal(a_gt, b_gt)
    assert a_pair.shape == (80, 96)


@pytest.mark.parametrize("target", [0.05, 0.15, 0.3])
def test_synth_change_fraction(target):
    fractions = [sd.synth_scene(seed, 128, 128, target)[1].mean() for seed in range(20)]
    assert all(abs(f - target) <= 0.3 * target for f in fractions)


def test_speckle_is_mean_preserving():
    rng = np.random.default_rng(11)
    speckled = sd.apply_speckle(np.full((64, 64), 0.3), 4, rng)
    assert abs(speckled.mean() / 0.3 - 1) < 0.02


def test_synth_values_in_unit_interval():
    pair, gt = sd.synth_scene(0, 64, 64, 0.1)
    for img in (pair.t1, pair.t2):
        assert img.pixels.min() >= 0 and img.pixels.max() <= 1
    assert set(np.unique(gt)) <= {0, 1}


@pytest.mark.parametrize("kw", [dict(width=32), dict(change_fraction_target=0.6), dict(looks=0.5)])
def test_synth_rejects_bad_arguments(kw):
    with pytest.raises(ConfigurationError):
        sd.synth_scene(0, **kw)


# ------------------------------------------------------------------ change maps

def test_change_map_round_trip(tmp_path):
    cm = (np.random.default_rng(4).random((13, 7)) > 0.5).astype(np.uint8)
    sd.write_change_map(tmp_path / "m.pgm", cm)
    np.testing.assert_array_equal(sd.read_change_map(tmp_path / "m.pgm"), cm)


def test_change_map_rejects_grey(tmp_path):
    sd.write_pgm(tmp_path / "g.pgm", np.array([[0, 128], [255, 0]]))
    with pytest.raises(FormatError, match="128"):
        sd.read_change_map(tmp_path / "g.pgm")


def test_all_unchanged_payload_is_zero(tmp_path):
    sd.write_change_map(tmp_path / "z.pgm", np.zeros((4, 5), dtype=np.uint8))
    data = (tmp_path / "z.pgm").read_bytes()
    assert data.startswith(b"P5\n5 4\n255\n")
    assert data[len(b"P5\n5 4\n255\n"):] == bytes(20)
