import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adagan import ConfigError, FormatError, Rng, load_cifar10_binary, synth_dataset, write_sample_grid
from adagan.data import (
    BatchIterator, SHAPE_CATEGORIES, detect_shape, grid_size, make_dataset, quantize, read_ppm,
)

RECORD = 3073


def cifar_record(label, pixels):
    """pixels: (3, 32, 32) planar uint8."""
    return bytes([label]) + np.asarray(pixels, np.uint8).tobytes()


def test_cifar_scaling(tmp_path):
    path = tmp_path / "one.bin"
    path.write_bytes(cifar_record(3, np.full((3, 32, 32), 255)))
    ds = load_cifar10_binary(str(path))
    assert ds.images.shape == (1, 32, 32, 3) and np.all(ds.images == 1.0)
    path.write_bytes(cifar_record(0, np.zeros((3, 32, 32))))
    assert np.all(load_cifar10_binary(path).images == -1.0)


def test_cifar_planar_to_interleaved(tmp_path):
    planes = np.zeros((3, 32, 32), np.uint8)
    planes[0, 1, 2], planes[1, 1, 2], planes[2, 1, 2] = 255, 0, 51
    path = tmp_path / "p.bin"
    path.write_bytes(cifar_record(9, planes))
    img = load_cifar10_binary(path).images[0]
    assert img[1, 2].tolist() == pytest.approx([1.0, -1.0, 51 / 127.5 - 1])
    assert np.all(img[0, 0] == -1)


def test_cifar_five_batches(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for b in range(5):
        raw = rng.integers(0, 256, size=(10000, RECORD), dtype=np.uint8)
        p = tmp_path / f"data_batch_{b + 1}.bin"
        p.write_bytes(raw.tobytes())
        paths.append(str(p))
    ds = load_cifar10_binary(paths)
    assert len(ds) == 50000
    assert ds.labels is None
    assert ds.images.min() >= -1 and ds.images.max() <= 1


def test_cifar_truncated_file(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\0" * (2 * RECORD + 100))
    with pytest.raises(FormatError, match=str(2 * RECORD)):
        load_cifar10_binary(path)


def test_cifar_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_cifar10_binary(tmp_path / "absent.bin")


@pytest.mark.parametrize("kind", ["shapes", "two-gaussians-image"])
@pytest.mark.parametrize("side", [16, 32])
def test_synth_deterministic_and_in_range(kind, side):
    a = synth_dataset(kind, 50, side, Rng(4))
    b = synth_dataset(kind, 50, side, Rng(4))
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.shape == (50, side, side, 3) and a.images.dtype == np.float32
    assert a.images.min() >= -1 and a.images.max() <= 1
    assert not np.array_equal(a.images, synth_dataset(kind, 50, side, Rng(5)).images)


def test_synth_rejects_bad_side_and_kind():
    with pytest.raises(ConfigError):
        synth_dataset("shapes", 3, 24, Rng(0))
    with pytest.raises(ConfigError):
        synth_dataset("mnist", 3, 16, Rng(0))


def test_shape_categories_balanced():
    labels = synth_dataset("shapes", 3000, 16, Rng(11)).labels
    sigma = math.sqrt(3000 * (1 / 3) * (2 / 3))
    for c in range(3):
        assert abs(np.sum(labels == c) - 1000) <= 3 * sigma


@pytest.mark.parametrize("side", [16, 32])
def test_detector_recovers_rendered_categories(side):
    ds = synth_dataset("shapes", 300, side, Rng(2))
    found = [detect_shape(img) for img in ds.images]
    assert found == [SHAPE_CATEGORIES[l] for l in ds.labels]


def test_detector_rejects_noise_and_blank():
    r = Rng(0)
    assert detect_shape(np.clip(r.normal((16, 16, 3)), -1, 1)) is None
    assert detect_shape(np.full((16, 16, 3), -1.0)) is None
    assert detect_shape(np.full((16, 16, 3), 1.0)) is None


def test_quantize_round_half_up():
    assert quantize(np.array([-1.0, 1.0, 0.0, -2.0, 2.0])).tolist() == [0, 255, 128, 0, 255]
    # 127.5 * (v + 1) = 2.5 exactly rounds up to 3
    assert quantize(np.array([2.5 / 127.5 - 1])).tolist() == [3]


def test_grid_single_white_image(tmp_path):
    path = write_sample_grid(np.ones((1, 2, 2, 3)), 1, tmp_path / "g.ppm")
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n2 2\n255\n")
    assert raw[len(b"P6\n2 2\n255\n"):] == b"\xff" * 12
    black = write_sample_grid(-np.ones((1, 2, 2, 3)), 1, tmp_path / "b.ppm").read_bytes()
    assert black.endswith(b"\0" * 12)


def test_grid_size_formula(tmp_path):
    m = 5
    path = write_sample_grid(np.zeros((4, m, m, 3)), 2, tmp_path / "g.ppm")
    width = height = 2 * m + 2
    header = f"P6\n{width} {height}\n255\n".encode()
    assert path.stat().st_size == len(header) + width * height * 3
    assert grid_size(4, 2, m) == (12, 12)
    assert grid_size(5, 2, m) == (12, 19)


def test_grid_gutters_are_black(tmp_path):
    img = read_ppm(write_sample_grid(np.ones((4, 3, 3, 3)), 2, tmp_path / "g.ppm"))
    assert np.all(img[3:5] == 0) and np.all(img[:, 3:5] == 0)
    assert np.all(img[:3, :3] == 255)


@given(k=st.integers(1, 7), cols=st.integers(1, 4), side=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_grid_roundtrip_property(tmp_path_factory, k, cols, side, seed):
    images = np.clip(Rng(seed).normal((k, side, side, 3)), -1, 1)
    path = tmp_path_factory.mktemp("grid") / "g.ppm"
    grid = read_ppm(write_sample_grid(images, cols, path))
    q = quantize(images)
    cols = min(cols, k)
    for i in range(k):
        r, c = divmod(i, cols)
        y, x = r * (side + 2), c * (side + 2)
        assert np.array_equal(grid[y : y + side, x : x + side], q[i])


def test_grid_rejects_empty_and_unwritable(tmp_path):
    with pytest.raises(ValueError):
        write_sample_grid(np.zeros((0, 2, 2, 3)), 1, tmp_path / "x.ppm")
    with pytest.raises(OSError):
        write_sample_grid(np.zeros((1, 2, 2, 3)), 1, tmp_path / "missing" / "x.ppm")


@given(st.integers(1, 40), st.integers(1, 50), st.integers(0, 1000))
def test_epoch_coverage_property(n, batch, seed):
    it = BatchIterator(n, batch, seed)
    seen = np.concatenate([next(it) for _ in range(math.ceil(3 * n / batch) + 1)])
    for epoch in range(3):
        assert sorted(seen[epoch * n : (epoch + 1) * n]) == list(range(n))


def test_batch_iterator_state_roundtrip():
    it = BatchIterator(10, 4, 3)
    for _ in range(4):
        next(it)
    state = it.get_state()
    expected = [next(it) for _ in range(3)]
    other = BatchIterator(10, 4, 3)
    other.set_state(state)
    assert all(np.array_equal(a, b) for a, b in zip(expected, [next(other) for _ in range(3)]))


def test_make_dataset_specs(tmp_path):
    assert make_dataset("shapes", 16, 8, 0).images.shape == (8, 16, 16, 3)
    path = tmp_path / "c.bin"
    path.write_bytes(cifar_record(1, np.zeros((3, 32, 32))) * 2)
    assert len(make_dataset(f"cifar10:{path},{path}")) == 4
