import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cswf.data_io import (DatasetView, OcclusionSpec, dequantize_rescale, load_dataset,
                          make_occlusion, occlusion_split, one_hot, read_idx, read_image,
                          tile_grid, write_idx, write_image_grid)
from cswf.errors import FormatError, InvalidArgument
from cswf.projections import ImageShape


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


@pytest.fixture
def mnist_like(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (12, 28, 28), dtype=np.uint8)
    labels = (np.arange(12) % 10).astype(np.uint8)
    (tmp_path / "img.idx").write_bytes(idx_bytes(0x803, (12, 28, 28), images.tobytes()))
    (tmp_path / "lab.idx.gz").write_bytes(
        gzip.compress(idx_bytes(0x801, (12,), labels.tobytes())))
    return tmp_path / "img.idx", tmp_path / "lab.idx.gz", images, labels


# ingestion -------------------------------------------------------------------

def test_idx_pair(mnist_like):
    img, lab, images, labels = mnist_like
    ds = load_dataset(img, labels_path=lab)
    assert (ds.n, ds.d, ds.l) == (12, 784, 10)
    assert np.array_equal(ds.raw_quantized, images.reshape(12, -1))
    assert np.array_equal(ds.y.argmax(axis=1), labels)
    assert np.all(ds.y.sum(axis=1) == 1)
    assert len(ds.digest) == 32
    assert load_dataset(img, labels_path=lab).digest == ds.digest


def test_idx_write_read(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.idx.gz", arr)
    assert np.array_equal(read_idx(tmp_path / "a.idx.gz"), arr)


def test_idx_errors(tmp_path, mnist_like):
    img, _, images, _ = mnist_like
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x0d\x03" + bytes(20))
    with pytest.raises(FormatError) as e:
        read_idx(bad)
    assert e.value.offset == 0
    short = tmp_path / "short.idx"
    short.write_bytes(idx_bytes(0x803, (12, 28, 28), images.tobytes()[:-5]))
    with pytest.raises(FormatError) as e:
        read_idx(short)
    assert e.value.offset == 16
    lab = tmp_path / "lab.idx"
    lab.write_bytes(idx_bytes(0x801, (11,), bytes(11)))
    with pytest.raises(InvalidArgument):
        load_dataset(img, labels_path=lab)
    with pytest.raises(FormatError):
        load_dataset(img, shape=ImageShape(1, 14, 14))


def test_csv(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("x,y,cls\n0.5,1.0,3\n-1.0,2.0,7\n0.0,0.0,3\n")
    ds = load_dataset(p, format="csv")
    assert (ds.n, ds.d, ds.l) == (3, 2, 2)
    assert np.array_equal(ds.labels, [0, 1, 0])
    p.write_text("x,cls\n0.5,1.5\n")
    with pytest.raises(FormatError):
        load_dataset(p, format="csv")


def test_raw_f32(tmp_path):
    shape = ImageShape(1, 2, 3)
    data = np.arange(24, dtype="<f4")
    p = tmp_path / "x.f32"
    p.write_bytes(data.tobytes())
    ds = load_dataset(p, format="f32", shape=shape)
    assert ds.x.shape == (4, 6) and ds.l == 0
    assert np.array_equal(ds.x.ravel(), data)
    flipped = load_dataset(p, format="f32", shape=shape, flip=True)
    assert flipped.n == 8
    assert np.array_equal(flipped.x[4], [2, 1, 0, 5, 4, 3])
    p.write_bytes(data.tobytes()[:-4])
    with pytest.raises(FormatError):
        load_dataset(p, format="f32", shape=shape)


def test_dataset_view_checks():
    with pytest.raises(InvalidArgument):
        DatasetView(np.zeros((0, 2)), None)
    with pytest.raises(InvalidArgument):
        DatasetView(np.array([[np.inf]]), None)
    with pytest.raises(InvalidArgument):
        DatasetView(np.zeros((3, 2)), np.zeros((2, 1)))
    assert np.array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])


# dequantization --------------------------------------------------------------

class _Fixed:
    def __init__(self, u):
        self.u = u

    def random(self, shape):
        return np.full(shape, self.u)


def test_dequantize_examples():
    assert dequantize_rescale(np.array([0]), _Fixed(0.0))[0] == -1.0
    top = dequantize_rescale(np.array([255]), _Fixed(np.nextafter(1.0, 0.0)))[0]
    assert top < 1.0 and top > 1.0 - 1e-12
    rng = np.random.default_rng(0)
    mean = dequantize_rescale(np.full(1_000_000, 128), rng).mean()
    assert abs(mean - 0.00390625) < 0.001
    with pytest.raises(InvalidArgument):
        dequantize_rescale(np.array([256]))


@given(arrays(np.int64, st.integers(1, 50), elements=st.integers(0, 255)), st.integers(0, 2**32))
def test_dequantize_bounds(raw, seed):
    out = dequantize_rescale(raw, np.random.default_rng(seed))
    assert np.all(out >= -1.0) and np.all(out < 1.0)
    assert np.all(np.floor((out + 1) * 128) == raw)


# occlusion -------------------------------------------------------------------

def test_named_masks():
    shape = ImageShape(1, 28, 28)
    _, split = make_occlusion(np.zeros(784), OcclusionSpec.named("left-half", shape))
    assert split.x_index.size == split.y_index.size == 392
    one = np.zeros((1, 28, 28), dtype=bool)
    one[0, 5, 5] = True
    _, split = make_occlusion(np.zeros(784), OcclusionSpec(one))
    assert split.x_index.size == 1
    for kind in ("bottom-half", "center-square"):
        OcclusionSpec.named(kind, ImageShape(3, 8, 8))
    with pytest.raises(InvalidArgument):
        OcclusionSpec(np.ones((1, 4, 4), dtype=bool))
    with pytest.raises(InvalidArgument):
        OcclusionSpec(np.zeros((1, 4, 4), dtype=bool))


@settings(max_examples=50)
@given(arrays(bool, (2, 4, 5)))
def test_occlusion_partition_and_round_trip(mask):
    if mask.all() or not mask.any():
        return
    split = occlusion_split(OcclusionSpec(mask))
    both = np.concatenate([split.x_index, split.y_index])
    assert np.array_equal(np.sort(both), np.arange(40))
    image = np.random.default_rng(0).standard_normal(40)
    observed, split = make_occlusion(image, OcclusionSpec(mask))
    full = split.recombine(np.zeros(split.x_index.size), observed)
    assert np.array_equal(full[split.y_index], image[split.y_index])


# images ----------------------------------------------------------------------

def test_grid_values(tmp_path):
    shape = ImageShape(1, 3, 3)
    write_image_grid(-np.ones((4, 9)), shape, (2, 2), tmp_path / "b.png")
    assert np.all(read_image(tmp_path / "b.png") == 0)
    write_image_grid(np.ones((4, 9)), shape, (2, 2), tmp_path / "w.png")
    assert np.all(read_image(tmp_path / "w.png") == 255)
    assert tile_grid(np.zeros((1, 9)), shape, (1, 1))[0, 0, 0] == 128
    with pytest.raises(InvalidArgument):
        tile_grid(np.zeros((3, 9)), shape, (2, 2))


def test_grid_round_trip_rgb(tmp_path):
    shape = ImageShape(3, 4, 5)
    rng = np.random.default_rng(1)
    samples = rng.uniform(-1, 1, (6, shape.dim))
    write_image_grid(samples, shape, (2, 3), tmp_path / "g.png")
    back = read_image(tmp_path / "g.png")
    assert back.shape == (8, 15, 3)
    assert np.array_equal(back, tile_grid(samples, shape, (2, 3)))
    # row-major placement: sample 4 sits in row 1, column 1
    want = np.clip(np.round(255 * (samples[4] + 1) / 2), 0, 255).reshape(3, 4, 5)
    assert np.array_equal(back[4:8, 5:10].transpose(2, 0, 1), want)
