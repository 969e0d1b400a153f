import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imle_lab.data import (
    GMMSpec,
    IdxMagicError,
    IdxTruncatedError,
    MnistSet,
    PairedDataset,
    downsample_avg,
    downsample_flat,
    load_idx,
    load_mnist_split,
    nearest_by_pca_prefix,
    pca_fit,
    pca_project,
    pca_reconstruct,
    read_idx,
    ring_gmm,
    sample_gmm,
    save_mnist,
    write_idx,
)


def test_ring_layout():
    spec = ring_gmm()
    np.testing.assert_allclose(np.linalg.norm(spec.centers, axis=1), 2.0)
    np.testing.assert_allclose(spec.centers[0], [0.0, 2.0], atol=1e-12)
    assert set(spec.top_cluster(3).tolist()) == {0, 1, 4}


def test_gmm_sampling_statistics():
    spec = ring_gmm()
    pts, labels = sample_gmm(spec, 50_000, np.random.default_rng(0), return_labels=True)
    assert pts.dtype == np.float32
    for k in range(5):
        sel = pts[labels == k]
        assert abs(len(sel) / len(pts) - 0.2) < 0.01
        np.testing.assert_allclose(sel.mean(0), spec.centers[k], atol=0.01)
        np.testing.assert_allclose(sel.std(0), 0.1, atol=0.005)


def test_gmm_zero_stddev_returns_centres():
    spec = GMMSpec(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.0, np.array([0.5, 0.5]))
    pts = sample_gmm(spec, 20, np.random.default_rng(1))
    assert all(any(np.allclose(p, c) for c in spec.centers) for p in pts)


def test_gmm_validation():
    with pytest.raises(ValueError):
        GMMSpec(np.zeros((2, 2)), 0.1, np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        sample_gmm(ring_gmm(), 0, np.random.default_rng(0))


# -- IDX ---------------------------------------------------------------------------------------

def test_idx_header_bytes(tmp_path):
    images = np.arange(2 * 28 * 28, dtype=np.uint8).reshape(2, 28, 28)
    write_idx(tmp_path / "img.idx", images)
    raw = (tmp_path / "img.idx").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">3i", raw[4:16]) == (2, 28, 28)
    assert raw[16:] == images.tobytes()


@pytest.mark.parametrize("gz", [False, True])
def test_idx_roundtrip(tmp_path, gz):
    rng = np.random.default_rng(2)
    mnist = MnistSet(rng.integers(0, 256, (5, 28, 28), dtype=np.uint8), rng.integers(0, 10, 5, dtype=np.uint8))
    img, lab = save_mnist(tmp_path / "train", mnist, gz=gz)
    back = load_idx(img, lab)
    assert np.array_equal(back.images, mnist.images) and np.array_equal(back.labels, mnist.labels)
    split = load_mnist_split(tmp_path, "train")
    assert np.array_equal(split.images, mnist.images)


def test_idx_bad_magic(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(b"\x00\x00\x0d\x03" + b"\x00" * 12)
    with pytest.raises(IdxMagicError):
        read_idx(path)
    write_idx(tmp_path / "labels.idx", np.zeros(3, dtype=np.uint8))
    with pytest.raises(IdxMagicError):
        load_idx(tmp_path / "labels.idx")


def test_idx_truncated(tmp_path):
    path = tmp_path / "short.idx.gz"
    with gzip.open(path, "wb") as fh:
        fh.write(struct.pack(">i", 0x803) + struct.pack(">3i", 10, 28, 28) + b"\x00" * 100)
    with pytest.raises(IdxTruncatedError):
        read_idx(path)


def test_idx_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_idx(tmp_path / "nope.idx")
    with pytest.raises(FileNotFoundError):
        load_mnist_split(tmp_path, "train")


def test_bundled_subset_loads():
    train = load_mnist_split("data/mnist5k", "train")
    assert train.images.shape[1:] == (28, 28) and train.images.dtype == np.uint8
    flat = train.flat()
    assert flat.min() >= 0.0 and flat.max() <= 1.0


# -- PCA -----------------------------------------------------------------------------------------

def test_pca_matches_svd_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 6))
    model = pca_fit(x, 4)
    xc = x - x.mean(0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    np.testing.assert_allclose(model.variances, s[:4] ** 2 / (len(x) - 1), rtol=1e-9)
    for comp, ref in zip(model.components, vt[:4]):
        assert abs(abs(comp @ ref) - 1.0) < 1e-8
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_full_rank_reconstruction():
    x = np.random.default_rng(4).standard_normal((50, 5))
    model = pca_fit(x, 5)
    np.testing.assert_allclose(pca_reconstruct(model, pca_project(model, x)), x, atol=1e-10)


def test_pca_bad_k_and_dims():
    x = np.zeros((10, 4))
    with pytest.raises(ValueError):
        pca_fit(x, 5)
    model = pca_fit(np.random.default_rng(5).standard_normal((10, 4)), 2)
    with pytest.raises(ValueError):
        pca_project(model, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        pca_reconstruct(model, np.zeros((1, 3)))


@settings(max_examples=30)
@given(st.integers(1, 6))
def test_pca_projection_idempotent(k):
    rng = np.random.default_rng(k)
    x = rng.standard_normal((40, 6))
    m = pca_fit(x, k)
    once = pca_reconstruct(m, pca_project(m, x))
    twice = pca_reconstruct(m, pca_project(m, once))
    np.testing.assert_allclose(once, twice, atol=1e-10)


def test_nearest_prefix_vs_brute_force():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((300, 8))
    model = pca_fit(data, 8)
    q = rng.standard_normal(8)
    idx, dists = nearest_by_pca_prefix(model, data, q, k=3, count=10)
    coords = pca_project(model, data)[:, :3]
    qc = pca_project(model, q[None])[0, :3]
    naive = sorted(range(len(data)), key=lambda i: (np.linalg.norm(coords[i] - qc), i))[:10]
    assert idx.tolist() == naive
    assert np.all(np.diff(dists) >= 0)
    with pytest.raises(ValueError):
        nearest_by_pca_prefix(model, data[:5], q, k=3, count=10)


# -- downsampling ------------------------------------------------------------------------------------

def test_downsample_block_means():
    img = np.arange(16, dtype=float).reshape(4, 4)
    np.testing.assert_allclose(downsample_avg(img, 2), [[2.5, 4.5], [10.5, 12.5]])


def test_downsample_factor_one_and_errors():
    img = np.random.default_rng(7).uniform(size=(6, 6))
    np.testing.assert_array_equal(downsample_avg(img, 1), img)
    with pytest.raises(ValueError):
        downsample_avg(img, 4)


def test_downsample_loop_oracle_and_flat():
    rng = np.random.default_rng(8)
    imgs = rng.uniform(size=(3, 28, 28))
    out = downsample_flat(imgs.reshape(3, -1), 28, 4).reshape(3, 7, 7)
    for n in range(3):
        for i in range(7):
            for j in range(7):
                assert out[n, i, j] == pytest.approx(imgs[n, 4 * i:4 * i + 4, 4 * j:4 * j + 4].mean())


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(1, 4))
def test_downsample_preserves_mean(f, n):
    img = np.random.default_rng(f * 10 + n).uniform(size=(f * n, f * n))
    assert downsample_avg(img, f).mean() == pytest.approx(img.mean())


def test_paired_dataset_validation():
    with pytest.raises(ValueError):
        PairedDataset(np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PairedDataset(np.zeros((0, 2)), np.zeros((0, 2)))
