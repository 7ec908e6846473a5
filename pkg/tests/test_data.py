import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnif import data as dt
from nnif import model as nn
from nnif.data import DataError


def write_idx(tmp_path, images, labels, img_magic=0x803, lab_magic=0x801):
    n, r, c = images.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", lab_magic, len(labels)) + np.asarray(labels, np.uint8).tobytes())
    return ip, lp


def byte_reader(images_path, labels_path, limit):
    """Reference reader working byte by byte."""
    img, lab = images_path.read_bytes(), labels_path.read_bytes()
    r, c = int.from_bytes(img[8:12], "big"), int.from_bytes(img[12:16], "big")
    pixels = [[img[16 + i * r * c + j] / 255 for j in range(r * c)] for i in range(limit)]
    return np.array(pixels), np.array([lab[8 + i] for i in range(limit)])


def test_blobs_degenerate_spread_hits_means():
    ds = dt.gen_gaussian_blobs(3, 5, 4, 0.0, 0)
    means = dt.blob_means(3, 4, 0.2)
    assert np.array_equal(ds.x, means[ds.y])


def test_blobs_are_reproducible():
    a, b = dt.gen_gaussian_blobs(3, 20, 5, 0.1, 4), dt.gen_gaussian_blobs(3, 20, 5, 0.1, 4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_blob_sample_means_near_true_means():
    spread = 0.05
    ds = dt.gen_gaussian_blobs(3, 100, 6, spread, 1)
    means = dt.blob_means(3, 6, 0.2)
    for k in range(3):
        # root-mean-square over coordinates, so the 3-sigma bound is not a multiple-comparison lottery
        err = ds.x[ds.y == k].mean(axis=0) - means[k]
        assert np.sqrt(np.mean(err ** 2)) <= 3 * spread / np.sqrt(100)


def test_blobs_reject_bad_parameters():
    with pytest.raises(DataError):
        dt.gen_gaussian_blobs(1, 5, 3, 0.1, 0)
    with pytest.raises(DataError):
        dt.gen_gaussian_blobs(3, 5, 3, -0.1, 0)


def test_rings_geometry_and_determinism():
    ds = dt.gen_two_rings(50, 0.0, 2)
    r = np.linalg.norm(ds.x - 0.5, axis=1)
    assert np.allclose(r[ds.y == 0], 0.2) and np.allclose(r[ds.y == 1], 0.4)
    noisy = dt.gen_two_rings(200, 0.03, 2)
    r = np.linalg.norm(noisy.x - 0.5, axis=1)
    assert r[noisy.y == 0].max() < r[noisy.y == 1].min()
    assert np.array_equal(noisy.x, dt.gen_two_rings(200, 0.03, 2).x)


def test_idx_matches_byte_reader(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (12, 4, 3))
    labels = rng.integers(0, 10, 12)
    ip, lp = write_idx(tmp_path, images, labels)
    ds = dt.load_idx(ip, lp, limit=10)
    ref_x, ref_y = byte_reader(ip, lp, 10)
    assert np.array_equal(ds.x, ref_x) and np.array_equal(ds.y, ref_y)
    assert len(dt.load_idx(ip, lp, limit=0)) == 0


def test_idx_errors(tmp_path):
    images = np.zeros((3, 2, 2))
    ip, lp = write_idx(tmp_path, images, [0, 1, 2], lab_magic=0x803)
    with pytest.raises(DataError, match="magic"):
        dt.load_idx(ip, lp)
    ip, lp = write_idx(tmp_path, images, [0, 1])
    with pytest.raises(DataError, match="count"):
        dt.load_idx(ip, lp)
    ip, lp = write_idx(tmp_path, images, [0, 1, 2])
    ip.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(DataError, match="truncated"):
        dt.load_idx(ip, lp)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 60), a=st.integers(0, 60), b=st.integers(0, 60), seed=st.integers(0, 99))
def test_split_is_a_partition(n, a, b, seed):
    ds = dt.gen_gaussian_blobs(2, 30, 2, 0.1, 0)
    if n + a + b > len(ds):
        with pytest.raises(DataError):
            dt.split(ds, n, a, b, seed)
        return
    out = dt.split(ds, n, a, b, seed)
    sets = [set(out.indices(t)) for t in dt.SPLITS]
    assert [len(s) for s in sets] == [n, a, b]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert np.array_equal(out.split, dt.split(ds, n, a, b, seed).split)


def test_split_all_train():
    ds = dt.gen_gaussian_blobs(2, 10, 2, 0.1, 0)
    assert np.all(dt.split(ds, 20, 0, 0, 3).split == "train")


def test_filter_correct_tie_break_and_order():
    ds = dt.split(dt.gen_gaussian_blobs(2, 10, 3, 0.1, 0), 20, 0, 0, 1)
    zero = nn.init_model([3, 2], 0).with_flat(np.zeros(8))
    kept = dt.filter_correct(zero, ds, "train")
    assert np.array_equal(kept, np.sort(np.flatnonzero(ds.y == 0)))


def test_filter_correct_keeps_all_of_fitted_blobs():
    ds = dt.split(dt.gen_gaussian_blobs(2, 50, 2, 0.05, 0, spacing=0.5), 100, 0, 0, 0)
    x, y, idx = ds.subset("train")
    params = nn.train(nn.init_model([2, 6, 2], 0), x, y, nn.TrainConfig(lr=0.1, epochs=100, batch_size=16))
    kept = dt.filter_correct(params, ds, "train")
    assert np.array_equal(kept, np.sort(idx))
    assert np.all(np.diff(kept) > 0)


def test_values_in_unit_box_and_roundtrip(tmp_path):
    ds = dt.split(dt.gen_gaussian_blobs(4, 30, 3, 0.4, 2), 60, 20, 20, 0)
    assert ds.x.min() >= 0 and ds.x.max() <= 1 and ds.y.max() < 4
    dt.save_dataset(ds, tmp_path / "d.bin")
    back = dt.load_dataset(tmp_path / "d.bin")
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.split, ds.split)
    assert back.provenance == ds.provenance
    dt.export_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "f0,f1,f2,label,split" and len(lines) == 121


def test_dataset_rejects_out_of_box_values():
    with pytest.raises(DataError):
        dt.LabeledDataset(np.array([[1.5]]), np.array([0]), np.array([""]), 2)
