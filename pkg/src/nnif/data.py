"""Datasets: synthetic generators, IDX ingestion, splitting and filtering."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import ModelParams, predict

SPLITS = ("train", "val", "test")
DATASET_MAGIC = b"NNIFDS01"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Examples in ``[0, 1]^d`` with integer labels and a split tag per row.

    Rows that belong to no split carry the empty tag ``""``.
    """

    x: np.ndarray
    y: np.ndarray
    split: np.ndarray
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0] or self.split.shape != self.y.shape:
            raise DataError("examples, labels and split tags must have matching lengths")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise DataError("feature values must lie in [0, 1]")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        for arr in (self.x, self.y, self.split):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def subset(self, tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.indices(tag)
        return self.x[idx], self.y[idx], idx


def _untagged(n: int) -> np.ndarray:
    return np.full(n, "", dtype="<U5")


def blob_means(n_classes: int, dim: int, spacing: float) -> np.ndarray:
    """Class means on the hypercube lattice ``0.5 +/- spacing / 2``.

    Coordinate ``j`` of class ``k`` is on the high side when bit
    ``j mod ceil(log2 K)`` of ``k`` is set.
    """
    n_bits = max(1, math.ceil(math.log2(n_classes)))
    bits = np.array([[(k >> (j % n_bits)) & 1 for j in range(dim)] for k in range(n_classes)])
    return 0.5 + spacing * (bits - 0.5)


def gen_gaussian_blobs(n_classes: int, per_class: int, dim: int, spread: float, seed: int,
                       spacing: float = 0.2) -> LabeledDataset:
    if n_classes < 2 or dim < 2 or spread < 0 or per_class < 0 or not 0 < spacing <= 1:
        raise DataError("need K >= 2, d >= 2, spread >= 0, per_class >= 0, 0 < spacing <= 1")
    if n_classes > 2 ** dim:
        raise DataError("too many classes for the lattice in this dimension")
    rng = np.random.default_rng(seed)
    means = blob_means(n_classes, dim, spacing)
    xs, ys = [], []
    for k in range(n_classes):
        noise = rng.standard_normal((per_class, dim))
        xs.append(np.clip(means[k] + spread * noise, 0.0, 1.0))
        ys.append(np.full(per_class, k, dtype=np.int64))
    x = np.concatenate(xs)
    return LabeledDataset(x, np.concatenate(ys), _untagged(len(x)), n_classes,
                          f"blobs(K={n_classes},n={per_class},d={dim},spread={spread},spacing={spacing},seed={seed})")


def gen_two_rings(per_class: int, noise: float, seed: int,
                  radii: tuple[float, float] = (0.2, 0.4)) -> LabeledDataset:
    """Two concentric rings around ``(0.5, 0.5)``; class 0 is the inner ring."""
    r0, r1 = radii
    if per_class < 0 or noise < 0 or not 0 < r0 < r1 <= 0.5:
        raise DataError("invalid ring parameters")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for k, r in enumerate(radii):
        angle = rng.uniform(0.0, 2 * np.pi, per_class)
        radius = r + noise * rng.standard_normal(per_class)
        pts = 0.5 + radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(per_class, k, dtype=np.int64))
    x = np.concatenate(xs)
    return LabeledDataset(x, np.concatenate(ys), _untagged(len(x)), 2,
                          f"rings(n={per_class},noise={noise},seed={seed})")


def _read_idx_header(data: bytes, path, magic: int, n_dims: int):
    if len(data) < 4:
        raise DataError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise DataError(f"{path}: magic mismatch, expected 0x{magic:08x}, found 0x{found:08x}")
    if len(data) < 4 + 4 * n_dims:
        raise DataError(f"{path}: truncated IDX header")
    return struct.unpack(">" + "I" * n_dims, data[4:4 + 4 * n_dims])


def load_idx(images_path, labels_path, limit: int | None = None, n_classes: int = 10) -> LabeledDataset:
    """Read an unsigned-byte IDX image/label pair (MNIST layout), pixels scaled by 1/255."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    n_img, rows, cols = _read_idx_header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,) = _read_idx_header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise DataError(f"image count {n_img} does not match label count {n_lab}")
    n = n_img if limit is None else min(int(limit), n_img)
    d = rows * cols
    if len(img) < 16 + n * d or len(lab) < 8 + n:
        raise DataError("truncated IDX file")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * d, offset=16).reshape(n, d)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return LabeledDataset(pixels / 255.0, labels, _untagged(n), n_classes,
                          f"idx({Path(images_path).name},limit={limit})")


def split(dataset: LabeledDataset, n_train: int, n_val: int, n_test: int, seed: int) -> LabeledDataset:
    """Tag a random disjoint selection of rows as train / val / test."""
    sizes = (n_train, n_val, n_test)
    if min(sizes) < 0 or sum(sizes) > len(dataset):
        raise DataError(f"split sizes {sizes} exceed dataset size {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    tags = _untagged(len(dataset))
    start = 0
    for tag, size in zip(SPLITS, sizes):
        tags[order[start:start + size]] = tag
        start += size
    return replace(dataset, split=tags)


def filter_correct(params: ModelParams, dataset: LabeledDataset, tag: str) -> np.ndarray:
    """Indices (ascending) of rows tagged ``tag`` that the model classifies correctly."""
    idx = dataset.indices(tag)
    if idx.size == 0:
        return idx
    return idx[predict(params, dataset.x[idx]) == dataset.y[idx]]


def save_dataset(dataset: LabeledDataset, path) -> None:
    n, d = dataset.x.shape
    codes = np.array([SPLITS.index(t) + 1 if t else 0 for t in dataset.split], dtype=np.uint8)
    prov = dataset.provenance.encode()
    blob = (DATASET_MAGIC + struct.pack("<IIII", n, d, dataset.n_classes, len(prov)) + prov
            + dataset.x.astype("<f8").tobytes() + dataset.y.astype("<i8").tobytes() + codes.tobytes())
    Path(path).write_bytes(blob)


def load_dataset(path) -> LabeledDataset:
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise DataError(f"{path}: not an NNIF dataset file")
    n, d, k, plen = struct.unpack_from("<IIII", data, 8)
    pos = 24
    prov = data[pos:pos + plen].decode()
    pos += plen
    if len(data) != pos + n * d * 8 + n * 8 + n:
        raise DataError(f"{path}: truncated dataset file")
    x = np.frombuffer(data, "<f8", n * d, pos).reshape(n, d).astype(np.float64)
    pos += n * d * 8
    y = np.frombuffer(data, "<i8", n, pos).astype(np.int64)
    pos += n * 8
    codes = np.frombuffer(data, np.uint8, n, pos)
    names = ("",) + SPLITS
    tags = np.array([names[c] for c in codes], dtype="<U5").reshape(n)
    return LabeledDataset(x, y, tags, k, prov)


def export_csv(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label", "split"])
        for row, label, tag in zip(dataset.x, dataset.y, dataset.split):
            writer.writerow([repr(float(v)) for v in row] + [int(label), tag])
