"""Exact nearest-neighbour ranks and distances over training activations."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as nn
from .model import ModelParams

KINDS = ("Rup", "Dup", "Rdn", "Ddn")
_CHUNK = 64


class NeighborError(ValueError):
    pass


@dataclass(frozen=True)
class LayerIndexStore:
    layer: int
    activations: np.ndarray  # (N_train, E_l), row j = training point train_indices[j]
    train_indices: np.ndarray

    @property
    def dim(self) -> int:
        return self.activations.shape[1]

    def __len__(self) -> int:
        return self.activations.shape[0]


def resolve_layer(params: ModelParams, layer) -> int:
    if layer == "embedding":
        layer = params.n_hidden - 1
    layer = int(layer)
    if not 0 <= layer < params.n_hidden:
        raise NeighborError(f"layer {layer} is not a hidden layer (model has {params.n_hidden})")
    return layer


def layer_activations(params: ModelParams, x, layer) -> np.ndarray:
    return nn.forward(params, np.atleast_2d(x)).hidden[resolve_layer(params, layer)]


def fit_layer_store(params: ModelParams, x_train, layer="embedding", train_indices=None) -> LayerIndexStore:
    layer = resolve_layer(params, layer)
    acts = layer_activations(params, x_train, layer)
    idx = np.arange(len(acts)) if train_indices is None else np.asarray(train_indices, dtype=np.int64)
    acts.setflags(write=False)
    return LayerIndexStore(layer, acts, idx)


def query_ranks_distances(store: LayerIndexStore, q) -> tuple[np.ndarray, np.ndarray]:
    """Ranks and L2 distances of every stored row from ``q``.

    ``R[j]`` is row ``j``'s 0-based position in ascending distance order,
    ties resolved toward the lower row. Accepts one query ``(E,)`` or a batch
    ``(n, E)``.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != store.dim:
        raise NeighborError(f"query dimension {q.shape[1]} does not match layer width {store.dim}")
    n, N = q.shape[0], len(store)
    sq = np.empty((n, N))
    for start in range(0, n, _CHUNK):
        diff = q[start:start + _CHUNK, None, :] - store.activations[None, :, :]
        sq[start:start + _CHUNK] = np.einsum("nje,nje->nj", diff, diff)
    order = np.argsort(sq, axis=1, kind="stable")
    ranks = np.empty((n, N), dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(N)[None, :].repeat(n, axis=0), axis=1)
    dist = np.sqrt(sq)
    return (ranks[0], dist[0]) if single else (ranks, dist)


@dataclass
class NNIFFeatureVector:
    """Features of one example: arrays of shape ``(n_layers, M)`` per kind."""

    layers: tuple[int, ...]
    r_up: np.ndarray
    d_up: np.ndarray
    r_dn: np.ndarray
    d_dn: np.ndarray
    label: int = 0

    @property
    def m(self) -> int:
        return self.r_up.shape[-1]

    def as_array(self) -> np.ndarray:
        """``(n_layers, 4, M)`` in kind order Rup, Dup, Rdn, Ddn."""
        return np.stack([self.r_up, self.d_up, self.r_dn, self.d_dn], axis=1).astype(np.float64)


def gather_features(ranks, dists, helpful, harmful, layer: int = 0, label: int = 0) -> NNIFFeatureVector:
    """Pick ranks/distances of the helpful and harmful points (one layer, one example)."""
    ranks, dists = np.asarray(ranks), np.asarray(dists)
    helpful, harmful = np.asarray(helpful, dtype=np.int64), np.asarray(harmful, dtype=np.int64)
    for idx in (helpful, harmful):
        if idx.size and (idx.min() < 0 or idx.max() >= ranks.size):
            raise NeighborError("influence index outside the ranked training subset")
    return NNIFFeatureVector((layer,), ranks[helpful][None], dists[helpful][None], ranks[harmful][None],
                             dists[harmful][None], label)


@dataclass
class FeatureSet:
    """NNIF features for many examples: ``values`` has shape ``(n, n_layers, 4, M)``."""

    values: np.ndarray
    layers: tuple[int, ...]
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[3]

    def truncate(self, m: int) -> "FeatureSet":
        if not 1 <= m <= self.m:
            raise NeighborError(f"cannot take M={m} from features with M={self.m}")
        return FeatureSet(self.values[..., :m], self.layers, self.labels, self.indices)

    def select_layers(self, layers: Sequence[int]) -> "FeatureSet":
        pos = [self.layers.index(l) for l in layers]
        return FeatureSet(self.values[:, pos], tuple(layers), self.labels, self.indices)

    def vector(self, i: int) -> NNIFFeatureVector:
        v = self.values[i]
        return NNIFFeatureVector(self.layers, v[:, 0].astype(np.int64), v[:, 1], v[:, 2].astype(np.int64),
                                 v[:, 3], int(self.labels[i]))

    @classmethod
    def from_vectors(cls, vectors: Sequence[NNIFFeatureVector], indices=None) -> "FeatureSet":
        if not vectors:
            raise NeighborError("no feature vectors")
        layers = vectors[0].layers
        if any(v.layers != layers or v.m != vectors[0].m for v in vectors):
            raise NeighborError("feature vectors disagree on layers or M")
        idx = np.arange(len(vectors)) if indices is None else np.asarray(indices)
        return cls(np.stack([v.as_array() for v in vectors]), layers,
                   np.array([v.label for v in vectors], dtype=np.int64), idx)

    @classmethod
    def concat(cls, sets: Sequence["FeatureSet"]) -> "FeatureSet":
        return cls(np.concatenate([s.values for s in sets]), sets[0].layers,
                   np.concatenate([s.labels for s in sets]), np.concatenate([s.indices for s in sets]))


def compute_features(params: ModelParams, stores: Sequence[LayerIndexStore], x, helpful, harmful,
                     label: int = 0, indices=None) -> FeatureSet:
    """Batch NNIF features for queries ``x`` with per-row influence selections.

    ``helpful``/``harmful`` are ``(n, M)`` positions into the stores' rows.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    helpful, harmful = np.asarray(helpful), np.asarray(harmful)
    n, m = helpful.shape
    trace = nn.forward(params, x)
    out = np.empty((n, len(stores), 4, m))
    for k, store in enumerate(stores):
        if helpful.size and (helpful.max() >= len(store) or harmful.max() >= len(store)):
            raise NeighborError("influence selection does not index the store's training subset")
        ranks, dists = query_ranks_distances(store, trace.hidden[store.layer])
        ranks, dists = np.atleast_2d(ranks), np.atleast_2d(dists)
        out[:, k, 0] = np.take_along_axis(ranks, helpful, axis=1)
        out[:, k, 1] = np.take_along_axis(dists, helpful, axis=1)
        out[:, k, 2] = np.take_along_axis(ranks, harmful, axis=1)
        out[:, k, 3] = np.take_along_axis(dists, harmful, axis=1)
    idx = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
    return FeatureSet(out, tuple(s.layer for s in stores), np.full(n, label, dtype=np.int64), idx)


def export_csv(features: FeatureSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "layer", "kind", "position", "value", "label"])
        for i in range(len(features)):
            for k, layer in enumerate(features.layers):
                for j, kind in enumerate(KINDS):
                    for pos in range(features.m):
                        value = features.values[i, k, j, pos]
                        text = str(int(value)) if j in (0, 2) else repr(float(value))
                        writer.writerow([int(features.indices[i]), layer, kind, pos, text,
                                         int(features.labels[i])])
