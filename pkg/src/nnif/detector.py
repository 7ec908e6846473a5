"""Logistic-regression detector over NNIF features."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .metrics import roc_auc
from .neighbors import KINDS, FeatureSet, NNIFFeatureVector

DET_MAGIC = b"NNIFDET1"
log = logging.getLogger(__name__)


class DetectorError(ValueError):
    pass


def _as_set(features) -> FeatureSet:
    if isinstance(features, FeatureSet):
        return features
    if isinstance(features, NNIFFeatureVector):
        return FeatureSet.from_vectors([features])
    return FeatureSet.from_vectors(list(features))


def flatten(features, kinds: Sequence[str] = KINDS, layers=None, m: int | None = None) -> np.ndarray:
    """Rows of features ordered layer-major, then kind (Rup, Dup, Rdn, Ddn), then position."""
    fs = _as_set(features)
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise DetectorError(f"invalid feature kinds {list(kinds)}")
    if layers is not None:
        missing = [l for l in layers if l not in fs.layers]
        if missing:
            raise DetectorError(f"features lack layers {missing}")
        fs = fs.select_layers(layers)
    if m is not None:
        if m > fs.m:
            raise DetectorError(f"features have M={fs.m}, detector needs {m}")
        fs = fs.truncate(m)
    kind_pos = [KINDS.index(k) for k in KINDS if k in kinds]
    return fs.values[:, :, kind_pos, :].reshape(len(fs), -1)


def build_matrix(normal, adv, kinds: Sequence[str] = KINDS, layers=None, m: int | None = None):
    """Stack normal (label 0) and adversarial (label 1) features into ``(X, y)``."""
    normal, adv = _as_set(normal), _as_set(adv)
    if len(normal) == 0 or len(adv) == 0:
        raise DetectorError("both normal and adversarial features are required")
    if normal.layers != adv.layers or normal.m != adv.m:
        raise DetectorError("normal and adversarial features differ in layers or M")
    x = np.vstack([flatten(normal, kinds, layers, m), flatten(adv, kinds, layers, m)])
    y = np.r_[np.zeros(len(normal), dtype=np.int64), np.ones(len(adv), dtype=np.int64)]
    log.debug("detector matrix: %d normal / %d adversarial rows, %d columns", len(normal), len(adv), x.shape[1])
    return x, y


@dataclass
class DetectorModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    column_mask: np.ndarray
    kinds: tuple[str, ...] = KINDS
    layers: tuple[int, ...] | None = None
    m: int | None = None
    meta: dict = field(default_factory=dict)

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.column_mask.size:
            raise DetectorError(f"expected {self.column_mask.size} feature columns, got {x.shape[1]}")
        z = (x[:, self.column_mask] - self.mean) / self.std
        return z @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.decision(x))


def objective(w: np.ndarray, b: float, z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Summed logistic loss on standardized features plus ``l2 / 2 * ||w||^2`` (bias free)."""
    t = z @ w + b
    return float(np.sum(np.logaddexp(0.0, t) - y * t) + 0.5 * l2 * w @ w)


def fit_lr(x, y, l2: float = 1.0, max_iter: int = 100, tol: float = 1e-8, seed: int = 0,
           **meta) -> DetectorModel:
    """Standardize columns and fit L2-regularised logistic regression by damped Newton steps.

    Constant columns are dropped. ``seed`` is only recorded; the solver is
    deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DetectorError("x must be (n, p) with one label per row")
    if not np.all(np.isfinite(x)):
        raise DetectorError("non-finite feature values")
    if np.unique(y).size < 2:
        raise DetectorError("both classes are required to fit the detector")
    std = x.std(axis=0)
    mask = std > 0
    if not mask.any():
        raise DetectorError("all feature columns are constant")
    mean, std = x[:, mask].mean(axis=0), std[mask]
    z = (x[:, mask] - mean) / std
    n, p = z.shape
    za = np.hstack([z, np.ones((n, 1))])
    reg = np.r_[np.full(p, l2), 0.0]
    theta = np.zeros(p + 1)

    def f(th):
        return objective(th[:-1], th[-1], z, y, l2)

    value = f(theta)
    for _ in range(max_iter):
        prob = expit(za @ theta)
        grad = za.T @ (prob - y) + reg * theta
        if np.linalg.norm(grad) <= tol * max(1.0, n):
            break
        hess = (za * (prob * (1 - prob))[:, None]).T @ za + np.diag(reg) + 1e-12 * np.eye(p + 1)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            new = f(cand)
            if new <= value - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        theta, value = cand, new
    meta = dict(meta, l2=l2, seed=seed)
    return DetectorModel(theta[:-1], float(theta[-1]), mean, std, mask, meta=meta)


def fit_detector(normal, adv, kinds: Sequence[str] = KINDS, layers=None, m: int | None = None,
                 l2: float = 1.0, **meta) -> DetectorModel:
    x, y = build_matrix(normal, adv, kinds, layers, m)
    det = fit_lr(x, y, l2=l2, **meta)
    fs = _as_set(normal)
    det.kinds = tuple(k for k in KINDS if k in kinds)
    det.layers = tuple(fs.layers if layers is None else layers)
    det.m = fs.m if m is None else m
    return det


def score(det: DetectorModel, features) -> np.ndarray:
    """Detector probability of "adversarial" for each feature row."""
    return det.predict_proba(flatten(features, det.kinds, det.layers, det.m))


def _folds(groups: np.ndarray, n_folds: int, seed: int) -> list[np.ndarray]:
    uniq = np.unique(groups)
    order = np.random.default_rng(seed).permutation(uniq.size)
    return [uniq[part] for part in np.array_split(order, n_folds)]


def cv_auc(x, y, groups=None, n_folds: int = 5, seed: int = 0, l2: float = 1.0) -> float:
    """Mean held-out AUC over group-aware folds (rows sharing a group stay together)."""
    x, y = np.asarray(x), np.asarray(y)
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    if n_folds < 2:
        raise DetectorError("need at least two folds")
    aucs = []
    for held in _folds(groups, n_folds, seed):
        test = np.isin(groups, held)
        if np.unique(y[test]).size < 2 or np.unique(y[~test]).size < 2:
            raise DetectorError("a cross-validation fold lacks one of the classes")
        det = fit_lr(x[~test], y[~test], l2=l2)
        aucs.append(roc_auc(det.predict_proba(x[test]), y[test]))
    return float(np.mean(aucs))


def tune_m(candidates: Mapping[int, tuple], n_folds: int = 5, seed: int = 0, l2: float = 1.0):
    """Pick ``M`` with the best mean cross-validated AUC (ties go to the smaller ``M``).

    ``candidates`` maps ``M`` to ``(x, y)`` or ``(x, y, groups)``. Returns the
    chosen ``M`` and the per-candidate AUCs.
    """
    if not candidates:
        raise DetectorError("no candidate M values")
    if n_folds < 2:
        raise DetectorError("need at least two folds")
    if len(candidates) == 1:
        (only,) = candidates
        return only, {only: float("nan")}
    scores = {}
    for m in sorted(candidates):
        x, y, *rest = candidates[m]
        scores[m] = cv_auc(x, y, rest[0] if rest else None, n_folds, seed, l2)
    best = max(sorted(scores), key=lambda m: (scores[m], -m))
    return best, scores


def save_detector(det: DetectorModel, path) -> None:
    """``NNIFDET1`` binary with a JSON sidecar (``<path>.json``) describing mask, M and settings."""
    header = json.dumps({"kinds": list(det.kinds), "layers": list(det.layers or ()), "m": det.m,
                         "meta": det.meta}, sort_keys=True).encode()
    full, active = det.column_mask.size, int(det.column_mask.sum())
    blob = b"".join([DET_MAGIC, struct.pack("<I", len(header)), header, struct.pack("<II", full, active),
                     det.column_mask.astype(np.uint8).tobytes(), det.weights.astype("<f8").tobytes(),
                     struct.pack("<d", det.bias), det.mean.astype("<f8").tobytes(),
                     det.std.astype("<f8").tobytes()])
    Path(path).write_bytes(blob)
    sidecar = {"kinds": list(det.kinds), "layers": list(det.layers or ()), "M": det.m,
               "active_columns": active, "total_columns": full, "hyperparameters": det.meta}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_detector(path) -> DetectorModel:
    data = Path(path).read_bytes()
    if data[:8] != DET_MAGIC:
        raise DetectorError(f"{path}: not an NNIF detector file")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen])
    pos = 12 + hlen
    full, active = struct.unpack_from("<II", data, pos)
    pos += 8
    mask = np.frombuffer(data, np.uint8, full, pos).astype(bool)
    pos += full
    w = np.frombuffer(data, "<f8", active, pos).astype(np.float64)
    pos += 8 * active
    (bias,) = struct.unpack_from("<d", data, pos)
    pos += 8
    mean = np.frombuffer(data, "<f8", active, pos).astype(np.float64)
    pos += 8 * active
    std = np.frombuffer(data, "<f8", active, pos).astype(np.float64)
    return DetectorModel(w, bias, mean, std, mask, tuple(header["kinds"]), tuple(header["layers"]),
                         header["m"], header["meta"])
