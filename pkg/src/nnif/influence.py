"""Influence of training points on a test point's loss.

For a training point ``z`` and test point ``z_test`` the score is

    score(z) = -grad L(z_test)^T  A^{-1}  grad L(z)

with ``A = H + (weight_decay + damping) I`` and ``H`` the Hessian of the mean
training loss. One inverse-HVP ``s = A^{-1} grad L(z_test)`` is solved per
test point; scores are then dot products with per-example training gradients.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg

from . import model as nn
from .model import ModelParams

INF_MAGIC = b"NNIFINF1"
METHODS = ("exact", "lissa", "cg")


class InfluenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class InverseHvpConfig:
    method: str = "exact"
    damping: float = 0.01
    weight_decay: float = 0.0
    lissa_depth: int = 1000
    lissa_scale: float = 10.0
    lissa_repeats: int = 1
    lissa_batch_size: int | None = None
    cg_max_iter: int = 1000
    cg_tol: float = 1e-10
    exact_cap: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InfluenceError(f"unknown inverse-HVP method {self.method!r}")
        if not self.damping > 0:
            raise InfluenceError("damping must be positive")
        if self.lissa_depth < 0 or self.lissa_repeats < 1:
            raise InfluenceError("LiSSA depth must be >= 0 and repeats >= 1")
        if not self.lissa_scale > 0:
            raise InfluenceError("LiSSA scale must be positive")

    @property
    def shift(self) -> float:
        return self.weight_decay + self.damping


@dataclass
class InfluenceResult:
    """Scores of one test point over a training subset.

    ``helpful`` and ``harmful`` hold positions into ``subset`` (and into
    ``scores``); ``subset[helpful]`` gives training-set indices.
    """

    test_index: int
    subset: np.ndarray
    scores: np.ndarray
    helpful: np.ndarray | None = None
    harmful: np.ndarray | None = None


# --- linear-algebra cores (operator based) ---------------------------------

def solve_exact(matrix: np.ndarray, v: np.ndarray, shift: float) -> np.ndarray:
    """Solve ``(matrix + shift I) s = v`` by Cholesky; raise if not positive definite."""
    a = matrix + shift * np.eye(matrix.shape[0])
    try:
        factor = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError as exc:
        raise InfluenceError("damped Hessian is not positive definite; increase damping") from exc
    return linalg.cho_solve(factor, v)


def lissa(hvp_sample: Callable[[np.ndarray, int], np.ndarray], v: np.ndarray, shift: float,
          depth: int, scale: float, repeats: int = 1) -> np.ndarray:
    """Stochastic Neumann-series estimate of ``(H + shift I)^{-1} v``.

    ``hvp_sample(u, step)`` returns a (possibly minibatch) estimate of ``H u``.
    Iterates ``s <- v + s - (H s + shift s) / scale`` from ``s = v`` and returns
    the average over ``repeats`` of ``s / scale``.
    """
    v = np.asarray(v, dtype=np.float64)
    v_norm = np.linalg.norm(v)
    total = np.zeros_like(v)
    step = 0
    for _ in range(repeats):
        s = v.copy()
        for _ in range(depth):
            s = v + s - (hvp_sample(s, step) + shift * s) / scale
            step += 1
            if np.linalg.norm(s) > 1e6 * max(v_norm, 1e-300) or not np.all(np.isfinite(s)):
                raise InfluenceError("LiSSA recursion diverged; increase the scale or the damping")
        total += s / scale
    return total / repeats


def conjugate_gradient(op: Callable[[np.ndarray], np.ndarray], v: np.ndarray, max_iter: int,
                       tol: float) -> np.ndarray:
    """Plain CG for a symmetric positive-definite operator; ``tol`` is relative to ``||v||``."""
    v = np.asarray(v, dtype=np.float64)
    x = np.zeros_like(v)
    r = v.copy()
    p = r.copy()
    rs = r @ r
    stop = (tol * np.linalg.norm(v)) ** 2
    for _ in range(max_iter):
        if rs <= stop:
            break
        ap = op(p)
        curvature = p @ ap
        if curvature <= 0:
            raise InfluenceError("CG met non-positive curvature; the damped Hessian is indefinite")
        alpha = rs / curvature
        x += alpha * p
        r -= alpha * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


# --- model-level API -------------------------------------------------------

def inverse_hvp_exact(params: ModelParams, x, y, v, damping: float, weight_decay: float = 0.0,
                      cap: int = 2000) -> np.ndarray:
    if params.n_params > cap:
        raise InfluenceError(f"model has {params.n_params} parameters, above the exact-solver cap {cap}")
    if not damping > 0:
        raise InfluenceError("damping must be positive")
    return solve_exact(nn.hessian(params, x, y), np.asarray(v, dtype=np.float64), weight_decay + damping)


def inverse_hvp_iterative(params: ModelParams, x, y, v, cfg: InverseHvpConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise InfluenceError("empty training set")
    v = np.asarray(v, dtype=np.float64)
    if cfg.method == "cg":
        return conjugate_gradient(lambda u: nn.hvp(params, x, y, u) + cfg.shift * u, v, cfg.cg_max_iter,
                                  cfg.cg_tol)
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.lissa_batch_size

    def sample(u, _step):
        if bs is None or bs >= len(y):
            return nn.hvp(params, x, y, u)
        idx = rng.choice(len(y), bs, replace=False)
        return nn.hvp(params, x[idx], y[idx], u)

    return lissa(sample, v, cfg.shift, cfg.lissa_depth, cfg.lissa_scale, cfg.lissa_repeats)


class InfluenceEngine:
    """Scores many test points against one trained model and training set.

    The damped Hessian is factorised once (exact method) and the per-example
    training gradients are computed once.
    """

    def __init__(self, params: ModelParams, x_train, y_train, cfg: InverseHvpConfig = InverseHvpConfig(),
                 hessian: np.ndarray | None = None):
        self.params = params
        self.x_train = np.asarray(x_train, dtype=np.float64)
        self.y_train = np.asarray(y_train, dtype=np.int64)
        if len(self.y_train) == 0:
            raise InfluenceError("empty training set")
        self.cfg = cfg
        self._grads = None
        self._factor = None
        self._hessian = hessian  # optional precomputed (undamped, no weight decay) Hessian

    @property
    def train_grads(self) -> np.ndarray:
        if self._grads is None:
            self._grads = nn.per_example_grads(self.params, self.x_train, self.y_train)
        return self._grads

    def hessian(self) -> np.ndarray:
        if self._hessian is None:
            self._hessian = nn.hessian(self.params, self.x_train, self.y_train)
        return self._hessian

    def _exact_factor(self):
        if self._factor is None:
            if self.params.n_params > self.cfg.exact_cap:
                raise InfluenceError(f"model has {self.params.n_params} parameters, above the exact-solver "
                                     f"cap {self.cfg.exact_cap}")
            a = self.hessian() + self.cfg.shift * np.eye(self.params.n_params)
            try:
                self._factor = linalg.cho_factor(a, lower=True)
            except linalg.LinAlgError as exc:
                raise InfluenceError("damped Hessian is not positive definite; increase damping") from exc
        return self._factor

    def inverse_hvp(self, v: np.ndarray) -> np.ndarray:
        """Solve for one vector ``(P,)`` or several stacked as columns ``(P, m)``."""
        if self.cfg.method == "exact":
            return linalg.cho_solve(self._exact_factor(), v)
        if v.ndim == 2:
            return np.stack([self.inverse_hvp(col) for col in v.T], axis=1)
        return inverse_hvp_iterative(self.params, self.x_train, self.y_train, v, self.cfg)

    def scores(self, x_test, y_test, subset=None) -> np.ndarray:
        """Influence matrix of shape ``(n_test, |subset|)``."""
        g_test = nn.per_example_grads(self.params, np.atleast_2d(x_test), np.atleast_1d(y_test))
        s_test = self.inverse_hvp(g_test.T)
        g_train = self.train_grads if subset is None else self.train_grads[np.asarray(subset)]
        return -(g_train @ s_test).T


def influence_scores(params: ModelParams, x_test, y_test, x_train, y_train, subset=None,
                     cfg: InverseHvpConfig = InverseHvpConfig(), test_index: int = -1) -> InfluenceResult:
    subset = np.arange(len(y_train)) if subset is None else np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise InfluenceError("empty training subset")
    engine = InfluenceEngine(params, x_train, y_train, cfg)
    scores = engine.scores(np.atleast_2d(x_test), np.atleast_1d(y_test), subset)[0]
    return InfluenceResult(test_index, subset, scores)


def top_influence(scores, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the ``m`` largest (descending) and ``m`` smallest (ascending) scores.

    Ties go to the lower position.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= m <= scores.size:
        raise InfluenceError(f"M={m} out of range for {scores.size} scores")
    pos = np.arange(scores.size)
    helpful = np.lexsort((pos, -scores))[:m]
    harmful = np.lexsort((pos, scores))[:m]
    return helpful, harmful


def top_influence_rows(scores: np.ndarray, m: int, invert_sign: bool = False):
    """Row-wise :func:`top_influence` on an ``(n, S)`` score matrix."""
    if invert_sign:
        scores = -scores
    if not 1 <= m <= scores.shape[1]:
        raise InfluenceError(f"M={m} out of range for {scores.shape[1]} scores")
    # stable argsort keeps the lower position first among equal keys
    helpful = np.argsort(-scores, axis=1, kind="stable")[:, :m]
    harmful = np.argsort(scores, axis=1, kind="stable")[:, :m]
    return helpful, harmful


def subsample_train(n_train: int, count: int, seed: int) -> np.ndarray:
    """Sorted uniform sample of ``count`` distinct training indices."""
    if not 0 <= count <= n_train:
        raise InfluenceError(f"cannot sample {count} of {n_train} training points")
    return np.sort(np.random.default_rng(seed).choice(n_train, count, replace=False))


def calibrate_damping(hessian: np.ndarray, weight_decay: float, floor: float) -> float:
    """Smallest damping of the form ``floor`` or ``|most negative eigenvalue| + floor``."""
    lam_min = float(np.linalg.eigvalsh(hessian)[0]) + weight_decay
    return floor if lam_min >= 0 else -lam_min + floor


@dataclass
class InfluenceBatch:
    """Top-``M`` selections of many test points (what the pipeline caches)."""

    test_indices: np.ndarray
    subset: np.ndarray
    helpful: np.ndarray
    harmful: np.ndarray
    helpful_scores: np.ndarray
    harmful_scores: np.ndarray


def select_batch(scores: np.ndarray, test_indices, subset, m: int, invert_sign: bool = False) -> InfluenceBatch:
    helpful, harmful = top_influence_rows(scores, m, invert_sign)
    rows = np.arange(scores.shape[0])[:, None]
    return InfluenceBatch(np.asarray(test_indices, dtype=np.int64), np.asarray(subset, dtype=np.int64),
                          helpful, harmful, scores[rows, helpful], scores[rows, harmful])


def save_influence(batch: InfluenceBatch, path) -> None:
    n, m = batch.helpful.shape
    parts = [INF_MAGIC, struct.pack("<III", n, m, batch.subset.size),
             batch.test_indices.astype("<i8").tobytes(), batch.subset.astype("<i8").tobytes(),
             batch.helpful.astype("<i8").tobytes(), batch.harmful.astype("<i8").tobytes(),
             batch.helpful_scores.astype("<f8").tobytes(), batch.harmful_scores.astype("<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_influence(path) -> InfluenceBatch:
    data = Path(path).read_bytes()
    if data[:8] != INF_MAGIC:
        raise InfluenceError(f"{path}: not an NNIF influence file")
    n, m, s = struct.unpack_from("<III", data, 8)
    pos = 20
    out = []
    for dtype, count, shape in (("<i8", n, (n,)), ("<i8", s, (s,)), ("<i8", n * m, (n, m)),
                                ("<i8", n * m, (n, m)), ("<f8", n * m, (n, m)), ("<f8", n * m, (n, m))):
        out.append(np.frombuffer(data, dtype, count, pos).reshape(shape).copy())
        pos += count * 8
    ints = [a.astype(np.int64) for a in out[:4]]
    return InfluenceBatch(*ints, out[4].astype(np.float64), out[5].astype(np.float64))


def export_csv(results: list[InfluenceResult], path) -> None:
    """Rows ``test_index, train_index, score, rank`` with rank 0 = largest score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["test_index", "train_index", "score", "rank"])
        for res in results:
            order = np.lexsort((np.arange(res.scores.size), -res.scores))
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size)
            for pos in range(res.scores.size):
                writer.writerow([res.test_index, int(res.subset[pos]), repr(float(res.scores[pos])),
                                 int(rank[pos])])
