"""Adversarial attacks on :class:`~nnif.model.ModelParams` classifiers.

All attacks are vectorised over a batch of examples ``X`` of shape ``(n, d)``
and return an :class:`AdversarialBatch`. Inputs live in the box ``[0, 1]^d``
and every returned example stays inside it.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as nn
from .model import ModelParams

ATTACKS = ("fgsm", "pgd", "jsma", "deepfool", "cw", "ead", "cw_opt")
ADV_MAGIC = b"NNIFADV1"
L0_TOL = 1e-8
_TANH_MARGIN = 1e-9


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    name: str = "fgsm"
    eps: float = 0.1
    step_size: float | None = None  # PGD; defaults to eps / 10
    steps: int = 40
    random_start: bool = False
    max_iter: int = 50  # DeepFool
    overshoot: float = 0.02
    initial_const: float = 0.01  # CW family
    kappa: float = 0.0
    learning_rate: float = 0.01
    opt_steps: int = 200
    binary_steps: int = 9
    beta: float = 0.1  # EAD
    theta_pix: float = 1.0  # JSMA
    gamma: float = 0.25
    targeted: bool = False
    target: int | None = None
    reg_weight: float = 1.0  # CW-Opt
    reg_norm: str = "l1"
    seed: int = 0

    def __post_init__(self):
        if self.name not in ATTACKS:
            raise AttackError(f"unknown attack {self.name!r}")
        if self.eps < 0:
            raise AttackError("eps must be non-negative")
        if min(self.steps, self.max_iter, self.opt_steps, self.binary_steps) < 0:
            raise AttackError("iteration counts must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise AttackError("gamma must lie in [0, 1]")
        if self.beta < 0 or self.initial_const < 0:
            raise AttackError("beta and initial_const must be non-negative")
        if self.reg_norm not in ("l1", "l2"):
            raise AttackError("reg_norm must be 'l1' or 'l2'")

    @property
    def alpha(self) -> float:
        return self.eps / 10 if self.step_size is None else self.step_size


@dataclass(frozen=True)
class AdversarialRecord:
    index: int
    x: np.ndarray
    x_adv: np.ndarray
    pred_before: int
    pred_after: int
    success: bool
    l0: int
    l1: float
    l2: float
    linf: float
    attack: str
    config: dict


@dataclass
class AdversarialBatch:
    """Column-wise storage for a batch of attacked examples."""

    indices: np.ndarray
    x: np.ndarray
    x_adv: np.ndarray
    pred_before: np.ndarray
    pred_after: np.ndarray
    success: np.ndarray
    attack: str
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.x

    @property
    def l0(self) -> np.ndarray:
        return np.sum(np.abs(self.delta) > L0_TOL, axis=1)

    @property
    def l1(self) -> np.ndarray:
        return np.abs(self.delta).sum(axis=1)

    @property
    def l2(self) -> np.ndarray:
        return np.linalg.norm(self.delta, axis=1)

    @property
    def linf(self) -> np.ndarray:
        return np.abs(self.delta).max(axis=1, initial=0.0)

    def record(self, i: int) -> AdversarialRecord:
        return AdversarialRecord(int(self.indices[i]), self.x[i], self.x_adv[i], int(self.pred_before[i]),
                                 int(self.pred_after[i]), bool(self.success[i]), int(self.l0[i]),
                                 float(self.l1[i]), float(self.l2[i]), float(self.linf[i]),
                                 self.attack, dict(self.config))

    def records(self) -> list[AdversarialRecord]:
        return [self.record(i) for i in range(len(self))]


def _prepare(params: ModelParams, X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise AttackError(f"input dimension {X.shape[1]} does not match model ({params.input_dim})")
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (X.shape[0],):
        raise AttackError("one label per example required")
    return X, y


def _targets(params: ModelParams, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.target is not None:
        return np.full_like(y, cfg.target)
    return (y + 1) % params.n_classes


def _finish(params, X, x_adv, indices, cfg: AttackConfig, name: str, targets=None) -> AdversarialBatch:
    before = nn.predict(params, X)
    after = nn.predict(params, x_adv)
    success = after == targets if targets is not None else after != before
    idx = np.arange(len(X)) if indices is None else np.asarray(indices, dtype=np.int64)
    snapshot = asdict(replace(cfg, name=name))
    return AdversarialBatch(idx, X, x_adv, before, after, success, name, snapshot)


def fgsm(params: ModelParams, X, y, cfg: AttackConfig = AttackConfig(), indices=None) -> AdversarialBatch:
    """One signed-gradient step of size ``eps`` followed by clipping to the box."""
    X, y = _prepare(params, X, y)
    if cfg.targeted:
        t = _targets(params, y, cfg)
        x_adv = np.clip(X - cfg.eps * np.sign(nn.grad_input(params, X, t)), 0.0, 1.0)
        return _finish(params, X, x_adv, indices, cfg, "fgsm", t)
    x_adv = np.clip(X + cfg.eps * np.sign(nn.grad_input(params, X, y)), 0.0, 1.0)
    return _finish(params, X, x_adv, indices, cfg, "fgsm")


def pgd(params: ModelParams, X, y, cfg: AttackConfig = AttackConfig(), indices=None) -> AdversarialBatch:
    """Projected signed-gradient ascent inside the ``eps`` L-inf ball and the box.

    The optional random start for example ``i`` draws from
    ``default_rng([cfg.seed, indices[i]])`` so batch order does not matter.
    """
    X, y = _prepare(params, X, y)
    if cfg.steps > 0 and cfg.alpha <= 0:
        raise AttackError("PGD step size must be positive")
    idx = np.arange(len(X)) if indices is None else np.asarray(indices, dtype=np.int64)
    t = _targets(params, y, cfg) if cfg.targeted else None
    lo, hi = np.maximum(X - cfg.eps, 0.0), np.minimum(X + cfg.eps, 1.0)
    x = X.copy()
    if cfg.random_start:
        noise = np.stack([np.random.default_rng([cfg.seed, int(i)]).uniform(-cfg.eps, cfg.eps, X.shape[1])
                          for i in idx]) if len(idx) else np.zeros_like(X)
        x = np.clip(X + noise, lo, hi)
    for _ in range(cfg.steps):
        if t is None:
            x = x + cfg.alpha * np.sign(nn.grad_input(params, x, y))
        else:
            x = x - cfg.alpha * np.sign(nn.grad_input(params, x, t))
        x = np.clip(np.clip(x, X - cfg.eps, X + cfg.eps), 0.0, 1.0)
    return _finish(params, X, x, indices, cfg, "pgd", t)


def saliency_pairs(jacobian: np.ndarray, target: int, domain: np.ndarray, increase: bool = True):
    """Pair saliency scores for one example.

    ``jacobian`` is ``(K, d)``. For features ``p, q`` with target-gradient sum
    ``a`` and other-class-gradient sum ``b``, a pair is admissible when
    ``a`` pushes the target logit in the perturbation direction and ``b``
    pushes the others the opposite way; its score is ``|a| * |b|``.
    Returns the score matrix with ``-inf`` on inadmissible pairs.
    """
    a_single = jacobian[target]
    b_single = jacobian.sum(axis=0) - a_single
    a = a_single[:, None] + a_single[None, :]
    b = b_single[:, None] + b_single[None, :]
    sign = 1.0 if increase else -1.0
    ok = (sign * a > 0) & (sign * b < 0)
    ok &= domain[:, None] & domain[None, :]
    np.fill_diagonal(ok, False)
    return np.where(ok, np.abs(a) * np.abs(b), -np.inf)


def jsma(params: ModelParams, X, y, cfg: AttackConfig = AttackConfig(), indices=None) -> AdversarialBatch:
    """Targeted saliency-map attack changing feature pairs by ``theta_pix``.

    The target is ``cfg.target`` or ``(y + 1) mod K``. At most
    ``floor(gamma * d)`` features are ever modified.
    """
    X, y = _prepare(params, X, y)
    t = _targets(params, y, cfg)
    d = X.shape[1]
    budget = int(np.floor(cfg.gamma * d + 1e-12))
    increase = cfg.theta_pix >= 0
    x_adv = X.copy()
    for i in range(len(X)):
        x = X[i].copy()
        domain = x < 1.0 if increase else x > 0.0
        changed = 0
        while changed + 2 <= budget and nn.predict(params, x) != t[i]:
            scores = saliency_pairs(nn.logit_jacobian(params, x), int(t[i]), domain, increase)
            flat = int(np.argmax(scores))
            if not np.isfinite(scores.flat[flat]):
                break
            p, q = divmod(flat, d)
            for f in (p, q):
                x[f] = np.clip(x[f] + cfg.theta_pix, 0.0, 1.0)
                domain[f] = False
            changed += 2
        x_adv[i] = x
    return _finish(params, X, x_adv, indices, cfg, "jsma", t)


def deepfool(params: ModelParams, X, y=None, cfg: AttackConfig = AttackConfig(), indices=None) -> AdversarialBatch:
    """Untargeted DeepFool. ``y`` is ignored; the reference label is the clean prediction."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    k0 = nn.predict(params, X)
    r_tot = np.zeros_like(X)
    active = np.ones(n, dtype=bool)
    scale = 1.0 + cfg.overshoot
    for _ in range(cfg.max_iter):
        x_cur = X + scale * r_tot
        active &= nn.predict(params, x_cur) == k0
        if not active.any():
            break
        ids = np.flatnonzero(active)
        z = nn.logits(params, x_cur[ids])
        jac = nn.logit_jacobian(params, x_cur[ids])
        w = jac - jac[np.arange(len(ids)), k0[ids]][:, None, :]
        f = z - z[np.arange(len(ids)), k0[ids]][:, None]
        norms = np.linalg.norm(w, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(f) / norms
        ratio[np.arange(len(ids)), k0[ids]] = np.inf
        ratio[~np.isfinite(ratio)] = np.inf
        best = np.argmin(ratio, axis=1)
        wl = w[np.arange(len(ids)), best]
        fl = f[np.arange(len(ids)), best]
        denom = np.sum(wl * wl, axis=1)
        step = np.where(denom > 0, np.abs(fl) / np.where(denom > 0, denom, 1.0), 0.0)
        r_tot[ids] += step[:, None] * wl
    x_adv = np.clip(X + scale * r_tot, 0.0, 1.0)
    return _finish(params, X, x_adv, indices, cfg, "deepfool")


# --- Carlini-Wagner family -------------------------------------------------

def cw_margin(z: np.ndarray, y: np.ndarray, kappa: float, targets=None):
    """Hinge ``max(Z_y - max_{j != y} Z_j, -kappa)`` (untargeted) and its logit gradient."""
    n = z.shape[0]
    rows = np.arange(n)
    ref = y if targets is None else targets
    masked = z.copy()
    masked[rows, ref] = -np.inf
    other = np.argmax(masked, axis=1)
    if targets is None:
        raw = z[rows, y] - z[rows, other]
        hi, lo = y, other
    else:
        raw = z[rows, other] - z[rows, targets]
        hi, lo = other, targets
    value = np.maximum(raw, -kappa)
    grad = np.zeros_like(z)
    live = raw > -kappa
    grad[rows[live], hi[live]] = 1.0
    grad[rows[live], lo[live]] -= 1.0
    return value, grad


def cw_objective(params: ModelParams, x0, x_adv, y, c, kappa: float = 0.0) -> np.ndarray:
    """Per-example ``||x_adv - x0||^2 + c * margin(x_adv)``."""
    x0, x_adv = np.atleast_2d(x0), np.atleast_2d(x_adv)
    value, _ = cw_margin(nn.logits(params, x_adv), np.atleast_1d(y), kappa)
    return np.sum((x_adv - x0) ** 2, axis=1) + np.asarray(c) * value


def ead_objective(params: ModelParams, x0, x_adv, y, c, beta: float, kappa: float = 0.0) -> np.ndarray:
    x0, x_adv = np.atleast_2d(x0), np.atleast_2d(x_adv)
    return cw_objective(params, x0, x_adv, y, c, kappa) + beta * np.abs(x_adv - x0).sum(axis=1)


def embedding_distance_sum(emb: np.ndarray, helpful: np.ndarray, norm: str = "l1"):
    """Sum of distances from ``emb`` (n, E) to each helpful embedding (n, M, E), plus gradient."""
    diff = emb[:, None, :] - helpful
    if norm == "l1":
        return np.abs(diff).sum(axis=(1, 2)), np.sign(diff).sum(axis=1)
    dist = np.linalg.norm(diff, axis=2)
    safe = np.where(dist > 0, dist, 1.0)
    return dist.sum(axis=1), (diff / safe[:, :, None] * (dist > 0)[:, :, None]).sum(axis=1)


class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, w, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return w - self.lr * mh / (np.sqrt(vh) + self.eps)


def _success(z, y, targets):
    pred = np.argmax(z, axis=1)
    return pred != y if targets is None else pred == targets


def _update_consts(const, lower, upper, succeeded):
    upper = np.where(succeeded, np.minimum(upper, const), upper)
    lower = np.where(succeeded, lower, np.maximum(lower, const))
    mid = (lower + upper) / 2
    const = np.where(upper < 1e10, mid, const * 10)
    return const, lower, upper


def _cw_core(params: ModelParams, X, y, cfg: AttackConfig, helpful=None, reg_weight: float = 0.0):
    n, _ = X.shape
    targets = _targets(params, y, cfg) if cfg.targeted else None
    w_max = np.arctanh(1 - 2 * _TANH_MARGIN)
    w_init = np.arctanh(np.clip(2 * X - 1, -1 + 2 * _TANH_MARGIN, 1 - 2 * _TANH_MARGIN))
    const = np.full(n, cfg.initial_const, dtype=np.float64)
    lower, upper = np.zeros(n), np.full(n, 1e10)
    best_l2 = np.full(n, np.inf)
    best_x = np.full_like(X, np.nan)
    # distances are measured from the reconstructed input so a zero trade-off constant
    # gives an exactly zero gradient (Adam would otherwise amplify rounding noise)
    x_rec = (np.tanh(w_init) + 1) / 2
    last_x = x_rec
    for _ in range(cfg.binary_steps):
        w = w_init.copy()
        opt = _Adam(w.shape, cfg.learning_rate)
        step_success = np.zeros(n, dtype=bool)
        for _ in range(cfg.opt_steps):
            x_adv = (np.tanh(w) + 1) / 2
            trace = nn.forward(params, x_adv)
            z = trace.logits
            ok = _success(z, y, targets)
            l2 = np.sum((x_adv - X) ** 2, axis=1)
            improve = ok & (l2 < best_l2)
            best_l2[improve] = l2[improve]
            best_x[improve] = x_adv[improve]
            step_success |= ok
            _, d_margin = cw_margin(z, y, cfg.kappa, targets)
            d_emb = None
            if helpful is not None:
                _, g_emb = embedding_distance_sum(trace.embedding, helpful, cfg.reg_norm)
                d_emb = (const * reg_weight)[:, None] * g_emb
            g_x = 2 * (x_adv - x_rec) + nn.input_vjp(params, x_adv, const[:, None] * d_margin, d_emb)
            w = np.clip(opt.step(w, g_x * (1 - np.tanh(w) ** 2) / 2), -w_max, w_max)
        last_x = (np.tanh(w) + 1) / 2
        z = nn.logits(params, last_x)
        ok = _success(z, y, targets)
        l2 = np.sum((last_x - X) ** 2, axis=1)
        improve = ok & (l2 < best_l2)
        best_l2[improve] = l2[improve]
        best_x[improve] = last_x[improve]
        step_success |= ok
        const, lower, upper = _update_consts(const, lower, upper, step_success)
    found = np.isfinite(best_l2)
    return np.where(found[:, None], best_x, last_x), targets


def cw_l2(params: ModelParams, X, y, cfg: AttackConfig = AttackConfig(name="cw"), indices=None) -> AdversarialBatch:
    """Carlini-Wagner L2 with tanh box reparameterisation and a binary search over ``c``.

    Returns the smallest-L2 successful iterate, or the final iterate when no
    iterate succeeded. Outputs lie strictly inside ``(0, 1)^d``.
    """
    X, y = _prepare(params, X, y)
    if cfg.opt_steps <= 0:
        raise AttackError("CW needs at least one optimisation step")
    x_adv, t = _cw_core(params, X, y, cfg)
    return _finish(params, X, x_adv, indices, cfg, "cw", t)


def cw_opt(params: ModelParams, X, y, helpful_embeddings, cfg: AttackConfig = AttackConfig(name="cw_opt"),
           indices=None) -> AdversarialBatch:
    """CW attack with an added pull toward the clean input's helpful training embeddings.

    ``helpful_embeddings`` has shape ``(n, M, E)`` (or ``(M, E)`` for one
    example). The penalty is ``reg_weight * sum_i ||emb(x_adv) - e_i||`` with
    the L1 norm by default, scaled by the same constant ``c`` as the margin.
    """
    X, y = _prepare(params, X, y)
    helpful = np.asarray(helpful_embeddings, dtype=np.float64)
    if helpful.ndim == 2:
        helpful = helpful[None]
    if helpful.ndim != 3 or helpful.shape[0] != len(X) or helpful.shape[2] != params.embedding_dim:
        raise AttackError("helpful embeddings must have shape (n, M, embedding_dim)")
    if helpful.shape[1] == 0:
        raise AttackError("cw_opt needs at least one helpful training embedding (M >= 1)")
    if cfg.opt_steps <= 0:
        raise AttackError("CW needs at least one optimisation step")
    x_adv, t = _cw_core(params, X, y, cfg, helpful, cfg.reg_weight)
    return _finish(params, X, x_adv, indices, cfg, "cw_opt", t)


def shrink_project(z: np.ndarray, x0: np.ndarray, threshold: float) -> np.ndarray:
    """Proximal operator of ``threshold * ||. - x0||_1`` followed by projection onto the box."""
    delta = z - x0
    shrunk = np.sign(delta) * np.maximum(np.abs(delta) - threshold, 0.0)
    return np.clip(x0 + shrunk, 0.0, 1.0)


def ead(params: ModelParams, X, y, cfg: AttackConfig = AttackConfig(name="ead"), indices=None) -> AdversarialBatch:
    """Elastic-net attack solved with FISTA (shrinkage threshold ``beta * step``).

    The step size decays as ``lr * sqrt(1 - k / K)``. Among successful iterates
    the one with the smallest elastic-net distance ``||d||^2 + beta ||d||_1``
    is kept.
    """
    X, y = _prepare(params, X, y)
    n = X.shape[0]
    targets = _targets(params, y, cfg) if cfg.targeted else None
    const = np.full(n, cfg.initial_const, dtype=np.float64)
    lower, upper = np.zeros(n), np.full(n, 1e10)
    best_en = np.full(n, np.inf)
    best_x = np.full_like(X, np.nan)
    x_k = X.copy()
    for _ in range(cfg.binary_steps):
        x_k, slack = X.copy(), X.copy()
        step_success = np.zeros(n, dtype=bool)
        for k in range(cfg.opt_steps):
            lr = cfg.learning_rate * np.sqrt(1 - k / cfg.opt_steps)
            _, d_margin = cw_margin(nn.logits(params, slack), y, cfg.kappa, targets)
            grad = 2 * (slack - X) + nn.input_vjp(params, slack, const[:, None] * d_margin)
            x_next = shrink_project(slack - lr * grad, X, cfg.beta * lr)
            slack = x_next + k / (k + 3) * (x_next - x_k)
            x_k = x_next
            ok = _success(nn.logits(params, x_k), y, targets)
            d = x_k - X
            en = np.sum(d * d, axis=1) + cfg.beta * np.abs(d).sum(axis=1)
            improve = ok & (en < best_en)
            best_en[improve] = en[improve]
            best_x[improve] = x_k[improve]
            step_success |= ok
        const, lower, upper = _update_consts(const, lower, upper, step_success)
    found = np.isfinite(best_en)
    x_adv = np.where(found[:, None], best_x, x_k)
    return _finish(params, X, x_adv, indices, cfg, "ead", targets)


def run_attack(params: ModelParams, X, y, cfg: AttackConfig, indices=None, helpful=None) -> AdversarialBatch:
    if cfg.name == "fgsm":
        return fgsm(params, X, y, cfg, indices)
    if cfg.name == "pgd":
        return pgd(params, X, y, cfg, indices)
    if cfg.name == "jsma":
        return jsma(params, X, y, cfg, indices)
    if cfg.name == "deepfool":
        return deepfool(params, X, y, cfg, indices)
    if cfg.name == "cw":
        return cw_l2(params, X, y, cfg, indices)
    if cfg.name == "ead":
        return ead(params, X, y, cfg, indices)
    if helpful is None:
        raise AttackError("cw_opt needs helpful training embeddings")
    return cw_opt(params, X, y, helpful, cfg, indices)


def success_rate(records) -> float:
    if isinstance(records, AdversarialBatch):
        flags = records.success
    else:
        flags = np.array([r.success for r in records], dtype=bool)
    if len(flags) == 0:
        raise AttackError("success rate of an empty record list is undefined")
    return float(np.mean(flags))


def save_batch(batch: AdversarialBatch, path) -> None:
    """``NNIFADV1`` | u32 header length | JSON header | u32 n | u32 d | arrays (little-endian)."""
    header = json.dumps({"attack": batch.attack, "config": batch.config}, sort_keys=True).encode()
    n, d = batch.x.shape
    parts = [ADV_MAGIC, struct.pack("<I", len(header)), header, struct.pack("<II", n, d),
             batch.indices.astype("<i8").tobytes(), batch.x.astype("<f8").tobytes(),
             batch.x_adv.astype("<f8").tobytes(), batch.pred_before.astype("<i8").tobytes(),
             batch.pred_after.astype("<i8").tobytes(), batch.success.astype(np.uint8).tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_batch(path) -> AdversarialBatch:
    data = Path(path).read_bytes()
    if data[:8] != ADV_MAGIC:
        raise AttackError(f"{path}: not an NNIF adversarial batch")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen])
    pos = 12 + hlen
    n, d = struct.unpack_from("<II", data, pos)
    pos += 8

    def take(dtype, count, shape):
        nonlocal pos
        arr = np.frombuffer(data, dtype, count, pos).reshape(shape)
        pos += count * np.dtype(dtype).itemsize
        return arr.copy()

    idx = take("<i8", n, (n,)).astype(np.int64)
    x = take("<f8", n * d, (n, d)).astype(np.float64)
    x_adv = take("<f8", n * d, (n, d)).astype(np.float64)
    before = take("<i8", n, (n,)).astype(np.int64)
    after = take("<i8", n, (n,)).astype(np.int64)
    success = take(np.uint8, n, (n,)).astype(bool)
    return AdversarialBatch(idx, x, x_adv, before, after, success, header["attack"], header["config"])


def export_summary_csv(batches: Sequence[AdversarialBatch], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "attack", "success", "L0", "L1", "L2", "Linf"])
        for b in batches:
            for i, l0, l1, l2, li, ok in zip(b.indices, b.l0, b.l1, b.l2, b.linf, b.success):
                writer.writerow([int(i), b.attack, int(ok), int(l0), repr(float(l1)), repr(float(l2)),
                                 repr(float(li))])
