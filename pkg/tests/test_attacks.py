import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnif import attacks as atk
from nnif import model as nn
from nnif.attacks import AttackConfig, AttackError
from nnif.model import Layer, ModelParams


def linear(w, b):
    w = np.asarray(w, dtype=float)
    return ModelParams((Layer(w, np.asarray(b, dtype=float), "identity"),))


def binary_affine(w, b):
    """Two logits (0, w.x + b): class 1 exactly when f(x) = w.x + b > 0."""
    w = np.asarray(w, dtype=float)
    return linear(np.vstack([np.zeros_like(w), w]), [0.0, b])


def test_fgsm_zero_eps_and_clipping():
    params = binary_affine([1.0, -2.0, 0.5], 0.1)
    x = np.array([[0.3, 0.4, 0.5]])
    out = atk.fgsm(params, x, [1], AttackConfig(eps=0.0))
    assert np.array_equal(out.x_adv, x) and not out.success[0]
    # loss for label 0 grows along +w where w > 0; at the all-ones corner the clip binds
    corner = atk.fgsm(binary_affine([1.0, 1.0, 1.0], 0.0), np.ones((1, 3)), [0], AttackConfig(eps=0.3))
    assert np.array_equal(corner.x_adv, np.ones((1, 3)))


def test_fgsm_sign_matches_linear_closed_form():
    w = np.array([0.7, -1.2, 0.4, -0.1])
    params = binary_affine(w, -0.2)
    x = np.array([[0.5, 0.5, 0.5, 0.5]])
    out = atk.fgsm(params, x, [0], AttackConfig(eps=0.05))
    # d loss / dx for label 0 is p1 * w, so the step follows sign(w)
    assert np.array_equal(np.sign(out.x_adv - x)[0], np.sign(w))


def test_pgd_zero_steps_and_budget():
    params = nn.init_model([5, 6, 3], 0)
    x = np.random.default_rng(0).uniform(0, 1, (8, 5))
    y = nn.predict(params, x)
    assert np.array_equal(atk.pgd(params, x, y, AttackConfig(name="pgd", steps=0)).x_adv, x)
    out = atk.pgd(params, x, y, AttackConfig(name="pgd", eps=0.07, steps=15, random_start=True, seed=3))
    assert np.all(out.linf <= 0.07 + 1e-9)
    assert out.x_adv.min() >= 0 and out.x_adv.max() <= 1


def test_pgd_linear_reaches_fgsm_corner():
    params = binary_affine([0.3, -0.8, 1.1], 0.0)
    x = np.array([[0.4, 0.5, 0.6]])
    f = atk.fgsm(params, x, [0], AttackConfig(eps=0.1))
    p = atk.pgd(params, x, [0], AttackConfig(name="pgd", eps=0.1, steps=10))
    assert np.allclose(p.x_adv, f.x_adv, atol=1e-12)


def test_pgd_single_step_equals_fgsm():
    params = nn.init_model([6, 5, 3], 2)
    x = np.random.default_rng(1).uniform(0, 1, (10, 6))
    y = nn.predict(params, x)
    f = atk.fgsm(params, x, y, AttackConfig(eps=0.2))
    p = atk.pgd(params, x, y, AttackConfig(name="pgd", eps=0.2, steps=1, step_size=0.2))
    assert np.array_equal(f.x_adv, p.x_adv)


def test_pgd_random_start_independent_of_batch_order():
    params = nn.init_model([4, 5, 3], 1)
    x = np.random.default_rng(2).uniform(0, 1, (6, 4))
    y = nn.predict(params, x)
    cfg = AttackConfig(name="pgd", eps=0.1, steps=3, random_start=True, seed=9)
    a = atk.pgd(params, x, y, cfg, indices=np.arange(6))
    b = atk.pgd(params, x[::-1], y[::-1], cfg, indices=np.arange(6)[::-1])
    assert np.array_equal(a.x_adv, b.x_adv[::-1])


def test_jsma_zero_budget_and_l0_bound(blob_model):
    params, ds, idx = blob_model
    x, y = ds.x[idx[:20]], ds.y[idx[:20]]
    assert np.array_equal(atk.jsma(params, x, y, AttackConfig(name="jsma", gamma=0.0)).x_adv, x)
    out = atk.jsma(params, x, y, AttackConfig(name="jsma", gamma=0.5))
    assert np.all(out.l0 <= np.floor(0.5 * x.shape[1]))


def test_jsma_first_pair_matches_hand_saliency():
    w = np.array([[0.2, -0.5, 0.1, 0.3], [0.9, 0.4, -0.6, 0.8], [-0.3, 0.1, 0.2, -0.7]])
    params = linear(w, np.zeros(3))
    x = np.full((1, 4), 0.2)
    target = 2  # the clean prediction is class 1
    best, pair = -np.inf, None
    for p in range(4):
        for q in range(p + 1, 4):
            a = w[target, p] + w[target, q]
            b = w[:, p].sum() + w[:, q].sum() - a
            if a > 0 and b < 0 and a * -b > best:
                best, pair = a * -b, {p, q}
    out = atk.jsma(params, x, [1], AttackConfig(name="jsma", gamma=0.5, target=target))
    assert pair is not None and set(np.flatnonzero(out.x_adv[0] != x[0])) == pair


def test_deepfool_affine_closed_form():
    w, b = np.array([0.6, -0.8, 0.3]), 0.05
    params = binary_affine(w, b)
    x = np.array([[0.5, 0.45, 0.4]])
    f = w @ x[0] + b
    eta = 0.02
    out = atk.deepfool(params, x, cfg=AttackConfig(name="deepfool", overshoot=eta))
    expected = (1 + eta) * (-f / (w @ w)) * w
    assert np.max(np.abs(out.delta[0] - expected)) <= 1e-6
    assert out.success[0]


def test_deepfool_no_overshoot_lands_on_boundary():
    w, b = np.array([0.6, -0.8, 0.3]), 0.05
    params = binary_affine(w, b)
    x = np.array([[0.5, 0.45, 0.4]])
    out = atk.deepfool(params, x, cfg=AttackConfig(name="deepfool", overshoot=0.0, max_iter=1))
    assert abs(w @ out.x_adv[0] + b) <= 1e-8


def test_deepfool_not_larger_than_fgsm_at_success():
    w, b = np.array([0.6, -0.8, 0.3]), 0.05
    params = binary_affine(w, b)
    x = np.array([[0.5, 0.45, 0.4]])
    df = atk.deepfool(params, x, cfg=AttackConfig(name="deepfool"))
    for eps in np.linspace(0.001, 0.2, 200):
        fg = atk.fgsm(params, x, [1], AttackConfig(eps=eps))
        if fg.success[0]:
            break
    assert df.l2[0] <= fg.l2[0]


def test_deepfool_reports_failure_when_out_of_iterations(blob_model):
    params, ds, idx = blob_model
    out = atk.deepfool(params, ds.x[idx[:5]], cfg=AttackConfig(name="deepfool", max_iter=0))
    assert not out.success.any()


def test_cw_zero_const_returns_input():
    params = nn.init_model([4, 5, 3], 0)
    x = np.random.default_rng(0).uniform(0.1, 0.9, (3, 4))
    y = nn.predict(params, x)
    out = atk.cw_l2(params, x, y, AttackConfig(name="cw", initial_const=0.0, binary_steps=1, opt_steps=50))
    assert np.allclose(out.x_adv, x, atol=1e-6)


def test_cw_success_rate_and_open_box(blob_model):
    params, ds, idx = blob_model
    pick = idx[:100]
    out = atk.cw_l2(params, ds.x[pick], ds.y[pick], AttackConfig(name="cw"))
    assert out.x_adv.min() > 0 and out.x_adv.max() < 1
    assert atk.success_rate(out) >= 0.9


def test_ead_reductions_and_shrinkage(blob_model):
    params, ds, idx = blob_model
    x0 = ds.x[idx[:5]]
    x1 = np.clip(x0 + 0.05, 0, 1)
    y = ds.y[idx[:5]]
    assert np.array_equal(atk.ead_objective(params, x0, x1, y, 2.0, beta=0.0),
                          atk.cw_objective(params, x0, x1, y, 2.0))
    z = np.array([0.50, 0.52, 0.70, 0.49])
    out = atk.shrink_project(z, np.full(4, 0.5), 0.05)
    assert np.array_equal(out[[0, 1, 3]], [0.5, 0.5, 0.5]) and out[2] == pytest.approx(0.65)


def test_ead_is_sparser_than_cw(blob_model):
    params, ds, idx = blob_model
    pick = idx[:40]
    cw = atk.cw_l2(params, ds.x[pick], ds.y[pick], AttackConfig(name="cw"))
    ead = atk.ead(params, ds.x[pick], ds.y[pick], AttackConfig(name="ead", beta=0.1))
    both = cw.success & ead.success
    assert both.sum() >= 30
    assert ead.l0[both].mean() <= cw.l0[both].mean()


def test_cw_opt_without_regulariser_is_cw(blob_model):
    params, ds, idx = blob_model
    pick = idx[:10]
    helpful = np.random.default_rng(0).uniform(0, 1, (10, 4, params.embedding_dim))
    cfg = dict(binary_steps=3, opt_steps=40)
    cw = atk.cw_l2(params, ds.x[pick], ds.y[pick], AttackConfig(name="cw", **cfg))
    opt = atk.cw_opt(params, ds.x[pick], ds.y[pick], helpful, AttackConfig(name="cw_opt", reg_weight=0.0, **cfg))
    assert np.array_equal(cw.x_adv, opt.x_adv)
    with pytest.raises(AttackError):
        atk.cw_opt(params, ds.x[pick], ds.y[pick], helpful[:, :0], AttackConfig(name="cw_opt"))


def test_cw_opt_pulls_embedding_toward_helpful_points(blob_model):
    params, ds, idx = blob_model
    pick = idx[:30]
    xtr, ytr, _ = ds.subset("train")
    pred = nn.predict(params, ds.x[pick])
    emb = nn.embedding(params, xtr)
    helpful = np.stack([emb[np.flatnonzero(ytr == c)[:5]] for c in pred])
    cw = atk.cw_l2(params, ds.x[pick], ds.y[pick], AttackConfig(name="cw"))
    opt = atk.cw_opt(params, ds.x[pick], ds.y[pick], helpful, AttackConfig(name="cw_opt", reg_weight=0.1))
    l_cw = atk.embedding_distance_sum(nn.embedding(params, cw.x_adv), helpful)[0]
    l_opt = atk.embedding_distance_sum(nn.embedding(params, opt.x_adv), helpful)[0]
    assert np.mean(l_opt < l_cw) >= 0.8


def test_embedding_distance_gradient():
    rng = np.random.default_rng(5)
    emb, helpful = rng.normal(size=(2, 3)), rng.normal(size=(2, 4, 3))
    for norm in ("l1", "l2"):
        _, g = atk.embedding_distance_sum(emb, helpful, norm)
        h = 1e-6
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (atk.embedding_distance_sum(emb + e, helpful, norm)[0]
                  - atk.embedding_distance_sum(emb - e, helpful, norm)[0]) / (2 * h)
            assert np.allclose(g[:, j], fd, atol=1e-5)


def test_success_rate_arithmetic():
    base = atk.AdversarialBatch(np.arange(4), np.zeros((4, 2)), np.zeros((4, 2)), np.zeros(4, int),
                                np.zeros(4, int), np.array([True, True, True, False]), "fgsm")
    assert atk.success_rate(base) == 0.75
    assert atk.success_rate([base.record(i) for i in range(3)]) == 1.0
    assert atk.success_rate([base.record(3)]) == 0.0
    with pytest.raises(AttackError):
        atk.success_rate([])


@settings(max_examples=15, deadline=None)
@given(name=st.sampled_from(["fgsm", "pgd", "jsma", "deepfool", "cw", "ead"]), seed=st.integers(0, 50))
def test_box_invariant_and_determinism(name, seed):
    params = nn.init_model([5, 6, 3], seed)
    x = np.random.default_rng(seed).uniform(0, 1, (4, 5))
    y = nn.predict(params, x)
    cfg = AttackConfig(name=name, eps=0.1, opt_steps=20, binary_steps=2, random_start=True, seed=seed)
    a, b = atk.run_attack(params, x, y, cfg), atk.run_attack(params, x, y, cfg)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert a.x_adv.min() >= 0 and a.x_adv.max() <= 1
    if name in ("fgsm", "pgd"):
        assert np.all(a.linf <= 0.1 + 1e-9)


def test_batch_roundtrip_and_summary(tmp_path, blob_model):
    params, ds, idx = blob_model
    out = atk.fgsm(params, ds.x[idx[:6]], ds.y[idx[:6]], AttackConfig(eps=0.1), indices=idx[:6])
    atk.save_batch(out, tmp_path / "a.bin")
    back = atk.load_batch(tmp_path / "a.bin")
    assert np.array_equal(back.x_adv, out.x_adv) and np.array_equal(back.indices, idx[:6])
    assert back.config == out.config
    atk.export_summary_csv([out], tmp_path / "a.csv")
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0] == "index,attack,success,L0,L1,L2,Linf" and len(rows) == 7


def test_config_validation():
    with pytest.raises(AttackError):
        AttackConfig(name="nope")
    with pytest.raises(AttackError):
        AttackConfig(eps=-1)
    with pytest.raises(AttackError):
        AttackConfig(gamma=1.5)
