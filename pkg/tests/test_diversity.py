import dataclasses

import numpy as np
import pytest

from attnlab import (
    AttentionConfig,
    DegenerateHeadError,
    Mechanism,
    NumericalError,
    ParameterError,
    RngSpec,
    UnsupportedMechanismError,
    bilinear_forms,
    center_gram,
    diversity_report,
    factorization_gap,
    gram,
    init_weights,
    magnitude_report,
    spectrum,
    svd_truncate,
)
from attnlab.diversity import BilinearFormSet, GramMatrix


def cfg(mechanism=Mechanism.LRKV, *, d=96, H=4, d_h=24, **kw):
    if mechanism is Mechanism.LRKV:
        kw.setdefault("r", 6)
    return AttentionConfig(mechanism=mechanism, d=d, H=H, d_h=d_h, **kw)


def random_forms(seed, H=4, d=64, d_h=16):
    gen = np.random.default_rng(seed)
    wq = tuple(gen.standard_normal((d, d_h)) for _ in range(H))
    wk = tuple(gen.standard_normal((d, d_h)) for _ in range(H))
    return BilinearFormSet(wq=wq, wk=wk, H=H, d=d, d_h=d_h)


def random_orthogonal(gen, n):
    Q, R = np.linalg.qr(gen.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


# ------------------------------------------------------------ Gram core


def test_trace_identity_matches_direct_inner_products():
    """The d_h-sided trace shortcut equals the materialized d x d inner
    products, including at the largest width the oracle covers."""
    for d, d_h in ((64, 16), (512, 64)):
        forms = random_forms(0, H=3, d=d, d_h=d_h)
        g = gram(forms, normalize=False).G
        for i in range(3):
            for j in range(3):
                direct = float(np.sum(forms.form(i) * forms.form(j)))
                denom = max(1.0, abs(direct))
                assert abs(g[i, j] - direct) / denom < 1e-8


def test_gram_is_symmetric_with_unit_diagonal_when_normalized():
    g = gram(random_forms(1), normalize=True)
    assert g.normalized and not g.centered
    assert np.array_equal(g.G, g.G.T)
    assert np.allclose(np.diag(g.G), 1.0, atol=1e-12)
    assert np.abs(g.G).max() <= 1.0 + 1e-12


def test_gauge_invariance_of_the_full_report():
    """Rotating (Wq_h, Wk_h) by one orthogonal matrix per head must not
    move the similarity matrix or either spectrum."""
    gen = np.random.default_rng(2)
    forms = random_forms(3)
    base_sim = gram(forms, normalize=True)
    base_unc = spectrum(base_sim)
    base_cen = spectrum(center_gram(base_sim))
    for _ in range(20):
        Rs = [random_orthogonal(gen, forms.d_h) for _ in range(forms.H)]
        rotated = BilinearFormSet(
            wq=tuple(forms.wq[h] @ Rs[h] for h in range(forms.H)),
            wk=tuple(forms.wk[h] @ Rs[h] for h in range(forms.H)),
            H=forms.H, d=forms.d, d_h=forms.d_h,
        )
        sim = gram(rotated, normalize=True)
        assert np.abs(sim.G - base_sim.G).max() < 1e-9
        unc = spectrum(sim)
        cen = spectrum(center_gram(sim))
        assert abs(unc.effective_rank_abs - base_unc.effective_rank_abs) < 1e-9
        assert abs(cen.effective_rank_abs - base_cen.effective_rank_abs) < 1e-9


def test_gram_names_degenerate_head():
    forms = random_forms(4)
    dead = dataclasses.replace(forms, wq=(forms.wq[0], np.zeros_like(forms.wq[1]),
                                          forms.wq[2], forms.wq[3]))
    with pytest.raises(DegenerateHeadError, match="head 1"):
        gram(dead, normalize=True)
    # unnormalized Gram tolerates the zero form
    g = gram(dead, normalize=False)
    assert g.G[1, 1] == 0.0


def test_bilinear_forms_rejects_nonfinite():
    config = cfg()
    w = init_weights(config, RngSpec(seed=0))
    bad_wq = list(w.wq)
    bad_wq[2] = bad_wq[2].copy()
    bad_wq[2][0, 0] = np.nan
    broken = dataclasses.replace(w, wq=tuple(bad_wq))
    with pytest.raises(NumericalError):
        bilinear_forms(broken, config)


# ------------------------------------------------------------ centering


def test_centering_is_idempotent_and_zero_sum():
    g = gram(random_forms(5), normalize=True)
    c1 = center_gram(g)
    c2 = center_gram(c1)
    assert c1.centered
    assert np.abs(c1.G.sum(axis=0)).max() < 1e-12
    assert np.abs(c1.G.sum(axis=1)).max() < 1e-12
    assert np.abs(c2.G - c1.G).max() < 1e-12


def test_centering_kills_a_common_component():
    # identical heads: everything is mean, nothing is variance
    base = random_forms(6, H=1)
    forms = BilinearFormSet(wq=base.wq * 4, wk=base.wk * 4, H=4,
                            d=base.d, d_h=base.d_h)
    sim = gram(forms, normalize=True)
    assert np.allclose(sim.G, 1.0, atol=1e-12)
    centered = spectrum(center_gram(sim))
    assert centered.degenerate
    assert centered.effective_rank_abs == 0.0
    assert centered.n_components_for_90pct == 0


# ------------------------------------------------------------- spectrum


def diag_gram(values):
    return GramMatrix(G=np.diag(np.asarray(values, dtype=np.float64)),
                      normalized=True, centered=False)


def test_effective_rank_uniform_spectrum():
    for H in (2, 5, 8):
        rep = spectrum(diag_gram(np.ones(H)))
        assert rep.effective_rank_abs == pytest.approx(H, abs=1e-12)
        assert rep.effective_rank_pct == pytest.approx(1.0, abs=1e-12)
        assert rep.n_components_for_90pct == int(np.ceil(0.9 * H))


def test_effective_rank_one_hot_spectrum():
    rep = spectrum(diag_gram([1.0, 0.0, 0.0, 0.0]))
    assert rep.effective_rank_abs == pytest.approx(1.0, abs=1e-12)
    assert rep.n_components_for_90pct == 1


def test_effective_rank_mixed_fixture():
    rep = spectrum(diag_gram([0.5, 0.25, 0.25]))
    assert rep.effective_rank_abs == pytest.approx(2.8284271247461903, abs=1e-12)
    assert rep.cumulative_variance[-1] == pytest.approx(1.0)


def test_spectrum_scale_invariance():
    vals = np.array([3.0, 1.5, 0.25, 0.25])
    a = spectrum(diag_gram(vals))
    b = spectrum(diag_gram(vals * 7.5))
    assert a.effective_rank_abs == pytest.approx(b.effective_rank_abs, abs=1e-12)


def test_spectrum_flags_fully_degenerate():
    rep = spectrum(diag_gram(np.zeros(5)))
    assert rep.degenerate and rep.effective_rank_abs == 0.0
    assert rep.effective_rank_pct == 0.0


def test_spectrum_rejects_indefinite_input():
    with pytest.raises(NumericalError):
        spectrum(diag_gram([1.0, -1.0]))


def test_spectrum_floors_roundoff_negatives():
    rep = spectrum(diag_gram([1.0, -1e-12]))
    assert rep.eigenvalues.min() == 0.0


# ------------------------------------------------------- full reports


def test_diversity_report_structure():
    config = cfg()
    rep = diversity_report(init_weights(config, RngSpec(seed=7)), config)
    assert rep["H"] == config.H
    assert rep["similarity"].shape == (config.H, config.H)
    assert rep["degenerate_heads"] == ()
    assert 1.0 <= rep["uncentered"].effective_rank_abs <= config.H + 1e-9
    assert rep["centered"].effective_rank_abs <= config.H - 1 + 1e-9


def test_diversity_report_tolerates_dead_head():
    config = cfg()
    w = init_weights(config, RngSpec(seed=8))
    wq = list(w.wq)
    wq[3] = np.zeros_like(wq[3])
    rep = diversity_report(dataclasses.replace(w, wq=tuple(wq)), config)
    assert rep["degenerate_heads"] == (3,)
    assert np.isfinite(rep["similarity"]).all()


def test_diversity_report_works_for_full_rank_mechanisms():
    config = cfg(Mechanism.MHA)
    rep = diversity_report(init_weights(config, RngSpec(seed=9)), config)
    assert rep["similarity"].shape == (config.H, config.H)


# ------------------------------------------------------------ magnitude


def test_magnitude_report_values():
    config = cfg()
    w = init_weights(config, RngSpec(seed=10))
    rep = magnitude_report(w, config)
    assert rep.shared_k == pytest.approx(np.linalg.norm(w.wk_shared))
    for h in range(config.H):
        assert rep.residual_k[h] == pytest.approx(
            np.linalg.norm(w.uk[h] @ w.bk[h].T))
        assert -1.0 <= rep.cosine_k[h] <= 1.0
    assert rep.residual_v.shape == (config.H,)


def test_magnitude_report_zero_rank_and_mechanism_guard():
    config = cfg(r=0)
    rep = magnitude_report(init_weights(config, RngSpec(seed=0)), config)
    assert np.array_equal(rep.residual_k, np.zeros(config.H))
    assert np.array_equal(rep.cosine_k, np.zeros(config.H))
    mha = cfg(Mechanism.MHA)
    with pytest.raises(UnsupportedMechanismError):
        magnitude_report(init_weights(mha, RngSpec(seed=0)), mha)


# ------------------------------------------------------- truncated SVD


def test_svd_truncate_matches_numpy_tail():
    gen = np.random.default_rng(11)
    for d, d_h in ((20, 8), (64, 16), (16, 16)):
        W = gen.standard_normal((d, d_h))
        s = np.linalg.svd(W, compute_uv=False)
        for r in (0, 1, d_h // 2, min(d, d_h)):
            U, B, err = svd_truncate(W, r)
            assert U.shape == (d, r) and B.shape == (d_h, r)
            assert err == pytest.approx(np.sqrt((s[r:] ** 2).sum()), abs=1e-9)
            assert np.linalg.norm(W - U @ B.T) == pytest.approx(err, abs=1e-9)


def test_svd_truncate_matches_numpy_reconstruction():
    gen = np.random.default_rng(12)
    W = gen.standard_normal((24, 10))
    U_np, s, Vt = np.linalg.svd(W, full_matrices=False)
    for r in (1, 3, 7):
        U, B, _ = svd_truncate(W, r)
        best = (U_np[:, :r] * s[:r]) @ Vt[:r]
        assert np.abs(U @ B.T - best).max() < 1e-9


def test_svd_truncate_orthonormal_right_factor():
    U, B, _ = svd_truncate(np.random.default_rng(13).standard_normal((30, 12)), 5)
    assert np.abs(B.T @ B - np.eye(5)).max() < 1e-10


def test_svd_truncate_rejects_bad_rank():
    W = np.zeros((6, 4))
    for r in (-1, 5):
        with pytest.raises(ParameterError):
            svd_truncate(W, r)


def test_eckart_young_dominance():
    """No same-rank competitor beats the truncated SVD, across three
    competitor families (random, rescaled, perturbed-optimal)."""
    gen = np.random.default_rng(14)
    W = gen.standard_normal((40, 12))
    r = 4
    U, B, err = svd_truncate(W, r)
    slack = 1e-9
    for trial in range(200):
        kind = trial % 3
        if kind == 0:
            Uc = gen.standard_normal((40, r))
            Bc = gen.standard_normal((12, r))
        elif kind == 1:
            Uc, Bc = U * gen.uniform(0.5, 1.5), B
        else:
            Uc = U + gen.standard_normal(U.shape) * 0.01
            Bc = B + gen.standard_normal(B.shape) * 0.01
        competitor = np.linalg.norm(W - Uc @ Bc.T)
        assert competitor >= err - slack


# --------------------------------------------------- factorization gap


def test_factorization_gap_reports_near_one_for_svd_built_residuals():
    config = cfg(d=64, H=4, d_h=16, r=5)
    w = init_weights(config, RngSpec(seed=15))
    ref_cfg = cfg(Mechanism.MHA, d=64, H=4, d_h=16)
    ref = init_weights(ref_cfg, RngSpec(seed=16))
    # build each residual from the truncated SVD of its own target: the
    # learned error then equals the optimal error
    uk, bk, uv, bv = [], [], [], []
    for h in range(4):
        U, B, _ = svd_truncate(ref.wk[h] - w.wk_shared, 5)
        uk.append(U), bk.append(B)
        U, B, _ = svd_truncate(ref.wv[h] - w.wv_shared, 5)
        uv.append(U), bv.append(B)
    built = dataclasses.replace(w, uk=tuple(uk), bk=tuple(bk),
                                uv=tuple(uv), bv=tuple(bv))
    for row in factorization_gap(built, config, ref):
        assert row["ratio"] == pytest.approx(1.0, abs=1e-9)


def test_factorization_gap_random_residuals_are_suboptimal():
    config = cfg(d=64, H=4, d_h=16, r=5)
    w = init_weights(config, RngSpec(seed=17))
    ref = init_weights(cfg(Mechanism.MHA, d=64, H=4, d_h=16), RngSpec(seed=18))
    rows = factorization_gap(w, config, ref)
    assert len(rows) == 8  # H heads x {k, v}
    for row in rows:
        assert row["ratio"] >= 1.0 - 1e-12
        assert row["e_learned"] >= row["e_opt"] - 1e-12


def test_factorization_gap_validates_reference():
    config = cfg(d=64, H=4, d_h=16, r=5)
    w = init_weights(config, RngSpec(seed=19))
    mqa_ref = init_weights(cfg(Mechanism.MQA, d=64, H=4, d_h=16), RngSpec(seed=0))
    with pytest.raises(ParameterError):
        factorization_gap(w, config, mqa_ref)
    with pytest.raises(UnsupportedMechanismError):
        mha = cfg(Mechanism.MHA, d=64, H=4, d_h=16)
        factorization_gap(init_weights(mha, RngSpec(seed=0)), mha,
                          init_weights(mha, RngSpec(seed=1)))
