import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from autoco.bayes import (PriorSpec, VariationalParams, VIState, elbo_loss, kl_diag_gaussian,
                          load_variational, sample_theta, save_variational, softplus, vi_step)
from autoco.features import FieldSchema
from autoco.model import backward, forward_mixed, init_params, sigmoid
from autoco.search import ArchWeights, SearchState, ifs_step
from autoco.validate import kl_monte_carlo

RHO_ONE = float(np.log(np.expm1(1.0)))  # softplus(RHO_ONE) == 1


def _vp(mu, sigma):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return VariationalParams(mu, np.log(np.expm1(np.broadcast_to(sigma, mu.shape).astype(float))))


def test_kl_closed_form_values():
    assert kl_diag_gaussian(_vp(1.0, 1.0), PriorSpec(1.0)) == pytest.approx(0.5, abs=1e-12)
    assert kl_diag_gaussian(_vp(0.0, 0.5), PriorSpec(1.0)) == pytest.approx(0.31815, abs=1e-5)
    assert kl_diag_gaussian(_vp(np.zeros(7), 0.8), PriorSpec(0.8)) == pytest.approx(0.0, abs=1e-12)


@given(arrays(np.float64, 4, elements=st.floats(-3, 3)),
       arrays(np.float64, 4, elements=st.floats(-6, 4)), st.floats(0.1, 5))
def test_kl_nonnegative_and_zero_only_at_prior(mu, rho, s0):
    vp = VariationalParams(mu, rho)
    kl = kl_diag_gaussian(vp, PriorSpec(s0))
    assert kl >= -1e-12
    if kl < 1e-12:
        assert np.allclose(mu, 0, atol=1e-5) and np.allclose(vp.sigma, s0, rtol=1e-5)


def test_kl_matches_monte_carlo(rng):
    for _ in range(3):
        vp = _vp(rng.normal(0, 0.5), rng.uniform(0.4, 1.4))
        prior = PriorSpec(float(rng.uniform(0.7, 1.5)))
        assert abs(kl_diag_gaussian(vp, prior) - kl_monte_carlo(vp, prior, 200_000, rng)) < 1e-2


def test_prior_and_sigma_validation():
    with pytest.raises(ValueError):
        PriorSpec(0.0)
    with pytest.raises(ValueError):
        VariationalParams(np.zeros(2), np.zeros(3))
    assert np.all(softplus(np.array([-700.0, -30.0, 0.0, 30.0])) > 0)


def test_sample_theta_moments_and_determinism():
    vp = _vp(np.zeros(100_000), 1.0)
    t = sample_theta(vp, np.random.default_rng(0))
    assert abs(t.mean()) < 0.01 and abs(t.var() - 1) < 0.05
    assert np.array_equal(t, sample_theta(vp, np.random.default_rng(0)))
    assert not np.array_equal(t, sample_theta(vp, np.random.default_rng(1)))
    tight = VariationalParams(np.arange(5.0), np.full(5, -60.0))
    assert np.allclose(sample_theta(tight, np.random.default_rng(0)), np.arange(5.0), atol=1e-20)


def _setup(rng, cards=(3, 4, 2), d=3):
    s = FieldSchema.from_cardinalities([f"f{i}" for i in range(len(cards))], cards)
    return s, init_params(s, d, rng, emb_std=0.3)


def test_elbo_without_kl_is_plain_bce(rng):
    s, p = _setup(rng)
    vp = VariationalParams(p.emb, np.full_like(p.emb, -2.0))
    alpha = rng.uniform(0, 1, (s.n_pairs, 5))
    X = rng.integers(0, 3, size=(9, 3))
    y = rng.random(9)
    eps = rng.standard_normal(p.emb.shape)
    loss, g = elbo_loss(X, y, eps, vp, p, alpha, PriorSpec(), 0.0)
    q = p.copy()
    q.emb = vp.mu + vp.sigma * eps
    g_ref, loss_ref = backward(X, y, alpha, q)
    assert loss == pytest.approx(loss_ref, abs=1e-14)
    assert np.allclose(g.mu, g_ref.emb) and np.allclose(g.alpha, g_ref.alpha)


def test_elbo_stationary_point(rng):
    # y equal to the model's own probability and posterior equal to the prior
    s, p = _setup(rng)
    p.emb[:] = 0.0
    vp = VariationalParams(p.emb, np.full_like(p.emb, RHO_ONE))
    alpha = rng.uniform(0, 1, (s.n_pairs, 5))
    X = rng.integers(0, 2, size=(5, 3))
    eps = np.zeros_like(p.emb)
    y = sigmoid(forward_mixed(X, alpha, p))
    _, g = elbo_loss(X, y, eps, vp, p, alpha, PriorSpec(1.0), 0.3)
    for arr in (g.mu, g.rho, g.head_w, g.w1, g.alpha):
        assert np.allclose(arr, 0.0, atol=1e-12)
    assert g.bias == pytest.approx(0.0, abs=1e-12)


def test_vi_step_reduces_to_ifs_step_without_noise(rng):
    s, p0 = _setup(rng, cards=(4, 3, 5), d=4)
    data = np.random.default_rng(5)
    batches = [(data.integers(0, 3, size=(16, 3)), data.integers(0, 2, 16).astype(float))
               for _ in range(30)]
    a = SearchState(ArchWeights.uniform(s), p0.copy(), lr_theta=0.01)
    b = VIState.create(ArchWeights.uniform(s), p0.copy(), rho_init=-30.0, kl_weight=0.0,
                       freeze_sigma=True, lr_theta=0.01)
    noise = np.random.default_rng(9)
    for X, y in batches:
        ifs_step(X, y, a)
        vi_step(X, y, b, noise)
    assert np.allclose(a.params.emb, b.vp.mu, atol=1e-9)
    assert np.allclose(a.arch.alpha, b.arch.alpha, atol=1e-9)
    assert np.allclose(a.params.head_w, b.params.head_w, atol=1e-9)
    assert np.array_equal(b.vp.rho, np.full_like(b.vp.rho, -30.0))


def test_constant_positive_labels_raise_ctr():
    s = FieldSchema.from_cardinalities(["a", "b", "c"], [4, 4, 4])
    x = np.array([[1, 2, 3]])
    traces = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        st_ = VIState.create(ArchWeights.uniform(s), init_params(s, 4, rng, emb_std=0.1), kl_weight=1e-3)
        tr = []
        for _ in range(30):
            tr.append(float(sigmoid(forward_mixed(x, st_.arch.discretized(), st_.params))[0]))
            vi_step(np.repeat(x, 16, 0), np.ones(16), st_, rng)
        traces.append(tr)
    assert np.all(np.diff(np.median(traces, axis=0)) > 0)


def test_sigma_shrinks_on_observed_rows():
    s = FieldSchema.from_cardinalities(["a", "b", "c"], [4, 4, 4])
    rng = np.random.default_rng(0)
    st_ = VIState.create(ArchWeights.uniform(s), init_params(s, 4, rng, emb_std=0.1),
                         rho_init=RHO_ONE, lr_theta=0.02)
    x = np.array([[1, 2, 3]])
    rows = s.global_rows(x)[0]
    y = (rng.random(10_000) < 0.3).astype(float)
    for b in range(0, 10_000, 50):
        st_.kl_weight = 1.0 / (b + 50)
        vi_step(np.repeat(x, 50, 0), y[b:b + 50], st_, rng)
    sigma = st_.vp.sigma
    assert sigma[:, rows].mean() < 1.0
    unseen = np.setdiff1d(np.arange(s.n_rows), rows)
    assert sigma[:, unseen].mean() >= 0.999


def test_variational_checkpoint_round_trip(tmp_path, rng):
    s, p = _setup(rng)
    st_ = VIState.create(ArchWeights.uniform(s), p, rho_init=-3.0)
    st_.vp.rho += rng.normal(size=st_.vp.rho.shape)
    save_variational(tmp_path / "v.bin", st_)
    q, vp, alpha = load_variational(tmp_path / "v.bin")
    assert np.array_equal(vp.mu, st_.vp.mu) and np.array_equal(vp.rho, st_.vp.rho)
    assert np.array_equal(alpha, st_.arch.alpha) and q.schema == s
    assert q.emb is vp.mu


def test_vi_state_requires_shared_mean(rng):
    s, p = _setup(rng)
    with pytest.raises(ValueError):
        VIState(ArchWeights.uniform(s), p, VariationalParams(p.emb.copy(), np.zeros_like(p.emb)))
    st_ = VIState.create(ArchWeights.uniform(s), p)
    with pytest.raises(ValueError):
        vi_step(np.zeros((0, 3), dtype=int), np.zeros(0), st_, rng)
