import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from autoco.bandit import (MODEL_PRESETS, Egreedy, LinTS, LinUCB, ModelPolicy, ModelPolicyConfig,
                           SparseFeaturizer, Uniform, algorithm_names, make_policy,
                           mvt_featurize, segment_argmax)
from autoco.envs import CandidateBatch, synth_schema, SynthConfig
from autoco.features import FieldSchema


def test_uniform_frequencies():
    pol = Uniform()
    batch = CandidateBatch(np.tile(np.arange(4)[:, None], (25_000, 1)), np.arange(25_001) * 4,
                           np.tile(np.arange(4), 25_000))
    idx, _ = pol.select_batch(batch, np.random.default_rng(0))
    freq = np.bincount(idx, minlength=4) / idx.size
    assert np.all(np.abs(freq - 0.25) < 0.01)
    with pytest.raises(ValueError):
        pol.select(np.zeros((0, 2)), np.random.default_rng(0))


def test_egreedy_mixture():
    n_arms = 5
    pol = Egreedy(0.1, n_arms)
    pol.update(None, np.array([1.0, 0, 0, 0, 0]), np.arange(n_arms))
    n = 100_000
    X = np.zeros((n * n_arms, 1), dtype=int)
    batch = CandidateBatch(X, np.arange(n + 1) * n_arms, np.tile(np.arange(n_arms), n))
    idx, _ = pol.select_batch(batch, np.random.default_rng(0))
    assert abs(np.mean(idx == 0) - (0.9 + 0.1 / n_arms)) < 0.005
    assert np.all(pol.counts >= 0) and np.all(pol.sums >= 0)
    with pytest.raises(ValueError):
        Egreedy(1.5)


def test_egreedy_uses_raw_rewards():
    pol = Egreedy(0.0, 2)
    pol.update(None, np.array([0.0, 1.0]), np.array([0, 1]), rewards=np.array([-35.0, 5.0]))
    assert pol.means([0, 1]).tolist() == [-35.0, 5.0]


def test_linucb_ridge_closed_form():
    s = FieldSchema.from_cardinalities(["a"], [3])
    lam = 2.0
    pol = LinUCB(SparseFeaturizer(s), lam=lam)
    pol.update(np.array([[0]]), np.array([1.0]))
    A = lam * np.eye(3)
    A[0, 0] += 1
    assert np.allclose(pol.ridge.A, A)
    assert np.allclose(pol.ridge.b, [1, 0, 0])
    assert pol.ridge.theta[0] == pytest.approx(1 / (lam + 1))
    before = pol.ridge.A.copy()
    pol.update(np.zeros((0, 1), dtype=int), np.zeros(0))
    assert np.array_equal(pol.ridge.A, before)


def test_linucb_scores_follow_formula(rng):
    s = FieldSchema.from_cardinalities(["a", "b"], [3, 2])
    f = SparseFeaturizer(s)
    pol = LinUCB(f, alpha_ucb=0.7)
    X = rng.integers(0, 2, size=(20, 2))
    pol.update(X, rng.random(20))
    C = np.array([[0, 0], [2, 1], [1, 1]])
    d = f.dense(C)
    theta = np.linalg.solve(pol.ridge.A, pol.ridge.b)
    expect = d @ theta + 0.7 * np.sqrt(np.einsum("na,ab,nb->n", d, np.linalg.inv(pol.ridge.A), d))
    dec = pol.select(C, rng)
    assert np.allclose(dec.scores, expect)
    assert dec.index == int(np.argmax(expect))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2), st.floats(0, 1)), max_size=30))
def test_ridge_matrix_stays_spd(obs):
    s = FieldSchema.from_cardinalities(["a", "b"], [3, 2])
    pol = LinTS(SparseFeaturizer.mvt(s))
    for a, b, r in obs:
        pol.update(np.array([[a, b]]), np.array([r]))
    A = pol.ridge.A
    assert np.allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0


def test_lints_draws_around_mean(rng):
    s = FieldSchema.from_cardinalities(["a"], [2])
    pol = LinTS(SparseFeaturizer(s), v=0.5)
    pol.update(np.array([[0]] * 3), np.ones(3))
    n = 20_000
    batch = CandidateBatch(np.tile([[0], [1]], (n, 1)), np.arange(n + 1) * 2, np.tile([0, 1], n))
    _, scores = pol.select_batch(batch, rng)
    s0 = scores[0::2]
    assert abs(s0.mean() - 3 / 4) < 0.01
    assert abs(s0.std() - 0.5 * np.sqrt(1 / 4)) < 0.01


def test_mvt_featurize_examples():
    s = FieldSchema.from_cardinalities(["a", "b"], [2, 2])
    assert mvt_featurize([0, 1], s).tolist() == [0, 3, 4 + 0 * 2 + 1]
    syn = FieldSchema.from_cardinalities(list("abcde"), [4, 5, 10, 2, 10])
    f = SparseFeaturizer.mvt(syn)
    cards = np.array([4, 5, 10, 2, 10])
    crosses = sum(cards[i] * cards[j] for i in range(5) for j in range(i + 1, 5))
    assert crosses == 358 and f.dim == 31 + 358
    assert SparseFeaturizer.mvt(synth_schema(SynthConfig()), [1, 2, 3, 4, 5]).dim == 167 + 389
    # unknown categories switch their indicators off
    idx, val = SparseFeaturizer.mvt(s).transform([[2, 0]])
    assert val[0].tolist() == [0, 1, 0]


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10)),
       st.floats(0.01, 100), st.integers(1, 5))
def test_argmax_scale_invariance(scores, c, n_seg):
    ptr = np.unique(np.concatenate([[0, scores.size], np.linspace(0, scores.size, n_seg + 1).astype(int)]))
    a = segment_argmax(scores, ptr)
    assert np.array_equal(a, segment_argmax(scores * c, ptr))
    for r in range(ptr.size - 1):
        seg = scores[ptr[r]:ptr[r + 1]]
        assert a[r] == int(np.argmax(seg))  # first maximum on ties


def _toy():
    return FieldSchema.from_cardinalities(["p", "a", "b", "c"], [3, 3, 4, 2])


def _candidates(rng, n_req=40, k=6):
    X = np.column_stack([np.repeat(rng.integers(0, 3, n_req), k)] +
                        [rng.integers(0, c, n_req * k) for c in (3, 4, 2)])
    return CandidateBatch(X, np.arange(n_req + 1) * k, np.arange(n_req * k))


def _feed(pols, rng, n=600):
    X = np.column_stack([rng.integers(0, c, n) for c in (3, 3, 4, 2)])
    y = (rng.random(n) < 0.2 + 0.5 * (X[:, 1] == X[:, 2] % 3)).astype(float)
    for p in pols:
        p.update(X, y)


def test_thompson_with_tiny_sigma_is_greedy(rng):
    pol = make_policy("AutoCO", _toy(), seed=3, rho_init=-30.0, freeze_sigma=True)
    _feed([pol], rng)
    batch = _candidates(rng)
    idx, _ = pol.select_batch(batch, rng)
    greedy = segment_argmax(pol.predict(batch.X), batch.ptr)
    assert np.array_equal(idx, greedy)


def test_degenerate_fm_ts_reproduces_fm(rng):
    s = _toy()
    ts = make_policy("FM-TS", s, seed=11, rho_init=-30.0, freeze_sigma=True, kl_weight=0.0)
    fm = make_policy("FM", s, seed=11)
    _feed([ts, fm], np.random.default_rng(2))
    for _ in range(3):
        batch = _candidates(rng)
        a, _ = ts.select_batch(batch, np.random.default_rng(0))
        b, _ = fm.select_batch(batch, np.random.default_rng(0))
        assert np.array_equal(a, b)
        _feed([ts, fm], np.random.default_rng(7))


def test_always_clicked_creative_gains_logit():
    s = _toy()
    x = np.array([[1, 2, 3, 0]])
    gains = []
    for seed in range(5):
        pol = make_policy("AutoCO", s, seed=seed, warm_bias=False)
        before = pol.predict(x)[0]
        pol.update(np.repeat(x, 512, 0), np.ones(512))
        gains.append(pol.predict(x)[0] - before)
    assert np.median(gains) > 0


def test_selection_replays_under_seed(rng):
    s = _toy()
    batch = _candidates(rng)
    runs = []
    for _ in range(2):
        pol = make_policy("AutoCO", s, seed=5)
        _feed([pol], np.random.default_rng(1))
        runs.append(pol.select_batch(batch, np.random.default_rng(42)))
    assert np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])


def test_per_request_draws_do_not_depend_on_chunking(rng):
    s = _toy()
    pol = make_policy("AutoCO", s, seed=5, rho_init=-1.0)
    batch = _candidates(rng, n_req=50)
    a = pol.select_batch(batch, np.random.default_rng(1))[1]
    pol.chunk = 7
    b = pol.select_batch(batch, np.random.default_rng(1))[1]
    assert np.allclose(a, b, atol=1e-14)


def test_model_update_bookkeeping(rng):
    s = _toy()
    pol = make_policy("AutoCO", s, seed=0, replay_cap=100)
    pol.update(np.zeros((0, 4), dtype=int), np.zeros(0))
    assert pol.replay_size == 0
    _feed([pol], rng, n=150)
    assert pol.replay_size == 100
    assert pol.state.kl_weight == pytest.approx(1 / 100)
    assert set(pol.selected_ops()) == set(s.pairs())


def test_presets_and_factory():
    s = _toy()
    for name in algorithm_names():
        if name == "Oracle":
            continue
        assert make_policy(name, s, seed=0, n_arms=4).name == name
    assert make_policy("MAX-TS", s).cfg.ops == "MAX"
    assert MODEL_PRESETS["FM"]["heads"] == "fm"
    with pytest.raises(ValueError):
        make_policy("Nope", s)
    with pytest.raises(ValueError):
        make_policy("AutoCO", s, learning_rate=1.0)
    with pytest.raises(ValueError):
        ModelPolicyConfig(heads="mlp")
    with pytest.raises(KeyError):
        ModelPolicyConfig(ops="divide")
    fm = make_policy("FM", s, seed=0)
    assert np.all(fm.params.head_w == 1.0) and not fm.params.oae
