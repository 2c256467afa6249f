import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from autoco.features import FieldSchema
from autoco.model import OperatorKind, forward_mixed, init_params, one_hot_alpha, sigmoid
from autoco.search import (EPS_CLIP, ArchWeights, SearchState, ifs_step, ops_from_json,
                           ops_to_json, prox_c1, prox_c2, select_ops, selected_table_mask,
                           update_alpha)

alphas = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(5)),
                elements=st.floats(-2, 2, allow_nan=False))


@given(alphas)
def test_prox_c1_properties(v):
    p = prox_c1(v)
    pos = np.abs(v) + 1e-3  # weights live in the clamped box, where prox_c1 is idempotent
    assert np.array_equal(prox_c1(prox_c1(pos)), prox_c1(pos))
    assert np.all(np.count_nonzero(p, axis=1) <= 1)
    k = np.argmax(v, axis=1)
    assert np.array_equal(p[np.arange(len(v)), k], v[np.arange(len(v)), k])
    # the kept entry is the first maximum
    for row, kk in zip(v, k):
        assert np.all(row[:kk] < row[kk])


@given(alphas)
def test_prox_c2_properties(v):
    p = prox_c2(v)
    assert np.all(p >= EPS_CLIP) and np.all(p <= 1 - EPS_CLIP)
    assert np.array_equal(prox_c2(p), p)
    inside = (v >= EPS_CLIP) & (v <= 1 - EPS_CLIP)
    assert np.array_equal(p[inside], v[inside])


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.just(5)),
              elements=st.floats(1e-3, 1, allow_nan=False)))
def test_selection_invariant_under_prox_c1(v):
    pairs = [(0, i + 1) for i in range(len(v))]
    assert select_ops(v, pairs) == select_ops(prox_c1(v), pairs)


def test_prox_rejects_nonfinite():
    with pytest.raises(ValueError):
        prox_c1(np.array([[np.nan, 0, 0, 0, 0]]))
    with pytest.raises(ValueError):
        prox_c2(np.array([np.nan]))


def test_zero_gradient_only_clamps():
    s = FieldSchema.from_cardinalities(["a", "b", "c"], [2, 2, 2])
    arch = ArchWeights.uniform(s)
    arch.alpha[0, 1] = 1.5
    update_alpha(arch, np.zeros_like(arch.alpha), 0.1)
    expect = np.full((3, 5), 0.2)
    expect[0, 1] = 1 - EPS_CLIP
    assert np.array_equal(arch.alpha, expect)


def test_ops_json_round_trip():
    ops = {(0, 1): OperatorKind.MAX, (0, 2): OperatorKind.CONCAT, (1, 2): OperatorKind.MULTIPLY}
    assert ops_from_json(ops_to_json(ops)) == ops
    with pytest.raises(ValueError):
        select_ops(np.zeros((1, 5)))


def _two_field_task(seed, n=2000):
    rng = np.random.default_rng(seed)
    s = FieldSchema.from_cardinalities(["a", "b"], [6, 6])
    hidden = init_params(s, 4, rng, emb_std=1.0, fm_heads=True)
    X = np.column_stack([rng.integers(0, 6, n), rng.integers(0, 6, n)])
    y = (rng.random(n) < sigmoid(forward_mixed(X, one_hot_alpha(["multiply"], 1), hidden))).astype(float)
    return rng, s, hidden, X, y


@pytest.mark.parametrize("seed", range(5))
def test_alpha_mass_migrates_to_generating_operator(seed):
    # model tables of MULTIPLY hold the generator, the rest are random and
    # parameters are frozen: the MULTIPLY weight must rise every step until
    # it hits the clamp and end up selected
    rng, s, hidden, X, y = _two_field_task(seed)
    p = init_params(s, 4, rng, emb_std=1.0)
    p.emb[0] = hidden.emb[0]
    p.head_w[0] = 1.0
    st_ = SearchState(ArchWeights.uniform(s), p, lr_alpha=0.05, lr_theta=0.0, optimizer="sgd")
    trace = [st_.arch.alpha[0, 0]]
    for _ in range(150):
        ifs_step(X, y, st_)
        trace.append(st_.arch.alpha[0, 0])
    trace = np.array(trace)
    rising = trace[:-1] < 1 - EPS_CLIP
    assert np.all(np.diff(trace)[rising] > 0)
    assert select_ops(st_.arch)[(0, 1)] is OperatorKind.MULTIPLY


def test_ifs_step_updates_only_selected_tables(rng):
    s = FieldSchema.from_cardinalities(["a", "b", "c"], [3, 3, 3])
    p = init_params(s, 3, rng, emb_std=0.3)
    arch = ArchWeights.uniform(s)
    arch.alpha[:, 2] = 0.5  # MAX selected everywhere
    st_ = SearchState(arch, p, lr_theta=0.05)
    before = p.emb.copy()
    X = rng.integers(0, 3, size=(32, 3))
    ifs_step(X, rng.integers(0, 2, 32).astype(float), st_)
    changed = np.any(p.emb != before, axis=(1, 2))
    assert changed.tolist() == [False, False, True, False, False]
    # every operator weight moved: alpha gradients cover all branches
    assert np.all(st_.arch.alpha != np.where(np.arange(5) == 2, 0.5, 0.2))
    with pytest.raises(ValueError):
        ifs_step(np.zeros((0, 3), dtype=int), np.zeros(0), st_)


def test_selected_table_mask_shared_tables(rng):
    s = FieldSchema.from_cardinalities(["a", "b", "c"], [2, 3, 1])
    p = init_params(s, 2, rng, oae=False)
    abar = np.zeros((3, 5))
    abar[0, 1] = 0.4  # only pair (a, b) active
    m = selected_table_mask(p, abar)
    assert m.shape == (1, s.n_rows)
    assert m[0].tolist() == [True] * 3 + [True] * 4 + [False] * 2


def test_fixed_architecture_keeps_alpha(rng):
    s = FieldSchema.from_cardinalities(["a", "b"], [3, 3])
    st_ = SearchState(ArchWeights.fixed(s, "plus"), init_params(s, 2, rng), search=False)
    ifs_step(rng.integers(0, 3, size=(8, 2)), np.ones(8), st_)
    assert st_.arch.alpha.tolist() == [[0, 1, 0, 0, 0]]
