"""Hot loops of the interaction model.

Two kernels carry almost all of the runtime:

``forward_backward``
    minibatch logits, mean binary cross-entropy and gradients for every
    parameter, including the operator weights of every (pair, operator).
``score_bank``
    logits of many candidates whose embedding rows were gathered into a
    "bank" (a posterior sample, or the means themselves).

Each kernel exists as a loop version compiled by numba and as a vectorised
numpy version. :func:`autoco._jit.use_numba` picks one at call time, so the
numpy path can be forced with ``AUTOCO_DISABLE_NUMBA=1``.

Array conventions (``T`` tables, ``R`` stacked rows, ``d`` dims, ``K`` pairs):
    emb (T, R, d), op_table (5,), head_w (5, 2d), head_b (5,), w1 (R,),
    rows (B, L) global row ids, alpha (K, 5), pair_i / pair_j (K,).
"""

from __future__ import annotations

import math

import numpy as np

from .._jit import njit, use_numba

MULTIPLY, PLUS, MAX, MIN, CONCAT = 0, 1, 2, 3, 4
N_OPS = 5


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------------
# numba loop versions


@njit
def _contrib(k, emb, t, ri, rj, head_w, head_b, d):
    s = head_b[k]
    if k == MULTIPLY:
        for a in range(d):
            s += head_w[k, a] * emb[t, ri, a] * emb[t, rj, a]
    elif k == PLUS:
        for a in range(d):
            s += head_w[k, a] * (emb[t, ri, a] + emb[t, rj, a])
    elif k == MAX:
        for a in range(d):
            p = emb[t, ri, a]
            q = emb[t, rj, a]
            s += head_w[k, a] * (p if p >= q else q)
    elif k == MIN:
        for a in range(d):
            p = emb[t, ri, a]
            q = emb[t, rj, a]
            s += head_w[k, a] * (p if p <= q else q)
    else:
        for a in range(d):
            s += head_w[k, a] * emb[t, ri, a] + head_w[k, d + a] * emb[t, rj, a]
    return s


@njit
def _backprop_branch(k, s, emb, t, ri, rj, head_w, g_emb, g_hw, d, want_heads):
    # s = dLoss/dlogit * alpha weight of this branch
    for a in range(d):
        p = emb[t, ri, a]
        q = emb[t, rj, a]
        if k == MULTIPLY:
            w = head_w[k, a]
            g_emb[t, ri, a] += s * w * q
            g_emb[t, rj, a] += s * w * p
            if want_heads:
                g_hw[k, a] += s * p * q
        elif k == PLUS:
            w = head_w[k, a]
            g_emb[t, ri, a] += s * w
            g_emb[t, rj, a] += s * w
            if want_heads:
                g_hw[k, a] += s * (p + q)
        elif k == MAX:
            w = head_w[k, a]
            if p >= q:
                g_emb[t, ri, a] += s * w
                if want_heads:
                    g_hw[k, a] += s * p
            else:
                g_emb[t, rj, a] += s * w
                if want_heads:
                    g_hw[k, a] += s * q
        elif k == MIN:
            w = head_w[k, a]
            if p <= q:
                g_emb[t, ri, a] += s * w
                if want_heads:
                    g_hw[k, a] += s * p
            else:
                g_emb[t, rj, a] += s * w
                if want_heads:
                    g_hw[k, a] += s * q
        else:
            g_emb[t, ri, a] += s * head_w[k, a]
            g_emb[t, rj, a] += s * head_w[k, d + a]
            if want_heads:
                g_hw[k, a] += s * p
                g_hw[k, d + a] += s * q


@njit
def _fb_numba(rows, y, alpha, emb, op_table, head_w, head_b, w1, bias,
              pair_i, pair_j, want_grads, all_branches):
    B, L = rows.shape
    K = pair_i.shape[0]
    d = emb.shape[2]
    logits = np.empty(B)
    contrib = np.zeros((B, K, N_OPS))
    for b in range(B):
        z = bias
        for f in range(L):
            z += w1[rows[b, f]]
        for p in range(K):
            ri = rows[b, pair_i[p]]
            rj = rows[b, pair_j[p]]
            for k in range(N_OPS):
                a = alpha[p, k]
                if a == 0.0 and not all_branches:
                    continue
                c = _contrib(k, emb, op_table[k], ri, rj, head_w, head_b, d)
                contrib[b, p, k] = c
                z += a * c
        logits[b] = z

    g_emb = np.zeros_like(emb)
    g_hw = np.zeros_like(head_w)
    g_hb = np.zeros_like(head_b)
    g_w1 = np.zeros_like(w1)
    g_alpha = np.zeros_like(alpha)
    g_bias = 0.0
    loss = 0.0
    for b in range(B):
        z = logits[b]
        # stable softplus(z) - y z
        loss += max(z, 0.0) + math.log1p(math.exp(-abs(z))) - y[b] * z
    loss /= B
    if not want_grads:
        return logits, loss, g_emb, g_hw, g_hb, g_w1, g_bias, g_alpha

    for b in range(B):
        z = logits[b]
        if z >= 0:
            sig = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            sig = ez / (1.0 + ez)
        g = (sig - y[b]) / B
        if g == 0.0:
            continue
        g_bias += g
        for f in range(L):
            g_w1[rows[b, f]] += g
        for p in range(K):
            ri = rows[b, pair_i[p]]
            rj = rows[b, pair_j[p]]
            for k in range(N_OPS):
                g_alpha[p, k] += g * contrib[b, p, k]
                a = alpha[p, k]
                if a == 0.0:
                    continue
                s = g * a
                g_hb[k] += s
                _backprop_branch(k, s, emb, op_table[k], ri, rj, head_w, g_emb, g_hw, d, True)
    return logits, loss, g_emb, g_hw, g_hb, g_w1, g_bias, g_alpha


@njit
def _score_numba(bank, slots, rows, sel_op, sel_w, pair_i, pair_j, op_table,
                 head_w, head_b, w1, bias):
    N, L = slots.shape
    K = pair_i.shape[0]
    d = bank.shape[2]
    out = np.empty(N)
    for n in range(N):
        z = bias
        for f in range(L):
            z += w1[rows[n, f]]
        for p in range(K):
            k = sel_op[p]
            c = _contrib(k, bank, op_table[k], slots[n, pair_i[p]], slots[n, pair_j[p]],
                         head_w, head_b, d)
            z += sel_w[p] * c
        out[n] = z
    return out


# --------------------------------------------------------------------------
# numpy versions


def _branch_values(k, P, Q, head_w, head_b, d):
    """Contribution of operator k for stacked operands P, Q of shape (..., d)."""
    if k == MULTIPLY:
        v = P * Q
    elif k == PLUS:
        v = P + Q
    elif k == MAX:
        v = np.maximum(P, Q)
    elif k == MIN:
        v = np.minimum(P, Q)
    else:
        return P @ head_w[k, :d] + Q @ head_w[k, d:] + head_b[k]
    return v @ head_w[k, :d] + head_b[k]


def _fb_numpy(rows, y, alpha, emb, op_table, head_w, head_b, w1, bias,
              pair_i, pair_j, want_grads, all_branches):
    B, L = rows.shape
    K = pair_i.shape[0]
    d = emb.shape[2]
    Ri = rows[:, pair_i]  # (B, K)
    Rj = rows[:, pair_j]
    active = np.any(alpha != 0.0, axis=0)
    contrib = np.zeros((B, K, N_OPS))
    z = bias + w1[rows].sum(axis=1)
    for k in range(N_OPS):
        if not (all_branches or active[k]):
            continue
        t = op_table[k]
        contrib[:, :, k] = _branch_values(k, emb[t][Ri], emb[t][Rj], head_w, head_b, d)
    z = z + np.einsum("bpk,pk->b", contrib, alpha)
    loss = float(np.mean(_softplus(z) - y * z))

    g_emb = np.zeros_like(emb)
    g_hw = np.zeros_like(head_w)
    g_hb = np.zeros_like(head_b)
    g_w1 = np.zeros_like(w1)
    g_alpha = np.zeros_like(alpha)
    if not want_grads:
        return z, loss, g_emb, g_hw, g_hb, g_w1, 0.0, g_alpha

    g = (_sigmoid(z) - y) / B
    g_bias = float(g.sum())
    np.add.at(g_w1, rows.ravel(), np.repeat(g, L))
    g_alpha = np.einsum("b,bpk->pk", g, contrib)
    for k in range(N_OPS):
        if not active[k]:
            continue
        t = op_table[k]
        S = g[:, None] * alpha[None, :, k]  # (B, K)
        g_hb[k] += S.sum()
        P = emb[t][Ri]
        Q = emb[t][Rj]
        Sd = S[..., None]
        if k == CONCAT:
            gp = Sd * head_w[k, :d]
            gq = Sd * head_w[k, d:]
            g_hw[k, :d] += np.einsum("bp,bpa->a", S, P)
            g_hw[k, d:] += np.einsum("bp,bpa->a", S, Q)
        else:
            w = head_w[k, :d]
            if k == MULTIPLY:
                gp, gq, v = Sd * w * Q, Sd * w * P, P * Q
            elif k == PLUS:
                gp = np.broadcast_to(Sd * w, P.shape)
                gq, v = gp, P + Q
            elif k == MAX:
                win = P >= Q
                gp, gq, v = Sd * w * win, Sd * w * ~win, np.maximum(P, Q)
            else:
                win = P <= Q
                gp, gq, v = Sd * w * win, Sd * w * ~win, np.minimum(P, Q)
            g_hw[k, :d] += np.einsum("bp,bpa->a", S, v)
        np.add.at(g_emb[t], Ri.ravel(), gp.reshape(-1, d))
        np.add.at(g_emb[t], Rj.ravel(), gq.reshape(-1, d))
    return z, loss, g_emb, g_hw, g_hb, g_w1, g_bias, g_alpha


def _score_numpy(bank, slots, rows, sel_op, sel_w, pair_i, pair_j, op_table,
                 head_w, head_b, w1, bias):
    d = bank.shape[2]
    z = bias + w1[rows].sum(axis=1)
    Si = slots[:, pair_i]
    Sj = slots[:, pair_j]
    for k in range(N_OPS):
        mask = sel_op == k
        if not mask.any():
            continue
        t = op_table[k]
        c = _branch_values(k, bank[t][Si[:, mask]], bank[t][Sj[:, mask]], head_w, head_b, d)
        z = z + c @ sel_w[mask]
    return z


# --------------------------------------------------------------------------
# dispatch


def forward_backward(rows, y, alpha, emb, op_table, head_w, head_b, w1, bias,
                     pair_i, pair_j, want_grads=True, all_branches=True):
    """Logits, mean BCE loss and gradients for one minibatch.

    ``alpha`` weights every (pair, operator) branch. Parameter gradients flow
    only through branches with nonzero weight; when ``all_branches`` is set,
    every branch is still evaluated so that ``g_alpha`` is complete.

    Returns ``(logits, loss, g_emb, g_head_w, g_head_b, g_w1, g_bias, g_alpha)``.
    """
    args = (
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        emb, op_table, head_w, head_b, w1, float(bias), pair_i, pair_j,
        bool(want_grads), bool(all_branches),
    )
    if use_numba():
        return _fb_numba(*args)
    return _fb_numpy(*args)


def score_bank(bank, slots, rows, sel_op, sel_w, pair_i, pair_j, op_table,
               head_w, head_b, w1, bias):
    """Logits of single-operator-per-pair models, embeddings read from ``bank``.

    ``slots`` (N, L) index rows of ``bank``; ``rows`` (N, L) index ``w1``.
    """
    args = (
        bank,
        np.ascontiguousarray(slots, dtype=np.int64),
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(sel_op, dtype=np.int64),
        np.ascontiguousarray(sel_w, dtype=np.float64),
        pair_i, pair_j, op_table, head_w, head_b, w1, float(bias),
    )
    if use_numba():
        return _score_numba(*args)
    return _score_numpy(*args)
