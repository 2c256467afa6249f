"""Slow, loop-based reference implementations used as test oracles."""

import itertools

import numpy as np


def ref_op(k, p, q):
    if k == 0:
        return [a * b for a, b in zip(p, q)]
    if k == 1:
        return [a + b for a, b in zip(p, q)]
    if k == 2:
        return [a if a >= b else b for a, b in zip(p, q)]
    if k == 3:
        return [a if a <= b else b for a, b in zip(p, q)]
    return list(p) + list(q)


def ref_logit(x, alpha, params):
    """Mixed-operator logit written straight from the model definition."""
    s = params.schema
    z = params.bias
    rows = [int(s.offsets[i] + x[i]) for i in range(s.n_fields)]
    for r in rows:
        z += params.w1[r]
    for p, (i, j) in enumerate(s.pairs()):
        for k in range(5):
            if alpha[p][k] == 0:
                continue
            t = params.op_table[k]
            v = ref_op(k, params.emb[t, rows[i]], params.emb[t, rows[j]])
            c = sum(w * e for w, e in zip(params.head_w[k], v)) + params.head_b[k]
            z += alpha[p][k] * c
    return z


def ref_fm_ctr(x, schema, V, w1, bias):
    """Sigmoid factorization machine: bias + sum w + sum_{i<j} <v_i, v_j>."""
    rows = [int(schema.offsets[i] + x[i]) for i in range(schema.n_fields)]
    z = bias + sum(w1[r] for r in rows)
    for a, b in itertools.combinations(rows, 2):
        z += float(np.dot(V[a], V[b]))
    return 1.0 / (1.0 + np.exp(-z))


def all_inputs(schema):
    """Every feature vector of a schema, unknown slots included."""
    return np.array(list(itertools.product(*[range(c + 1) for c in schema.cardinalities])))
