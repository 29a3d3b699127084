"""Independent reference computations used as test oracles.

Nothing here calls the code under test for the quantity being checked: gradients
come from central finite differences, forward passes from explicit loops,
p-values from full enumeration of relabelings.
"""

import itertools
import math

import numpy as np


def loop_forward(m, x):
    """Probabilities for one flat input via explicit scalar loops."""
    a = [float(v) for v in np.asarray(x, dtype=np.float64).reshape(-1)]
    for layer in m.layers:
        w = layer.weights.astype(np.float64)
        b = layer.bias.astype(np.float64)
        z = [sum(w[j, i] * a[i] for i in range(len(a))) + b[j] for j in range(w.shape[0])]
        if layer.activation == "relu":
            a = [max(0.0, v) for v in z]
        elif layer.activation == "softmax":
            top = max(z)
            e = [math.exp(v - top) for v in z]
            a = [v / sum(e) for v in e]
        else:
            a = z
    return np.array(a)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of every array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def exact_permutation_p(a, b):
    """Two-sided p-value over every split of the pooled values into groups of |a| and |b|."""
    pooled = list(a) + list(b)
    k = len(a)
    observed = abs(np.mean(a) - np.mean(b))
    hits = total = 0
    for chosen in itertools.combinations(range(len(pooled)), k):
        rest = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        diff = abs(np.mean([pooled[i] for i in chosen]) - np.mean(rest))
        hits += diff >= observed - 1e-12
        total += 1
    return hits / total


def brute_force_discrete_robust(predict_fn, table, words, eps):
    """Scan every vocabulary combination of the right length; keep those within L-inf eps."""
    base = predict_fn(words)
    vecs = {w: table.vector(w) for w in table.vocab}
    choices = []
    for w in words:
        if w not in vecs:
            choices.append([w])
        else:
            choices.append([u for u in table.vocab if np.max(np.abs(vecs[u] - vecs[w])) <= eps])
    for combo in itertools.product(*choices):
        if predict_fn(list(combo)) != base:
            return False
    return True
