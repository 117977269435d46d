"""Independent oracles and builders shared by the test suite.

Everything here is computed without touching the package internals:
projection by bisection on the dual threshold, stationary distributions by
a dense null space, matrix exponentials, and naive monomial evaluation.
Values frozen in the tests were produced by these oracles.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm, null_space

CONSUMER_PARAMS = {"b": 1.0, "e": 1.0, "eps": 0.1, "lam": 1.0}


def consumer_rest_point() -> np.ndarray:
    """Closed-form rest point of the consumer generator at the default params.

    With b = lam the second chart equation decouples:
    u2^2 + 1.1 u2 - 1 = 0, then u1^2 + 2.1 u1 + u2 - 1 = 0.
    """
    u2 = (-1.1 + math.sqrt(1.21 + 4.0)) / 2.0
    u1 = (-2.1 + math.sqrt(4.41 + 4.0 * (1.0 - u2))) / 2.0
    return np.array([u1, u2, 1.0 - u1 - u2])


def bistable_scalar_drift(m1: float) -> float:
    """Two-state drift of m1 by direct polynomial evaluation.

    f(m1) = (1 - m1) q21(m1) - m1 q12(m1)
          = -(32/3) (m1 - 1/4)(m1 - 1/2)(m1 - 3/4) after expansion.
    """
    q12 = 29.0 / 3.0 * m1**2 - 16.0 * m1 + 22.0 / 3.0
    q21 = m1**2 + m1 + 1.0
    return (1.0 - m1) * q21 - m1 * q12


def random_rate_matrix(rng, s: int, low: float = 0.2, high: float = 1.5, sparsity: float = 0.0):
    """Random conservative rate matrix; all off-diagonal rates in [low, high].

    With sparsity > 0 a fraction of the off-diagonal entries is zeroed (the
    result may then be reducible).
    """
    q = rng.uniform(low, high, size=(s, s))
    if sparsity:
        q[rng.random((s, s)) < sparsity] = 0.0
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def random_distribution(rng, s: int) -> np.ndarray:
    return rng.dirichlet(np.ones(s))


def projection_oracle(v) -> np.ndarray:
    """Euclidean projection onto the simplex by bisection on the threshold.

    g(theta) = sum max(v - theta, 0) is continuous and decreasing, so the
    theta with g(theta) = 1 is found to machine precision by bisection.
    """
    v = np.asarray(v, dtype=float)
    lo = float(v.min()) - 1.0
    hi = float(v.max())
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        if np.maximum(v - theta, 0.0).sum() > 1.0:
            lo = theta
        else:
            hi = theta
    return np.maximum(v - 0.5 * (lo + hi), 0.0)


def stationary_oracle(q: np.ndarray) -> np.ndarray:
    """Stationary distribution of a constant rate matrix via its null space."""
    ns = null_space(q.T)
    assert ns.shape[1] == 1, "oracle expects an irreducible rate matrix"
    pi = ns[:, 0]
    return pi / pi.sum()


def expm_oracle(q: np.ndarray, m0, t: float) -> np.ndarray:
    """Marginal law of a constant-rate chain: m(t) = m0^T exp(Q t)."""
    return np.asarray(m0, dtype=float) @ expm(q * t)


def naive_cell_value(terms, point) -> float:
    """Evaluate a monomial table term by term, no vectorization."""
    total = 0.0
    for exponents, coefficient in terms:
        value = float(coefficient)
        for x, e in zip(point, exponents):
            value *= float(x) ** int(e)
        total += value
    return total


def naive_rates(dimension: int, cells: dict, point) -> np.ndarray:
    """Assemble a rate matrix from off-diagonal cell tables, loops only."""
    q = np.zeros((dimension, dimension))
    for (i, j), terms in cells.items():
        q[i, j] = naive_cell_value(terms, point)
    for i in range(dimension):
        q[i, i] = -(q[i].sum() - q[i, i])
    return q


def random_polynomial_cells(rng, s: int, max_degree: int = 3) -> dict:
    """Random off-diagonal monomial tables (raw cells, not validated rates)."""
    cells = {}
    for i in range(s):
        for j in range(s):
            if i == j or rng.random() < 0.25:
                continue
            terms = []
            for _ in range(int(rng.integers(1, 4))):
                degree = int(rng.integers(0, max_degree + 1))
                exponents = tuple(int(e) for e in rng.multinomial(degree, np.ones(s) / s))
                terms.append((exponents, float(rng.uniform(0.1, 2.0))))
            cells[(i, j)] = terms
    return cells
