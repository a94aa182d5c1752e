"""Independent reference implementations used to check the package.

These deliberately take different algebraic or algorithmic routes than the
library code: the estimator oracle evaluates the joint posterior-mean ratio
directly, the worst-case noncoverage oracle maximizes over two-point
distributions by brute force, and the risk-minimizer oracle is an exhaustive
grid search.
"""

import numpy as np
from scipy.special import ndtr

from doubleshrink.core import EstimatePair, Hyperparams


def posterior_mean_oracle(pair: EstimatePair, hp: Hyperparams) -> np.ndarray:
    """Posterior mean as a single ratio, without the a/lam factorization."""
    g, e = hp.gamma2, hp.eta2
    num = e * (pair.tau_u * (g + pair.var_b) + pair.var_u * pair.tau_b)
    den = g * (e + pair.var_u) + e * (pair.var_u + pair.var_b) + pair.var_u * pair.var_b
    return num / den


def two_point_noncoverage_oracle(c: float, chi: float, n1: int = 400, n2: int = 1500) -> float:
    """Brute-force sup of expected noncoverage over two-point distributions.

    Support {t1, t2} with t1 <= c <= t2 and weights fixed by the mean
    constraint p*t1 + (1-p)*t2 = c.
    """

    def q(t):
        root = np.sqrt(t)
        return ndtr(-chi - root) + ndtr(-chi + root)

    if c == 0.0:
        return float(q(0.0))
    t_hi = max(4.0 * c, (chi + 8.0) ** 2)
    t1 = np.linspace(0.0, c, n1)
    t2 = np.concatenate(([c], np.logspace(np.log10(c) - 8.0, np.log10(t_hi), n2)))
    t2 = t2[t2 >= c]
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(T2 > T1, (T2 - c) / (T2 - T1), np.nan)
    values = p * q(T1) + (1.0 - p) * q(T2)
    values = np.where((p >= 0.0) & (p <= 1.0), values, np.nan)
    best = float(np.nanmax(values))

    # continuous polish of the best grid cell, independent of the library's
    # hull construction
    from scipy.optimize import minimize

    i, j = np.unravel_index(np.nanargmax(values), values.shape)

    def negobj(x):
        lo = min(max(x[0], 0.0), c)
        hi = max(x[1], c)
        if hi - lo < 1e-12:
            return -float(q(c))
        w = (hi - c) / (hi - lo)
        w = min(1.0, max(0.0, w))
        return -(w * float(q(lo)) + (1.0 - w) * float(q(hi)))

    res = minimize(negobj, x0=np.array([T1[i, j], T2[i, j]]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 800})
    return max(best, -float(res.fun))


def ure_reference(pair: EstimatePair, gamma2, eta2):
    """Vectorized risk estimate over hyperparameter grids (broadcast over axis 0)."""
    g = np.asarray(gamma2, dtype=float)[:, None]
    e = np.asarray(eta2, dtype=float)[:, None]
    vu = pair.var_u[None, :]
    vb = pair.var_b[None, :]
    total = g + vb + vu
    lam = (g + vb) / total
    a = e * total / (vu * (g + vb) + e * total)
    psi = a * (lam * pair.tau_u[None, :] + (1.0 - lam) * pair.tau_b[None, :])
    resid2 = np.sum((psi - pair.tau_u[None, :]) ** 2, axis=1)
    correction = 2.0 * np.sum(vu * (1.0 - a * lam), axis=1)
    return pair.var_u.sum() + resid2 - correction


def ure_grid_minimum(pair: EstimatePair, n: int = 400, lo: float = 1e-8, hi: float = 1e3):
    """Exhaustive log-grid minimum of the risk estimate over the orthant."""
    grid = np.logspace(np.log10(lo), np.log10(hi), n)
    best = np.inf
    arg = (0.0, 0.0)
    for g in grid:
        vals = ure_reference(pair, np.full(n, g), grid)
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            arg = (float(g), float(grid[j]))
    return best, arg


def random_pair(rng, k: int, tau_scale: float = 2.0) -> EstimatePair:
    return EstimatePair(
        tau_u=rng.normal(0.0, tau_scale, k),
        tau_b=rng.normal(0.0, tau_scale, k),
        var_u=rng.uniform(0.2, 3.0, k),
        var_b=rng.uniform(0.05, 1.5, k),
    )
