"""Robust empirical-Bayes confidence intervals.

An interval centered at the double-shrinkage estimate has a standardized
noncoverage that depends only on the standardized bias ``b`` of the estimate:
``r(b, chi) = Phi(-chi - b) + Phi(-chi + b)``.  Knowing only the second moment
``c`` of ``b``, the worst case over all bias distributions is ``rho(c, chi)``,
the least concave majorant of ``t -> r(sqrt(t), chi)`` evaluated at ``t = c``
(the least favorable distribution has at most two support points).  The
critical value ``cva(c, alpha)`` inverts ``rho`` in ``chi``, inflating the
usual Gaussian quantile just enough to keep worst-case noncoverage at
``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .core import EstimatePair, Hyperparams, apply_weights, compute_weights
from .errors import ConfigurationError, InputValidationError

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_RHO_GRID_POINTS = 2000
_CVA_CHI_TOL = 1e-8


def noncoverage(b: float, chi: float) -> float:
    """Noncoverage of a +/- chi interval for a unit-variance Gaussian with mean b."""
    if not chi > 0:
        raise InputValidationError("chi must be positive")
    return float(ndtr(-chi - b) + ndtr(-chi + b))


def _tail_mass(t, chi):
    # noncoverage as a function of the squared bias t = b^2, vectorized
    root = np.sqrt(t)
    return ndtr(-chi - root) + ndtr(-chi + root)


def _upper_hull(xs: np.ndarray, ys: np.ndarray) -> list[int]:
    """Indices of the upper convex hull of points sorted by strictly increasing x.

    Monotone-chain construction: a candidate vertex is kept only while the
    last three hull points turn clockwise (cross product negative).
    """
    x = xs.tolist()
    y = ys.tolist()
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (x[a] - x[o]) * (y[i] - y[o]) - (y[a] - y[o]) * (x[i] - x[o])
            if cross >= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _golden_max(f, lo: float, hi: float, iters: int = 30) -> float:
    """Argmax of f on [lo, hi] by golden-section search."""
    if hi <= lo:
        return lo
    a, b = lo, hi
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
    return x1 if f1 >= f2 else x2


def rho(c: float, chi: float) -> float:
    """Worst-case noncoverage over bias distributions with second moment c.

    Grids the squared bias on [0, t_max], takes the upper hull of the grid
    values of ``r(sqrt(t), chi)``, evaluates the hull at ``c`` by linear
    interpolation, then refines the two active support points with a local
    continuous search.
    """
    if c < 0:
        raise InputValidationError("c must be nonnegative")
    if not chi > 0:
        raise InputValidationError("chi must be positive")
    t_max = max(4.0 * c, (chi + 8.0) ** 2)
    ts = np.unique(
        np.concatenate(
            (
                [0.0, c],
                np.logspace(math.log10(t_max) - 10.0, math.log10(t_max), _RHO_GRID_POINTS - 1),
            )
        )
    )
    qs = np.asarray(_tail_mass(ts, chi))
    hull = _upper_hull(ts, qs)
    hx = ts[hull]
    hy = qs[hull]

    j = int(np.searchsorted(hx, c, side="right")) - 1
    j = min(max(j, 0), hx.size - 2) if hx.size >= 2 else 0
    if hx.size == 1:
        return float(min(1.0, hy[0]))
    t1, t2 = float(hx[j]), float(hx[j + 1])
    if t2 > t1:
        w = (c - t1) / (t2 - t1)
        value = float((1.0 - w) * hy[j] + w * hy[j + 1])
    else:
        value = float(hy[j])

    value = max(value, _refine_two_point(c, chi, t1, t2, ts))
    return float(min(1.0, value))


def _refine_two_point(c: float, chi: float, t1: float, t2: float, ts: np.ndarray) -> float:
    """Polish the two-point support locally, within one grid cell of each point."""

    def chord(lo: float, hi: float) -> float:
        if hi - lo <= 1e-12 * max(1.0, hi):
            return float(_tail_mass(c, chi))
        p = (hi - c) / (hi - lo)
        p = min(1.0, max(0.0, p))
        return float(p * _tail_mass(lo, chi) + (1.0 - p) * _tail_mass(hi, chi))

    def window(t: float, low_cap: float, high_cap: float) -> tuple[float, float]:
        i = int(np.searchsorted(ts, t))
        lo = ts[max(i - 1, 0)]
        hi = ts[min(i + 1, ts.size - 1)]
        return max(float(lo), low_cap), min(float(hi), high_cap)

    lo1, hi1 = window(t1, 0.0, c)
    lo2, hi2 = window(t2, c, float(ts[-1]))
    x1, x2 = min(max(t1, lo1), hi1), min(max(t2, lo2), hi2)
    best = chord(x1, x2)
    for _ in range(2):
        x2 = _golden_max(lambda u: chord(x1, u), lo2, hi2)
        x1 = _golden_max(lambda u: chord(u, x2), lo1, hi1)
        best = max(best, chord(x1, x2))
    return best


def cva(c: float, alpha: float) -> float:
    """Smallest chi whose worst-case noncoverage at bias budget c is <= alpha.

    Found by bisection; ``rho`` is continuous and strictly decreasing in chi.
    At c = 0 this is the usual two-sided Gaussian quantile.
    """
    if c < 0:
        raise InputValidationError("c must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise InputValidationError("alpha must lie in (0, 1)")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    if rho(c, z) <= alpha:
        return z
    lo, hi = z, z + math.sqrt(c) + 10.0
    while rho(c, hi) > alpha:  # defensive; the offset bound already suffices
        hi += 10.0
    while hi - lo > _CVA_CHI_TOL:
        mid = 0.5 * (lo + hi)
        if rho(c, mid) > alpha:
            lo = mid
        else:
            hi = mid
    return hi


def compute_ck(pair: EstimatePair, hp: Hyperparams, k: int) -> float:
    """Squared-bias budget of the standardized estimate for stratum k.

    Requires eta2 > 0; apply ``truncate_hyperparams`` first.
    """
    if not 0 <= k < pair.k:
        raise InputValidationError(f"stratum index {k} out of range for K={pair.k}")
    return float(_ck_vector(pair, hp)[k])


def _ck_vector(pair: EstimatePair, hp: Hyperparams) -> np.ndarray:
    if hp.eta2 <= 0:
        raise ConfigurationError(
            "eta2 must be positive when building intervals; truncate the fit first"
        )
    g, e = hp.gamma2, hp.eta2
    su, sb = pair.var_u, pair.var_b
    num = su * (g * (e + 2.0 * sb) + g**2 + sb**2)
    den = e * ((g + sb) ** 2 + sb * su)
    return num / den


@dataclass(frozen=True)
class IntervalSet:
    """Per-stratum robust intervals: centers, half-widths, and their inputs."""

    center: np.ndarray
    half_width: np.ndarray
    c: np.ndarray
    cva: np.ndarray
    alpha: float

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_width


@dataclass(frozen=True)
class CvaTable:
    """Precomputed critical values on a sqrt-scale grid of bias budgets.

    ``entries`` maps each grid budget c to its exact critical value, in
    increasing order of c.  ``value`` interpolates linearly in sqrt(c), where
    the critical value is asymptotically linear, and falls back to the exact
    computation beyond the grid.
    """

    alpha: float
    entries: dict

    def __post_init__(self):
        cs = np.fromiter(self.entries.keys(), dtype=float)
        vals = np.fromiter(self.entries.values(), dtype=float)
        if np.any(np.diff(cs) <= 0):
            raise InputValidationError("table budgets must be strictly increasing")
        object.__setattr__(self, "_xs", np.sqrt(cs))
        object.__setattr__(self, "_cs", cs)
        object.__setattr__(self, "_vals", vals)

    @classmethod
    def build(
        cls,
        alpha: float,
        c_max: float,
        fine_step: float = 0.05,
        coarse_step: float = 0.5,
        fine_span: float = 6.0,
    ) -> "CvaTable":
        x_max = math.sqrt(max(c_max, 0.0))
        xs = list(np.arange(0.0, min(fine_span, x_max) + fine_step, fine_step))
        x = xs[-1]
        while x < x_max:
            x += coarse_step
            xs.append(x)
        entries = {float(x * x): cva(x * x, alpha) for x in xs}
        return cls(alpha=alpha, entries=entries)

    def value(self, c):
        """Critical value at budget c (scalar or vector); exact beyond the grid."""
        c_arr = np.atleast_1d(np.asarray(c, dtype=float))
        out = np.interp(np.sqrt(c_arr), self._xs, self._vals)
        beyond = c_arr > self._cs[-1]
        if np.any(beyond):
            out[beyond] = [cva(float(ci), self.alpha) for ci in c_arr[beyond]]
        return float(out[0]) if np.ndim(c) == 0 else out


def truncate_hyperparams(
    hp: Hyperparams, pair: EstimatePair, floor_frac: float = 0.01
) -> Hyperparams:
    """Floor eta2 at a fraction of the median unbiased variance.

    Prevents degenerate single-point intervals when the fitted eta2 is zero.
    The returned value is flagged ``truncated`` whenever it was adjusted.
    """
    if not floor_frac > 0:
        raise InputValidationError("floor_frac must be positive")
    floor = floor_frac * float(np.median(pair.var_u))
    eta2 = max(hp.eta2, floor)
    gamma2 = max(hp.gamma2, 0.0)
    changed = (eta2 != hp.eta2) or (gamma2 != hp.gamma2)
    return Hyperparams(
        gamma2=gamma2, eta2=eta2, method=hp.method, truncated=hp.truncated or changed
    )


def robust_intervals(
    pair: EstimatePair, hp: Hyperparams, alpha: float, cva_fn=None
) -> IntervalSet:
    """Intervals with worst-case empirical-Bayes coverage 1 - alpha.

    Half-width for stratum k is
    ``cva(c_k) * a_k * sqrt(lam_k^2 var_u[k] + (1 - lam_k)^2 var_b[k])``.
    ``hp`` must already be truncated (eta2 > 0).  ``cva_fn`` optionally
    replaces the exact critical-value computation (e.g. a ``CvaTable``), which
    the simulation harness uses for speed; by default each distinct budget is
    computed exactly once per call.
    """
    if not 0.0 < alpha < 1.0:
        raise InputValidationError("alpha must lie in (0, 1)")
    weights = compute_weights(pair, hp)
    center = apply_weights(pair, weights)
    spread = weights.a * np.sqrt(
        weights.lam**2 * pair.var_u + (1.0 - weights.lam) ** 2 * pair.var_b
    )
    budgets = _ck_vector(pair, hp)
    if cva_fn is None:
        memo: dict[float, float] = {}
        crits = np.empty(pair.k)
        for i, ci in enumerate(budgets):
            key = round(float(ci), 10)
            if key not in memo:
                memo[key] = cva(float(ci), alpha)
            crits[i] = memo[key]
    else:
        crits = np.atleast_1d(np.asarray(cva_fn(budgets), dtype=float))
    return IntervalSet(
        center=center,
        half_width=crits * spread,
        c=budgets,
        cva=crits,
        alpha=alpha,
    )
