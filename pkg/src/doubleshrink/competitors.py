"""Baseline and prior-art estimators used for comparison.

Throughout, ``d = tau_u - tau_b``.  ``delta1``/``delta2`` shrink the unbiased
estimate toward the biased one through a Stein-type factor on ``d`` and are
presented unclamped; ``kappa1``/``kappa2`` are risk-estimate-minimizing
one-parameter combinations with their factor clamped to [0, 1].
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import EstimatePair
from .errors import (
    DegenerateInputError,
    DegenerateInputWarning,
    HomoscedasticApproximationWarning,
    InputValidationError,
)


def _difference(pair: EstimatePair) -> np.ndarray:
    d = pair.tau_u - pair.tau_b
    if not np.any(d != 0.0):
        raise DegenerateInputError("tau_u equals tau_b; the shrinkage direction is undefined")
    return d


def _check_stein_preconditions(pair: EstimatePair, a: float) -> float:
    if pair.k < 3:
        raise InputValidationError(f"requires K >= 3, got K={pair.k}")
    a = float(a) if a is not None else float(pair.k - 2)
    if not 0.0 < a < 2.0 * (pair.k - 2):
        raise InputValidationError(f"shrinkage constant a={a} outside (0, {2 * (pair.k - 2)})")
    return a


def delta1(pair: EstimatePair, a: float | None = None) -> np.ndarray:
    """Uniform-factor Stein shrinkage of tau_u toward tau_b.

    delta1 = tau_b + (1 - a / (d' inv(var_u) d)) d, default a = K - 2.
    """
    a = _check_stein_preconditions(pair, a)
    d = _difference(pair)
    quad = float(np.sum(d**2 / pair.var_u))
    return pair.tau_b + (1.0 - a / quad) * d


def delta2(pair: EstimatePair, a: float | None = None) -> np.ndarray:
    """Variance-scaled Stein shrinkage of tau_u toward tau_b.

    delta2 = tau_b + (I - a inv(var_u) / (d' inv(var_u)^2 d)) d.  Coincides
    with ``delta1`` when var_u is constant.
    """
    a = _check_stein_preconditions(pair, a)
    d = _difference(pair)
    quad = float(np.sum(d**2 / pair.var_u**2))
    return pair.tau_b + (1.0 - (a / pair.var_u) / quad) * d


def delta_homoscedastic(pair: EstimatePair) -> np.ndarray:
    """Positive-part shrinkage assuming a common unbiased variance.

    delta = tau_b + (1 - (K - 2) * sigma2 / ||d||^2)_+ d.  On heteroscedastic
    input the mean of var_u stands in for sigma2 and a warning is emitted.
    """
    if pair.k < 3:
        raise InputValidationError(f"requires K >= 3, got K={pair.k}")
    sigma2 = float(pair.var_u.mean())
    if np.ptp(pair.var_u) > 0:
        warnings.warn(
            "var_u is heteroscedastic; using its mean as the common variance",
            HomoscedasticApproximationWarning,
            stacklevel=2,
        )
    d = _difference(pair)
    factor = max(0.0, 1.0 - (pair.k - 2) * sigma2 / float(d @ d))
    return pair.tau_b + factor * d


def kappa1(pair: EstimatePair) -> np.ndarray:
    """Single-factor combination minimizing the unbiased risk estimate.

    Moves every component of tau_u the same fraction of the way to tau_b:
    lam* = tr(var_u) / ||d||^2, clamped to [0, 1].
    """
    d = pair.tau_u - pair.tau_b
    norm2 = float(d @ d)
    if norm2 == 0.0:
        warnings.warn(
            "tau_u equals tau_b; returning tau_u", DegenerateInputWarning, stacklevel=2
        )
        return pair.tau_u.copy()
    lam = min(1.0, max(0.0, pair.var_u.sum() / norm2))
    return pair.tau_u + lam * (pair.tau_b - pair.tau_u)


def kappa2(pair: EstimatePair) -> np.ndarray:
    """Variance-proportional combination minimizing the unbiased risk estimate.

    Component k moves by clamp(lam* var_u[k], 0, 1) of the way to tau_b[k],
    with lam* = sum(var_u^2) / sum(var_u^2 d^2).
    """
    d = pair.tau_u - pair.tau_b
    denom = float(np.sum(pair.var_u**2 * d**2))
    if denom == 0.0:
        warnings.warn(
            "tau_u equals tau_b; returning tau_u", DegenerateInputWarning, stacklevel=2
        )
        return pair.tau_u.copy()
    lam = float(np.sum(pair.var_u**2)) / denom
    w = np.clip(lam * pair.var_u, 0.0, 1.0)
    return pair.tau_u + w * (pair.tau_b - pair.tau_u)


def precision_weighted(pair: EstimatePair) -> np.ndarray:
    """Inverse-variance weighted average of tau_u and tau_b, componentwise."""
    wu = 1.0 / pair.var_u
    wb = 1.0 / pair.var_b
    return (pair.tau_u * wu + pair.tau_b * wb) / (wu + wb)
