"""Domain types and the double-shrinkage estimator.

The estimator fuses an unbiased estimate vector with a biased one in two
stages: a per-component convex combination with weights ``lam``, followed by a
per-component multiplicative shrinkage toward zero with factors ``a``.  Both
weight vectors are closed-form functions of the component variances and two
nonnegative hyperparameters ``gamma2`` (prior bias variance) and ``eta2``
(prior effect variance).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputValidationError


class FitMethod(Enum):
    """Provenance tag for a hyperparameter pair."""

    MM1 = "mm1"
    MM2 = "mm2"
    MLE = "mle"
    URE = "ure"
    FIXED = "fixed"


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float, copy=True)
    if arr.ndim != 1 or arr.size < 1:
        raise InputValidationError(f"{name} must be a 1-D vector with at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InputValidationError(f"{name} must contain only finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EstimatePair:
    """Observed inputs: unbiased/biased estimate vectors and their variances.

    All four vectors share the same length K.  Variances are the diagonals of
    the (diagonal) covariance matrices and must be strictly positive; they are
    treated as known exactly.
    """

    tau_u: np.ndarray
    tau_b: np.ndarray
    var_u: np.ndarray
    var_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau_u", _as_vector(self.tau_u, "tau_u"))
        object.__setattr__(self, "tau_b", _as_vector(self.tau_b, "tau_b"))
        object.__setattr__(self, "var_u", _as_vector(self.var_u, "var_u"))
        object.__setattr__(self, "var_b", _as_vector(self.var_b, "var_b"))
        k = self.tau_u.size
        for name in ("tau_b", "var_u", "var_b"):
            if getattr(self, name).size != k:
                raise InputValidationError(
                    f"{name} has length {getattr(self, name).size}, expected {k}"
                )
        if np.any(self.var_u <= 0) or np.any(self.var_b <= 0):
            raise InputValidationError("variances must be strictly positive")

    @property
    def k(self) -> int:
        return self.tau_u.size


@dataclass(frozen=True)
class Hyperparams:
    """Nonnegative hyperparameter pair with a provenance tag.

    ``gamma2`` is the prior variance of the biases, ``eta2`` the prior
    variance of the true effects (both in squared outcome units).
    """

    gamma2: float
    eta2: float
    method: FitMethod = FitMethod.FIXED
    truncated: bool = False

    def __post_init__(self):
        g = float(self.gamma2)
        e = float(self.eta2)
        if not (np.isfinite(g) and g >= 0):
            raise InputValidationError(f"gamma2 must be finite and >= 0, got {self.gamma2}")
        if not (np.isfinite(e) and e >= 0):
            raise InputValidationError(f"eta2 must be finite and >= 0, got {self.eta2}")
        object.__setattr__(self, "gamma2", g)
        object.__setattr__(self, "eta2", e)


@dataclass(frozen=True)
class ShrinkageWeights:
    """Per-component zero-shrinkage factors ``a`` and convex weights ``lam``."""

    a: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _as_vector(self.a, "a"))
        object.__setattr__(self, "lam", _as_vector(self.lam, "lam"))
        if self.a.size != self.lam.size:
            raise InputValidationError("a and lam must have equal length")


@dataclass(frozen=True)
class LatentTruth:
    """True effects and biases; used by the simulation harness and risk oracles."""

    tau: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau", _as_vector(self.tau, "tau"))
        object.__setattr__(self, "xi", _as_vector(self.xi, "xi"))
        if self.tau.size != self.xi.size:
            raise InputValidationError("tau and xi must have equal length")


def compute_weights(pair: EstimatePair, hp: Hyperparams) -> ShrinkageWeights:
    """Closed-form shrinkage weights for the given variances and hyperparameters.

    For each component k, with total spread s = gamma2 + var_b[k] + var_u[k]:

        lam[k] = (gamma2 + var_b[k]) / s
        a[k]   = eta2 * s / (var_u[k] * (gamma2 + var_b[k]) + eta2 * s)

    Both formulas are continuous at gamma2 = 0 and eta2 = 0, so the limits are
    evaluated by direct substitution.  ``a[k]`` is exactly 0 when eta2 = 0.
    """
    g = hp.gamma2
    e = hp.eta2
    biased_spread = g + pair.var_b
    total = biased_spread + pair.var_u
    lam = biased_spread / total
    a = e * total / (pair.var_u * biased_spread + e * total)
    return ShrinkageWeights(a=a, lam=lam)


def apply_weights(pair: EstimatePair, weights: ShrinkageWeights) -> np.ndarray:
    """Evaluate the double shrinker for explicitly supplied weights."""
    if weights.a.size != pair.k:
        raise InputValidationError("weights and pair must have equal length")
    return weights.a * (weights.lam * pair.tau_u + (1.0 - weights.lam) * pair.tau_b)


def shrink(pair: EstimatePair, hp: Hyperparams) -> np.ndarray:
    """Double-shrinkage point estimate: a * (lam * tau_u + (1 - lam) * tau_b)."""
    return apply_weights(pair, compute_weights(pair, hp))


def squared_error_loss(est, truth) -> float:
    """Sum of squared componentwise differences."""
    e = np.asarray(est, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape or e.ndim != 1:
        raise InputValidationError(
            f"estimate and truth must be 1-D vectors of equal length, got {e.shape} vs {t.shape}"
        )
    return float(np.sum((e - t) ** 2))
