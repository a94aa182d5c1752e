"""Hyperparameter fitting backends and the unbiased risk estimate.

Four ways to pick ``(gamma2, eta2)`` from the data:

* ``fit_mm1`` / ``fit_mm2`` -- positive-part moment matching, differing in the
  observable used for ``gamma2``.
* ``fit_mle`` -- marginal maximum likelihood over the nonnegative orthant.
  The first-order system decouples: ``eta2`` enters the unbiased-sample score
  alone, and the biased-sample score depends only on ``m = eta2 + gamma2``.
  We root-find each 1-D score by bracketed bisection, then enumerate boundary
  (clamped-at-zero) cases and keep the feasible candidate with the highest
  likelihood.
* ``fit_ure`` -- direct minimization of the unbiased risk estimate ``ure`` by
  derivative-free simplex search with deterministic multi-starts, including
  the moment-matching and MLE fits as anchors, so the returned value is never
  worse than any anchor.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize

from .core import (
    EstimatePair,
    FitMethod,
    Hyperparams,
    ShrinkageWeights,
    apply_weights,
    compute_weights,
)
from .errors import InputValidationError, SolverError


class BoundaryCase(Enum):
    INTERIOR = "interior"
    GAMMA_ZERO = "gamma_zero"
    ETA_ZERO = "eta_zero"
    BOTH_ZERO = "both_zero"


@dataclass(frozen=True)
class MleSolution:
    """Maximum-likelihood fit together with solver diagnostics.

    ``eta_residual`` and ``gamma_residual`` are the values of the likelihood
    gradient components at the solution; they are below the solver tolerance
    for every coordinate that was not clamped at zero.
    """

    hp: Hyperparams
    eta_residual: float
    gamma_residual: float
    boundary_case: BoundaryCase


@dataclass(frozen=True)
class UreSolution:
    """Risk-estimate minimizer, its attained value, and the evaluation count."""

    hp: Hyperparams
    ure_value: float
    evaluations: int


@dataclass(frozen=True)
class UreOptions:
    """Settings for the simplex minimizer used by ``fit_ure``."""

    xatol: float = 1e-8
    fatol: float = 1e-10
    maxiter: int = 500
    extra_starts: tuple = ()


def fit_mm1(pair: EstimatePair) -> Hyperparams:
    """Moment matching using the squared norm of the difference vector.

    gamma2 = (||tau_u - tau_b||^2 - tr(var_u) - tr(var_b))_+ / K
    eta2   = (||tau_u||^2 - tr(var_u))_+ / K
    """
    k = pair.k
    d = pair.tau_u - pair.tau_b
    g = max(0.0, (float(d @ d) - pair.var_u.sum() - pair.var_b.sum()) / k)
    return Hyperparams(gamma2=g, eta2=_eta2_mm(pair), method=FitMethod.MM1)


def fit_mm2(pair: EstimatePair) -> Hyperparams:
    """Moment matching using the difference of squared norms.

    gamma2 = (||tau_b||^2 - ||tau_u||^2 + tr(var_u) - tr(var_b))_+ / K
    eta2 as in ``fit_mm1``.
    """
    k = pair.k
    g = max(
        0.0,
        (
            float(pair.tau_b @ pair.tau_b)
            - float(pair.tau_u @ pair.tau_u)
            + pair.var_u.sum()
            - pair.var_b.sum()
        )
        / k,
    )
    return Hyperparams(gamma2=g, eta2=_eta2_mm(pair), method=FitMethod.MM2)


def _eta2_mm(pair: EstimatePair) -> float:
    return max(0.0, (float(pair.tau_u @ pair.tau_u) - pair.var_u.sum()) / pair.k)


def marginal_loglik(pair: EstimatePair, hp: Hyperparams) -> float:
    """Marginal Gaussian log-likelihood of the data, up to an additive constant.

    Marginally, tau_u[k] ~ N(0, eta2 + var_u[k]) and
    tau_b[k] ~ N(0, eta2 + gamma2 + var_b[k]).
    """
    vu = hp.eta2 + pair.var_u
    vb = hp.eta2 + hp.gamma2 + pair.var_b
    return float(
        -0.5 * np.sum(np.log(vu) + pair.tau_u**2 / vu)
        - 0.5 * np.sum(np.log(vb) + pair.tau_b**2 / vb)
    )


def _score_unbiased(pair: EstimatePair, v: float) -> float:
    # d/d(eta2) of the unbiased-sample log-likelihood terms at eta2 = v.
    w = v + pair.var_u
    return float(-0.5 * np.sum(1.0 / w - pair.tau_u**2 / w**2))


def _score_biased(pair: EstimatePair, m: float) -> float:
    # d/dm of the biased-sample log-likelihood terms at m = eta2 + gamma2.
    w = m + pair.var_b
    return float(-0.5 * np.sum(1.0 / w - pair.tau_b**2 / w**2))


def _bisect_score_root(score, hi0: float, tol: float, max_iter: int) -> float:
    """Smallest clamped root of a score that starts >= 0 and ends negative.

    Returns 0.0 when the score is already nonpositive at the origin.  The
    bracket upper bound is expanded by doubling until the score is negative
    there; a score that never turns negative raises ``SolverError``.
    """
    f0 = score(0.0)
    if f0 <= 0.0:
        return 0.0
    hi = max(hi0, 1.0)
    expansions = 0
    while score(hi) > 0.0:
        hi *= 2.0
        expansions += 1
        if expansions > max_iter:
            raise SolverError("score bracket expansion failed", best=hi)
    lo = 0.0
    eps = float(np.finfo(float).eps)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = score(mid)
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
        width = hi - lo
        # converge on both the score and the parameter, not the score alone:
        # a shallow slope otherwise leaves the root orders of magnitude less
        # accurate than the score residual suggests
        if abs(fm) < tol and width <= 1e-12 * max(1.0, mid):
            return mid
        if width <= 4.0 * eps * max(1.0, mid):
            break
    return 0.5 * (lo + hi)


def fit_mle(pair: EstimatePair, tol: float = 1e-10, max_iter: int = 200) -> MleSolution:
    """Marginal maximum likelihood over {gamma2 >= 0, eta2 >= 0}.

    Solves the decoupled interior system (eta2 from the unbiased score,
    m = eta2 + gamma2 from the biased score), enumerates the clamped boundary
    cases when the interior solution is infeasible, and returns the feasible
    candidate with the highest likelihood.
    """
    if not tol > 0:
        raise InputValidationError("tol must be positive")
    hi0 = max(float(pair.tau_u @ pair.tau_u), float(pair.tau_b @ pair.tau_b)) + max(
        pair.var_u.max(), pair.var_b.max()
    )

    eta_int = _bisect_score_root(lambda v: _score_unbiased(pair, v), hi0, tol, max_iter)
    m_int = _bisect_score_root(lambda m: _score_biased(pair, m), hi0, tol, max_iter)
    eta_joint = _bisect_score_root(
        lambda v: _score_unbiased(pair, v) + _score_biased(pair, v), hi0, tol, max_iter
    )

    candidates = [
        (eta_int, m_int - eta_int),  # interior (feasible only if m >= eta)
        (eta_joint, 0.0),            # gamma clamped at zero
        (0.0, m_int),                # eta clamped at zero
        (0.0, 0.0),
    ]
    best = None
    best_ll = -np.inf
    for e, g in candidates:
        if e < 0 or g < 0:
            continue
        ll = marginal_loglik(pair, Hyperparams(gamma2=g, eta2=e))
        if ll > best_ll:
            best_ll = ll
            best = (e, g)

    # The likelihood at the chosen case should never fall below the cheap
    # moment-matching plug-ins; if the 1-D scores were non-monotone enough to
    # miss the optimum, polish from the better anchor with a bounded
    # quasi-Newton step on the exact gradient.
    for anchor in (fit_mm1(pair), fit_mm2(pair)):
        if marginal_loglik(pair, anchor) > best_ll + 1e-12:
            best, best_ll = _polish_mle(pair, (anchor.eta2, anchor.gamma2), best, best_ll)

    eta_hat, gamma_hat = best
    m_hat = eta_hat + gamma_hat
    gamma_residual = _score_biased(pair, m_hat)
    eta_residual = _score_unbiased(pair, eta_hat) + gamma_residual
    if eta_hat > 0 and gamma_hat > 0:
        case = BoundaryCase.INTERIOR
    elif eta_hat > 0:
        case = BoundaryCase.GAMMA_ZERO
    elif gamma_hat > 0:
        case = BoundaryCase.ETA_ZERO
    else:
        case = BoundaryCase.BOTH_ZERO
    return MleSolution(
        hp=Hyperparams(gamma2=gamma_hat, eta2=eta_hat, method=FitMethod.MLE),
        eta_residual=eta_residual,
        gamma_residual=gamma_residual,
        boundary_case=case,
    )


def _polish_mle(pair, start, best, best_ll):
    def neg_ll_and_grad(x):
        e, g = x
        hp = Hyperparams(gamma2=max(g, 0.0), eta2=max(e, 0.0))
        ge = _score_unbiased(pair, hp.eta2) + _score_biased(pair, hp.eta2 + hp.gamma2)
        gg = _score_biased(pair, hp.eta2 + hp.gamma2)
        return -marginal_loglik(pair, hp), np.array([-ge, -gg])

    res = optimize.minimize(
        neg_ll_and_grad,
        x0=np.array(start, dtype=float),
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None), (0.0, None)],
    )
    ll = -float(res.fun)
    if ll > best_ll:
        return (float(res.x[0]), float(res.x[1])), ll
    return best, best_ll


def ure_given_weights(pair: EstimatePair, weights: ShrinkageWeights) -> float:
    """Unbiased estimate of the squared-error risk for explicit weights.

    tr(var_u) + ||psi - tau_u||^2 - 2 * sum_k var_u[k] * (1 - a[k] * lam[k])
    """
    psi = apply_weights(pair, weights)
    resid = psi - pair.tau_u
    return float(
        pair.var_u.sum()
        + resid @ resid
        - 2.0 * np.sum(pair.var_u * (1.0 - weights.a * weights.lam))
    )


def ure(pair: EstimatePair, hp: Hyperparams) -> float:
    """Unbiased risk estimate of the double shrinker at the given hyperparameters."""
    return ure_given_weights(pair, compute_weights(pair, hp))


def fit_ure(pair: EstimatePair, opts: UreOptions = UreOptions()) -> UreSolution:
    """Approximate minimizer of ``ure`` over the nonnegative orthant.

    Runs a Nelder-Mead search from each deterministic start: the origin, the
    mm1/mm2/mle fits, the componentwise median variances, and any
    ``opts.extra_starts``.  Negative coordinates are clamped to zero inside
    the objective, so the box constraint needs no penalty.  The returned value
    is the best over all searches and all start points, hence never worse
    than the anchor fits.
    """
    evals = 0

    def objective(x) -> float:
        nonlocal evals
        evals += 1
        hp = Hyperparams(gamma2=max(float(x[0]), 0.0), eta2=max(float(x[1]), 0.0))
        return ure(pair, hp)

    starts = [(0.0, 0.0)]
    for fit in (fit_mm1(pair), fit_mm2(pair)):
        starts.append((fit.gamma2, fit.eta2))
    try:
        mle = fit_mle(pair).hp
        starts.append((mle.gamma2, mle.eta2))
    except SolverError:
        pass
    starts.append((float(np.median(pair.var_b)), float(np.median(pair.var_u))))
    starts.extend(tuple(s) for s in opts.extra_starts)

    best_x = None
    best_val = np.inf
    for s in starts:
        x0 = np.asarray(s, dtype=float)
        val0 = objective(x0)
        if val0 < best_val:
            best_val, best_x = val0, x0
        res = optimize.minimize(
            objective,
            x0=x0,
            method="Nelder-Mead",
            options={
                "xatol": opts.xatol,
                "fatol": opts.fatol,
                "maxiter": opts.maxiter,
                "maxfev": 4 * opts.maxiter,
            },
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_x = float(res.fun), res.x

    if best_x is None or not np.isfinite(best_val):
        raise SolverError("risk-estimate minimization failed", best=best_x)
    hp = Hyperparams(
        gamma2=max(float(best_x[0]), 0.0),
        eta2=max(float(best_x[1]), 0.0),
        method=FitMethod.URE,
    )
    return UreSolution(hp=hp, ure_value=float(best_val), evaluations=evals)
