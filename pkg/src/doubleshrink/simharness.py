"""Seeded simulation harness: synthetic generation, risk and coverage
evaluation across estimators, and bootstrap evaluation of unit-level data.

Replications are driven by substreams spawned deterministically from the
master seed, so every result is a pure function of (config, seed) and
replications could be evaluated in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import competitors
from .core import (
    EstimatePair,
    FitMethod,
    Hyperparams,
    LatentTruth,
    apply_weights,
    compute_weights,
    squared_error_loss,
)
from .errors import AggregationError, InputValidationError, ShrinkageError
from .hyper import fit_mle, fit_mm1, fit_mm2, fit_ure
from .inference import CvaTable, truncate_hyperparams

SHRINKER_METHODS = ("mm1", "mm2", "mle", "ure", "fixed")
COMPETITOR_METHODS = ("delta1", "delta2", "delta91", "kappa1", "kappa2", "pw", "raw-u", "raw-b")
KNOWN_METHODS = SHRINKER_METHODS + COMPETITOR_METHODS
# methods for which coverage/length statistics are produced
INTERVAL_METHODS = ("mm1", "mm2", "mle", "ure", "fixed", "raw-u")


@dataclass(frozen=True)
class SimConfig:
    """Synthetic experiment description.

    Variances are drawn log-uniformly from the configured ranges once per
    experiment and held fixed across replications; latent effects and biases
    are redrawn each replication unless ``redraw_latents`` is False.
    """

    k: int
    eta2: float
    gamma2: float
    var_u_range: tuple
    var_b_range: tuple
    n_reps: int
    seed: int
    methods: tuple = ("raw-u", "mm1", "mm2", "mle", "ure")
    alpha: float | None = None
    redraw_latents: bool = True
    floor_frac: float = 0.01

    def __post_init__(self):
        if self.k < 1:
            raise InputValidationError("k must be >= 1")
        if self.n_reps < 1:
            raise InputValidationError("n_reps must be >= 1")
        for name in ("eta2", "gamma2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InputValidationError(f"{name} must be finite and >= 0")
        for name in ("var_u_range", "var_b_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi and np.isfinite(hi)):
                raise InputValidationError(f"{name} must satisfy 0 < low <= high")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise InputValidationError("alpha must lie in (0, 1)")
        if not self.methods:
            raise InputValidationError("methods must be nonempty")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise InputValidationError(f"unknown method {m!r}; choose from {KNOWN_METHODS}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "var_u_range", (float(self.var_u_range[0]), float(self.var_u_range[1])))
        object.__setattr__(self, "var_b_range", (float(self.var_b_range[0]), float(self.var_b_range[1])))


@dataclass
class MethodStats:
    """Aggregated Monte-Carlo statistics for one estimator."""

    n_used: int
    n_failed: int
    mean_loss: float
    mean_loss_se: float
    loss_pct: float
    loss_pct_se: float
    coverage: float | None = None
    coverage_se: float | None = None
    min_coverage: float | None = None
    mean_length: float | None = None
    length_pct: float | None = None
    length_pct_se: float | None = None


@dataclass
class SimResult:
    """Per-method statistics plus the raw per-replication losses."""

    n_reps: int
    methods: tuple
    stats: dict
    alpha: float | None
    wald_mean_length: float | None
    rep_losses: dict
    rep_loss_u: np.ndarray
    n_excluded: int = 0


@dataclass(frozen=True)
class StratumSummary:
    """Difference-in-means effect and variance for one stratum and both sources."""

    stratum_id: str
    tau_u: float
    var_u: float
    tau_b: float
    var_b: float
    n_u: int | None = None
    n_b: int | None = None

    def __post_init__(self):
        if not (self.var_u > 0 and self.var_b > 0):
            raise InputValidationError(
                f"stratum {self.stratum_id!r} has nonpositive variance"
            )


def _log_uniform(rng, bounds, k):
    lo, hi = bounds
    if lo == hi:
        return np.full(k, float(lo))
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=k))


def generate(config: SimConfig, truth: LatentTruth | None = None):
    """Yield (EstimatePair, LatentTruth) replications from the hierarchical model.

    With ``redraw_latents`` the effects and biases are redrawn every
    replication; otherwise they are drawn once (or taken from ``truth``) and
    only the sampling noise varies.  Bit-identical under a fixed seed.
    """
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(2 + config.n_reps)
    rng_vars = np.random.default_rng(streams[0])
    var_u = _log_uniform(rng_vars, config.var_u_range, config.k)
    var_b = _log_uniform(rng_vars, config.var_b_range, config.k)

    fixed = None
    if truth is not None:
        if config.redraw_latents:
            raise InputValidationError("supplying truth requires redraw_latents=False")
        if truth.tau.size != config.k:
            raise InputValidationError("truth length does not match config.k")
        fixed = truth
    elif not config.redraw_latents:
        rng_lat = np.random.default_rng(streams[1])
        fixed = LatentTruth(
            tau=rng_lat.normal(0.0, np.sqrt(config.eta2), config.k),
            xi=rng_lat.normal(0.0, np.sqrt(config.gamma2), config.k),
        )

    for rep in range(config.n_reps):
        rng = np.random.default_rng(streams[2 + rep])
        if fixed is None:
            latent = LatentTruth(
                tau=rng.normal(0.0, np.sqrt(config.eta2), config.k),
                xi=rng.normal(0.0, np.sqrt(config.gamma2), config.k),
            )
        else:
            latent = fixed
        tau_u = latent.tau + rng.standard_normal(config.k) * np.sqrt(var_u)
        tau_b = latent.tau + latent.xi + rng.standard_normal(config.k) * np.sqrt(var_b)
        yield EstimatePair(tau_u=tau_u, tau_b=tau_b, var_u=var_u, var_b=var_b), latent


def _fit_shrinker(method: str, pair: EstimatePair, fixed_hp: Hyperparams | None) -> Hyperparams:
    if method == "mm1":
        return fit_mm1(pair)
    if method == "mm2":
        return fit_mm2(pair)
    if method == "mle":
        return fit_mle(pair).hp
    if method == "ure":
        return fit_ure(pair).hp
    if method == "fixed":
        if fixed_hp is None:
            raise InputValidationError("method 'fixed' requires generator hyperparameters")
        return fixed_hp
    raise InputValidationError(f"not a shrinkage method: {method!r}")


def _point_estimate(method: str, pair: EstimatePair, fixed_hp: Hyperparams | None) -> np.ndarray:
    if method in SHRINKER_METHODS:
        hp = _fit_shrinker(method, pair, fixed_hp)
        return apply_weights(pair, compute_weights(pair, hp))
    if method == "raw-u":
        return pair.tau_u
    if method == "raw-b":
        return pair.tau_b
    if method == "pw":
        return competitors.precision_weighted(pair)
    if method == "kappa1":
        return competitors.kappa1(pair)
    if method == "kappa2":
        return competitors.kappa2(pair)
    if method == "delta1":
        return competitors.delta1(pair)
    if method == "delta2":
        return competitors.delta2(pair)
    if method == "delta91":
        return competitors.delta_homoscedastic(pair)
    raise InputValidationError(f"unknown method {method!r}")


@dataclass
class _IntervalRecord:
    centers: list = field(default_factory=list)
    spreads: list = field(default_factory=list)
    budgets: list = field(default_factory=list)
    truths: list = field(default_factory=list)


def _finalize_losses(losses: np.ndarray, loss_u: np.ndarray) -> tuple:
    mask = np.isfinite(losses) & np.isfinite(loss_u)
    n = int(mask.sum())
    if n == 0:
        return n, float("nan"), float("nan"), float("nan"), float("nan")
    x = losses[mask]
    y = loss_u[mask]
    mean_loss = float(x.mean())
    mean_loss_se = float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    ratio = 100.0 * x.mean() / y.mean()
    if n > 1:
        cov = np.cov(x, y, ddof=1)
        xm, ym = x.mean(), y.mean()
        var_ratio = (
            cov[0, 0] / ym**2 + xm**2 * cov[1, 1] / ym**4 - 2.0 * xm * cov[0, 1] / ym**3
        ) / n
        ratio_se = 100.0 * float(np.sqrt(max(var_ratio, 0.0)))
    else:
        ratio_se = float("nan")
    return n, mean_loss, mean_loss_se, float(ratio), ratio_se


def _evaluate_stream(stream, methods, *, alpha, floor_frac, fixed_hp, n_total):
    """Shared evaluation engine over an iterable of (pair, truth_tau) pairs.

    Failed replications are dropped per method and counted; interval methods
    additionally record centers, spreads, and bias budgets, from which
    coverage is computed after the critical-value table is sized to the
    largest observed budget.
    """
    losses = {m: np.full(n_total, np.nan) for m in methods}
    loss_u = np.full(n_total, np.nan)
    failures = {m: 0 for m in methods}
    records = {m: _IntervalRecord() for m in methods if alpha is not None and m in INTERVAL_METHODS}
    wald_lengths = []
    z = float(norm.ppf(1.0 - alpha / 2.0)) if alpha is not None else None

    rep = -1
    for rep, (pair, tau) in enumerate(stream):
        loss_u[rep] = squared_error_loss(pair.tau_u, tau)
        if alpha is not None:
            wald_lengths.append(float(np.mean(2.0 * z * np.sqrt(pair.var_u))))
        for m in methods:
            try:
                if m in records:
                    if m == "raw-u":
                        center = pair.tau_u
                        spread = np.sqrt(pair.var_u)
                        budget = np.zeros(pair.k)
                    else:
                        hp = truncate_hyperparams(
                            _fit_shrinker(m, pair, fixed_hp), pair, floor_frac
                        )
                        w = compute_weights(pair, hp)
                        center = apply_weights(pair, w)
                        spread = w.a * np.sqrt(
                            w.lam**2 * pair.var_u + (1.0 - w.lam) ** 2 * pair.var_b
                        )
                        g, e = hp.gamma2, hp.eta2
                        budget = (
                            pair.var_u
                            * (g * (e + 2.0 * pair.var_b) + g**2 + pair.var_b**2)
                            / (e * ((g + pair.var_b) ** 2 + pair.var_b * pair.var_u))
                        )
                    rec = records[m]
                    rec.centers.append(center)
                    rec.spreads.append(spread)
                    rec.budgets.append(budget)
                    rec.truths.append(tau)
                    est = center
                else:
                    est = _point_estimate(m, pair, fixed_hp)
            except ShrinkageError:
                failures[m] += 1
                continue
            losses[m][rep] = squared_error_loss(est, tau)
    n_seen = rep + 1

    wald_mean = float(np.mean(wald_lengths)) if wald_lengths else None
    table = None
    if any(rec.budgets for rec in records.values()):
        c_max = max(float(np.max(b)) for rec in records.values() for b in rec.budgets)
        table = CvaTable.build(alpha, c_max)

    stats = {}
    for m in methods:
        n, mean_loss, mean_loss_se, pct, pct_se = _finalize_losses(losses[m], loss_u)
        ms = MethodStats(
            n_used=n,
            n_failed=failures[m],
            mean_loss=mean_loss,
            mean_loss_se=mean_loss_se,
            loss_pct=pct,
            loss_pct_se=pct_se,
        )
        rec = records.get(m)
        if rec is not None and rec.centers:
            centers = np.vstack(rec.centers)
            spreads = np.vstack(rec.spreads)
            budgets = np.vstack(rec.budgets)
            truths = np.vstack(rec.truths)
            crit = table.value(budgets.ravel()).reshape(budgets.shape)
            half = crit * spreads
            covered = np.abs(centers - truths) <= half
            per_stratum = covered.mean(axis=0)
            per_rep = covered.mean(axis=1)
            lengths = 2.0 * half
            per_rep_len = lengths.mean(axis=1)
            nrep = covered.shape[0]
            ms.coverage = float(per_stratum.mean())
            ms.coverage_se = (
                float(per_rep.std(ddof=1) / np.sqrt(nrep)) if nrep > 1 else float("nan")
            )
            ms.min_coverage = float(per_stratum.min())
            ms.mean_length = float(lengths.mean())
            ms.length_pct = 100.0 * ms.mean_length / wald_mean
            ms.length_pct_se = (
                100.0 * float(per_rep_len.std(ddof=1) / np.sqrt(nrep)) / wald_mean
                if nrep > 1
                else float("nan")
            )
        stats[m] = ms

    return SimResult(
        n_reps=n_seen,
        methods=tuple(methods),
        stats=stats,
        alpha=alpha,
        wald_mean_length=wald_mean,
        rep_losses=losses,
        rep_loss_u=loss_u,
    )


def evaluate_risk(config: SimConfig, truth: LatentTruth | None = None) -> SimResult:
    """Monte-Carlo squared-error loss of each configured method.

    Loss percentages are relative to the unbiased estimator's loss over the
    same replication set; the unbiased estimator itself therefore reports
    exactly 100%.
    """
    fixed_hp = Hyperparams(gamma2=config.gamma2, eta2=config.eta2, method=FitMethod.FIXED)
    stream = ((pair, latent.tau) for pair, latent in generate(config, truth))
    return _evaluate_stream(
        stream,
        config.methods,
        alpha=None,
        floor_frac=config.floor_frac,
        fixed_hp=fixed_hp,
        n_total=config.n_reps,
    )


def evaluate_coverage(config: SimConfig, truth: LatentTruth | None = None) -> SimResult:
    """Risk plus per-stratum interval coverage and length statistics.

    Interval-capable methods use robust intervals built from truncated fits;
    ``raw-u`` uses the plain Wald interval and serves as the length baseline
    (its length percentage is exactly 100%).
    """
    if config.alpha is None:
        raise InputValidationError("evaluate_coverage requires config.alpha")
    fixed_hp = Hyperparams(gamma2=config.gamma2, eta2=config.eta2, method=FitMethod.FIXED)
    stream = ((pair, latent.tau) for pair, latent in generate(config, truth))
    return _evaluate_stream(
        stream,
        config.methods,
        alpha=config.alpha,
        floor_frac=config.floor_frac,
        fixed_hp=fixed_hp,
        n_total=config.n_reps,
    )


def aggregate_units(rows, var_floor: float = 0.0) -> list:
    """Difference-in-means summaries per (stratum, source) from unit records.

    Each record needs ``stratum``, ``source`` in {rct, obs}, ``arm`` in
    {treated, control}, and a finite numeric ``outcome``.  Every cell must
    hold at least two records, and a cell with zero sample variance is
    rejected unless ``var_floor`` > 0 supplies a stand-in variance.
    """
    cells: dict = {}
    for i, row in enumerate(rows):
        try:
            stratum = str(row["stratum"])
            source = str(row["source"])
            arm = str(row["arm"])
            outcome = float(row["outcome"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputValidationError(f"record {i} is malformed: {exc}") from exc
        if source not in ("rct", "obs"):
            raise InputValidationError(f"record {i}: source must be 'rct' or 'obs', got {source!r}")
        if arm not in ("treated", "control"):
            raise InputValidationError(
                f"record {i}: arm must be 'treated' or 'control', got {arm!r}"
            )
        if not np.isfinite(outcome):
            raise InputValidationError(f"record {i}: outcome must be finite")
        cells.setdefault((stratum, source, arm), []).append(outcome)
    if not cells:
        raise InputValidationError("no unit records supplied")

    strata = sorted({key[0] for key in cells})

    def cell_moments(stratum, source, arm):
        values = cells.get((stratum, source, arm))
        name = f"stratum={stratum!r}, source={source}, arm={arm}"
        if values is None or len(values) < 2:
            count = 0 if values is None else len(values)
            raise AggregationError(f"cell ({name}) has {count} records; need at least 2")
        arr = np.asarray(values)
        s2 = float(arr.var(ddof=1))
        if s2 == 0.0:
            if var_floor > 0.0:
                s2 = var_floor
            else:
                raise AggregationError(f"cell ({name}) has zero sample variance")
        return float(arr.mean()), s2, len(values)

    out = []
    for s in strata:
        effects = {}
        variances = {}
        counts = {}
        for source in ("rct", "obs"):
            mt, vt, nt = cell_moments(s, source, "treated")
            mc, vc, nc = cell_moments(s, source, "control")
            effects[source] = mt - mc
            variances[source] = vt / nt + vc / nc
            counts[source] = nt + nc
        out.append(
            StratumSummary(
                stratum_id=s,
                tau_u=effects["rct"],
                var_u=variances["rct"],
                tau_b=effects["obs"],
                var_b=variances["obs"],
                n_u=counts["rct"],
                n_b=counts["obs"],
            )
        )
    return out


def pair_from_summaries(summaries) -> EstimatePair:
    """Stack per-stratum summaries into an estimate pair (given order kept)."""
    return EstimatePair(
        tau_u=[s.tau_u for s in summaries],
        tau_b=[s.tau_b for s in summaries],
        var_u=[s.var_u for s in summaries],
        var_b=[s.var_b for s in summaries],
    )


def bootstrap_eval(
    rows,
    n_boot: int,
    rct_subsample: int,
    seed: int,
    methods=("raw-u", "mm1", "mm2", "mle", "ure"),
    alpha: float | None = None,
    floor_frac: float = 0.01,
    var_floor: float = 0.0,
    resample_obs: bool = True,
) -> SimResult:
    """Bootstrap evaluation against the full-data randomized benchmark.

    Each replication subsamples the randomized units without replacement to
    ``rct_subsample`` and resamples the observational units with replacement
    (disable via ``resample_obs`` for a degenerate, noise-free pass).  The
    "truth" is the full-data randomized difference in means per stratum.
    Replications in which any stratum cell vanishes or degenerates are
    excluded and counted.
    """
    rows = list(rows)
    full = aggregate_units(rows, var_floor)
    strata = [s.stratum_id for s in full]
    truth_tau = np.array([s.tau_u for s in full])
    for m in methods:
        if m not in KNOWN_METHODS:
            raise InputValidationError(f"unknown method {m!r}")
        if m == "fixed":
            raise InputValidationError("method 'fixed' is not available for bootstrap runs")
    rct_rows = [r for r in rows if str(r["source"]) == "rct"]
    obs_rows = [r for r in rows if str(r["source"]) == "obs"]
    if not 1 <= rct_subsample <= len(rct_rows):
        raise InputValidationError(
            f"rct_subsample must lie in [1, {len(rct_rows)}], got {rct_subsample}"
        )
    if n_boot < 1:
        raise InputValidationError("n_boot must be >= 1")

    streams = np.random.SeedSequence(seed).spawn(n_boot)
    excluded = 0

    def reps():
        nonlocal excluded
        for i in range(n_boot):
            rng = np.random.default_rng(streams[i])
            idx = rng.choice(len(rct_rows), size=rct_subsample, replace=False)
            rep_rows = [rct_rows[j] for j in idx]
            if resample_obs:
                obs_idx = rng.integers(0, len(obs_rows), size=len(obs_rows))
                rep_rows.extend(obs_rows[j] for j in obs_idx)
            else:
                rep_rows.extend(obs_rows)
            try:
                summaries = aggregate_units(rep_rows, var_floor)
            except AggregationError:
                excluded += 1
                continue
            if [s.stratum_id for s in summaries] != strata:
                excluded += 1
                continue
            yield pair_from_summaries(summaries), truth_tau

    result = _evaluate_stream(
        reps(),
        tuple(methods),
        alpha=alpha,
        floor_frac=floor_frac,
        fixed_hp=None,
        n_total=n_boot,
    )
    result.n_excluded = excluded
    return result
