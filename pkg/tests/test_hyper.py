import numpy as np
import pytest
from scipy import optimize

from doubleshrink.core import (
    EstimatePair,
    FitMethod,
    Hyperparams,
    ShrinkageWeights,
    shrink,
    squared_error_loss,
)
from doubleshrink.hyper import (
    BoundaryCase,
    fit_mle,
    fit_mm1,
    fit_mm2,
    fit_ure,
    marginal_loglik,
    ure,
    ure_given_weights,
)

from oracles import random_pair, ure_grid_minimum


class TestMomentMatching:
    def test_mm1_hand_arithmetic(self):
        pair = EstimatePair([1, 1], [3, 3], [1, 1], [1, 1])
        hp = fit_mm1(pair)
        assert hp.gamma2 == pytest.approx(2.0)
        assert hp.eta2 == pytest.approx(0.0)
        assert hp.method is FitMethod.MM1

    def test_mm1_clamps_at_zero_when_sources_agree(self):
        pair = EstimatePair([1, 2], [1, 2], [1, 1], [1, 1])
        assert fit_mm1(pair).gamma2 == 0.0

    def test_eta2_clamps_at_zero_for_zero_tau_u(self):
        pair = EstimatePair([0, 0], [3, 3], [1, 1], [1, 1])
        assert fit_mm1(pair).eta2 == 0.0
        assert fit_mm2(pair).eta2 == 0.0

    def test_mm2_hand_arithmetic(self):
        pair = EstimatePair([1, 1], [3, 3], [1, 1], [1, 1])
        hp = fit_mm2(pair)
        assert hp.gamma2 == pytest.approx(8.0)
        assert hp.method is FitMethod.MM2

    def test_mm2_symmetric_cancellation(self):
        pair = EstimatePair([1, 2], [2, 1], [1, 1], [1, 1])
        assert fit_mm2(pair).gamma2 == 0.0

    def test_mm2_zero_for_identical_sources(self):
        pair = EstimatePair([1, 2], [1, 2], [0.5, 0.5], [0.5, 0.5])
        assert fit_mm2(pair).gamma2 == 0.0

    def test_outputs_nonnegative(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            pair = random_pair(rng, int(rng.integers(1, 12)))
            for fit in (fit_mm1(pair), fit_mm2(pair)):
                assert fit.gamma2 >= 0.0 and fit.eta2 >= 0.0

    def test_agreement_when_cross_moment_matches(self):
        # mm1 == mm2 whenever tau_u . tau_b = ||tau_u||^2 - tr(var_u)
        rng = np.random.default_rng(11)
        k = 6
        tau_u = rng.normal(0, 3, k)
        var_u = rng.uniform(0.5, 1.5, k)
        var_b = rng.uniform(0.2, 0.8, k)
        w = rng.normal(0, 1, k)
        w -= (w @ tau_u) / (tau_u @ tau_u) * tau_u  # orthogonal part
        scale = (tau_u @ tau_u - var_u.sum()) / (tau_u @ tau_u)
        tau_b = scale * tau_u + w
        pair = EstimatePair(tau_u, tau_b, var_u, var_b)
        assert fit_mm1(pair).gamma2 == pytest.approx(fit_mm2(pair).gamma2, abs=1e-12)


def homoscedastic_pair(rng, k=6, su=1.0, sb=0.5, scale_u=4.0, scale_b=6.0):
    # large effects keep the likelihood optimum interior
    return EstimatePair(
        rng.normal(0, scale_u, k), rng.normal(0, scale_b, k), np.full(k, su), np.full(k, sb)
    )


class TestMle:
    def test_homoscedastic_closed_form(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            pair = homoscedastic_pair(rng)
            sol = fit_mle(pair)
            eta_expect = float(pair.tau_u @ pair.tau_u) / pair.k - pair.var_u[0]
            m_expect = float(pair.tau_b @ pair.tau_b) / pair.k - pair.var_b[0]
            if eta_expect > 0 and m_expect - eta_expect > 0:
                assert sol.boundary_case is BoundaryCase.INTERIOR
                assert sol.hp.eta2 == pytest.approx(eta_expect, abs=1e-7)
                assert sol.hp.gamma2 == pytest.approx(m_expect - eta_expect, abs=1e-7)

    def test_three_strata_worked_example(self):
        pair = EstimatePair([2, 2, 2], [3, 3, 3], [1, 1, 1], [1, 1, 1])
        sol = fit_mle(pair)
        assert sol.hp.eta2 == pytest.approx(3.0, abs=1e-8)
        assert sol.hp.gamma2 == pytest.approx(5.0, abs=1e-8)

    def test_zero_tau_u_gives_zero_eta2(self):
        pair = EstimatePair([0, 0, 0], [3, 3, 3], [1, 1, 1], [1, 1, 1])
        sol = fit_mle(pair)
        assert sol.hp.eta2 == 0.0
        assert sol.boundary_case in (BoundaryCase.ETA_ZERO, BoundaryCase.BOTH_ZERO)

    def test_interior_residuals_below_tolerance(self):
        rng = np.random.default_rng(13)
        seen_interior = 0
        for _ in range(30):
            pair = EstimatePair(
                rng.normal(0, 4, 8),
                rng.normal(0, 6, 8),
                rng.uniform(0.3, 1.5, 8),
                rng.uniform(0.2, 1.0, 8),
            )
            sol = fit_mle(pair, tol=1e-10)
            if sol.boundary_case is BoundaryCase.INTERIOR:
                seen_interior += 1
                assert abs(sol.eta_residual) < 1e-8
                assert abs(sol.gamma_residual) < 1e-8
        assert seen_interior > 10

    def test_likelihood_dominates_anchors(self):
        rng = np.random.default_rng(14)
        for _ in range(40):
            pair = random_pair(rng, int(rng.integers(2, 12)))
            sol = fit_mle(pair)
            ll = marginal_loglik(pair, sol.hp)
            for anchor in (fit_mm1(pair), fit_mm2(pair), Hyperparams(0.0, 0.0)):
                assert ll >= marginal_loglik(pair, anchor) - 1e-10

    def test_matches_generic_bounded_optimizer(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            pair = random_pair(rng, 7, tau_scale=3.0)
            sol = fit_mle(pair)

            def neg_ll(x):
                return -marginal_loglik(pair, Hyperparams(gamma2=x[1], eta2=x[0]))

            best = None
            for x0 in ([0.5, 0.5], [2.0, 2.0], [sol.hp.eta2 + 0.1, sol.hp.gamma2 + 0.1]):
                res = optimize.minimize(
                    neg_ll, x0=x0, method="L-BFGS-B", bounds=[(0, None), (0, None)]
                )
                if best is None or res.fun < best.fun:
                    best = res
            assert marginal_loglik(pair, sol.hp) >= -best.fun - 1e-7

    def test_homoscedastic_coincidence_with_mm2(self):
        rng = np.random.default_rng(16)
        checked = 0
        for _ in range(25):
            pair = homoscedastic_pair(rng)
            mm2 = fit_mm2(pair)
            if mm2.gamma2 > 0 and mm2.eta2 > 0:
                mle = fit_mle(pair).hp
                if mle.eta2 > 0 and mle.gamma2 > 0:
                    checked += 1
                    np.testing.assert_allclose(
                        shrink(pair, mle), shrink(pair, mm2), atol=1e-8
                    )
        assert checked > 5


class TestUre:
    def test_unit_product_weights_give_trace(self):
        rng = np.random.default_rng(17)
        pair = random_pair(rng, 6)
        w = ShrinkageWeights(a=np.ones(6), lam=np.ones(6))
        assert ure_given_weights(pair, w) == pytest.approx(pair.var_u.sum())

    def test_eta2_zero_closed_form(self):
        rng = np.random.default_rng(18)
        pair = random_pair(rng, 5)
        expect = float(pair.tau_u @ pair.tau_u) - pair.var_u.sum()
        assert ure(pair, Hyperparams(1.3, 0.0)) == pytest.approx(expect, rel=1e-12)

    def test_monte_carlo_unbiasedness(self):
        # fixed latents, fixed weights: mean risk estimate tracks mean loss
        rng = np.random.default_rng(19)
        k = 6
        tau = rng.normal(0, 1.5, k)
        xi = rng.normal(0, 0.8, k)
        var_u = rng.uniform(0.5, 2.0, k)
        var_b = rng.uniform(0.2, 0.8, k)
        hp = Hyperparams(0.7, 1.4)
        n = 20000
        tu = tau + rng.standard_normal((n, k)) * np.sqrt(var_u)
        tb = tau + xi + rng.standard_normal((n, k)) * np.sqrt(var_b)
        diffs = np.empty(n)
        for i in range(n):
            pair = EstimatePair(tu[i], tb[i], var_u, var_b)
            diffs[i] = ure(pair, hp) - squared_error_loss(shrink(pair, hp), tau)
        se = diffs.std(ddof=1) / np.sqrt(n)
        assert abs(diffs.mean()) <= 3.0 * se

    def test_never_worse_than_anchor_fits(self):
        rng = np.random.default_rng(20)
        for _ in range(15):
            pair = random_pair(rng, int(rng.integers(2, 10)))
            sol = fit_ure(pair)
            assert sol.ure_value == pytest.approx(ure(pair, sol.hp), rel=1e-12, abs=1e-12)
            anchors = [fit_mm1(pair), fit_mm2(pair), fit_mle(pair).hp, Hyperparams(0.0, 0.0)]
            for anchor in anchors:
                assert sol.ure_value <= ure(pair, anchor) + 1e-12
            assert sol.evaluations > 0

    def test_zero_data_minimizer(self):
        pair = EstimatePair([0, 0, 0], [0, 0, 0], [1, 2, 3], [1, 1, 1])
        sol = fit_ure(pair)
        assert sol.ure_value <= ure(pair, Hyperparams(0.0, 0.0)) + 1e-12
        assert sol.ure_value == pytest.approx(-pair.var_u.sum(), rel=1e-9)

    def test_close_to_grid_oracle(self):
        rng = np.random.default_rng(21)
        pair = random_pair(rng, 5)
        grid_min, _ = ure_grid_minimum(pair, n=150)
        sol = fit_ure(pair)
        assert sol.ure_value <= grid_min + 1e-4 * abs(grid_min) + 1e-12
