import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doubleshrink.core import (
    EstimatePair,
    Hyperparams,
    ShrinkageWeights,
    apply_weights,
    compute_weights,
    shrink,
    squared_error_loss,
)
from doubleshrink.errors import InputValidationError

from oracles import posterior_mean_oracle, random_pair


def unit_pair(tau_u=3.0, tau_b=0.0, var_u=1.0, var_b=1.0):
    return EstimatePair([tau_u], [tau_b], [var_u], [var_b])


class TestComputeWeights:
    def test_hand_checked_point(self):
        w = compute_weights(unit_pair(), Hyperparams(gamma2=1.0, eta2=1.0))
        assert w.lam[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert w.a[0] == pytest.approx(3.0 / 5.0, abs=1e-15)

    def test_vanishing_unbiased_variance_concentrates_on_tau_u(self):
        w = compute_weights(unit_pair(var_u=1e-12), Hyperparams(gamma2=1.0, eta2=1.0))
        assert w.lam[0] == pytest.approx(1.0, abs=1e-11)

    def test_flat_effect_prior_removes_zero_shrinkage(self):
        w = compute_weights(unit_pair(), Hyperparams(gamma2=1.0, eta2=1e12))
        assert w.a[0] == pytest.approx(1.0, abs=1e-11)

    def test_a_is_zero_exactly_when_eta2_zero(self):
        rng = np.random.default_rng(0)
        pair = random_pair(rng, 5)
        assert np.all(compute_weights(pair, Hyperparams(2.0, 0.0)).a == 0.0)
        assert np.all(compute_weights(pair, Hyperparams(2.0, 1e-8)).a > 0.0)

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=60, deadline=None)
    def test_weight_bounds(self, seed):
        rng = np.random.default_rng(seed)
        pair = random_pair(rng, int(rng.integers(1, 12)))
        hp = Hyperparams(gamma2=float(rng.uniform(0, 5)), eta2=float(rng.uniform(1e-6, 5)))
        w = compute_weights(pair, hp)
        assert np.all((w.a > 0) & (w.a < 1))
        assert np.all((w.lam > 0) & (w.lam < 1))

    def test_lam_monotone_in_gamma2_and_var_u(self):
        rng = np.random.default_rng(1)
        pair = random_pair(rng, 8)
        gammas = np.linspace(0.0, 10.0, 25)
        lams = np.array([compute_weights(pair, Hyperparams(g, 1.0)).lam for g in gammas])
        assert np.all(np.diff(lams, axis=0) > 0)
        # scaling var_u up componentwise lowers lam
        bigger = EstimatePair(pair.tau_u, pair.tau_b, pair.var_u * 1.5, pair.var_b)
        assert np.all(
            compute_weights(bigger, Hyperparams(1.0, 1.0)).lam
            < compute_weights(pair, Hyperparams(1.0, 1.0)).lam
        )

    def test_a_monotone_in_eta2(self):
        rng = np.random.default_rng(2)
        pair = random_pair(rng, 8)
        etas = np.linspace(1e-4, 10.0, 25)
        avals = np.array([compute_weights(pair, Hyperparams(1.0, e)).a for e in etas])
        assert np.all(np.diff(avals, axis=0) > 0)


class TestShrink:
    def test_total_shrinkage_at_eta2_zero(self):
        rng = np.random.default_rng(3)
        pair = random_pair(rng, 6)
        assert np.all(shrink(pair, Hyperparams(gamma2=2.0, eta2=0.0)) == 0.0)

    def test_hand_checked_point(self):
        psi = shrink(unit_pair(), Hyperparams(gamma2=1.0, eta2=1.0))
        assert psi[0] == pytest.approx(1.2, abs=1e-14)

    def test_huge_gamma2_discards_biased_source(self):
        pair = unit_pair(tau_u=3.0, tau_b=-5.0, var_u=1.0, var_b=1.0)
        psi = shrink(pair, Hyperparams(gamma2=1e12, eta2=1.0))
        # lam -> 1 and a -> eta2 / (eta2 + var_u)
        assert psi[0] == pytest.approx(0.5 * 3.0, rel=1e-9)

    def test_matches_posterior_mean_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            pair = random_pair(rng, int(rng.integers(1, 15)))
            hp = Hyperparams(float(rng.uniform(0, 4)), float(rng.uniform(0, 4)))
            np.testing.assert_allclose(
                shrink(pair, hp), posterior_mean_oracle(pair, hp), rtol=1e-12, atol=1e-300
            )

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=60, deadline=None)
    def test_estimate_never_exceeds_convex_combination(self, seed):
        rng = np.random.default_rng(seed)
        pair = random_pair(rng, int(rng.integers(1, 10)))
        hp = Hyperparams(float(rng.uniform(0, 5)), float(rng.uniform(0, 5)))
        w = compute_weights(pair, hp)
        combo = w.lam * pair.tau_u + (1 - w.lam) * pair.tau_b
        assert np.all(np.abs(shrink(pair, hp)) <= np.abs(combo) + 1e-15)

    def test_forced_unit_weights_reproduce_tau_u(self):
        rng = np.random.default_rng(5)
        pair = random_pair(rng, 7)
        w = ShrinkageWeights(a=np.ones(7), lam=np.ones(7))
        np.testing.assert_array_equal(apply_weights(pair, w), pair.tau_u)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        pair = random_pair(rng, 9)
        hp = Hyperparams(0.7, 1.3)
        perm = rng.permutation(9)
        permuted = EstimatePair(
            pair.tau_u[perm], pair.tau_b[perm], pair.var_u[perm], pair.var_b[perm]
        )
        np.testing.assert_allclose(shrink(permuted, hp), shrink(pair, hp)[perm], rtol=1e-15)


class TestSquaredErrorLoss:
    def test_identity_is_zero(self):
        assert squared_error_loss([1.0, -2.0], [1.0, -2.0]) == 0.0

    def test_direct_arithmetic(self):
        assert squared_error_loss([1.0, 2.0], [0.0, 0.0]) == pytest.approx(5.0)
        assert squared_error_loss([-1.0], [1.0]) == pytest.approx(4.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(InputValidationError):
            squared_error_loss([1.0, 2.0], [1.0])


class TestValidation:
    def test_length_mismatch(self):
        with pytest.raises(InputValidationError):
            EstimatePair([1.0, 2.0], [1.0], [1.0, 1.0], [1.0, 1.0])

    def test_nonpositive_variance(self):
        with pytest.raises(InputValidationError):
            EstimatePair([1.0], [1.0], [0.0], [1.0])
        with pytest.raises(InputValidationError):
            EstimatePair([1.0], [1.0], [1.0], [-2.0])

    def test_nonfinite_estimate(self):
        with pytest.raises(InputValidationError):
            EstimatePair([np.nan], [1.0], [1.0], [1.0])

    def test_negative_hyperparams_rejected(self):
        with pytest.raises(InputValidationError):
            Hyperparams(gamma2=-1.0, eta2=0.0)
        with pytest.raises(InputValidationError):
            Hyperparams(gamma2=0.0, eta2=np.inf)

    def test_vectors_are_frozen(self):
        pair = unit_pair()
        with pytest.raises(ValueError):
            pair.tau_u[0] = 9.0
