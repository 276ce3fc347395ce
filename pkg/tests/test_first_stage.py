import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import groupfx as gx
from groupfx.exceptions import InvalidInputError, InvalidProbabilityError
from groupfx.first_stage import estimate_arrays
from conftest import did_group, iv_group


class TestEstimateGroup:
    def test_plug_in_estimate(self):
        est = gx.estimate_group(did_group("g", [(3.0, 1), (1.0, 0)]))
        assert est.omega == 1
        np.testing.assert_allclose(est.theta_hat, [1.0, 2.0], atol=1e-12)
        assert est.n_g == 2
        np.testing.assert_allclose(est.H2_hat, [[1, 0.5], [0.5, 0.5]])

    def test_no_treated_units(self):
        est = gx.estimate_group(did_group("g", [(1.0, 0), (2.0, 0)]))
        assert est.omega == 0
        assert est.theta_hat is None
        assert est.H2_hat.shape == (2, 2)  # retained for diagnostics

    def test_iv_no_variation(self):
        est = gx.estimate_group(iv_group("g", [(1.0, 1, 1.0), (2.0, 1, 1.0)]))
        assert est.omega == 0

    def test_estimate_groups_ordered(self):
        samples = [did_group("b", [(1.0, 0), (2.0, 1)]), did_group("a", [(0.0, 1), (1.0, 0)])]
        out = gx.estimate_groups(samples)
        assert list(out) == ["b", "a"]

    def test_estimate_groups_duplicate_id(self):
        s = did_group("g", [(1.0, 0), (2.0, 1)])
        with pytest.raises(InvalidInputError):
            gx.estimate_groups([s, s])


class TestEstimateGroupAlt:
    def test_matches_plug_in_when_jacobians_coincide(self):
        sample = did_group("g", [(3.0, 1), (1.0, 0)])
        plug = gx.estimate_group(sample)
        aux = gx.AuxiliaryDesign(H2_pop=plug.H2_hat)
        alt = gx.estimate_group_alt(sample, aux)
        assert alt.omega == 1
        np.testing.assert_allclose(alt.theta_hat, plug.theta_hat, atol=1e-12)

    def test_defined_without_treated_units(self):
        sample = did_group("g", [(1.0, 0), (2.0, 0)])
        aux = gx.AuxiliaryDesign(H2_pop=np.array([[1.0, 0.5], [0.5, 0.5]]))
        alt = gx.estimate_group_alt(sample, aux)
        assert alt.omega == 1
        assert np.all(np.isfinite(alt.theta_hat))

    def test_zero_moments_give_zero_theta(self):
        sample = did_group("g", [(0.0, 0), (0.0, 1)])
        aux = gx.AuxiliaryDesign(H2_pop=np.array([[1.0, 0.5], [0.5, 0.5]]))
        np.testing.assert_array_equal(
            gx.estimate_group_alt(sample, aux).theta_hat, [0.0, 0.0]
        )

    def test_singular_auxiliary_rejected_at_construction(self):
        with pytest.raises(InvalidInputError):
            gx.AuxiliaryDesign(H2_pop=np.array([[1.0, 1.0], [1.0, 1.0]]))


class TestIpwTau:
    def test_balanced_sample_equals_difference_in_means(self):
        tau = gx.ipw_tau(np.array([2.0, 1, 1, 2]), np.array([1, 0, 0, 1]), 0.5)
        assert tau == pytest.approx(1.0, abs=1e-12)

    def test_zero_outcomes(self):
        assert gx.ipw_tau(np.zeros(5), np.array([1, 0, 1, 0, 0]), 0.3) == 0.0

    def test_no_treated_units_direct_formula(self):
        # (1/2) * sum of (0 - 0.25) / (0.25 * 0.75) per unit outcome 1.0
        tau = gx.ipw_tau(np.array([1.0, 1.0]), np.array([0, 0]), 0.25)
        assert tau == pytest.approx(-0.25 / 0.1875, rel=1e-12)
        assert tau == pytest.approx(-4.0 / 3.0, rel=1e-12)

    @pytest.mark.parametrize("pi", [0.0, 1.0, -0.2, 1.4])
    def test_invalid_probability(self, pi):
        with pytest.raises(InvalidProbabilityError):
            gx.ipw_tau(np.array([1.0]), np.array([1]), pi)

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_equals_alt_estimator_effect_coordinate(self, seed, pi):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 25))
        dy = rng.standard_normal(n)
        e = rng.integers(0, 2, n)
        sample = did_group("g", list(zip(dy.tolist(), e.tolist())))
        aux = gx.AuxiliaryDesign(H2_pop=np.array([[1.0, pi], [pi, pi]]))
        alt = gx.estimate_group_alt(sample, aux)
        tau = gx.ipw_tau(dy, e, pi)
        assert tau == pytest.approx(alt.theta_hat[1], rel=1e-10, abs=1e-10)


class TestUnbiasedness:
    def _simulate(self, rng, pi, n, theta=(0.5, 2.0), sigma=1.0):
        e = (rng.random(n) < pi).astype(int)
        dy = theta[0] + theta[1] * e + sigma * rng.standard_normal(n)
        return did_group("g", list(zip(dy.tolist(), e.tolist()))), e

    def test_conditional_unbiasedness_of_plug_in(self, rng):
        reps, taus = 4000, []
        for _ in range(reps):
            sample, _ = self._simulate(rng, pi=0.4, n=8)
            est = gx.estimate_group(sample)
            if est.omega:
                taus.append(est.theta_hat[1])
        taus = np.array(taus)
        mc_se = taus.std(ddof=1) / np.sqrt(taus.size)
        assert abs(taus.mean() - 2.0) < 4 * mc_se

    def test_unconditional_unbiasedness_of_alt(self, rng):
        # small n and low pi: the plug-in route drops a large share of samples
        aux = gx.AuxiliaryDesign(H2_pop=np.array([[1.0, 0.15], [0.15, 0.15]]))
        reps, taus, dropped = 4000, [], 0
        for _ in range(reps):
            sample, _ = self._simulate(rng, pi=0.15, n=5)
            dropped += 1 - gx.estimate_group(sample).omega
            taus.append(gx.estimate_group_alt(sample, aux).theta_hat[1])
        assert dropped / reps > 0.3  # selection would bite here
        taus = np.array(taus)
        mc_se = taus.std(ddof=1) / np.sqrt(taus.size)
        assert abs(taus.mean() - 2.0) < 4 * mc_se


class TestOmegaMonotonicity:
    def test_adding_units_never_deselects_did_group(self):
        # exact-rank regime: the event-design average is a PSD mean whose
        # column space only grows as units accumulate
        pairs = [(1.0, 0), (2.0, 0), (3.0, 1), (1.5, 0), (2.5, 1), (0.5, 0)]
        omegas = []
        for upto in range(1, len(pairs) + 1):
            est = gx.estimate_group(did_group("g", pairs[:upto]), rank_tol=0.0)
            omegas.append(est.omega)
        for before, after in zip(omegas, omegas[1:]):
            assert after >= before
        assert omegas == [0, 0, 1, 1, 1, 1]


class TestEstimateArrays:
    def test_matches_per_group_route(self, rng):
        samples = []
        for g in range(30):
            n = int(rng.integers(2, 12))
            e = rng.integers(0, 2, n)
            dy = rng.standard_normal(n)
            samples.append(did_group(f"g{g}", list(zip(dy.tolist(), e.tolist()))))
        avgs = [gx.average_moments(s) for s in samples]
        H1 = np.stack([a.H1 for a in avgs])
        H2 = np.stack([a.H2 for a in avgs])
        theta, omega = estimate_arrays(H1, H2)
        for i, s in enumerate(samples):
            est = gx.estimate_group(s)
            assert omega[i] == est.omega
            if est.omega:
                np.testing.assert_allclose(theta[i], est.theta_hat, atol=1e-12)
