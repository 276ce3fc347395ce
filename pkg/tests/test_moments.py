import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import groupfx as gx
from groupfx.exceptions import EmptyGroupError, InvalidInputError
from conftest import did_group


class TestBuilders:
    def test_did_control_unit(self):
        u = gx.build_did_unit(1.0, 0)
        np.testing.assert_array_equal(u.h1, [1.0, 0.0])
        np.testing.assert_array_equal(u.h2, [[1, 0], [0, 0]])

    def test_did_treated_unit(self):
        u = gx.build_did_unit(3.0, 1)
        np.testing.assert_array_equal(u.h1, [3.0, 3.0])
        np.testing.assert_array_equal(u.h2, [[1, 1], [1, 1]])

    def test_did_negative_outcome(self):
        u = gx.build_did_unit(-2.5, 1)
        np.testing.assert_array_equal(u.h1, [-2.5, -2.5])
        np.testing.assert_array_equal(u.h2, [[1, 1], [1, 1]])

    def test_iv_complier(self):
        u = gx.build_iv_unit(2.0, 1, 1.0)
        np.testing.assert_array_equal(u.h1, [2, 2])
        np.testing.assert_array_equal(u.h2, [[1, 1], [1, 1]])

    def test_iv_noncomplier_row_structure(self):
        u = gx.build_iv_unit(1.0, 0, 1.0)
        np.testing.assert_array_equal(u.h1, [1, 1])
        np.testing.assert_array_equal(u.h2, [[1, 0], [1, 0]])

    def test_iv_zero_outcome(self):
        u = gx.build_iv_unit(0.0, 1, 0.0)
        np.testing.assert_array_equal(u.h1, [0, 0])
        np.testing.assert_array_equal(u.h2, [[1, 1], [0, 0]])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_nonfinite_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            gx.build_did_unit(bad, 1)
        with pytest.raises(InvalidInputError):
            gx.build_iv_unit(1.0, 0, bad)

    @given(
        dy=st.floats(-50, 50, allow_nan=False),
        e=st.integers(0, 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_iv_with_z_equal_e_is_did(self, dy, e):
        did = gx.build_did_unit(dy, e)
        iv = gx.build_iv_unit(dy, e, float(e))
        np.testing.assert_array_equal(did.h1, iv.h1)
        np.testing.assert_array_equal(did.h2, iv.h2)


class TestAverages:
    def test_two_unit_hand_sum(self):
        sample = did_group("g", [(3.0, 1), (1.0, 0)])
        avgs = gx.average_moments(sample)
        np.testing.assert_allclose(avgs.H1, [2.0, 1.5])
        np.testing.assert_allclose(avgs.H2, [[1, 0.5], [0.5, 0.5]])

    def test_single_unit_mean(self):
        u = gx.build_did_unit(2.0, 1)
        sample = gx.GroupSample.from_units("g", [u])
        avgs = gx.average_moments(sample)
        np.testing.assert_array_equal(avgs.H1, u.h1)
        np.testing.assert_array_equal(avgs.H2, u.h2)

    def test_zero_h1_units(self):
        sample = did_group("g", [(0.0, 1), (0.0, 0), (0.0, 1)])
        np.testing.assert_array_equal(gx.average_moments(sample).H1, [0.0, 0.0])

    def test_empty_group_rejected(self):
        with pytest.raises(EmptyGroupError):
            gx.GroupSample.from_units("g", [])

    def test_mixed_dimensions_rejected(self):
        u2 = gx.build_did_unit(1.0, 1)
        u1 = gx.UnitMoment(h1=np.array([1.0]), h2=np.array([[1.0]]))
        with pytest.raises(InvalidInputError):
            gx.GroupSample.from_units("g", [u2, u1])

    def test_permutation_invariance(self, rng):
        pairs = [(float(rng.standard_normal()), int(rng.integers(0, 2))) for _ in range(40)]
        base = gx.average_moments(did_group("g", pairs))
        perm = rng.permutation(len(pairs))
        shuffled = gx.average_moments(did_group("g", [pairs[i] for i in perm]))
        np.testing.assert_allclose(shuffled.H1, base.H1, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(shuffled.H2, base.H2, rtol=1e-12, atol=1e-12)


class TestSolveTheta:
    def test_hand_solved_system(self):
        avgs = gx.MomentAverages(
            H1=np.array([2.0, 1.5]), H2=np.array([[1, 0.5], [0.5, 0.5]])
        )
        theta = gx.solve_theta(avgs)
        np.testing.assert_allclose(theta, [1.0, 2.0], atol=1e-12)

    def test_identity_jacobian(self):
        v = np.array([3.0, -1.0, 0.5])
        theta = gx.solve_theta(gx.MomentAverages(H1=v, H2=np.eye(3)))
        np.testing.assert_array_equal(theta, v)

    def test_all_control_group_is_singular(self):
        avgs = gx.average_moments(did_group("g", [(1.0, 0), (2.0, 0)]))
        assert gx.solve_theta(avgs) is None

    def test_negative_rank_tol_rejected(self):
        avgs = gx.MomentAverages(H1=np.zeros(1), H2=np.ones((1, 1)))
        with pytest.raises(InvalidInputError):
            gx.solve_theta(avgs, rank_tol=-1.0)

    def test_nonfinite_rejected(self):
        avgs = gx.MomentAverages(H1=np.array([np.nan]), H2=np.ones((1, 1)))
        with pytest.raises(InvalidInputError):
            gx.solve_theta(avgs)

    def test_did_group_means_identity(self, rng):
        # intercept = control mean; intercept + effect = treated mean
        for _ in range(20):
            n = int(rng.integers(4, 30))
            e = rng.integers(0, 2, n)
            if e.min() == e.max():
                e[0] = 1 - e[0]
            dy = rng.standard_normal(n)
            sample = did_group("g", list(zip(dy.tolist(), e.tolist())))
            theta = gx.solve_theta(gx.average_moments(sample))
            assert theta is not None
            np.testing.assert_allclose(theta[0], dy[e == 0].mean(), atol=1e-10)
            np.testing.assert_allclose(
                theta[0] + theta[1], dy[e == 1].mean(), atol=1e-10
            )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_well_conditioned(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 5))
        A = rng.standard_normal((k, k)) + 3.0 * np.eye(k)
        v = rng.standard_normal(k)
        theta = gx.solve_theta(gx.MomentAverages(H1=A @ v, H2=A))
        assert theta is not None
        np.testing.assert_allclose(theta, v, rtol=1e-10, atol=1e-10)


class TestCompensatedAverages:
    def test_agrees_on_ordinary_data(self, rng):
        pairs = [(float(rng.standard_normal()), int(rng.integers(0, 2))) for _ in range(50)]
        sample = did_group("g", pairs)
        plain = gx.average_moments(sample)
        comp = gx.average_moments(sample, compensated=True)
        np.testing.assert_allclose(comp.H1, plain.H1, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(comp.H2, plain.H2, rtol=1e-14, atol=1e-15)

    def test_recovers_cancellation(self):
        # huge values that cancel: plain running sums lose the small remainder
        big = 1e16
        vals = [big, 1.0, -big, 1.0, 1.0]
        sample = did_group("g", [(v, 1) for v in vals])
        import math
        exact = math.fsum(vals) / len(vals)
        comp = gx.average_moments(sample, compensated=True)
        assert comp.H1[0] == pytest.approx(exact, rel=1e-15)
