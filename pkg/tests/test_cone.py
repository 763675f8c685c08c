from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slcurv import cone
from slcurv.errors import LeftCone, NotSorted, ValidationError
from slcurv.geometry import OperatorParams, phase_F

COT_01 = 9.96664442325923785979411268927
TAN_01 = 0.100334672085450545058080045781
THREE_ATAN_5 = 4.12020230083504758258381577934


def test_example_admissible_pair():
    rep = cone.check_cone_properties(np.array([10.0, -0.05]), 0.1)
    assert rep.admissible
    assert rep.margin == pytest.approx(1.42116927858179183 - 0.1, abs=1e-15)
    assert all(rep.props)
    viol = cone.cone_property_violations(np.array([10.0, -0.05]), 0.1)
    assert viol[2] == pytest.approx(-COT_01 + 0.05, abs=1e-14)
    assert viol[3] == pytest.approx(0.1 - 20.0 + TAN_01, abs=1e-13)


def test_example_not_admissible():
    rep = cone.check_cone_properties(np.array([1.0, -1.0]), 0.1)
    assert not rep.admissible
    assert rep.margin == pytest.approx(-0.1)


def test_example_three_dimensional():
    kappa = np.array([5.0, 5.0, 5.0])
    assert phase_F(kappa) == pytest.approx(THREE_ATAN_5, abs=1e-15)
    rep = cone.check_cone_properties(kappa, 0.05)
    assert rep.admissible and all(rep.props)


def test_not_sorted():
    with pytest.raises(NotSorted):
        cone.check_cone_properties(np.array([-1.0, 2.0]), 0.1)


def test_delta_range():
    with pytest.raises(ValidationError):
        cone.check_cone_properties(np.array([1.0, 1.0]), 0.0)


def test_sampler_basic_and_deterministic():
    a = cone.sample_admissible(2, 0.1, 100, 7)
    b = cone.sample_admissible(2, 0.1, 100, 7)
    assert a.shape == (100, 2)
    assert np.all(phase_F(a) - 0.1 >= 0)
    assert np.all(np.diff(a, axis=1) <= 0)
    assert a.tobytes() == b.tobytes()


def test_sampler_reaches_boundary_region():
    k = cone.sample_admissible(2, 0.1, 10_000, 1)
    assert np.min(phase_F(k) - 0.1) < 1e-2
    assert np.max(k[:, 0]) > 100
    assert np.any(k[:, -1] < 0)


def test_sample_three_dimensional_zero_violations():
    k = cone.sample_admissible(3, 0.2, 10_000, 2)
    assert np.all(cone.cone_property_violations(k, 0.2) <= cone.PROPERTY_TOL)


def test_concave_at_large_A():
    val = cone.hessian_G_sampled(np.array([1.0, 1.0]), OperatorParams(2, 0.1, 10.0), np.diag([1.0, 0.0]))
    assert val <= 1e-8


def test_nonconcave_at_tiny_A():
    val = cone.hessian_G_sampled(np.array([5.0, -0.1]), OperatorParams(2, 0.1, 0.01), np.diag([0.0, 1.0]))
    assert val > 0


@pytest.mark.parametrize("t, a", [(1.0, 3.0), (0.4, 10.0), (2.0, 0.5)])
def test_symmetric_reduction(t, a):
    eps = cone.FD_STEP
    val = cone.hessian_G_sampled(np.array([t, t]), OperatorParams(2, 0.1, a), np.eye(2))

    def g(s):
        return -math.exp(-a * 2 * math.atan(s))

    one_d = (g(t + eps) - 2 * g(t) + g(t - eps)) / eps**2
    assert val == pytest.approx(one_d, rel=1e-5, abs=1e-9)


def test_probe_leaving_cone():
    with pytest.raises(LeftCone):
        cone.hessian_G_sampled(np.array([0.05, 0.05]), OperatorParams(2, 0.1, 1.0), np.eye(2))


def test_calibration_and_doubling():
    res = cone.calibrate_A(2, 0.1, 1000, 0)
    assert math.isfinite(res.a_param)
    assert res.max_hess_eigenvalue <= cone.CONCAVITY_TOL
    probe = cone.build_probe(2, 0.1, 1000, 0)
    assert probe.max_quotient(2 * res.a_param) <= cone.CONCAVITY_TOL
    again = cone.calibrate_A(2, 0.1, 1000, 0)
    assert again.a_param == res.a_param


def test_inequality_probes_finite():
    k = cone.sample_admissible(2, 0.1, 5000, 3)
    ext = cone.inequality_probes(k, 10.0)
    assert math.isfinite(ext["min_weighted_sum"])
    assert math.isfinite(ext["max_norm_ratio"])
    assert ext["min_last_derivative"] > 0


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.1, 0.5]), st.sampled_from([2, 3]))
def test_properties_hold_on_samples(seed, delta, n):
    k = cone.sample_admissible(n, delta, 200, seed)
    assert np.all(cone.cone_property_violations(k, delta) <= cone.PROPERTY_TOL)
    pairs = cone.convexity_violations(k[:100], k[100:], delta)
    assert np.all(pairs <= cone.PROPERTY_TOL)
