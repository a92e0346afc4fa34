import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonautlin import crossing as cr
from nonautlin import lyapunov as ly
from nonautlin.dichotomy import ContractionCertificate
from nonautlin.flow import NonlinearPerturbation, catalog, solve_linear, zero_perturbation

SCALAR, _ = catalog("scalar_autonomous", {"lam0": -1})
SIN = NonlinearPerturbation.from_exprs(["0.1*exp(-2*t)*sin(x1)"], L_f=0.1, beta=1.0)


def make(lam0=-1.0, pert=None, **cfg):
    sys, _ = catalog("scalar_autonomous", {"lam0": lam0})
    cert = ContractionCertificate(1.0, -lam0, 0.0, 0.0, {})
    V = ly.build_strict(cert, sys, -0.5 * lam0)
    return cr.CrossingHomeomorphism(V, sys, pert or zero_perturbation(1), cr.CrossingConfig(**cfg))


@pytest.fixture(scope="module")
def hom():
    return make(pert=SIN)


@pytest.mark.parametrize("tau, xi", [(0.0, 2.0), (1.0, 3.0), (2.5, -1.2), (0.3, 5.0)])
def test_closed_form_crossing_time(hom, tau, xi):
    assert hom.crossing_time_linear(tau, [xi]) == pytest.approx(tau + math.log(2 * xi * xi) / 2, abs=1e-8)


def test_backward_crossing(hom):
    # V(1, 0.5) = 0.25 < 1/2: the crossing lies in the past
    assert hom.crossing_time_linear(1.0, [0.5]) == pytest.approx(1.0 + math.log(0.5) / 2, abs=1e-8)


def test_out_of_domain(hom):
    with pytest.raises(cr.OutOfDomainError):
        hom.crossing_time_linear(0.0, [0.3])


def test_origin_is_fixed(hom):
    assert np.all(hom.H(1.0, [0.0]) == 0)
    assert np.all(hom.G(1.0, [0.0]) == 0)
    with pytest.raises(ValueError):
        hom.crossing_time_linear(1.0, [0.0])


def test_zero_perturbation_gives_identity():
    h = make()
    for tau, xi in [(0.0, 2.0), (1.0, -3.0), (2.0, 0.9)]:
        assert h.H(tau, [xi])[0] == pytest.approx(xi, rel=1e-9)
        assert h.G(tau, [xi])[0] == pytest.approx(xi, rel=1e-9)


def test_H_then_G(hom):
    h = hom.H(0.0, [2.0])
    assert h[0] != pytest.approx(2.0, abs=1e-3)
    assert hom.G(0.0, h)[0] == pytest.approx(2.0, abs=1e-8)


def test_level_is_reached(hom):
    T, xT = hom._crossing("perturbed", 0.5, np.array([2.0]))
    assert hom.V(T, xT) == pytest.approx(0.5, abs=1e-8)


def test_verify_suite(hom, rng):
    samples = [(float(rng.uniform(0, 2)), rng.uniform(1, 3, 1) * rng.choice([-1, 1])) for _ in range(10)]
    rep = cr.verify_crossing_equivalence(hom, samples, rates=(1.0, 0.0))
    assert rep["failures"] == []
    assert rep["inverse_max"] <= 1e-5
    assert rep["T_invariance_max"] <= 1e-5
    assert rep["solution_mapping_max"] <= 1e-5
    assert rep["diverging_increasing"]
    assert rep["n_samples"] == 10
    assert rep["norm_bounds"]["violations"] == 0


def test_verify_records_failures(hom):
    rep = cr.verify_crossing_equivalence(hom, [(0.0, np.array([0.3]))], n_diverge=0)
    assert len(rep["failures"]) == 1
    assert "out of domain" in rep["failures"][0]["error"]


def test_config_validation():
    for bad in ({"level": 0}, {"root_tol": -1}, {"bracket_growth": 1.0}):
        with pytest.raises(ValueError):
            cr.CrossingConfig(**bad)


def test_non_monotone_detected():
    up, _ = catalog("scalar_autonomous", {"lam0": 1})
    V = ly.QuadraticLyapunov.fixed([[1.0]])
    h = cr.CrossingHomeomorphism(V, up, zero_perturbation(1))
    with pytest.raises(cr.NonMonotoneError):
        h.crossing_time_linear(0.0, [2.0])


def test_rotation_system():
    rot, _ = catalog("rotation_coupled", {"lam": -1, "omega": 2})
    cert = ContractionCertificate(1.0, 1.0, 0.0, 0.0, {})
    V = ly.build_quadratic(cert, rot, 0.5)
    pert = NonlinearPerturbation.from_exprs(["0.1*sin(x2)", "0.1*sin(x1)"], L_f=0.1)
    h = cr.CrossingHomeomorphism(V, rot, pert)
    xi = np.array([1.5, -2.0])
    np.testing.assert_allclose(h.G(0.5, h.H(0.5, xi)), xi, atol=1e-8)


def test_points_csv_round_trip():
    text = "tau,xi1,xi2\n0.5,1,2\n\n1.0,-3,4.5\n"
    pts = cr.read_points(text)
    assert len(pts) == 2 and pts[1][0] == 1.0
    np.testing.assert_array_equal(pts[1][1], [-3.0, 4.5])
    out = cr.write_points([(0.5, [1.0, 2.0], [0.1, 0.2], 3.0)], 2)
    assert out.splitlines()[0] == "tau,xi1,xi2,H1,H2,T"
    assert out.splitlines()[1] == "0.5,1,2,0.10000000000000001,0.20000000000000001,3"
    with pytest.raises(ValueError):
        cr.read_points("-1,2\n")
    with pytest.raises(ValueError):
        cr.read_points("1\n")


def test_sampled_lipschitz(rng):
    L = cr.sampled_rhs_lipschitz(SCALAR, SIN, 5.0, rng)
    assert 0.9 <= L <= 1.1


@settings(max_examples=20)
@given(st.floats(0.5, 3.0), st.floats(0.0, 3.0), st.floats(1.0, 4.0), st.floats(1.1, 3.0))
def test_homogeneity_shift(lam, tau, xi, c):
    # on x' = -lam x with V = x^2, scaling xi by c delays the crossing by ln(c^2) / (2 lam)
    h = make(-lam)
    T1 = h.crossing_time_linear(tau, [xi])
    T2 = h.crossing_time_linear(tau, [c * xi])
    assert T2 - T1 == pytest.approx(math.log(c * c) / (2 * lam), abs=1e-8)


@settings(max_examples=15)
@given(st.floats(0.0, 2.0), st.floats(1.0, 3.0), st.floats(0.2, 1.5))
def test_T_invariant_along_linear_flow(tau, xi, shift):
    h = make()
    T = h.crossing_time_linear(tau, [xi])
    x_t = solve_linear(SCALAR, tau, [xi], tau + shift, 1e-12).end
    assert h.crossing_time_linear(tau + shift, x_t) == pytest.approx(T, abs=1e-8)


def test_H_matches_reference_integration(hom):
    # H(0, 2): linear flow to T = ln(8)/2, then the perturbed field back to 0
    from scipy.integrate import solve_ivp
    T = math.log(8.0) / 2
    back = solve_ivp(lambda t, y: -y + 0.1 * np.exp(-2 * t) * np.sin(y), (T, 0.0), [2.0 * math.exp(-T)],
                     method="DOP853", rtol=1e-13, atol=1e-15)
    assert hom.H(0.0, [2.0])[0] == pytest.approx(back.y[0, -1], abs=1e-9)


def test_start_on_level_set(hom):
    xi = math.sqrt(0.5)
    assert hom.crossing_time_linear(1.5, [xi]) == pytest.approx(1.5, abs=1e-9)


def test_perturbed_crossing_without_perturbation():
    h = make()
    for tau, xi in [(0.0, 2.0), (0.7, -1.4)]:
        assert h.crossing_time_perturbed(tau, [xi]) == pytest.approx(h.crossing_time_linear(tau, [xi]), abs=1e-10)
    assert h.crossing_time_perturbed(0.0, [2.0]) == pytest.approx(1.0397208, abs=1e-7)
    with pytest.raises(cr.OutOfDomainError):
        h.crossing_time_perturbed(0.0, [1e-3])


def test_T_invariance_bv():
    from nonautlin.dichotomy import fit_contraction
    bv, _ = catalog("bv_scalar", {"omega": 3, "a": 1})
    cert = fit_contraction(bv, 20.0, 40)
    V = ly.build_quadratic(cert, bv, 0.5 * cert.alpha)
    h = cr.CrossingHomeomorphism(V, bv, SIN)
    rep = cr.verify_crossing_equivalence(h, [(0.5, np.array([2.0])), (1.5, np.array([-3.0]))], n_diverge=3)
    assert rep["failures"] == []
    assert rep["T_invariance_max"] <= 1e-5
    assert rep["inverse_max"] <= 1e-5
    assert rep["solution_mapping_max"] <= 1e-5


@settings(max_examples=20)
@given(st.floats(0.0, 3.0), st.floats(math.sqrt(0.5), 6.0))
def test_crossing_not_before_tau_above_level(tau, xi):
    # V = x^2 >= 1/2 at the base point, so the crossing cannot lie in the past
    assert make().crossing_time_linear(tau, [xi]) >= tau - 1e-10
