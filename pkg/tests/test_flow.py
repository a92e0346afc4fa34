import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonautlin import flow
from nonautlin.flow import (BlowUpError, LinearSystem, NonlinearPerturbation, SystemSpecError,
                            TransitionPath, catalog, ode_residual, solve_linear, solve_perturbed,
                            transition_matrix)

SCALAR, SCALAR_PHI = catalog("scalar_autonomous", {"lam0": -1})
BV, BV_PHI = catalog("bv_scalar", {"omega": 3, "a": 1})


def test_scalar_transition():
    assert transition_matrix(SCALAR, 2, 1)[0, 0] == pytest.approx(math.exp(-1), rel=1e-9)


def test_bv_transition_at_pi():
    # exp(-3 pi + pi) from the antiderivative sin t - t cos t
    assert transition_matrix(BV, math.pi, 0)[0, 0] == pytest.approx(1.8674e-3, rel=1e-4)
    assert transition_matrix(BV, math.pi, 0)[0, 0] == pytest.approx(math.exp(-2 * math.pi), rel=1e-7)


@pytest.mark.parametrize("name, params", [
    ("scalar_autonomous", {"lam0": -1}), ("diagonal_autonomous", {"l1": -1, "l2": -2}),
    ("bv_scalar", {"omega": 3, "a": 1}), ("bv_diagonal", {"omega1": 3, "omega2": 4, "a": 1}),
    ("rotation_coupled", {"lam": -1, "omega": 2, "a": 0.5}),
])
def test_identity_at_equal_times(name, params):
    sys, _ = catalog(name, params)
    assert np.array_equal(transition_matrix(sys, 3.0, 3.0), np.eye(sys.dim))


def test_backward_matches_inverse():
    fwd = transition_matrix(BV, 5.0, 2.0)
    back = transition_matrix(BV, 2.0, 5.0)
    assert back[0, 0] == pytest.approx(1 / fwd[0, 0], rel=1e-7)
    assert back[0, 0] == pytest.approx(BV_PHI(2.0, 5.0)[0, 0], rel=1e-7)


def test_rotation_oracle(rng):
    sys, phi = catalog("rotation_coupled", {"lam": -0.5, "omega": 2, "a": 0.3})
    for _ in range(10):
        t, s = rng.uniform(0, 10, 2)
        got, want = transition_matrix(sys, t, s), phi(t, s)
        assert np.linalg.norm(got - want) <= 1e-6 * np.linalg.norm(want)


def test_path_is_vectorized_and_matches_pointwise():
    path = TransitionPath(BV, 1.0, 9.0)
    ts = np.linspace(1.0, 9.0, 7)
    many = path(ts)
    assert many.shape == (7, 1, 1)
    for t, m in zip(ts, many):
        assert m[0, 0] == pytest.approx(BV_PHI(t, 1.0)[0, 0], rel=1e-7)


def test_solve_linear_examples():
    assert solve_linear(SCALAR, 0, [1.0], 1).end[0] == pytest.approx(math.exp(-1), rel=1e-9)
    assert solve_linear(BV, 0, [1.0], math.pi).end[0] == pytest.approx(1.8674e-3, rel=1e-4)


def test_solve_perturbed_constant_forcing():
    f = NonlinearPerturbation.from_exprs(["0.5"], 0.0, 0.0, 0.5, "A1")
    y = solve_perturbed(SCALAR, f, 0, [0.0], 1)
    assert y.end[0] == pytest.approx(0.5 * (1 - math.exp(-1)), rel=1e-9)
    assert y.end[0] == pytest.approx(0.3160603, abs=1e-7)


def test_zero_perturbation_matches_linear():
    a = solve_linear(BV, 0.5, [2.0], 6)
    b = solve_perturbed(BV, flow.zero_perturbation(1), 0.5, [2.0], 6)
    assert b.end[0] == pytest.approx(a.end[0], rel=1e-8)


def test_trajectory_interpolation_and_residual():
    traj = solve_linear(BV, 0.0, [1.0], 8.0)
    ts = np.linspace(0.0, 8.0, 41)
    assert traj(ts).shape == (41, 1)
    assert ode_residual(traj, lambda t, x: BV.A(t) @ x, ts[1:-1]) < 1e-6
    with pytest.raises(ValueError):
        traj(8.5)


def test_backward_trajectory():
    traj = solve_linear(SCALAR, 2.0, [1.0], 0.0)
    assert traj.end[0] == pytest.approx(math.e ** 2, rel=1e-9)


def test_blow_up_is_detected():
    f = NonlinearPerturbation.from_exprs(["x1*x1"], 0.0, 0.0, 0.0, "A2")
    with pytest.raises(BlowUpError):
        solve_perturbed(catalog("scalar_autonomous", {"lam0": 0})[0], f, 0, [2.0], 5.0)


def test_negative_times_rejected():
    with pytest.raises(ValueError):
        solve_linear(SCALAR, -1, [1.0], 1)
    with pytest.raises(ValueError):
        transition_matrix(SCALAR, 1, -1)


def test_catalog_errors():
    with pytest.raises(SystemSpecError):
        catalog("nope", {})
    with pytest.raises(SystemSpecError, match="omega"):
        catalog("bv_scalar", {"a": 1})


def test_system_json_round_trip():
    data = {"dim": 2, "A": [["-1", "a*t"], ["0", "-2 + sin(t)"]], "params": {"a": 0.5}}
    sys = LinearSystem.from_json(json.dumps(data))
    again = LinearSystem.from_json(sys.to_json())
    for t in (0.0, 1.3):
        assert np.array_equal(sys.A(t), again.A(t))
    with pytest.raises(SystemSpecError):
        LinearSystem.from_json({"dim": 2, "A": [["1"]]})
    with pytest.raises(Exception):
        LinearSystem.from_json({"dim": 1, "A": [["x1"]]})


def test_perturbation_json_and_class_checks(rng):
    f = NonlinearPerturbation.from_json(
        {"f": ["exp(-2*t)*sin(x1) + 0.3"], "L_f": 1.0, "beta": 1.0, "K0": 0.3, "class": "A1"})
    rep = f.check(np.linspace(0, 3, 7), rng)
    assert rep["lipschitz_ok"] and rep["K0_ok"] and rep["class_ok"]
    assert rep["sup_f0"] == pytest.approx(0.3)
    wrong = NonlinearPerturbation.from_exprs(["0.3 + x1"], 1.0, 0.0, 0.3, "A2")
    assert not wrong.check([0.0], rng)["class_ok"]
    again = NonlinearPerturbation.from_json(f.to_json())
    assert again(0.7, [0.2]) == f(0.7, [0.2])
    with pytest.raises(SystemSpecError):
        NonlinearPerturbation.from_exprs(["x1"], 1.0, 0.0, 0.0, "A3")


def test_adjoint_flow():
    sys, phi = catalog("rotation_coupled", {"lam": -1, "omega": 2, "a": 0.3})
    adj = transition_matrix(sys.adjoint(), 4.0, 1.0)
    assert np.allclose(adj, phi(1.0, 4.0).T, rtol=1e-7, atol=1e-12)


# ---------------------------------------------------------------------------
# properties

times = st.floats(0.0, 20.0)


@given(times, times, times)
def test_cocycle(t, r, s):
    for sys in (BV, catalog("rotation_coupled", {"lam": -1, "omega": 2, "a": 0.3})[0]):
        ts = transition_matrix(sys, t, s)
        tr = transition_matrix(sys, t, r) @ transition_matrix(sys, r, s)
        assert np.linalg.norm(ts - tr, 2) <= 1e-8 * (1 + np.linalg.norm(ts, 2))


@given(st.floats(0, 5), st.floats(0.1, 5), st.floats(-3, 3), st.floats(0.1, 4))
def test_linearity_in_initial_state(tau, span, xi, c):
    a = solve_linear(BV, tau, [xi], tau + span).end[0]
    b = solve_linear(BV, tau, [c * xi], tau + span).end[0]
    # global error of an absolute-tolerance 1e-9 solve
    assert b == pytest.approx(c * a, rel=1e-7, abs=1e-7)


@given(st.floats(0, 3), st.floats(0.1, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_gronwall_sandwich(s, span, u, v):
    # f in A2 with |A| + L_f <= 1.3 for x' = -x + 0.3 e^{-t} sin x
    f = NonlinearPerturbation.from_exprs(["0.3*exp(-t)*sin(x1)"], 0.3, 0.0, 0.0, "A2")
    L = 1.3
    t = s + span
    du = abs(u - v)
    d = abs(solve_perturbed(SCALAR, f, s, [u], t, tol=1e-11).end[0]
            - solve_perturbed(SCALAR, f, s, [v], t, tol=1e-11).end[0])
    assert du * math.exp(-L * span) * (1 - 1e-4) <= d + 1e-12
    assert d <= du * math.exp(L * span) * (1 + 1e-4) + 1e-12
