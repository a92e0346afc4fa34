import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonautlin import kinematics as km
from nonautlin.dichotomy import fit_contraction
from nonautlin.flow import LinearSystem, NonlinearPerturbation, SystemSpecError, catalog

ROT = km.KinematicTransform.from_exprs([["cos(t)", "-sin(t)"], ["sin(t)", "cos(t)"]],
                                       [["-sin(t)", "-cos(t)"], ["cos(t)", "-sin(t)"]])
SCALE = km.KinematicTransform.from_exprs([["2", "0"], ["0", "2"]], [["0", "0"], ["0", "0"]], M1=2.0)
IDENT = km.KinematicTransform.identity(2)
F2 = NonlinearPerturbation.from_exprs(["0.3*exp(-2*t)*sin(x2)", "0.3*exp(-2*t)*sin(x1)"], L_f=0.3, beta=1.0)
DIAG, _ = catalog("diagonal_autonomous", {"l1": -1, "l2": -2})
ROTSYS, _ = catalog("rotation_coupled", {"lam": -1, "omega": 1})


def test_rotation_removes_rotation():
    new = km.transform_linear(ROTSYS, ROT)
    for t in (0.0, 0.7, 3.0):
        np.testing.assert_allclose(new.A(t), [[-1, 0], [0, -1]], atol=1e-12)


def test_rotation_hand_oracle():
    # A = -I conjugated by a rotation: S^{-1}(A S - S') = -I - S^{-1} S' = [[-1, 1], [-1, -1]]
    sys = LinearSystem.from_exprs([["-1", "0"], ["0", "-1"]])
    np.testing.assert_allclose(km.transform_linear(sys, ROT).A(1.3), [[-1, 1], [-1, -1]], atol=1e-12)


def test_numeric_derivative_fallback():
    no_dot = km.KinematicTransform.from_exprs([["cos(t)", "-sin(t)"], ["sin(t)", "cos(t)"]])
    for t in (0.0, 1.0, 4.0):
        np.testing.assert_allclose(no_dot.S_dot(t), ROT.S_dot(t), atol=1e-8)


@pytest.mark.parametrize("T", [IDENT, SCALE, ROT], ids=["identity", "scaling", "rotation"])
def test_lipschitz_transfer(T):
    g = km.transform_nonlinearity(F2, T)
    assert g.L_f == pytest.approx(T.M1 ** 2 * F2.L_f)
    rep = km.verify_lipschitz_transfer(g, F2, T, rng=np.random.default_rng(3))
    assert rep["pass"], rep
    assert rep["ratio"] <= T.M1 ** 2 * F2.L_f * (1 + 1e-6)
    assert rep["metadata"]["verified"]


@pytest.mark.parametrize("T", [IDENT, SCALE, ROT], ids=["identity", "scaling", "rotation"])
def test_conjugacy(T, rng):
    pairs = [tuple(sorted(rng.uniform(0, 6, 2), reverse=True)) for _ in range(30)]
    assert km.conjugacy_residual(DIAG, T, pairs) <= 1e-6
    assert km.conjugacy_residual(ROTSYS, T, pairs) <= 1e-6


def test_identity_changes_nothing():
    new = km.transform_linear(DIAG, IDENT)
    np.testing.assert_array_equal(new.A(2.0), DIAG.A(2.0))
    g = km.transform_nonlinearity(F2, IDENT)
    y = np.array([0.4, -1.1])
    np.testing.assert_array_equal(g(0.5, y), F2(0.5, y))


def test_inverse_round_trip():
    inv = ROT.inverse()
    back = km.transform_linear(km.transform_linear(ROTSYS, ROT), inv)
    np.testing.assert_allclose(back.A(2.2), ROTSYS.A(2.2), atol=1e-12)
    np.testing.assert_allclose(inv.S(1.0) @ ROT.S(1.0), np.eye(2), atol=1e-15)


def test_singular_transform():
    T = km.KinematicTransform.from_exprs([["1", "1"], ["1", "1"]])
    with pytest.raises(km.SingularTransformError):
        T.S_inv(0.0)
    ill = km.KinematicTransform.from_exprs([["1", "0"], ["0", "exp(-30*t)"]])
    with pytest.raises(km.SingularTransformError):
        ill.S_inv(1.0)


def test_beta_loss_is_flagged():
    grow = km.KinematicTransform.from_exprs([["exp(t)", "0"], ["0", "exp(t)"]], M1=1.0, beta=2.0)
    g = km.transform_nonlinearity(F2, grow)
    assert g.beta == 0.0
    assert g.flags


def test_metadata_unverified():
    bad = km.KinematicTransform.from_exprs([["3", "0"], ["0", "3"]], M1=1.0)
    rep = bad.check_metadata(5.0)
    assert rep["status"] == "unverified metadata" and not rep["verified"]


def test_json_round_trip():
    data = ROT.to_json()
    again = km.KinematicTransform.from_json(json.dumps(data))
    assert again.to_json() == data
    np.testing.assert_allclose(again.S(0.4), ROT.S(0.4))
    with pytest.raises(SystemSpecError):
        km.KinematicTransform.from_json({"M1": 1})
    with pytest.raises(SystemSpecError):
        km.KinematicTransform.from_exprs([["1", "0"]])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        km.transform_linear(catalog("scalar_autonomous", {"lam0": -1})[0], ROT)


def test_contraction_preserved():
    # a bounded transform keeps the system contracting on the same window
    new = km.transform_linear(ROTSYS, ROT)
    cert = fit_contraction(new, 10.0, 10)
    assert cert.alpha > 0


@settings(max_examples=30)
@given(st.floats(0.1, 5.0), st.floats(0, 10), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_lipschitz_transfer_property(c, t, u, v):
    T = km.KinematicTransform.from_exprs([[repr(c), "0"], ["0", repr(c)]], [["0", "0"], ["0", "0"]],
                                         M1=max(c, 1 / c))
    g = km.transform_nonlinearity(F2, T)
    u, v = np.array(u), np.array(v)
    d = np.linalg.norm(u - v)
    lhs = np.linalg.norm(g(t, u) - g(t, v))
    assert lhs <= g.L_f * math.exp(-2 * g.beta * t) * d * (1 + 1e-9) + 1e-15


def test_clockwise_rotation_hand_oracle():
    # S = [[cos t, sin t], [-sin t, cos t]]: S^{-1} S' = [[0, 1], [-1, 0]], so A_new = -I + [[0, -1], [1, 0]]
    T = km.KinematicTransform.from_exprs([["cos(t)", "sin(t)"], ["-sin(t)", "cos(t)"]])
    sys = LinearSystem.from_exprs([["-1", "0"], ["0", "-1"]])
    for t in (0.0, 0.9, 2.5):
        np.testing.assert_allclose(km.transform_linear(sys, T).A(t), [[-1, -1], [1, -1]], atol=1e-9)


def test_constant_scaling_scalar():
    sys = LinearSystem.from_exprs([["-1"]])
    T = km.KinematicTransform.from_exprs([["2"]], M1=2.0)
    assert km.transform_linear(sys, T).A(1.0)[0, 0] == pytest.approx(-1.0, abs=1e-12)
    f = NonlinearPerturbation.from_exprs(["0.4*sin(x1)"], L_f=0.4)
    g = km.transform_nonlinearity(f, T)
    assert g(0.3, np.array([0.7]))[0] == pytest.approx(0.2 * math.sin(1.4))
    rep = km.verify_lipschitz_transfer(g, f, T, n=3000, rng=np.random.default_rng(5), rates=(1.0, 0.0))
    # the declared bound 4 L_f is conservative; the sampled constant approaches L_f
    assert rep["bound"] == pytest.approx(1.6)
    assert 0.9 * 0.4 <= rep["ratio"] <= 0.4 * (1 + 1e-9)
    assert rep["pass"]
    assert rep["delta_lt_gap"] is None and rep["L_g_le_delta"] is None
    T2 = km.KinematicTransform.from_exprs([["2"]], M1=2.0, delta=1.8)
    rep2 = km.verify_lipschitz_transfer(km.transform_nonlinearity(f, T2), f, T2, n=50, rates=(2.0, 0.1))
    assert rep2["L_g_le_delta"] is True and rep2["delta_lt_gap"] is True
