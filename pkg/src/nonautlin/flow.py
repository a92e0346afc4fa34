"""Linear and perturbed nonautonomous flows.

Integration uses the DOP853 embedded Runge-Kutta pair from scipy with dense
output.  Evolution operators are built chunk by chunk: every chunk starts
from the identity and the chunks are chained with the cocycle identity, which
keeps relative accuracy when ``Phi`` spans many orders of magnitude.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex

DEFAULT_TOL = 1e-9
BLOWUP_CEILING = 1e12
INNER_TOL_FACTOR = 1e-2


class IntegrationError(RuntimeError):
    pass


class BlowUpError(IntegrationError):
    pass


class SystemSpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# systems

@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x' = A(t) x`` with ``A`` given by expressions or by a callable."""

    dim: int
    coeff: Callable[[float], np.ndarray] = field(repr=False)
    exprs: Optional[tuple] = None
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_exprs(cls, A: Sequence[Sequence], params: Mapping[str, float] | None = None,
                   name: str = "") -> "LinearSystem":
        params = {k: float(v) for k, v in (params or {}).items()}
        n = len(A)
        rows = []
        for row in A:
            if len(row) != n:
                raise SystemSpecError("A must be square")
            rows.append(tuple(ex.parse(e) if isinstance(e, str) else e for e in row))
        flat = [e for row in rows for e in row]
        for e in flat:
            ex.check_variables(e, 0, params)
        fn = ex.compile_many(flat, ["t"], params)

        def coeff(t):
            return np.array(fn(float(t)), dtype=float).reshape(n, n)

        return cls(n, coeff, tuple(rows), params, name)

    @classmethod
    def from_callable(cls, dim: int, fn: Callable[[float], np.ndarray],
                      name: str = "") -> "LinearSystem":
        def coeff(t):
            return np.asarray(fn(t), dtype=float).reshape(dim, dim)

        return cls(dim, coeff, None, {}, name)

    @classmethod
    def from_json(cls, data) -> "LinearSystem":
        if isinstance(data, (str, bytes)):
            data = json.loads(data)
        try:
            dim = int(data["dim"])
            A = data["A"]
        except (KeyError, TypeError, ValueError) as err:
            raise SystemSpecError(f"bad system JSON: {err}") from None
        if len(A) != dim:
            raise SystemSpecError(f"A has {len(A)} rows, dim is {dim}")
        return cls.from_exprs(A, data.get("params", {}), data.get("name", ""))

    def to_json(self) -> dict:
        if self.exprs is None:
            raise SystemSpecError("system defined by a callable has no JSON form")
        return {
            "dim": self.dim,
            "A": [[ex.to_source(e) for e in row] for row in self.exprs],
            "params": dict(self.params),
        }

    def A(self, t: float) -> np.ndarray:
        a = self.coeff(t)
        if not np.isfinite(a).all():
            raise IntegrationError(f"non-finite coefficient at t={t}")
        return a

    def shifted(self, lam: float) -> "LinearSystem":
        eye = np.eye(self.dim)
        base = self.coeff
        return LinearSystem.from_callable(self.dim, lambda t: base(t) - lam * eye,
                                          name=f"{self.name}-{lam}I")

    def adjoint(self) -> "LinearSystem":
        """``y' = -A(t)^T y``; its evolution operator is ``Phi(s, t)^T``."""
        base = self.coeff
        return LinearSystem.from_callable(self.dim, lambda t: -base(t).T,
                                          name=f"adj({self.name})")

    def is_diagonal(self, probe_times=(0.0, 0.7, 1.9, 3.3, 7.1)) -> bool:
        if self.dim == 1:
            return True
        if self.exprs is not None:
            return all(
                isinstance(self.exprs[i][j], ex.Const) and self.exprs[i][j].value == 0.0
                for i in range(self.dim) for j in range(self.dim) if i != j
            )
        for t in probe_times:
            a = self.coeff(t)
            if np.any(a - np.diag(np.diag(a))):
                return False
        return True

    def mode(self, i: int) -> "LinearSystem":
        """Scalar system of the i-th diagonal entry."""
        if self.exprs is not None:
            return LinearSystem.from_exprs([[self.exprs[i][i]]], self.params,
                                           name=f"{self.name}[{i}]")
        base = self.coeff
        return LinearSystem.from_callable(1, lambda t: base(t)[i, i],
                                          name=f"{self.name}[{i}]")


@dataclass(frozen=True, eq=False)
class NonlinearPerturbation:
    """``f(t, x)`` with declared Lipschitz data.

    ``L_f`` and ``beta`` describe ``|f(t,u)-f(t,v)| <= L_f exp(-2 beta t)|u-v|``;
    ``K0`` bounds ``sup_t |f(t, 0)|``.  ``class_tag`` is "A1" or "A2".
    """

    dim: int
    func: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    L_f: float = 0.0
    beta: float = 0.0
    K0: float = 0.0
    class_tag: str = "A2"
    exprs: Optional[tuple] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.class_tag not in ("A1", "A2"):
            raise SystemSpecError(f"class must be A1 or A2, got {self.class_tag!r}")
        if self.L_f < 0 or self.beta < 0 or self.K0 < 0:
            raise SystemSpecError("L_f, beta and K0 must be non-negative")

    @classmethod
    def from_exprs(cls, f: Sequence, L_f: float, beta: float = 0.0, K0: float = 0.0,
                   class_tag: str = "A2", params: Mapping[str, float] | None = None
                   ) -> "NonlinearPerturbation":
        params = {k: float(v) for k, v in (params or {}).items()}
        n = len(f)
        nodes = tuple(ex.parse(e) if isinstance(e, str) else e for e in f)
        for e in nodes:
            ex.check_variables(e, n, params)
        argnames = ["t"] + [f"x{i}" for i in range(1, n + 1)]
        fn = ex.compile_many(nodes, argnames, params)

        def func(t, x):
            return np.array(fn(float(t), *map(float, x)), dtype=float)

        return cls(n, func, float(L_f), float(beta), float(K0), class_tag, nodes, params)

    @classmethod
    def from_json(cls, data, params: Mapping[str, float] | None = None) -> "NonlinearPerturbation":
        if isinstance(data, (str, bytes)):
            data = json.loads(data)
        try:
            return cls.from_exprs(
                data["f"], data["L_f"], data.get("beta", 0.0), data.get("K0", 0.0),
                data.get("class", "A2"), data.get("params", params),
            )
        except (KeyError, TypeError) as err:
            raise SystemSpecError(f"bad perturbation JSON: {err}") from None

    def to_json(self) -> dict:
        if self.exprs is None:
            raise SystemSpecError("perturbation defined by a callable has no JSON form")
        out = {
            "f": [ex.to_source(e) for e in self.exprs],
            "L_f": self.L_f, "beta": self.beta, "K0": self.K0, "class": self.class_tag,
        }
        if self.params:
            out["params"] = dict(self.params)
        return out

    def __call__(self, t: float, x) -> np.ndarray:
        return self.func(t, np.asarray(x, dtype=float))

    @property
    def is_zero(self) -> bool:
        return bool(self.exprs is not None and all(
            isinstance(e, ex.Const) and e.value == 0.0 for e in self.exprs))

    def check(self, t_samples, rng: np.random.Generator, n_pairs: int = 64,
              scale: float = 3.0, tol: float = 1e-9) -> dict:
        """Sample the declared class membership.

        Returns the worst ratio ``|f(t,u)-f(t,v)| / (L_f e^{-2 beta t} |u-v|)``,
        the largest ``|f(t,0)|`` and whether the declarations hold.
        """
        worst_ratio = 0.0
        worst_f0 = 0.0
        for t in np.asarray(t_samples, dtype=float):
            worst_f0 = max(worst_f0, float(np.linalg.norm(self(t, np.zeros(self.dim)))))
            u = rng.normal(scale=scale, size=(n_pairs, self.dim))
            v = u + rng.normal(scale=scale * 0.3, size=(n_pairs, self.dim))
            for a, b in zip(u, v):
                d = np.linalg.norm(a - b)
                if d == 0:
                    continue
                r = np.linalg.norm(self(t, a) - self(t, b)) / d
                bound = self.L_f * math.exp(-2 * self.beta * t)
                ratio = r / bound if bound > 0 else (0.0 if r == 0 else math.inf)
                worst_ratio = max(worst_ratio, ratio)
        a2_ok = self.class_tag != "A2" or worst_f0 <= tol
        return {
            "lipschitz_ratio": worst_ratio,
            "lipschitz_ok": worst_ratio <= 1 + tol,
            "sup_f0": worst_f0,
            "K0_ok": worst_f0 <= self.K0 * (1 + tol) + tol,
            "class_ok": a2_ok,
        }


def zero_perturbation(dim: int) -> NonlinearPerturbation:
    return NonlinearPerturbation.from_exprs(["0"] * dim, 0.0, 0.0, 0.0, "A2")


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense solution ``t -> x(t)`` between ``t0`` and ``t1`` (either order)."""

    grid: np.ndarray
    states: np.ndarray
    interpolant: Callable = field(repr=False)

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def t1(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = sorted((self.t0, self.t1))
        if np.any(t < lo - 1e-12 * (1 + abs(lo))) or np.any(t > hi + 1e-12 * (1 + abs(hi))):
            raise ValueError(f"t outside trajectory span [{lo}, {hi}]")
        if self.t0 == self.t1:
            return np.broadcast_to(self.states[0], t.shape + self.states[0].shape).copy()
        y = self.interpolant(np.clip(t, lo, hi))
        return y.T if t.ndim else y

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def _integrate(rhs, t0, y0, t1, tol, atol, ceiling, dense=True) -> Trajectory:
    y0 = np.asarray(y0, dtype=float)
    if t0 == t1:
        return Trajectory(np.array([t0]), y0[None, :].copy(), lambda t: y0)
    atol = tol if atol is None else atol

    def guarded(t, y):
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > ceiling:
            raise BlowUpError(f"state norm exceeded {ceiling:g} near t={t:.6g}")
        return rhs(t, y)

    try:
        sol = solve_ivp(guarded, (t0, t1), y0, method="DOP853", rtol=tol, atol=atol,
                        dense_output=dense)
    except BlowUpError:
        raise
    except FloatingPointError as err:
        raise IntegrationError(str(err)) from None
    if sol.status != 0:
        raise IntegrationError(f"integration failed on [{t0}, {t1}]: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationError("non-finite state")
    return Trajectory(sol.t, sol.y.T, sol.sol)


def solve_linear(sys: LinearSystem, tau: float, xi, t_end: float, tol: float = DEFAULT_TOL,
                 atol: float | None = None, ceiling: float = BLOWUP_CEILING) -> Trajectory:
    """Solution of ``x' = A(t)x`` with ``x(tau) = xi`` on the span to ``t_end``."""
    if tau < 0 or t_end < 0:
        raise ValueError("times must be non-negative")
    A = sys.A
    return _integrate(lambda t, y: A(t) @ y, float(tau), xi, float(t_end), tol, atol, ceiling)


def solve_perturbed(sys: LinearSystem, f: NonlinearPerturbation, tau: float, xi, t_end: float,
                    tol: float = DEFAULT_TOL, atol: float | None = None,
                    ceiling: float = BLOWUP_CEILING) -> Trajectory:
    """Solution of ``x' = A(t)x + f(t,x)`` with ``x(tau) = xi``."""
    if tau < 0 or t_end < 0:
        raise ValueError("times must be non-negative")
    if f.dim != sys.dim:
        raise SystemSpecError("perturbation and system dimensions differ")
    A = sys.A
    fn = f.func
    return _integrate(lambda t, y: A(t) @ y + fn(t, y), float(tau), xi, float(t_end),
                      tol, atol, ceiling)


def solve_rhs(rhs: Callable, tau: float, xi, t_end: float, tol: float = DEFAULT_TOL,
              atol: float | None = None, ceiling: float = BLOWUP_CEILING) -> Trajectory:
    return _integrate(rhs, float(tau), xi, float(t_end), tol, atol, ceiling)


def ode_residual(traj: Trajectory, rhs: Callable, times, h: float = 1e-4) -> float:
    """Largest relative central-difference residual ``|x' - rhs(t, x)|``."""
    lo, hi = sorted((traj.t0, traj.t1))
    worst = 0.0
    for t in np.asarray(times, dtype=float):
        step = h * (1 + abs(t))
        a, b = max(lo, t - step), min(hi, t + step)
        if b <= a:
            continue
        d = (traj(b) - traj(a)) / (b - a)
        r = rhs(t, traj(t))
        worst = max(worst, float(np.linalg.norm(d - r) / (1 + np.linalg.norm(r))))
    return worst


# ---------------------------------------------------------------------------
# evolution operator

class TransitionPath:
    """Dense ``t -> Phi(t, s)`` for fixed ``s`` on the span ``[s, t_end]``.

    ``t_end < s`` integrates backward.  A piece is restarted from the identity
    whenever its largest entry leaves ``[1/8, 8]`` or its length reaches
    ``chunk``, so absolute tolerances stay meaningful relative to ``Phi``.
    Pieces run ``INNER_TOL_FACTOR`` tighter than ``tol`` so that products of
    many pieces stay within ``tol``-level relative error.
    """

    def __init__(self, sys: LinearSystem, s: float, t_end: float, tol: float = DEFAULT_TOL,
                 chunk: float = 2.0):
        self.sys = sys
        self.s = float(s)
        self.t_end = float(t_end)
        n = sys.dim
        self.dim = n
        direction = 1.0 if t_end >= s else -1.0
        A = sys.coeff  # a non-finite coefficient surfaces in the per-piece check below

        def rhs(t, y):
            return (A(t) @ y.reshape(n, n)).ravel()

        def grow(t, y):
            return np.max(np.abs(y)) - 8.0

        def shrink(t, y):
            return np.max(np.abs(y)) - 0.125

        grow.terminal = shrink.terminal = True
        eye = np.eye(n).ravel()
        knots = [self.s]
        self._pieces = []
        self._cum = [np.eye(n)]
        a = self.s
        while direction * (self.t_end - a) > 0:
            b = a + direction * chunk
            if direction * (b - self.t_end) > 0:
                b = self.t_end
            sol = solve_ivp(rhs, (a, b), eye, method="DOP853", rtol=tol * INNER_TOL_FACTOR,
                            atol=tol * INNER_TOL_FACTOR * 1e-2, dense_output=True,
                            events=(grow, shrink))
            if sol.status < 0:
                raise IntegrationError(f"integration failed on [{a}, {b}]: {sol.message}")
            if not np.all(np.isfinite(sol.y)):
                raise IntegrationError("non-finite transition matrix entry")
            end = float(sol.t[-1])
            if end == a:
                raise IntegrationError(f"no progress at t={a}")
            self._pieces.append(Trajectory(sol.t, sol.y.T, sol.sol))
            self._cum.append(sol.y[:, -1].reshape(n, n) @ self._cum[-1])
            knots.append(end)
            a = end
        if len(knots) == 1:
            knots.append(self.t_end)
            self._pieces.append(Trajectory(np.array([self.s]), eye[None, :], lambda t: eye))
        self.knots = np.array(knots)
        self._direction = direction

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        n = self.dim
        out = np.empty((ts.size, n, n))
        key = self._direction * (ts - self.s)
        kpos = self._direction * (self.knots - self.s)
        if np.any(key < -1e-12 * (1 + abs(self.s))) or np.any(key > kpos[-1] + 1e-9 * (1 + kpos[-1])):
            raise ValueError(f"t outside path span [{self.s}, {self.t_end}]")
        idx = np.clip(np.searchsorted(kpos, key, side="right") - 1, 0, len(self._pieces) - 1)
        for k in np.unique(idx):
            sel = idx == k
            piece = self._pieces[k]
            lo, hi = sorted((piece.t0, piece.t1))
            if lo == hi:
                local = np.tile(piece.states[0], (int(sel.sum()), 1))
            else:
                local = np.atleast_2d(piece.interpolant(np.clip(ts[sel], lo, hi)).T)
            out[sel] = local.reshape(-1, n, n) @ self._cum[k]
        if np.any(ts == self.s):
            out[ts == self.s] = np.eye(n)
        return out[0] if scalar else out


def transition_matrix(sys: LinearSystem, t: float, s: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Evolution operator ``Phi(t, s)``; ``t < s`` integrates backward."""
    if t < 0 or s < 0:
        raise ValueError("times must be non-negative")
    if t == s:
        return np.eye(sys.dim)
    return TransitionPath(sys, s, t, tol)(t)


# ---------------------------------------------------------------------------
# catalog

def _bv_primitive(t):
    return np.sin(t) - t * np.cos(t)


def _need(params, *names):
    missing = [k for k in names if k not in params]
    if missing:
        raise SystemSpecError(f"missing parameter(s): {', '.join(missing)}")


def catalog(name: str, params: Mapping[str, float] | None = None):
    """Built-in systems; returns ``(system, phi)`` with ``phi(t, s)`` analytic or None.

    ``scalar_autonomous``: x' = lam0 x                       (lam0)
    ``diagonal_autonomous``: diag(l1, ..., ln)               (l1, l2, ... or lambdas)
    ``bv_scalar``: x' = (-omega + a t sin t) x               (omega, a)
    ``bv_diagonal``: diag(-omega_i + a t sin t)              (omega1, omega2, a)
    ``rotation_coupled``: (lam + a t sin t) I + omega J      (lam, omega, a=0)
    """
    p = dict(params or {})
    if name == "scalar_autonomous":
        _need(p, "lam0")
        lam = float(p["lam0"])
        sys = LinearSystem.from_exprs([["lam0"]], {"lam0": lam}, name)
        return sys, lambda t, s: np.array([[math.exp(lam * (t - s))]])
    if name == "diagonal_autonomous":
        if "lambdas" in p:
            lams = [float(v) for v in p["lambdas"]]
        else:
            keys = sorted((k for k in p if k[:1] == "l" and k[1:].isdigit()), key=lambda k: int(k[1:]))
            if not keys:
                raise SystemSpecError("missing parameter(s): l1, l2, ...")
            lams = [float(p[k]) for k in keys]
        n = len(lams)
        names = {f"l{i + 1}": v for i, v in enumerate(lams)}
        A = [[f"l{i + 1}" if i == j else "0" for j in range(n)] for i in range(n)]
        sys = LinearSystem.from_exprs(A, names, name)
        lam_arr = np.array(lams)
        return sys, lambda t, s: np.diag(np.exp(lam_arr * (t - s)))
    if name == "bv_scalar":
        _need(p, "omega", "a")
        w, a = float(p["omega"]), float(p["a"])
        sys = LinearSystem.from_exprs([["-omega + a*t*sin(t)"]], {"omega": w, "a": a}, name)

        def phi(t, s):
            return np.array([[math.exp(-w * (t - s) + a * (_bv_primitive(t) - _bv_primitive(s)))]])

        return sys, phi
    if name == "bv_diagonal":
        _need(p, "omega1", "omega2", "a")
        w = np.array([float(p["omega1"]), float(p["omega2"])])
        a = float(p["a"])
        sys = LinearSystem.from_exprs(
            [["-omega1 + a*t*sin(t)", "0"], ["0", "-omega2 + a*t*sin(t)"]],
            {"omega1": w[0], "omega2": w[1], "a": a}, name)

        def phi(t, s):
            return np.diag(np.exp(-w * (t - s) + a * (_bv_primitive(t) - _bv_primitive(s))))

        return sys, phi
    if name == "rotation_coupled":
        _need(p, "lam", "omega")
        lam, w, a = float(p["lam"]), float(p["omega"]), float(p.get("a", 0.0))
        sys = LinearSystem.from_exprs(
            [["lam + a*t*sin(t)", "-omega"], ["omega", "lam + a*t*sin(t)"]],
            {"lam": lam, "omega": w, "a": a}, name)

        def phi(t, s):
            d = t - s
            g = math.exp(lam * d + a * (_bv_primitive(t) - _bv_primitive(s)))
            c, sn = math.cos(w * d), math.sin(w * d)
            return g * np.array([[c, -sn], [sn, c]])

        return sys, phi
    raise SystemSpecError(f"unknown catalog system {name!r}")


CATALOG_NAMES = ("scalar_autonomous", "diagonal_autonomous", "bv_scalar", "bv_diagonal",
                 "rotation_coupled")
