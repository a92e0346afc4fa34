"""Conjugacy through a bounded fixed point (Picard iteration).

With ``f0(t, x) = f(t, x) - f(t, 0)``, let ``X(t; tau, xi)`` solve
``x' = A x + f0(t, x)`` and ``Y(t; tau, xi)`` solve ``y' = A y + f(t, y)``.
``Z(., kappa)`` is the fixed point of

    Z(t) = int_0^t Phi(t, s) F(s, Z(s), kappa) ds,
    F(t, z, kappa) = f(t, z + X(t)) - f0(t, X(t)),

so that ``X + Z`` solves the perturbed system.  Then
``H(tau, xi) = xi + Z(tau, (tau, xi))``; ``G`` mirrors this with
``F~(t, z, kappa) = f0(t, z + Y(t)) - f(t, Y(t))``.  For ``f0 = 0`` the
``X`` flow is the linear flow.

Each Picard step solves ``z' = A z + F(t, z_prev(t))``, ``z(0) = 0`` with the
adaptive integrator instead of quadrature over sampled ``Phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dichotomy import ContractionCertificate
from .flow import LinearSystem, NonlinearPerturbation, Trajectory, solve_rhs

NORM_GRID = 2001
NOISE_FLOOR = 1e-10


class ContractionRatioError(ValueError):
    """K L_f / alpha >= 1: the fixed-point map is not a contraction."""


class PicardDivergence(RuntimeError):
    pass


def reduce_f0(f: NonlinearPerturbation) -> NonlinearPerturbation:
    """``f0(t, x) = f(t, x) - f(t, 0)``; same Lipschitz data, vanishes at 0."""
    zero = np.zeros(f.dim)
    func = f.func
    return NonlinearPerturbation(f.dim, lambda t, x: func(t, x) - func(t, zero),
                                 L_f=f.L_f, beta=f.beta, K0=0.0, class_tag="A2")


@dataclass(frozen=True)
class WeightedNorm:
    mu: float
    window: tuple

    def __call__(self, times, values) -> float:
        times = np.asarray(times, dtype=float)
        if not len(times):
            return 0.0
        v = np.linalg.norm(np.asarray(values, dtype=float).reshape(len(times), -1), axis=1)
        return float(np.max(np.exp(-self.mu * times) * v))


@dataclass
class PicardSolution:
    tau: float
    xi: np.ndarray
    grid: np.ndarray
    Z_values: np.ndarray
    residual: float
    iterations: int
    ratio_history: list
    norm_A: float
    apriori_bound: float
    traj: Trajectory = field(repr=False)

    def __call__(self, t):
        return self.traj(t)

    @property
    def apriori_ok(self) -> bool:
        return self.norm_A <= self.apriori_bound * (1 + 1e-9) + 1e-12


class _Piecewise:
    """Join a backward piece (to 0) and a forward piece at the base time."""

    def __init__(self, back: Trajectory, fwd: Trajectory, tau: float):
        self.back, self.fwd, self.tau = back, fwd, tau

    def __call__(self, t):
        return self.fwd(t) if t >= self.tau else self.back(t)


class PLHomeomorphism:
    def __init__(self, lin: LinearSystem, pert: NonlinearPerturbation,
                 cert: ContractionCertificate, tol: float = 1e-10, ode_tol: float = 1e-12,
                 max_iter: int = 100):
        if pert.dim != lin.dim:
            raise ValueError("perturbation dimension does not match the system")
        self.lin, self.pert, self.cert = lin, pert, cert
        self.ratio = cert.K * pert.L_f / cert.alpha
        if self.ratio >= 1:
            raise ContractionRatioError(
                f"contraction ratio K*L_f/alpha = {self.ratio:.6g} >= 1 "
                f"(K={cert.K:.6g}, L_f={pert.L_f:.6g}, alpha={cert.alpha:.6g})")
        self.f0 = reduce_f0(pert)
        self.tol, self.ode_tol, self.max_iter = tol, ode_tol, max_iter
        self.norm = WeightedNorm(cert.mu, (0.0, math.inf))
        self.apriori = (cert.K * pert.K0 / cert.alpha) / (1 - self.ratio)
        self.flags = []
        if pert.beta < cert.mu:
            self.flags.append(f"perturbation rate beta={pert.beta:g} is below the certificate mu={cert.mu:g}")
        self._cache: dict = {}

    # flows -------------------------------------------------------------
    def _flow(self, g: NonlinearPerturbation, tau: float, xi, t_max: float) -> _Piecewise:
        A = self.lin.A
        gf = g.func
        rhs = lambda t, x: A(t) @ x + gf(t, x)  # noqa: E731
        back = solve_rhs(rhs, tau, xi, 0.0, self.ode_tol, atol=self.ode_tol * 1e-2)
        fwd = solve_rhs(rhs, tau, xi, max(t_max, tau), self.ode_tol, atol=self.ode_tol * 1e-2)
        return _Piecewise(back, fwd, tau)

    def X(self, tau: float, xi, t_max: float):
        """Solution of ``x' = A x + f0(t, x)`` through ``(tau, xi)``."""
        return self._flow(self.f0, tau, xi, t_max)

    def Y(self, tau: float, xi, t_max: float):
        return self._flow(self.pert, tau, xi, t_max)

    # fixed point -------------------------------------------------------
    def _picard(self, F, tau, xi, t_max, tol, max_iter) -> PicardSolution:
        A = self.lin.A
        n = self.lin.dim
        grid = np.unique(np.concatenate((np.linspace(0.0, t_max, NORM_GRID), [tau])))
        prev_vals = np.zeros((len(grid), n))
        prev = lambda t: np.zeros(n)  # noqa: E731
        diffs, ratios = [], []
        resid = math.inf
        for j in range(max_iter):
            pf = prev
            traj = solve_rhs(lambda t, z: A(t) @ z + F(t, pf(t)), 0.0, np.zeros(n), t_max,
                             self.ode_tol, atol=self.ode_tol * 1e-2)
            vals = traj(grid)
            if j == 0:
                last, last_vals = traj, vals
                prev, prev_vals = traj, vals
                continue
            d = self.norm(grid, vals - prev_vals)
            if diffs and diffs[-1] > NOISE_FLOOR and d > NOISE_FLOOR:
                ratios.append(d / diffs[-1])
            diffs.append(d)
            # prev is the iterate whose defect |prev - T(prev)| was just measured
            last, last_vals, resid = prev, prev_vals, d
            if d <= tol:
                break
            prev, prev_vals = traj, vals
        else:
            raise PicardDivergence(f"no convergence in {max_iter} iterations (defect {resid:.3g})")
        # j iterates were formed before the one used only to measure the defect
        return PicardSolution(float(tau), np.asarray(xi, dtype=float), grid, last_vals, resid,
                              j, ratios, self.norm(grid, last_vals), self.apriori, last)

    def _t_max(self, tau: float, t_max: float | None) -> float:
        return max(t_max if t_max is not None else tau + 10.0 / self.cert.alpha, tau)

    def picard_Z(self, tau: float, xi, t_max: float | None = None, tol: float | None = None,
                 max_iter: int | None = None) -> PicardSolution:
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        t_max = self._t_max(tau, t_max)
        tol = self.tol if tol is None else tol
        key = ("Z", float(tau), xi.tobytes(), t_max, tol)
        if key not in self._cache:
            Xf = self.X(tau, xi, t_max)
            f, f0 = self.pert.func, self.f0.func

            def F(t, z):
                x = Xf(t)
                return f(t, z + x) - f0(t, x)

            self._cache[key] = self._picard(F, tau, xi, t_max, tol, max_iter or self.max_iter)
        return self._cache[key]

    def picard_Z_tilde(self, tau: float, xi, t_max: float | None = None, tol: float | None = None,
                       max_iter: int | None = None) -> PicardSolution:
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        t_max = self._t_max(tau, t_max)
        tol = self.tol if tol is None else tol
        key = ("Zt", float(tau), xi.tobytes(), t_max, tol)
        if key not in self._cache:
            Yf = self.Y(tau, xi, t_max)
            f, f0 = self.pert.func, self.f0.func

            def F(t, z):
                y = Yf(t)
                return f0(t, z + y) - f(t, y)

            self._cache[key] = self._picard(F, tau, xi, t_max, tol, max_iter or self.max_iter)
        return self._cache[key]

    # Z(t) only depends on [0, t], so the maps need the window up to tau only
    def H(self, tau: float, xi, t_max: float | None = None, tol: float | None = None) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return xi + self.picard_Z(tau, xi, tau if t_max is None else t_max, tol)(tau)

    def G(self, tau: float, xi, t_max: float | None = None, tol: float | None = None) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return xi + self.picard_Z_tilde(tau, xi, tau if t_max is None else t_max, tol)(tau)


def picard_Z(hom: PLHomeomorphism, tau: float, xi, t_max=None, tol=None, max_iter=None) -> PicardSolution:
    return hom.picard_Z(tau, xi, t_max, tol, max_iter)


def map_H_pl(hom: PLHomeomorphism, tau: float, xi, t_max=None, tol=None) -> np.ndarray:
    return hom.H(tau, xi, t_max, tol)


def map_G_pl(hom: PLHomeomorphism, tau: float, xi, t_max=None, tol=None) -> np.ndarray:
    return hom.G(tau, xi, t_max, tol)


def verify_pl_equivalence(hom: PLHomeomorphism, samples, t_window: float = 1.0,
                          n_times: int = 3, h: float = 1e-3,
                          deltas=(1e-1, 1e-2, 1e-3)) -> dict:
    """Residual suite for the Picard maps on ``(tau, xi)`` samples.

    base_point: |Z(r, (t, X(t))) - Z(r, (tau, xi))| / (1 + |xi|) at times r
    in the window.  solution_mapping: central-difference residual of
    ``t -> H(t, X(t))`` against the perturbed field.  inverse: mutual-inverse
    residuals.  continuity: max |H(xi + d e) - H(xi)| per delta d.
    """
    lin, f = hom.lin, hom.pert
    base, solmap, inv = [], [], []
    continuity = {float(d): 0.0 for d in deltas}
    ratios, defects, apriori_ok = [], [], True
    for tau, xi in samples:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        t_hi = tau + t_window + 2 * h * (1 + tau + t_window)
        t_max = hom._t_max(tau, None)
        t_max = max(t_max, t_hi)
        sol = hom.picard_Z(tau, xi, t_max)
        ratios.extend(sol.ratio_history)
        defects.append(sol.residual)
        apriori_ok &= sol.apriori_ok
        Xf = hom.X(tau, xi, t_max)
        scale = 1 + float(np.linalg.norm(xi))
        times = tau + np.linspace(0.0, t_window, n_times + 1)[1:]
        for t in times:
            other = hom.picard_Z(t, Xf(t), t_max)
            for r in np.linspace(0.0, t_max, 9):
                base.append(float(np.linalg.norm(other(r) - sol(r))) / scale)
            hh = h * (1 + t)
            ym = hom.H(t - hh, Xf(t - hh))
            yp = hom.H(t + hh, Xf(t + hh))
            y = hom.H(t, Xf(t))
            rhs = lin.A(t) @ y + f(t, y)
            solmap.append(float(np.linalg.norm((yp - ym) / (2 * hh) - rhs)) / (1 + float(np.linalg.norm(rhs))))
        hx = hom.H(tau, xi)
        inv.append(float(np.linalg.norm(hom.G(tau, hx) - xi)) / scale)
        gx = hom.G(tau, xi)
        inv.append(float(np.linalg.norm(hom.H(tau, gx) - xi)) / scale)
        e = np.zeros_like(xi)
        e[0] = 1.0
        for d in deltas:
            diff = float(np.linalg.norm(hom.H(tau, xi + d * e) - hx))
            continuity[float(d)] = max(continuity[float(d)], diff)
    return {
        "base_point_max": max(base, default=0.0),
        "solution_mapping_max": max(solmap, default=0.0),
        "inverse_max": max(inv, default=0.0),
        "continuity": continuity,
        "ratio_max": max(ratios, default=0.0),
        "ratio_bound": hom.ratio,
        "defect_max": max(defects, default=0.0),
        "apriori_ok": bool(apriori_ok),
        "flags": list(hom.flags),
        "n_samples": len(samples),
    }
