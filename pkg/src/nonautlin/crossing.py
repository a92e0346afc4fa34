"""Conjugacy through crossing times of a Lyapunov level set.

For a state ``xi != 0`` at time ``tau`` the linear solution crosses the level
``V = level / 2`` exactly once, at ``T(tau, xi)``.  The map ``H`` follows the
linear flow to that crossing and returns along the perturbed flow; ``G``
does the same with the two flows exchanged.  Both fix the origin.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .flow import (LinearSystem, NonlinearPerturbation, Trajectory, solve_linear,
                   solve_perturbed)


class OutOfDomainError(ValueError):
    """The level crossing would lie before t = 0."""


class NonMonotoneError(RuntimeError):
    pass


@dataclass(frozen=True)
class CrossingConfig:
    level: float = 1.0
    root_tol: float = 1e-10
    bracket_growth: float = 2.0
    t_floor: float = 0.0
    ode_tol: float = 1e-12
    first_step: float = 1.0
    max_expansions: int = 60

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError("level must be positive")
        if not self.root_tol > 0:
            raise ValueError("root_tol must be positive")
        if not self.bracket_growth > 1:
            raise ValueError("bracket_growth must exceed 1")


@dataclass
class CrossingHomeomorphism:
    V: object
    lin: LinearSystem
    pert: NonlinearPerturbation
    cfg: CrossingConfig = field(default_factory=CrossingConfig)
    L_F: float | None = None  # Lipschitz constant of the full right-hand side, if known

    def _solve(self, which: str, tau: float, xi, t_end: float) -> Trajectory:
        tol = self.cfg.ode_tol
        if which == "linear":
            return solve_linear(self.lin, tau, xi, t_end, tol, atol=tol * 1e-2)
        return solve_perturbed(self.lin, self.pert, tau, xi, t_end, tol, atol=tol * 1e-2)

    def _crossing(self, which: str, tau: float, xi) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if not np.any(xi):
            raise ValueError("crossing time is undefined at the origin")
        half = cfg.level / 2
        gap0 = self.V(tau, xi) - half
        if gap0 == 0:
            return float(tau), xi.copy()
        forward = gap0 > 0
        step = cfg.first_step
        a, prev = float(tau), gap0
        traj = None
        for _ in range(cfg.max_expansions):
            b = tau + step if forward else max(tau - step, cfg.t_floor)
            traj = self._solve(which, tau, xi, b)
            gap = self.V(b, traj(b)) - half
            if (gap <= 0) if forward else (gap >= 0):
                break
            # V must decrease forward in time along solutions
            if (gap > prev + cfg.root_tol * cfg.level) if forward else (gap < prev - cfg.root_tol * cfg.level):
                raise NonMonotoneError(f"V is not monotone along the solution near t={b:.6g}")
            if not forward and b <= cfg.t_floor:
                raise OutOfDomainError(
                    f"level crossing from (tau={tau:g}) lies before t={cfg.t_floor:g}; out of domain")
            a, prev = b, gap
            step *= cfg.bracket_growth
        else:
            raise NonMonotoneError("no level crossing found while expanding the bracket")
        if gap == 0:
            return float(b), np.asarray(traj(b), dtype=float)
        lo, hi = (a, b) if forward else (b, a)  # V(lo) - half > 0 >= V(hi) - half
        T = brentq(lambda s: self.V(s, traj(s)) - half, lo, hi, xtol=cfg.root_tol, rtol=4 * np.finfo(float).eps)
        return float(T), np.asarray(traj(T), dtype=float)

    def crossing_time_linear(self, tau: float, xi) -> float:
        return self._crossing("linear", tau, xi)[0]

    def crossing_time_perturbed(self, tau: float, xi) -> float:
        return self._crossing("perturbed", tau, xi)[0]

    def H_with_time(self, tau: float, xi) -> tuple[np.ndarray, float]:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if not np.any(xi):
            return np.zeros_like(xi), math.nan
        T, xT = self._crossing("linear", tau, xi)
        return self._solve("perturbed", T, xT, tau).end if T != tau else xT, T

    def G_with_time(self, tau: float, xi) -> tuple[np.ndarray, float]:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if not np.any(xi):
            return np.zeros_like(xi), math.nan
        T, yT = self._crossing("perturbed", tau, xi)
        return self._solve("linear", T, yT, tau).end if T != tau else yT, T

    def H(self, tau: float, xi) -> np.ndarray:
        return self.H_with_time(tau, xi)[0]

    def G(self, tau: float, xi) -> np.ndarray:
        return self.G_with_time(tau, xi)[0]


def crossing_time_linear(hom: CrossingHomeomorphism, tau: float, xi) -> float:
    return hom.crossing_time_linear(tau, xi)


def crossing_time_perturbed(hom: CrossingHomeomorphism, tau: float, xi) -> float:
    return hom.crossing_time_perturbed(tau, xi)


def map_H(hom: CrossingHomeomorphism, tau: float, xi) -> np.ndarray:
    return hom.H(tau, xi)


def map_G(hom: CrossingHomeomorphism, tau: float, xi) -> np.ndarray:
    return hom.G(tau, xi)


def sampled_rhs_lipschitz(lin: LinearSystem, pert: NonlinearPerturbation, t_max: float,
                          rng: np.random.Generator, n: int = 256, scale: float = 3.0) -> float:
    """Largest sampled ratio |F(t,u) - F(t,v)| / |u - v| of F = A x + f."""
    worst = 0.0
    for _ in range(n):
        t = rng.uniform(0, t_max)
        u, v = rng.normal(scale=scale, size=(2, lin.dim))
        d = np.linalg.norm(u - v)
        if d == 0:
            continue
        A = lin.A(t)
        r = np.linalg.norm(A @ (u - v) + pert(t, u) - pert(t, v)) / d
        worst = max(worst, float(r))
    return worst


def norm_bound(hom: CrossingHomeomorphism, tau: float, xi, H, T: float, rates: tuple,
               L_F: float) -> dict:
    """Small-state estimate for |H(tau, xi)| (report only).

    Applies when ``|xi|^2 <= level exp(-2 ups tau) / (2 Ks^2)``; then
    ``|H| <= (level/2)^(1/2) (2 Ks exp(2 ups T) |xi|^2 / level)^(gbar / (4 L_F))``
    with ``gbar = 2 (alpha1 - mu1 - L_g)`` and ``eta = 1``.
    """
    V = hom.V
    Ks = getattr(V, "scale", None)
    if Ks is None:
        Ks = math.sqrt(V.bound_consts[0] * V.bound_consts[1])
    ups = getattr(V, "upsilon", None)
    if ups is None:
        ups = V.cert.mu if getattr(V, "cert", None) is not None else 0.0
    lvl = hom.cfg.level
    nx = float(np.linalg.norm(xi))
    applies = nx ** 2 <= lvl * math.exp(-2 * ups * tau) / (2 * Ks ** 2)
    a1, m1 = rates
    gbar = 2 * (a1 - m1 - hom.pert.L_f)
    out = {"applies": bool(applies), "L_F": L_F, "gamma_bar": gbar}
    if applies and L_F > 0 and gbar > 0:
        bound = math.sqrt(lvl / 2) * (2 * Ks * math.exp(2 * ups * T) * nx ** 2 / lvl) ** (gbar / (4 * L_F))
        out.update(bound=bound, value=float(np.linalg.norm(H)), holds=bool(np.linalg.norm(H) <= bound * (1 + 1e-6)))
    return out


def verify_crossing_equivalence(hom: CrossingHomeomorphism, samples, shift: float = 0.5,
                                n_diverge: int = 5, rates: tuple | None = None,
                                rng: np.random.Generator | None = None) -> dict:
    """Residual suite for the crossing-time maps on ``(tau, xi)`` samples.

    inverse: |G(H(xi)) - xi|, |H(G(xi)) - xi| relative to 1 + |xi|.
    T_invariance: |T(t, X(t)) - T(tau, xi)| at ``t = tau + shift``.
    solution_mapping: |H(t, X(t)) - Y(t; tau, H(tau, xi))|, same t.
    divergence: |H(tau, 2^k xi)| for k = 0..n_diverge-1 (should increase).
    Errors in individual samples are recorded, not raised.
    """
    inv, tinv, sol = [], [], []
    diverging, bounds, failures = [], [], []
    L_F = hom.L_F
    if L_F is None and rates is not None:
        L_F = sampled_rhs_lipschitz(hom.lin, hom.pert, 20.0, rng or np.random.default_rng(0))
    for tau, xi in samples:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        try:
            h, T = hom.H_with_time(tau, xi)
            scale = 1 + float(np.linalg.norm(xi))
            inv.append(float(np.linalg.norm(hom.G(tau, h) - xi)) / scale)
            g = hom.G(tau, xi)
            inv.append(float(np.linalg.norm(hom.H(tau, g) - xi)) / scale)
            t = tau + shift
            x_t = hom._solve("linear", tau, xi, t).end
            tinv.append(abs(hom.crossing_time_linear(t, x_t) - T))
            y_t = hom._solve("perturbed", tau, h, t).end
            sol.append(float(np.linalg.norm(hom.H(t, x_t) - y_t)) / (1 + float(np.linalg.norm(y_t))))
            if rates is not None:
                bounds.append(norm_bound(hom, tau, xi, h, T, rates, L_F))
        except (OutOfDomainError, NonMonotoneError, ArithmeticError) as err:
            failures.append({"tau": float(tau), "xi": xi.tolist(), "error": str(err)})
    if samples:
        tau, xi = samples[0]
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        for k in range(n_diverge):
            try:
                diverging.append(float(np.linalg.norm(hom.H(tau, xi * 2.0 ** k))))
            except (OutOfDomainError, NonMonotoneError, ArithmeticError):
                break
    report = {
        "inverse_max": max(inv, default=0.0),
        "T_invariance_max": max(tinv, default=0.0),
        "solution_mapping_max": max(sol, default=0.0),
        "diverging_norms": diverging,
        "diverging_increasing": bool(all(b > a for a, b in zip(diverging, diverging[1:]))),
        "failures": failures,
        "n_samples": len(samples),
    }
    if bounds:
        report["norm_bounds"] = {"applicable": sum(b["applies"] for b in bounds),
                                 "violations": sum(1 for b in bounds if b.get("holds") is False),
                                 "L_F": L_F}
    return report


# ---------------------------------------------------------------------------
# points CSV

def read_points(text: str) -> list[tuple[float, np.ndarray]]:
    """Rows ``tau, xi_1, ..., xi_n``; a header row starting with a letter is skipped."""
    pts = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not "".join(row).strip():
            continue
        if row[0].strip()[:1].isalpha():
            continue
        vals = [float(v) for v in row]
        if len(vals) < 2:
            raise ValueError(f"point row needs tau and at least one coordinate: {row}")
        if vals[0] < 0:
            raise ValueError("tau must be nonnegative")
        pts.append((vals[0], np.array(vals[1:])))
    return pts


def write_points(rows, dim: int, extra: tuple[str, ...] = ("T",)) -> str:
    """CSV with columns tau, xi_i, H_i and any extra scalar columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau"] + [f"xi{i + 1}" for i in range(dim)] + [f"H{i + 1}" for i in range(dim)] + list(extra))
    for tau, xi, h, *rest in rows:
        w.writerow([_f17(tau)] + [_f17(v) for v in xi] + [_f17(v) for v in h] + [_f17(v) for v in rest])
    return buf.getvalue()


def _f17(x) -> str:
    return format(float(x), ".17g")
