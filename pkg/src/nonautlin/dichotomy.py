"""Growth and contraction certificates, dichotomy verdicts and spectrum scans.

Every certificate holds on ``[0, t_max]`` at the resolution of its sample
grid only; a finite window can never decide a bound for all ``t >= s >= 0``.

Samples are stored as a table of evolution operators ``Phi(s_i + d_j, s_i)``
with ``s_i`` uniform in ``[0, t_max)`` and ``d_j`` the union of a geometric
and a uniform grid on ``[0, t_max - s_i]``.  Shifted systems reuse the table
through ``Phi_{A - lam I}(t, s) = Phi_A(t, s) exp(-lam (t - s))``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .flow import DEFAULT_TOL, LinearSystem, TransitionPath

DEFAULT_ALPHA_GRID = np.round(np.arange(1, 1001) * 0.01, 10)
# verdicts only need some admissible rate, so scans use a coarse geometric grid
SCAN_ALPHA_GRID = np.geomspace(1e-3, 10.0, 81)
RESIDUAL_TOL = 1e-7
DEFAULT_T_MAX = 20.0
FINITE_WINDOW_NOTE = "bounds certified on [0, t_max] at sample-grid resolution only"


class NotCertifiable(ValueError):
    pass


class UndecidableError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientBound:
    M: float
    nu: float
    max_violation: float
    fit_residual: float = 0.0
    t_max: float = 0.0
    n: int = 0


@dataclass(frozen=True)
class GrowthCertificate:
    K0: float
    a: float
    eps_bar: float
    residual: float
    grid: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ContractionCertificate:
    K: float
    alpha: float
    mu: float
    residual: float
    grid: dict = field(default_factory=dict)

    def bound(self, t, s):
        return self.K * np.exp(-self.alpha * (np.asarray(t) - s) + self.mu * np.asarray(s))

    def to_json(self) -> dict:
        return {"K": self.K, "alpha": self.alpha, "mu": self.mu, "residual": self.residual,
                "grid": dict(self.grid), "note": FINITE_WINDOW_NOTE}

    @classmethod
    def from_json(cls, data) -> "ContractionCertificate":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(float(data["K"]), float(data["alpha"]), float(data["mu"]),
                   float(data.get("residual", 0.0)), dict(data.get("grid", {})))


# ---------------------------------------------------------------------------
# samples

class EvolutionSamples:
    """Sampled ``Phi(t, s)`` for ``t >= s`` plus (lazily) the adjoint table.

    ``adj[i, j]`` holds ``Phi(s_i, s_i + d_j)^T``, the evolution of
    ``y' = -A^T y``; it gives backward operators without inverting.
    """

    def __init__(self, sys: LinearSystem, t_max: float, n_samples: int = 40,
                 n_dt: int | None = None, tol: float = DEFAULT_TOL):
        if t_max <= 0:
            raise ValueError("t_max must be positive")
        if n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        self.sys = sys
        self.t_max = float(t_max)
        self.n_samples = int(n_samples)
        self.tol = tol
        n_dt = n_dt or max(40, 5 * n_samples)
        self.s = np.linspace(0.0, t_max, n_samples, endpoint=False)
        rows = []
        for s in self.s:
            span = self.t_max - s
            d_min = min(1e-3, span / 10)
            geo = np.geomspace(d_min, span, max(8, n_samples))
            uni = np.linspace(0.0, span, n_dt)
            rows.append(np.unique(np.concatenate(([0.0], geo, uni))))
        width = max(len(r) for r in rows)
        # pad rows to equal width by repeating their last point
        self.dt = np.array([np.pad(r, (0, width - len(r)), mode="edge") for r in rows])
        self.phi = self._table(sys)
        self._adj = None

    def _table(self, sys: LinearSystem) -> np.ndarray:
        n = sys.dim
        out = np.empty(self.dt.shape + (n, n))
        for i, s in enumerate(self.s):
            path = TransitionPath(sys, s, self.t_max, self.tol)
            out[i] = path(np.minimum(s + self.dt[i], self.t_max))
        return out

    @property
    def adj(self) -> np.ndarray:
        if self._adj is None:
            self._adj = self._table(self.sys.adjoint())
        return self._adj

    @property
    def grid(self) -> dict:
        return {"t_max": self.t_max, "n": self.n_samples, "n_dt": int(self.dt.shape[1])}

    def log_norms(self, which: str = "forward", projector: np.ndarray | None = None) -> np.ndarray:
        """``ln ||Phi P||`` (forward) or ``ln ||(I-P) Phi(s, t)||`` (backward)."""
        mats = self.phi if which == "forward" else self.adj
        if projector is not None:
            mats = mats @ projector if which == "forward" else projector @ mats
        if mats.shape[-1] == 1:
            norms = np.abs(mats[..., 0, 0])
        else:
            norms = np.linalg.norm(mats, ord=2, axis=(-2, -1))
        with np.errstate(divide="ignore"):
            return np.log(norms)


# ---------------------------------------------------------------------------
# fitting on log-norm tables

def _fit_table(s, dt, ln, alpha_grid, mu_cap, transient, t_max, resid_tol):
    """Return (alpha, K, mu, residual) of the largest admissible alpha or None.

    For each alpha, ``ln K`` covers the s = 0 row on the transient part of the
    window (``d <= transient * t_max``), ``mu`` covers every row with s > 0,
    and the candidate is kept only if the whole table, including the late
    part of the s = 0 row, satisfies the bound up to ``resid_tol``.
    """
    alphas = np.asarray(alpha_grid, dtype=float)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    if not np.all(np.isfinite(ln[np.isfinite(ln) | (ln > 0)])):
        raise ValueError("non-finite sample in log-norm table")
    q = ln[None, :, :] + alphas[:, None, None] * dt[None, :, :]
    row0 = np.where(dt[0] <= transient * t_max + 1e-12, q[:, 0, :], -np.inf)
    lnK = np.maximum(0.0, row0.max(axis=1))
    pos = s > 0
    if np.any(pos):
        mu_terms = (q[:, pos, :] - lnK[:, None, None]) / s[pos][None, :, None]
        mu = np.maximum(0.0, mu_terms.reshape(alphas.size, -1).max(axis=1))
    else:
        mu = np.zeros_like(alphas)
    resid = (q - lnK[:, None, None] - mu[:, None, None] * s[None, :, None])
    resid = resid.reshape(alphas.size, -1).max(axis=1)
    caps = alphas if mu_cap is None else np.full_like(alphas, mu_cap)
    ok = (mu <= caps + 1e-12) & (resid <= resid_tol)
    if not np.any(ok):
        return None
    k = np.flatnonzero(ok)[np.argmax(alphas[ok])]
    return float(alphas[k]), float(math.exp(lnK[k])), float(mu[k]), float(resid[k])


def _samples(sys: LinearSystem, t_max: float | None, n_samples: int, tol: float) -> "EvolutionSamples":
    return EvolutionSamples(sys, DEFAULT_T_MAX if t_max is None else t_max, n_samples, tol=tol)


def fit_contraction(sys: LinearSystem | EvolutionSamples, t_max: float | None = None,
                    n_samples: int = 40, alpha_grid=None, mu_cap: float | None = None,
                    transient: float = 0.5, tol: float = DEFAULT_TOL,
                    resid_tol: float = RESIDUAL_TOL) -> ContractionCertificate:
    """Fit ``||Phi(t,s)|| <= K exp(-alpha (t-s) + mu s)`` on a sample grid.

    ``mu_cap=None`` enforces ``mu <= alpha``.  Raises NotCertifiable when no
    candidate rate passes.
    """
    samples = sys if isinstance(sys, EvolutionSamples) else _samples(sys, t_max, n_samples, tol)
    grid = DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid
    ln = samples.log_norms("forward")
    res = _fit_table(samples.s, samples.dt, ln, grid, mu_cap, transient, samples.t_max, resid_tol)
    if res is None:
        raise NotCertifiable("not certifiable on this grid: no rate satisfies the bound "
                             f"with mu <= {'alpha' if mu_cap is None else mu_cap}")
    alpha, K, mu, resid = res
    return ContractionCertificate(K, alpha, mu, resid, samples.grid)


def certificate_violation(cert: ContractionCertificate, phi, pairs) -> float:
    """Worst ``ln||Phi(t,s)|| - ln(K e^{-alpha(t-s) + mu s})`` over ``pairs``.

    ``phi(t, s)`` is any evaluator of the evolution operator, for example an
    analytic catalog formula.
    """
    worst = -math.inf
    for t, s in pairs:
        nrm = np.linalg.norm(np.atleast_2d(phi(t, s)), 2)
        worst = max(worst, math.log(nrm) - math.log(cert.K) + cert.alpha * (t - s) - cert.mu * s)
    return worst


def fit_bounded_growth(sys: LinearSystem | EvolutionSamples, t_max: float | None = None,
                       n_samples: int = 40, tol: float = DEFAULT_TOL) -> GrowthCertificate:
    """Fit ``||Phi(t,s)|| <= K0 exp(a|t-s| + eps_bar s)`` for t >= s and t < s.

    ``a`` is scanned on a grid; ``K0`` covers the s = 0 row and ``eps_bar``
    every other sample, so the bound always holds on the grid.  The candidate
    minimizing ``a + eps_bar`` wins, ties going to the smaller ``eps_bar``.
    """
    samples = sys if isinstance(sys, EvolutionSamples) else _samples(sys, t_max, n_samples, tol)
    s, dt = samples.s, samples.dt
    fwd = samples.log_norms("forward")
    bwd = samples.log_norms("backward")
    if not (np.all(np.isfinite(fwd)) and np.all(np.isfinite(bwd))):
        raise ValueError("non-finite evolution operator sample")
    start_b = s[:, None] + dt  # backward evolutions start at the later time
    nz = dt > 0
    slopes = np.concatenate([np.abs(fwd[nz] / dt[nz]), np.abs(bwd[nz] / dt[nz])])
    a_hi = float(slopes.max()) if slopes.size else 0.0
    a_grid = np.unique(np.concatenate([np.linspace(0.0, a_hi, 2001), [a_hi]]))
    best = None
    for a in a_grid:
        lnK0 = max(0.0, float(np.max(fwd[0] - a * dt[0])))
        terms = []
        if s.size > 1:
            terms.append(((fwd[1:] - a * dt[1:] - lnK0) / s[1:, None]).ravel())
        mask = start_b > 0
        terms.append(((bwd - a * dt - lnK0)[mask] / start_b[mask]))
        eps = max(0.0, float(np.max(np.concatenate(terms))))
        key = (a + eps, eps)
        if best is None or key[0] < best[0][0] - 1e-9 or (
                abs(key[0] - best[0][0]) <= 1e-9 and key[1] < best[0][1]):
            best = (key, a, lnK0, eps)
    _, a, lnK0, eps = best
    resid = max(float(np.max(fwd - lnK0 - a * dt - eps * s[:, None])),
                float(np.max(bwd - lnK0 - a * dt - eps * start_b)))
    return GrowthCertificate(math.exp(lnK0), float(a), eps, resid, samples.grid)


def check_coefficient_bound(sys: LinearSystem, t_max: float, n_samples: int = 400) -> CoefficientBound:
    """Fit ``||A(t)|| <= M exp(nu t)``.

    Least squares of ``ln`` of the running-max envelope of ``||A(t)||``
    against ``t`` gives ``nu`` (clipped at 0); ``M`` is then inflated to cover
    every sample.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    ts = np.linspace(0.0, t_max, n_samples)
    norms = np.array([np.linalg.norm(sys.A(t), 2) for t in ts])
    if not np.all(np.isfinite(norms)):
        raise ValueError("non-finite A(t) sample")
    env = np.maximum.accumulate(norms)
    pos = env > 0
    if not np.any(pos):
        return CoefficientBound(0.0, 0.0, 0.0, 0.0, t_max, n_samples)
    y = np.log(env[pos])
    if pos.sum() >= 2 and np.ptp(ts[pos]) > 0:
        slope, icpt = np.polyfit(ts[pos], y, 1)
        fit_res = float(np.sqrt(np.mean((y - (icpt + slope * ts[pos])) ** 2)))
    else:
        slope, fit_res = 0.0, 0.0
    nu = max(0.0, float(slope))
    M = float(np.max(norms * np.exp(-nu * ts)))
    with np.errstate(divide="ignore"):
        viol = float(np.max(np.log(norms[norms > 0]) - math.log(M) - nu * ts[norms > 0]))
    return CoefficientBound(M, nu, viol, fit_res, t_max, n_samples)


# ---------------------------------------------------------------------------
# dichotomy

@dataclass(frozen=True)
class DichotomyVerdict:
    verdict: str  # stable | unstable | split | none
    lam: float
    stable_cert: Optional[ContractionCertificate] = None
    unstable_cert: Optional[ContractionCertificate] = None
    projector: Optional[tuple] = None  # coordinates of the stable subspace


def _scalar_tables(samples: EvolutionSamples):
    """Per-mode forward and backward log tables of a diagonal system."""
    diag = np.abs(np.diagonal(samples.phi, axis1=-2, axis2=-1))
    with np.errstate(divide="ignore"):
        fwd = np.log(diag)
    return [fwd[..., i] for i in range(diag.shape[-1])], [-fwd[..., i] for i in range(diag.shape[-1])]


def _try(samples, ln, grid, mu_cap, transient, resid_tol):
    res = _fit_table(samples.s, samples.dt, ln, grid, mu_cap, transient, samples.t_max, resid_tol)
    if res is None:
        return None
    alpha, K, mu, resid = res
    return ContractionCertificate(K, alpha, mu, resid, samples.grid)


def test_dichotomy(sys: LinearSystem | EvolutionSamples, lam: float, t_max: float | None = None,
                   n_samples: int = 40, mu_cap: float | None = None,
                   projectors: Sequence[Sequence[int]] | None = None, alpha_grid=None,
                   transient: float = 0.5, tol: float = DEFAULT_TOL,
                   resid_tol: float = RESIDUAL_TOL) -> DichotomyVerdict:
    """Dichotomy verdict for ``x' = (A(t) - lam I) x`` on the sample window.

    stable: contraction certificate with P = I.  unstable: contraction
    certificate for the adjoint, i.e. backward evolutions decay (P = 0).
    split: a coordinate projector certifies both parts.  ``mu_cap=None``
    leaves the nonuniformity rate unconstrained.
    """
    samples = sys if isinstance(sys, EvolutionSamples) else _samples(sys, t_max, n_samples, tol)
    system = samples.sys
    n = system.dim
    grid = SCAN_ALPHA_GRID if alpha_grid is None else alpha_grid
    cap = math.inf if mu_cap is None else mu_cap
    dt = samples.dt
    fit = lambda ln: _try(samples, ln, grid, cap, transient, resid_tol)  # noqa: E731

    if n == 1 or system.is_diagonal():
        fwd_modes, bwd_modes = _scalar_tables(samples)
        stable = []
        for i in range(n):
            if fit(fwd_modes[i] - lam * dt) is not None:
                stable.append(True)
            elif fit(bwd_modes[i] + lam * dt) is not None:
                stable.append(False)
            else:
                return DichotomyVerdict("none", lam)
        st = [i for i in range(n) if stable[i]]
        un = [i for i in range(n) if not stable[i]]
        s_cert = fit(np.max([fwd_modes[i] for i in st], axis=0) - lam * dt) if st else None
        u_cert = fit(np.max([bwd_modes[i] for i in un], axis=0) + lam * dt) if un else None
        kind = "stable" if not un else "unstable" if not st else "split"
        return DichotomyVerdict(kind, lam, s_cert, u_cert, tuple(st))

    if not projectors:
        raise UndecidableError("undecidable by this procedure: system is not diagonal "
                               "and no coordinate projector family was supplied")
    for coords in projectors:
        P = np.zeros((n, n))
        for i in coords:
            P[i, i] = 1.0
        Q = np.eye(n) - P
        leak = np.linalg.norm(Q @ samples.phi @ P, ord=2, axis=(-2, -1))
        scale = 1 + np.linalg.norm(samples.phi, ord=2, axis=(-2, -1))
        if np.max(leak / scale) > 1e-8:
            continue  # projector not invariant along the flow
        s_cert = u_cert = None
        if coords:
            s_cert = fit(samples.log_norms("forward", P) - lam * dt)
            if s_cert is None:
                continue
        if len(coords) < n:
            u_cert = fit(samples.log_norms("backward", Q) + lam * dt)
            if u_cert is None:
                continue
        kind = "stable" if len(coords) == n else "unstable" if not coords else "split"
        return DichotomyVerdict(kind, lam, s_cert, u_cert, tuple(coords))
    return DichotomyVerdict("none", lam)


test_dichotomy.__test__ = False  # keep pytest from collecting it


@dataclass(frozen=True)
class SpectrumEstimate:
    lam_grid: np.ndarray
    verdicts: tuple
    intervals: tuple  # closed intervals [first, last] of consecutive "none" grid points
    step: float
    touches_zero: bool = False
    note: str = FINITE_WINDOW_NOTE

    def outer_intervals(self) -> list:
        """Intervals widened by one grid step on each side."""
        return [(lo - self.step, hi + self.step) for lo, hi in self.intervals]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "verdict", "K_s", "alpha_s", "mu_s", "K_u", "alpha_u", "mu_u"])
        for lam, v in zip(self.lam_grid, self.verdicts):
            row = [_f17(lam), v.verdict]
            for c in (v.stable_cert, v.unstable_cert):
                row += [_f17(c.K), _f17(c.alpha), _f17(c.mu)] if c else ["", "", ""]
            w.writerow(row)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "intervals": [[lo, hi] for lo, hi in self.intervals],
            "outer_intervals": [[lo, hi] for lo, hi in self.outer_intervals()],
            "step": self.step,
            "touches_zero": self.touches_zero,
            "note": self.note,
        }


def _f17(x: float) -> str:
    return format(float(x), ".17g")


def lambda_grid(lam_min: float, lam_max: float, step: float) -> np.ndarray:
    if not (step > 0) or not (lam_min < lam_max):
        raise ValueError("empty lambda grid: need lam_min < lam_max and step > 0")
    k = int(math.floor((lam_max - lam_min) / step + 1e-9))
    return np.round(lam_min + step * np.arange(k + 1), 12)


def estimate_spectrum(sys: LinearSystem | EvolutionSamples, lam_min: float, lam_max: float,
                      step: float, t_max: float | None = None, n_samples: int = 40,
                      mu_cap: float | None = None, projectors=None, alpha_grid=None,
                      tol: float = DEFAULT_TOL) -> SpectrumEstimate:
    """Scan ``lam`` and merge consecutive "none" verdicts into intervals."""
    grid = lambda_grid(lam_min, lam_max, step)
    samples = sys if isinstance(sys, EvolutionSamples) else _samples(sys, t_max, n_samples, tol)
    verdicts = tuple(test_dichotomy(samples, lam, mu_cap=mu_cap, projectors=projectors,
                                    alpha_grid=alpha_grid) for lam in grid)
    intervals = []
    start = None
    for k, v in enumerate(verdicts):
        if v.verdict == "none":
            if start is None:
                start = k
        elif start is not None:
            intervals.append((float(grid[start]), float(grid[k - 1])))
            start = None
    if start is not None:
        intervals.append((float(grid[start]), float(grid[-1])))
    touches = any(hi + step >= 0 for _, hi in intervals)
    return SpectrumEstimate(grid, verdicts, tuple(intervals), float(step), touches)
