"""Strict and quadratic Lyapunov functions for a contracting linear system.

Both constructions take a fitted contraction certificate ``(K, alpha, mu)``
and a rate ``0 < alpha_V < alpha``:

* strict:    V(t, x) = sup_{tau >= t} |Phi(tau, t) x|^2 exp(2 alpha_V (tau - t))
* quadratic: V(t, x) = <S(t) x, x>,
             S(t) = int_t^inf Phi(s, t)^T Phi(s, t) exp(2 alpha_V (s - t)) ds

Both suprema/integrals are truncated at a horizon where the certified tail
bound ``K^2 exp(2 mu t) exp(-2 (alpha - alpha_V) T_h)`` drops below ``tol``.
Along solutions of the linear system both decay at rate ``gamma = alpha_V``;
the sandwich constant ``eta`` of the strict form is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dichotomy import ContractionCertificate
from .flow import LinearSystem, NonlinearPerturbation, Trajectory, TransitionPath, ode_residual

GRID_POINTS = 801
ZOOM_POINTS = 65
ZOOM_LEVELS = 2
TOP_PEAKS = 4


def _check_rate(cert: ContractionCertificate, alpha_V: float) -> None:
    if not (0 < alpha_V < cert.alpha):
        raise ValueError(f"need 0 < alpha_V < alpha = {cert.alpha}, got alpha_V = {alpha_V}")


def _horizon(cert: ContractionCertificate, alpha_V: float, tol: float, t: float) -> float:
    num = math.log(max(cert.K, 1.0) ** 2 / tol) + 2 * cert.mu * t
    return max(num, 0.0) / (2 * (cert.alpha - alpha_V))


class StrictLyapunov:
    """Sup-type Lyapunov function evaluated on a refined tau grid."""

    kind = "strict"

    def __init__(self, cert: ContractionCertificate, sys: LinearSystem, alpha_V: float,
                 tol: float = 1e-10, ode_tol: float = 1e-10, max_horizon: float | None = None):
        _check_rate(cert, alpha_V)
        self.cert = cert
        self.sys = sys
        self.alpha_V = float(alpha_V)
        self.tol = tol
        self.ode_tol = ode_tol
        self.max_horizon = max_horizon
        self.scale = cert.K
        self.upsilon = cert.mu
        self.gamma = self.alpha_V
        self.eta = 1.0
        self._cache: dict[float, tuple] = {}

    def horizon(self, t: float) -> float:
        T = _horizon(self.cert, self.alpha_V, self.tol, t)
        return T if self.max_horizon is None else min(T, self.max_horizon)

    def _base(self, t: float):
        hit = self._cache.get(t)
        if hit is None:
            T = self.horizon(t)
            path = TransitionPath(self.sys, t, t + T, self.ode_tol)
            taus = t + np.linspace(0.0, T, GRID_POINTS)
            hit = (path, taus, path(taus))
            self._cache[t] = hit
        return hit

    def _weighted(self, path, t, taus, X, mats=None):
        mats = path(taus) if mats is None else mats
        Y = np.einsum("kij,mj->kmi", mats, X)
        w = np.exp(2 * self.alpha_V * (taus - t))
        return np.sum(Y * Y, axis=-1) * w[:, None]  # (k, m)

    def evaluate_many(self, t: float, X) -> np.ndarray:
        """V(t, x) for each row of X."""
        t = float(t)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        path, taus, mats = self._base(t)
        vals = self._weighted(path, t, taus, X, mats)
        best = vals.max(axis=0)
        if len(taus) < 2 or taus[-1] == taus[0]:
            return best
        # zoom into the top grid peaks of every column
        order = np.argsort(vals, axis=0)[-TOP_PEAKS:]
        lo_t, hi_t = taus[0], taus[-1]
        width = taus[1] - taus[0]
        centers = np.unique(taus[order.ravel()])
        for _ in range(ZOOM_LEVELS):
            new_centers = []
            for c in centers:
                loc = np.clip(np.linspace(c - width, c + width, ZOOM_POINTS), lo_t, hi_t)
                v = self._weighted(path, t, loc, X)
                best = np.maximum(best, v.max(axis=0))
                new_centers.extend(loc[np.unique(v.argmax(axis=0))])
            centers = np.unique(new_centers)
            width = 2 * width / (ZOOM_POINTS - 1)
        return best

    def __call__(self, t: float, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.any(x):
            return 0.0
        return float(self.evaluate_many(t, x[None, :])[0])

    def upper_constant(self, t: float) -> float:
        return self.scale ** 2 * math.exp(2 * self.upsilon * t)


class QuadraticLyapunov:
    """V(t, x) = <S(t) x, x> with S from a backward matrix ODE.

    On a window ``[0, t_win]`` the integral is cut at the fixed end
    ``t_end = t_win + T_h(t_win)``, so ``S`` solves
    ``S' = -I - A^T S - S A - 2 alpha_V S`` with ``S(t_end) = 0`` exactly.
    Asking for ``t > t_win`` rebuilds with the window doubled.
    """

    kind = "quadratic"

    def __init__(self, cert: ContractionCertificate | None, sys: LinearSystem | None,
                 alpha_V: float, tol: float = 1e-10, window: float = 20.0,
                 ode_tol: float = 1e-11, _fixed: np.ndarray | None = None):
        self.cert = cert
        self.sys = sys
        self.alpha_V = float(alpha_V)
        self.gamma = self.alpha_V
        self.tol = tol
        self.ode_tol = ode_tol
        self._fixed = None if _fixed is None else np.atleast_2d(np.asarray(_fixed, dtype=float))
        if self._fixed is None:
            _check_rate(cert, alpha_V)
            # Integral of the certified bound over [t, inf): C * K1 * exp(2 mu t)
            self.bound_consts = (cert.K ** 2 / (2 * (cert.alpha - alpha_V)), 1.0)
            self._build(float(window))
        else:
            self.bound_consts = (float(np.linalg.norm(self._fixed, 2)), 1.0)
            self.window = math.inf

    @classmethod
    def fixed(cls, S, alpha_V: float = 0.0) -> "QuadraticLyapunov":
        """A time-independent quadratic form, e.g. V = |x|^2 as a test probe."""
        return cls(None, None, alpha_V, _fixed=S)

    def horizon(self, t: float) -> float:
        return _horizon(self.cert, self.alpha_V, self.tol, t)

    def _build(self, window: float) -> None:
        n = self.sys.dim
        t_end = window + self.horizon(window)
        eye = np.eye(n)
        a2 = 2 * self.alpha_V

        def rhs(t, w):
            W = w.reshape(n, n)
            A = self.sys.A(t)
            return (-eye - A.T @ W - W @ A - a2 * W).ravel()

        sol = solve_ivp(rhs, (t_end, 0.0), np.zeros(n * n), method="DOP853",
                        rtol=self.ode_tol, atol=self.ode_tol * 1e-3, dense_output=True)
        if sol.status != 0:
            raise RuntimeError(f"quadrature failure: {sol.message}")
        self.window = window
        self.t_end = t_end
        self._sol = sol.sol

    def S(self, t: float) -> np.ndarray:
        if self._fixed is not None:
            return self._fixed.copy()
        if t < 0:
            raise ValueError("t must be nonnegative")
        if t > self.window:
            w = self.window
            while w < t:
                w *= 2
            self._build(w)
        n = self.sys.dim
        M = self._sol(t).reshape(n, n)
        return 0.5 * (M + M.T)

    def evaluate_many(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("mi,ij,mj->m", X, self.S(t), X)

    def __call__(self, t: float, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(x @ self.S(t) @ x)

    def upper_constant(self, t: float) -> float:
        if self._fixed is not None:
            return self.bound_consts[0]
        C, K1 = self.bound_consts
        return C * K1 * math.exp(2 * self.cert.mu * t)

    def lower_constant(self, t: float) -> float:
        return float(np.linalg.eigvalsh(self.S(t))[0])

    def operator_report(self, times, h: float = 1e-4) -> dict:
        """Finite-difference check of ``S' + A^T S + S A`` in two forms.

        ``identity``: ``S' + A^T S + S A + I + 2 alpha_V S = 0`` (exact for the
        construction).  ``inequality``: ``S' + A^T S + S A <= -I``.
        """
        worst_id, worst_ineq, worst_sym, min_eig, worst_bound = 0.0, -math.inf, 0.0, math.inf, -math.inf
        for t in times:
            hh = h * (1 + abs(t))
            lo = max(t - hh, 0.0)
            hi = t + hh
            dS = (self.S(hi) - self.S(lo)) / (hi - lo)
            S = self.S(t)
            A = self.sys.A(t)
            L = dS + A.T @ S + S @ A
            n = S.shape[0]
            scale = 1 + np.linalg.norm(S, 2)
            worst_id = max(worst_id, np.linalg.norm(L + np.eye(n) + 2 * self.alpha_V * S, 2) / scale)
            worst_ineq = max(worst_ineq, float(np.linalg.eigvalsh(0.5 * (L + L.T) + np.eye(n))[-1]) / scale)
            raw = self._sol(t).reshape(n, n) if self._fixed is None else S
            worst_sym = max(worst_sym, np.linalg.norm(raw - raw.T, 2) / scale)
            min_eig = min(min_eig, float(np.linalg.eigvalsh(S)[0]))
            worst_bound = max(worst_bound, np.linalg.norm(S, 2) / self.upper_constant(t) - 1)
        return {
            "identity_residual": worst_id,
            "inequality_max_eig": worst_ineq,
            "symmetry_defect": worst_sym,
            "min_eigenvalue": min_eig,
            "bound_excess": worst_bound,
            "bound_consts": {"C": self.bound_consts[0], "K1": self.bound_consts[1]},
        }


def build_strict(cert: ContractionCertificate, sys: LinearSystem, alpha_V: float,
                 tol: float = 1e-10, **kw) -> StrictLyapunov:
    return StrictLyapunov(cert, sys, alpha_V, tol, **kw)


def build_quadratic(cert: ContractionCertificate, sys: LinearSystem, alpha_V: float,
                    tol: float = 1e-10, **kw) -> QuadraticLyapunov:
    return QuadraticLyapunov(cert, sys, alpha_V, tol, **kw)


def evaluate_V(V, t: float, x) -> float:
    return V(t, x)


# ---------------------------------------------------------------------------
# verification

@dataclass
class AxiomReport:
    axiom: str
    worst_margin: float
    location: dict
    passed: bool
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.worst_margin = float(self.worst_margin)
        self.passed = bool(self.passed)

    def to_json(self) -> dict:
        return {"axiom": self.axiom, "worst_margin": self.worst_margin,
                "location": self.location, "pass": self.passed,
                **{k: (float(v) if isinstance(v, np.floating) else v) for k, v in self.notes.items()}}


def random_samples(n: int, dim: int, t_max: float, rng: np.random.Generator,
                   n_times: int = 24, x_scale: float = 2.0):
    """(t, s, x) triples with t >= s drawn from a pool of base times."""
    pool = np.sort(np.concatenate(([0.0], rng.uniform(0.0, t_max, n_times - 1))))
    i = rng.integers(0, n_times, n)
    j = rng.integers(0, n_times, n)
    s_idx, t_idx = np.minimum(i, j), np.maximum(i, j)
    xs = rng.normal(scale=x_scale, size=(n, dim))
    return [(float(pool[a]), float(pool[b]), xs[k]) for k, (a, b) in enumerate(zip(t_idx, s_idx))]


def verify_axioms(V, sys: LinearSystem, samples, gamma: float | None = None,
                  tol: float = 1e-6, ode_tol: float = 1e-10) -> list[AxiomReport]:
    """Check the sandwich (V1), monotonicity (V2) and decay (V3) on samples.

    Margins are relative: 0 means equality, negative means violated.  Never
    raises on a violation.
    """
    gamma = V.gamma if gamma is None else gamma
    samples = [(float(t), float(s), np.atleast_1d(np.asarray(x, dtype=float))) for t, s, x in samples]
    # group by s so one transition path per base time serves all states
    by_s: dict[float, list] = {}
    for k, (t, s, x) in enumerate(samples):
        if t < s:
            raise ValueError("samples need t >= s")
        by_s.setdefault(s, []).append(k)
    t_hi = max(t for t, _, _ in samples)
    images = [None] * len(samples)
    for s, ks in by_s.items():
        path = TransitionPath(sys, s, max(t_hi, s), ode_tol)
        for k in ks:
            t, _, x = samples[k]
            images[k] = path(t) @ x
    # evaluate V grouped by time
    def batch(points):
        out = np.empty(len(points))
        groups: dict[float, list] = {}
        for k, (t, x) in enumerate(points):
            groups.setdefault(t, []).append(k)
        for t, ks in groups.items():
            out[ks] = V.evaluate_many(t, np.array([points[k][1] for k in ks]))
        return out

    v_s = batch([(s, x) for _, s, x in samples])
    v_t = batch([(t, images[k]) for k, (t, _, _) in enumerate(samples)])
    v_sand = batch([(t, x) for t, _, x in samples])

    def worst(margins):
        k = int(np.argmin(margins))
        t, s, x = samples[k]
        return float(margins[k]), {"t": t, "s": s, "x": x.tolist()}

    nx2 = np.array([x @ x for _, _, x in samples])
    live = nx2 > 0
    lower = np.array([getattr(V, "lower_constant", lambda t: 1.0)(t) for t, _, _ in samples])
    upper = np.array([V.upper_constant(t) for t, _, _ in samples])
    m_lo = np.where(live, (v_sand - lower * nx2) / np.where(live, lower * nx2, 1), 0.0)
    m_hi = np.where(live, (upper * nx2 - v_sand) / np.where(live, upper * nx2, 1), 0.0)
    m1 = np.minimum(m_lo, m_hi)
    pos = v_s > 0
    ratio = np.where(pos, v_t / np.where(pos, v_s, 1), 0.0)
    dts = np.array([t - s for t, s, _ in samples])
    m2 = 1 - ratio
    m3 = 1 - ratio * np.exp(2 * gamma * dts)
    reports = []
    for name, m in (("V1", m1), ("V2", m2), ("V3", m3)):
        w, loc = worst(m)
        reports.append(AxiomReport(name, w, loc, w >= -tol))
    reports[0].notes["eta"] = 1.0
    reports[2].notes["gamma"] = gamma
    return reports


def verify_decay_perturbed(V, sys: LinearSystem, g: NonlinearPerturbation, traj: Trajectory,
                           rates: tuple[float, float], tol_margin: float = 1e-3,
                           n_points: int = 200, residual_tol: float = 1e-5) -> AxiomReport:
    """Check ``dV/dt <= -2 (alpha1 - mu1 - L_g) V`` along a perturbed solution.

    The derivative of ``t -> V(t, y(t))`` is a central difference with step
    ``1e-4 (1 + |t|)``.  Passes iff ``-dV/dt >= 2 c V (1 - tol_margin)`` at
    every interior sample with ``V > 0``.
    """
    if g.class_tag != "A2":
        raise ValueError("decay check needs a perturbation vanishing at the origin (class A2)")
    a1, m1 = rates
    c = a1 - m1 - g.L_f
    if c <= 0:
        raise ValueError(f"need L_g < alpha1 - mu1, got L_g={g.L_f}, alpha1-mu1={a1 - m1}")
    rhs = lambda t, y: sys.A(t) @ y + g(t, y)  # noqa: E731
    t0, t1 = traj.t0, traj.t1
    hmax = 1e-4 * (1 + max(abs(t0), abs(t1)))
    times = np.linspace(t0 + 2 * hmax, t1 - 2 * hmax, n_points)
    res = ode_residual(traj, rhs, times)
    if res > residual_tol:
        raise ValueError(f"trajectory does not match the perturbed system (residual {res:.3g})")
    worst, loc, zero = math.inf, {}, True
    for t in times:
        h = 1e-4 * (1 + abs(t))
        v = V(t, traj(t))
        if v <= 0:
            continue
        zero = False
        dv = (V(t + h, traj(t + h)) - V(t - h, traj(t - h))) / (2 * h)
        r = -dv / (2 * c * v)
        if r < worst:
            worst, loc = r, {"t": float(t), "x": traj(t).tolist()}
    if zero:
        return AxiomReport("decay", 0.0, {}, True, {"V_identically_zero": True, "rate": c})
    return AxiomReport("decay", worst - 1.0, loc, worst >= 1 - tol_margin,
                       {"worst_ratio": worst, "rate": c})
