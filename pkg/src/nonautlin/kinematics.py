"""Time-dependent changes of coordinates ``x = S(t) y``.

Transformed linear part: ``S^{-1} (A S - S')``.  Transformed nonlinearity:
``g(t, y) = S^{-1}(t) f(t, S(t) y)`` with Lipschitz constant ``M1^2 L_f``
when ``|S(t)|, |S^{-1}(t)| <= M1 exp(beta t)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .flow import LinearSystem, NonlinearPerturbation, SystemSpecError, TransitionPath

COND_LIMIT = 1e8


class SingularTransformError(ValueError):
    pass


@dataclass(frozen=True)
class KinematicTransform:
    dim: int
    S_fn: Callable = field(repr=False)
    Sdot_fn: Callable | None = field(default=None, repr=False)
    M1: float = 1.0
    beta: float = 0.0
    delta: float = 0.0
    K_de: float = 0.0
    exprs: tuple | None = None
    dot_exprs: tuple | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def from_exprs(cls, S, S_dot=None, M1=1.0, beta=0.0, delta=0.0, K_de=0.0,
                   params=None) -> "KinematicTransform":
        params = dict(params or {})
        n = len(S)
        if any(len(row) != n for row in S):
            raise SystemSpecError("S must be a square matrix of expressions")

        def parse_matrix(rows):
            tree = tuple(tuple(ex.parse(str(c)) if not isinstance(c, (int, float)) else ex.Const(float(c))
                               for c in row) for row in rows)
            for row in tree:
                for e in row:
                    ex.check_variables(e, 0, params)
            flat = ex.compile_many([e for row in tree for e in row], ["t"], params)

            def fn(t):
                return np.array(flat(t), dtype=float).reshape(n, n)
            return tree, fn

        tree, fn = parse_matrix(S)
        dtree, dfn = (None, None) if S_dot is None else parse_matrix(S_dot)
        return cls(n, fn, dfn, float(M1), float(beta), float(delta), float(K_de), tree, dtree, params)

    @classmethod
    def from_json(cls, data) -> "KinematicTransform":
        if isinstance(data, str):
            data = json.loads(data)
        try:
            return cls.from_exprs(data["S"], data.get("S_dot"), data.get("M1", 1.0),
                                  data.get("beta", 0.0), data.get("delta", 0.0),
                                  data.get("K_de", 0.0), data.get("params"))
        except KeyError as err:
            raise SystemSpecError(f"transform JSON is missing key {err}") from None

    def to_json(self) -> dict:
        if self.exprs is None:
            raise ValueError("transform was not built from expressions")
        out = {"S": [[ex.to_source(e) for e in row] for row in self.exprs],
               "M1": self.M1, "beta": self.beta, "delta": self.delta, "K_de": self.K_de}
        if self.dot_exprs is not None:
            out["S_dot"] = [[ex.to_source(e) for e in row] for row in self.dot_exprs]
        if self.params:
            out["params"] = dict(self.params)
        return out

    @classmethod
    def identity(cls, n: int) -> "KinematicTransform":
        return cls.from_exprs([[1 if i == j else 0 for j in range(n)] for i in range(n)],
                              [[0] * n for _ in range(n)])

    def S(self, t: float) -> np.ndarray:
        return self.S_fn(t)

    def S_inv(self, t: float) -> np.ndarray:
        S = self.S(t)
        c = np.linalg.cond(S)
        if not np.isfinite(c):
            raise SingularTransformError(f"S(t) is singular at t={t:g}")
        if c > COND_LIMIT:
            raise SingularTransformError(f"S(t) is ill-conditioned at t={t:g} (cond {c:.3g})")
        return np.linalg.inv(S)

    def S_dot(self, t: float) -> np.ndarray:
        if self.Sdot_fn is not None:
            return self.Sdot_fn(t)
        h = 1e-5 * (1 + abs(t))
        if t - h < 0:  # second-order one-sided stencil near t = 0
            return (-3 * self.S(t) + 4 * self.S(t + h) - self.S(t + 2 * h)) / (2 * h)
        return (self.S(t + h) - self.S(t - h)) / (2 * h)

    def inverse(self) -> "KinematicTransform":
        """``y = S^{-1}(t) x``; derivative ``-S^{-1} S' S^{-1}``."""
        def inv(t):
            return self.S_inv(t)

        def inv_dot(t):
            Si = self.S_inv(t)
            return -Si @ self.S_dot(t) @ Si
        return KinematicTransform(self.dim, inv, inv_dot, self.M1, self.beta, self.delta, self.K_de)

    def check_metadata(self, t_max: float, n: int = 200, tol: float = 1e-6) -> dict:
        """Spot-check ``|S|, |S^{-1}| <= M1 exp(beta t)`` on a grid."""
        worst = 0.0
        for t in np.linspace(0.0, t_max, n):
            cap = self.M1 * math.exp(self.beta * t)
            worst = max(worst, np.linalg.norm(self.S(t), 2) / cap, np.linalg.norm(self.S_inv(t), 2) / cap)
        return {"worst_ratio": float(worst), "verified": bool(worst <= 1 + tol),
                "status": "verified" if worst <= 1 + tol else "unverified metadata"}


def transform_linear(sys: LinearSystem, T: KinematicTransform) -> LinearSystem:
    if sys.dim != T.dim:
        raise ValueError("dimension mismatch between system and transform")
    A = sys.A

    def coeff(t):
        S = T.S(t)
        return T.S_inv(t) @ (A(t) @ S - T.S_dot(t))
    return LinearSystem.from_callable(sys.dim, coeff, name=f"{sys.name}|S" if sys.name else "transformed")


def transform_nonlinearity(f: NonlinearPerturbation, T: KinematicTransform) -> NonlinearPerturbation:
    """``g(t, y) = S^{-1}(t) f(t, S(t) y)`` with ``L_g = M1^2 L_f``.

    The decay rate of the Lipschitz weight drops by ``beta_S``; the result is
    clipped at 0 and the loss is recorded in ``flags``.
    """
    if f.dim != T.dim:
        raise ValueError("dimension mismatch between perturbation and transform")
    func = f.func

    def g(t, y):
        return T.S_inv(t) @ func(t, T.S(t) @ y)

    beta_g = max(0.0, f.beta - T.beta)
    out = NonlinearPerturbation(f.dim, g, L_f=T.M1 ** 2 * f.L_f, beta=beta_g,
                                K0=T.M1 * f.K0, class_tag=f.class_tag)
    object.__setattr__(out, "flags", [] if f.beta >= T.beta else
                       [f"beta_f={f.beta:g} < beta_S={T.beta:g}: weighted bound not valid"])
    return out


def verify_lipschitz_transfer(g: NonlinearPerturbation, f: NonlinearPerturbation,
                              T: KinematicTransform, t_max: float = 10.0, n: int = 500,
                              rng: np.random.Generator | None = None, scale: float = 3.0,
                              tol: float = 1e-6, rates: tuple | None = None) -> dict:
    """Largest sampled ``|g(t,u) - g(t,v)| exp(2 beta_g t) / |u - v|`` vs ``M1^2 L_f``."""
    rng = rng or np.random.default_rng(0)
    bound = T.M1 ** 2 * f.L_f
    worst, loc = 0.0, {}
    for _ in range(n):
        t = float(rng.uniform(0.0, t_max))
        u, v = rng.normal(scale=scale, size=(2, g.dim))
        d = float(np.linalg.norm(u - v))
        if d == 0:
            continue
        r = float(np.linalg.norm(g(t, u) - g(t, v))) * math.exp(2 * g.beta * t) / d
        if r > worst:
            worst, loc = r, {"t": t, "u": u.tolist(), "v": v.tolist()}
    report = {"ratio": worst, "bound": bound, "pass": bool(worst <= bound * (1 + tol)),
              "location": loc, "metadata": T.check_metadata(t_max)}
    # delta = 0 means no smallness parameter was declared
    report["L_g_le_delta"] = bool(bound <= T.delta) if T.delta > 0 else None
    if rates is not None:
        a, m = rates
        report["delta_lt_gap"] = bool(T.delta < a - m) if T.delta > 0 else None
    return report


def conjugacy_residual(sys: LinearSystem, T: KinematicTransform, pairs, tol: float = 1e-10) -> float:
    """Worst relative gap between ``Phi_new(t,s)`` and ``S^{-1}(t) Phi(t,s) S(s)``."""
    new = transform_linear(sys, T)
    worst = 0.0
    by_s: dict[float, list] = {}
    for t, s in pairs:
        by_s.setdefault(float(s), []).append(float(t))
    for s, ts in by_s.items():
        p_old = TransitionPath(sys, s, max(ts), tol)
        p_new = TransitionPath(new, s, max(ts), tol)
        for t in ts:
            ref = T.S_inv(t) @ p_old(t) @ T.S(s)
            got = p_new(t)
            worst = max(worst, float(np.linalg.norm(got - ref, 2) / np.linalg.norm(ref, 2)))
    return worst
