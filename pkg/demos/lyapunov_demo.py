"""Strict and quadratic Lyapunov functions for a nonuniformly contracting system."""

import numpy as np

from nonautlin import fit_contraction
from nonautlin.flow import catalog
from nonautlin.lyapunov import build_quadratic, build_strict, random_samples, verify_axioms

sys, _ = catalog("bv_scalar", {"omega": 3, "a": 1})
cert = fit_contraction(sys, 20.0, 40)
alpha_V = cert.alpha / 2

strict = build_strict(cert, sys, alpha_V)
quad = build_quadratic(cert, sys, alpha_V)
for t in (0.0, 2.0, 5.0):
    print(f"t={t:4.1f}  strict V(t,1)={strict(t, [1.0]):10.4g}  quadratic V(t,1)={quad(t, [1.0]):10.4g}")

rng = np.random.default_rng(0)
for V in (strict, quad):
    for r in verify_axioms(V, sys, random_samples(2000, 1, 10.0, rng)):
        print(f"{V.kind:9s} {r.axiom}: worst margin {r.worst_margin:+.2e} {'pass' if r.passed else 'FAIL'}")
