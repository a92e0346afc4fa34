"""Map states of a perturbed system onto the linear one with both constructions."""

import numpy as np

from nonautlin import fit_contraction
from nonautlin.crossing import CrossingHomeomorphism
from nonautlin.flow import NonlinearPerturbation, catalog
from nonautlin.kinematics import KinematicTransform, transform_linear
from nonautlin.lyapunov import build_quadratic
from nonautlin.palmer_lin import PLHomeomorphism

sys, _ = catalog("scalar_autonomous", {"lam0": -1})
cert = fit_contraction(sys, 15.0, 20)

# crossing times of the level V = 1/2 with V(t, x) = x^2
f = NonlinearPerturbation.from_exprs(["0.1*exp(-2*t)*sin(x1)"], L_f=0.1, beta=1.0)
hom = CrossingHomeomorphism(build_quadratic(cert, sys, 0.5), sys, f)
for tau, xi in [(0.0, 2.0), (1.0, -3.0)]:
    h, T = hom.H_with_time(tau, [xi])
    print(f"crossing: H({tau}, {xi}) = {h[0]:.6f}, T = {T:.6f}, G(H) = {hom.G(tau, h)[0]:.6f}")

# bounded fixed point for a perturbation that does not vanish at the origin
g = NonlinearPerturbation.from_exprs(["0.2*exp(-2*t)*sin(x1) + 0.3"], L_f=0.2, beta=1.0, K0=0.3, class_tag="A1")
pl = PLHomeomorphism(sys, g, cert)
sol = pl.picard_Z(1.0, [2.0])
print(f"picard: H(1, 2) = {pl.H(1.0, [2.0])[0]:.6f} after {sol.iterations} iterations, "
      f"ratio bound {pl.ratio:.3f}, measured {max(sol.ratio_history, default=0):.3f}")

# a rotating frame removes the rotation from a coupled system
rot_sys, _ = catalog("rotation_coupled", {"lam": -1, "omega": 1})
R = KinematicTransform.from_exprs([["cos(t)", "-sin(t)"], ["sin(t)", "cos(t)"]])
print("rotating frame coefficient at t=2:\n", np.round(transform_linear(rot_sys, R).A(2.0), 8) + 0.0)
