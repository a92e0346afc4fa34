"""Contraction certificate and dichotomy spectrum of x' = (-3 + t sin t) x."""

from nonautlin import estimate_spectrum, fit_contraction
from nonautlin.dichotomy import EvolutionSamples
from nonautlin.flow import catalog

sys, phi = catalog("bv_scalar", {"omega": 3, "a": 1})
samples = EvolutionSamples(sys, t_max=20.0, n_samples=40)

cert = fit_contraction(samples)
print(f"|Phi(t,s)| <= {cert.K:.4f} exp(-{cert.alpha:.3f} (t-s)) exp({cert.mu:.4f} s)")
print(f"fit residual {cert.residual:.2e}")

est = estimate_spectrum(samples, -6.0, 0.0, 0.05)
for lo, hi in est.intervals:
    print(f"spectral interval [{lo:.2f}, {hi:.2f}] (grid step {est.step})")
