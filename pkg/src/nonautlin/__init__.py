"""Nonuniform contraction certificates, dichotomy spectra, Lyapunov functions
and linearizing conjugacies for nonautonomous ODEs."""

from .dichotomy import (ContractionCertificate, EvolutionSamples, NotCertifiable, estimate_spectrum,
                        fit_bounded_growth, fit_contraction, test_dichotomy)
from .flow import (LinearSystem, NonlinearPerturbation, catalog, solve_linear, solve_perturbed,
                   transition_matrix)

__version__ = "0.1.0"

__all__ = [
    "ContractionCertificate", "EvolutionSamples", "LinearSystem", "NonlinearPerturbation",
    "NotCertifiable", "catalog", "estimate_spectrum", "fit_bounded_growth", "fit_contraction",
    "solve_linear", "solve_perturbed", "test_dichotomy", "transition_matrix",
]
