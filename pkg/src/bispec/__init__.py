"""
Bispectrum-based estimation of the quadratic non-Gaussianity parameter f_NL
on the sphere: Wigner symbols, the perturbed power spectrum, field simulation,
the sample bispectrum, the least-squares estimator, asymptotic constants and a
Monte Carlo harness for the normal approximation.
"""

__version__ = "0.1.0"

from .wigner import (wigner3j, wigner3j_zero, wigner3j_zero_asymptotic, wigner6j, clebsch_gordan, gaunt,
                     wigner3j_jfamily, wigner3j_block, precompute_zero_table, ZeroTable)
from .spectrum import PowerSpectrumModel, TruncationWarning, c_gaussian, c_two, c_two_cg, c_total
from .sphere import (HarmonicCoefficientSet, SphereGrid, RngStream, synthesize, analyze,
                     sample_gaussian_alm, alm_two_pixel, alm_two_harmonic, perturb_and_normalize)
from .bispectrum import (MultipoleTriple, BispectrumPlan, BispectrumTable, ImaginaryResidualWarning,
                         admissible_triples, triple_array, ell0_from_r, eta_weight, sample_bispectrum,
                         cum4_theory)
from .estimator import EstimatorReport, DegenerateDesignError, fit_fnl, fit_fnl_batch, variance_theory
from .asymptotics import AsymptoticReport, QuadResult, asymptotic_report, d_r_reduced, d_r_bruteforce
from .montecarlo import ExperimentConfig, run_replications, scaling_study, empirical_cumulants
