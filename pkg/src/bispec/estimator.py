"""
Least-squares (KSW-type) estimate of f_NL from a bispectrum table and the
finite-L quantities that control its distance to a Gaussian.

All reductions over triples use exactly rounded summation (math.fsum), so
results do not depend on the row order of the table.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .bispectrum import BispectrumTable, cum4_theory

__all__ = [
    "EstimatorReport",
    "DegenerateDesignError",
    "fit_fnl",
    "fit_fnl_batch",
    "variance_theory",
    "cum4_bound",
    "tv_bound_finite",
    "s_eta2",
]

TV_PREFACTOR = 2 * math.sqrt(2) / 3   # 2 sqrt((q-1)/(3q)) at q = 3


class DegenerateDesignError(ValueError):
    """Every template entry is zero, so the projection is undefined."""


@dataclass
class EstimatorReport:
    f_hat: float
    s_eta2: float
    var_theory: float
    cum4_bound: float
    tv_bound_finite: float
    n_triples_effective: int

    def to_dict(self):
        return asdict(self)


def s_eta2(table):
    s = math.fsum(np.asarray(table.eta, dtype=float) ** 2)
    if not s > 0:
        raise DegenerateDesignError("all template weights vanish (no even-parity triple)")
    return s


def variance_theory(table):
    """1 / sum eta^2."""
    return 1.0 / s_eta2(table)


def cum4_bound(table, exact=False):
    """S_kappa / S_eta2^4 with S_kappa = sum eta^4 kappa_t.

    kappa_t = 12 / (2 l1 + 1) by default.  With ``exact`` the Gaussian-input
    fourth cumulant 6({6j} + sum 1/(2l+1)) of each triple is used instead.
    """
    s = s_eta2(table)
    eta = np.asarray(table.eta, dtype=float)
    t = np.asarray(table.triples)
    use = eta != 0
    if exact:
        kap = np.array([cum4_theory(*map(int, row)) for row in t[use]])
    else:
        kap = 12.0 / (2 * t[use].min(axis=1) + 1)
    return math.fsum(eta[use] ** 4 * kap) / s**4


def tv_bound_finite(table, exact=False):
    """(2 sqrt 2 / 3) sqrt(cum4_bound / variance_theory^2)."""
    return TV_PREFACTOR * math.sqrt(cum4_bound(table, exact) / variance_theory(table) ** 2)


def fit_fnl(table, exact_cum4=False):
    """Project the observed bispectrum on the template: sum eta B / sum eta^2."""
    if not isinstance(table, BispectrumTable):
        raise TypeError("fit_fnl expects a BispectrumTable")
    s = s_eta2(table)
    f_hat = math.fsum(table.eta * table.b_hat) / s
    c4 = cum4_bound(table, exact_cum4)
    var = 1.0 / s
    return EstimatorReport(
        f_hat=f_hat,
        s_eta2=s,
        var_theory=var,
        cum4_bound=c4,
        tv_bound_finite=TV_PREFACTOR * math.sqrt(c4 / var**2),
        n_triples_effective=int(np.count_nonzero(table.parity_even)),
    )


def fit_fnl_batch(eta, b_hat):
    """f_hat for each row of a (R, N) array of sample bispectra."""
    eta = np.asarray(eta, dtype=float)
    s = math.fsum(eta**2)
    if not s > 0:
        raise DegenerateDesignError("all template weights vanish (no even-parity triple)")
    b_hat = np.atleast_2d(b_hat)
    return np.array([math.fsum(eta * row) for row in b_hat]) / s
