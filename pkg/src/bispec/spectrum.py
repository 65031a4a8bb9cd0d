"""
Power-law angular power spectrum and its second-chaos companion.

The Gaussian part is C_{l;G} = A (1+l)^(-alpha).  Squaring the field couples
pairs of multipoles, and the variance of the resulting coefficients is

    C_{l;2} = (2 / 4pi) sum_{l1,l2>=1} (2l1+1)(2l2+1) (l1 l2 l; 0 0 0)^2 C_{l1;G} C_{l2;G},

truncated at a simulation band Lambda_sim.  The same quantity is available in
Clebsch-Gordan form as an independent cross-check.
"""

import math
import threading
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .wigner import clebsch_gordan, wigner3j_zero

__all__ = [
    "PowerSpectrumModel",
    "TruncationWarning",
    "c_gaussian",
    "c_two",
    "c_two_cg",
    "c_two_tail_bound",
    "c_total",
    "field_variance",
]


class TruncationWarning(UserWarning):
    """The analytic tail bound of a truncated sum exceeds the tolerance."""


@dataclass(frozen=True)
class PowerSpectrumModel:
    """Power-law spectrum A (1+l)^(-alpha) with optional quadratic coupling.

    Parameters
    ----------
    amplitude : float
        A > 0.
    alpha : float
        Spectral index, > 2 (the asymptotic theory needs > 4).
    f_nl : float
        Amplitude of the quadratic perturbation.
    band_limit : int, optional
        Truncation Lambda_sim of the sums defining C_{l;2}.  Defaults to 64
        when a value is needed but none was given.
    tail_rtol : float
        Relative size of the truncation tail bound above which a
        :class:`TruncationWarning` is emitted.
    """

    amplitude: float = 1.0
    alpha: float = 5.0
    f_nl: float = 0.0
    band_limit: int | None = None
    tail_rtol: float = 1e-2

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not self.alpha > 2:
            raise ValueError(f"spectral index must exceed 2, got {self.alpha}")
        if self.band_limit is not None and self.band_limit < 1:
            raise ValueError("band_limit must be at least 1")

    @property
    def sim_band(self):
        return 64 if self.band_limit is None else int(self.band_limit)

    def with_band(self, band_limit):
        return PowerSpectrumModel(self.amplitude, self.alpha, self.f_nl, band_limit, self.tail_rtol)

    def with_fnl(self, f_nl):
        return PowerSpectrumModel(self.amplitude, self.alpha, f_nl, self.band_limit, self.tail_rtol)

    def c_gaussian(self, ell):
        return c_gaussian(ell, self)

    def c_two(self, ell):
        return c_two(ell, self)

    def c_total(self, ell):
        return c_total(ell, self)


def c_gaussian(ell, model):
    """A (1+l)^(-alpha); accepts scalars or arrays."""
    ell = np.asarray(ell, dtype=float)
    if np.any(ell < 0):
        raise ValueError("multipole must be non-negative")
    out = model.amplitude * (1.0 + ell) ** (-model.alpha)
    return out[()] if out.ndim == 0 else out


_cache_lock = threading.Lock()


@lru_cache(maxsize=32)
def _c_two_table(amplitude, alpha, band):
    # entries for l = 0 .. 2*band; pairs (l1, l2) with 1 <= l1, l2 <= band
    l = np.arange(1, band + 1)
    w = (2 * l + 1) * amplitude * (1.0 + l) ** (-alpha)
    out = np.zeros(2 * band + 1)
    for ell in range(1, 2 * band + 1):
        z = wigner3j_zero(l[:, None], l[None, :], ell)
        out[ell] = 2.0 / (4 * math.pi) * float(np.einsum("i,ij,j->", w, z * z, w))
    out.setflags(write=False)
    return out


def _table(model):
    with _cache_lock:
        return _c_two_table(float(model.amplitude), float(model.alpha), model.sim_band)


def c_two_tail_bound(ell, model):
    """Upper bound on the terms dropped by truncating C_{l;2} at Lambda_sim.

    Uses sum_{l2} (2 l2 + 1) (l1 l2 l; 000)^2 = 1 for the inner sum and the
    integral bound of the power-law tail for the outer one.
    """
    band = model.sim_band
    ell = np.asarray(ell, dtype=float)
    inner = c_gaussian(np.maximum(band + 1 - ell, 1.0), model)
    tail = 2 * model.amplitude * (band + 1.0) ** (2 - model.alpha) / (model.alpha - 2)
    out = inner * tail / math.pi
    return out[()] if np.ndim(out) == 0 else out


def c_two(ell, model, warn=True):
    """Second-chaos spectrum C_{l;2} (3j form), truncated at model.sim_band.

    Valid for 1 <= l <= 2 Lambda_sim; larger l would need modes beyond the band.
    """
    arr = np.asarray(ell)
    if np.any(arr < 1):
        raise ValueError("C_{l;2} is defined for l >= 1")
    table = _table(model)
    if np.any(arr > len(table) - 1):
        raise ValueError(f"l exceeds twice the simulation band {model.sim_band}")
    out = table[arr.astype(int)]
    if warn:
        bound = c_two_tail_bound(arr, model)
        if np.any(bound > model.tail_rtol * out):
            warnings.warn(
                f"truncation at band {model.sim_band} leaves a tail bound above "
                f"{model.tail_rtol:g} of C_l2", TruncationWarning, stacklevel=2)
    return out[()] if np.ndim(out) == 0 else np.array(out)


def c_two_cg(ell, model):
    """C_{l;2} in Clebsch-Gordan form, scalar l, exact scalar symbols.

    Independent of :func:`c_two` apart from the spectrum itself; meant for
    cross-checks at modest bands.
    """
    if ell < 1:
        raise ValueError("C_{l;2} is defined for l >= 1")
    band = model.sim_band
    terms = []
    for l1 in range(1, band + 1):
        c1 = c_gaussian(l1, model)
        for l2 in range(max(1, abs(l1 - ell)), min(band, l1 + ell) + 1):
            if (l1 + l2 + ell) % 2:
                continue
            cg = clebsch_gordan(l1, 0, l2, 0, ell, 0)
            terms.append(2 * (2 * l1 + 1) * (2 * l2 + 1) / (4 * math.pi * (2 * ell + 1))
                         * cg * cg * c1 * c_gaussian(l2, model))
    return math.fsum(terms)


def c_total(ell, model):
    """C_l = C_{l;G} + f_NL^2 C_{l;2}."""
    if model.f_nl == 0:
        return c_gaussian(ell, model)
    return c_gaussian(ell, model) + model.f_nl**2 * c_two(ell, model)


def field_variance(model, band):
    """E[T_G(x)^2] = sum_{l=1}^{band} (2l+1) C_{l;G} / 4pi for the band-limited field."""
    l = np.arange(1, band + 1)
    return math.fsum((2 * l + 1) * c_gaussian(l, model)) / (4 * math.pi)
