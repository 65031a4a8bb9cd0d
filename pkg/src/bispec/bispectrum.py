"""
Admissible multipole triples, the bispectrum template eta and the sample
bispectrum

    B(l1, l2, l3) = sum_{m1, m2} (l1 l2 l3; m1 m2 m3) a_{l1 m1} a_{l2 m2} a_{l3 m3},
    m3 = -m1 - m2,

of normalised coefficients.  For even l1+l2+l3 the sum is real; for odd
parity it is purely imaginary and its (vanishing) real part is what gets
reported, consistent with a zero template there.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .spectrum import c_gaussian
from .sphere import HarmonicCoefficientSet, full_orders
from .wigner import delta_triangle, wigner3j_block, wigner3j_zero, wigner6j

__all__ = [
    "MultipoleTriple",
    "BispectrumTable",
    "BispectrumPlan",
    "ImaginaryResidualWarning",
    "ell0_from_r",
    "admissible_triples",
    "triple_array",
    "eta_weight",
    "sample_bispectrum",
    "empirical_cum4_bhat",
    "cum4_theory",
    "cum4_bound_12",
    "reduced_bispectrum",
]

RESIDUAL_TOL = 1e-10


class ImaginaryResidualWarning(RuntimeWarning):
    """Imaginary part of an even-parity sample bispectrum above tolerance."""


@dataclass(frozen=True)
class MultipoleTriple:
    l1: int
    l2: int
    l3: int

    def __post_init__(self):
        if not (0 <= self.l1 < self.l2 < self.l3):
            raise ValueError(f"triple must be strictly ordered, got {self.as_tuple()}")
        if self.l3 > self.l1 + self.l2:
            raise ValueError(f"triangle condition fails for {self.as_tuple()}")

    @property
    def parity_even(self):
        return (self.l1 + self.l2 + self.l3) % 2 == 0

    @property
    def delta(self):
        return float(delta_triangle(self.l1, self.l2, self.l3))

    def as_tuple(self):
        return (self.l1, self.l2, self.l3)


def ell0_from_r(L, r):
    """Lower cutoff L0 = ceil(r L) for r in (0, 1/2)."""
    if not 0 < r < 0.5:
        raise ValueError(f"r must lie in (0, 1/2), got {r}")
    # guard against r*L landing a hair above an integer
    return int(math.ceil(round(r * L, 9)))


def triple_array(L, L0):
    """Admissible triples as an (N, 3) int array in lexicographic order."""
    if not 1 <= L0 < L:
        raise ValueError(f"need 1 <= L0 < L, got L0={L0}, L={L}")
    if L - L0 < 2:
        warnings.warn(f"L - L0 = {L - L0} < 2: no admissible triples", RuntimeWarning, stacklevel=2)
        return np.zeros((0, 3), dtype=np.int64)
    rows = []
    for l1 in range(L0, L + 1):
        for l2 in range(l1 + 1, L + 1):
            l3 = np.arange(l2 + 1, min(L, l1 + l2) + 1)
            if l3.size:
                rows.append(np.column_stack([np.full(l3.size, l1), np.full(l3.size, l2), l3]))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def admissible_triples(L, L0):
    """Strictly ordered triangles L0 <= l1 < l2 < l3 <= L, lexicographic."""
    return [MultipoleTriple(*map(int, t)) for t in triple_array(L, L0)]


def _as_array(triples):
    if isinstance(triples, MultipoleTriple):
        return np.array([triples.as_tuple()])
    arr = np.asarray([t.as_tuple() if isinstance(t, MultipoleTriple) else t for t in triples]
                     if not isinstance(triples, np.ndarray) else triples, dtype=np.int64)
    return arr.reshape(-1, 3)


def eta_weight(triples, model, normalization="gaunt"):
    """Template eta for one triple or an array of triples.

    eta = 2 zeta (l1 l2 l3; 000) h (C1 C2 + C1 C3 + C2 C3) / sqrt(C1 C2 C3)
    with C = C_{l;G}, zeta = 1 on strictly ordered triples and

        h = sqrt((2l1+1)(2l2+1)(2l3+1) / (4 pi))          ("gaunt", default)
        h = sqrt((2l1+1)(2l2+1)(2l3+1) / (4 pi)^3)        ("cubic")

    The default makes E[B] = f_NL eta hold for the simulated field; the
    alternative is kept for comparison with the literature constants.
    """
    t = _as_array(triples)
    if normalization == "gaunt":
        norm = 4 * math.pi
    elif normalization == "cubic":
        norm = (4 * math.pi) ** 3
    else:
        raise ValueError(f"unknown eta normalization {normalization!r}")
    l1, l2, l3 = t[:, 0], t[:, 1], t[:, 2]
    zeta = 1 + (l1 == l2) + (l2 == l3) + 3 * (l1 == l3)
    c1, c2, c3 = (c_gaussian(x, model) for x in (l1, l2, l3))
    h = np.sqrt((2 * l1 + 1.0) * (2 * l2 + 1.0) * (2 * l3 + 1.0) / norm)
    eta = 2 * zeta * wigner3j_zero(l1, l2, l3) * h * (c1 * c2 + c1 * c3 + c2 * c3) / np.sqrt(c1 * c2 * c3)
    if isinstance(triples, MultipoleTriple) or (np.ndim(triples) == 1 and len(triples) == 3
                                                and not isinstance(triples[0], MultipoleTriple)):
        return float(eta[0])
    return eta


class BispectrumPlan:
    """Precomputed coupling matrices for a fixed list of triples.

    Building the plan is the expensive, symbol-heavy step; applying it to many
    coefficient sets reuses the matrices.
    """

    def __init__(self, triples, even_only=False):
        t = _as_array(triples)
        if even_only:
            t = t[(t.sum(axis=1) % 2) == 0]
        self.triples = t
        self.lmax = int(t.max()) if len(t) else 0
        self._mats = []
        blocks = {}
        for l1, l2, l3 in t:
            key = (int(l1), int(l2))
            if key not in blocks:
                blocks.clear()
                blocks[key] = wigner3j_block(*key)
            jlo, W = blocks[key]
            msum = np.arange(-l1, l1 + 1)[:, None] + np.arange(-l2, l2 + 1)[None, :]
            ok = np.abs(msum) <= l3
            i1, i2 = np.nonzero(ok)
            i3 = l3 - msum[ok]                       # index of m3 = -(m1 + m2)
            w = np.ascontiguousarray(W[i1, i2, l3 - jlo])
            self._mats.append((i1, i2, i3, w))

    def __len__(self):
        return len(self.triples)

    def apply(self, alms, check_residual=True):
        """Sample bispectrum for every triple, shape batch + (N,)."""
        alm = alms.alm if isinstance(alms, HarmonicCoefficientSet) else np.asarray(alms)
        if alm.shape[-1] - 1 < self.lmax:
            raise ValueError("coefficient band below the largest triple multipole")
        batch = alm.shape[:-2]
        a = alm.reshape((-1,) + alm.shape[-2:])
        fulls = {}

        def orders(ell):
            if ell not in fulls:
                fulls[ell] = full_orders(a, ell)
            return fulls[ell]

        out = np.empty((a.shape[0], len(self.triples)), dtype=complex)
        for k, ((l1, l2, l3), (i1, i2, i3, w)) in enumerate(zip(self.triples, self._mats)):
            prod = orders(int(l1))[:, i1] * orders(int(l2))[:, i2] * orders(int(l3))[:, i3]
            # one dot product per map, so a map's value does not depend on its batch
            wc = w[:, None]
            out[:, k] = (np.matmul(np.ascontiguousarray(prod.real)[:, None, :], wc)[:, 0, 0]
                         + 1j * np.matmul(np.ascontiguousarray(prod.imag)[:, None, :], wc)[:, 0, 0])
        if check_residual and out.size:
            even = (self.triples.sum(axis=1) % 2) == 0
            scale = np.ones(len(self.triples))
            for k, (l1, l2, l3) in enumerate(self.triples):
                scale[k] = max(1.0, float(np.sqrt(np.max(
                    np.sum(np.abs(orders(int(l1))) ** 2, -1) * np.sum(np.abs(orders(int(l2))) ** 2, -1)
                    * np.sum(np.abs(orders(int(l3))) ** 2, -1)))))
            resid = np.abs(out.imag[:, even]) / scale[even]
            if resid.size and resid.max() > RESIDUAL_TOL:
                warnings.warn(f"imaginary residual {resid.max():.3g} above {RESIDUAL_TOL:g}; "
                              "reality constraint of the input looks broken",
                              ImaginaryResidualWarning, stacklevel=2)
        return out.real.reshape(batch + (len(self.triples),))


def sample_bispectrum(alms, triples, check_residual=True):
    """Sample bispectrum of normalised coefficients for one triple or many."""
    plan = BispectrumPlan(triples)
    out = plan.apply(alms, check_residual=check_residual)
    if isinstance(triples, MultipoleTriple) or (np.ndim(triples) == 1 and len(triples) == 3
                                                and not isinstance(triples[0], MultipoleTriple)):
        return out[..., 0] if out.ndim > 1 else float(out[0])
    return out


@dataclass
class BispectrumTable:
    """Per-triple template and sample values for one map."""

    triples: np.ndarray
    eta: np.ndarray
    b_hat: np.ndarray
    parity_even: np.ndarray = field(init=False)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.eta = np.asarray(self.eta, dtype=float)
        self.b_hat = np.asarray(self.b_hat, dtype=float)
        if not (len(self.triples) == len(self.eta) == len(self.b_hat)):
            raise ValueError("triples, eta and b_hat must have equal length")
        self.parity_even = (self.triples.sum(axis=1) % 2) == 0
        if np.any(self.eta[~self.parity_even] != 0):
            raise ValueError("eta must vanish on odd-parity triples")

    @property
    def n_triples(self):
        return len(self.triples)

    @classmethod
    def from_coefficients(cls, alm_tilde, L, L0, model, even_only=False, normalization="gaunt"):
        t = triple_array(L, L0)
        if even_only:
            t = t[(t.sum(axis=1) % 2) == 0]
        b = BispectrumPlan(t).apply(alm_tilde)
        return cls(t, eta_weight(t, model, normalization), b)


def cum4_theory(l1, l2, l3):
    """Fourth cumulant of B for Gaussian input: 6 ({l1 l2 l3; l1 l2 l3} + sum 1/(2l_i+1))."""
    return 6 * (wigner6j(l1, l2, l3, l1, l2, l3) + 1 / (2 * l1 + 1) + 1 / (2 * l2 + 1) + 1 / (2 * l3 + 1))


def cum4_bound_12(l1, l2, l3):
    """The bound 12 / (2 l1 + 1) on the fourth cumulant, l1 the smallest multipole."""
    return 12.0 / (2 * min(l1, l2, l3) + 1)


def empirical_cum4_bhat(samples, triple=None):
    """Fourth cumulant of replicated samples of B with its jackknife SE.

    Returns ``(estimate, se, theory)``; ``theory`` is the Gaussian-input value
    of :func:`cum4_theory` when a triple is given, else None.
    """
    from .montecarlo import empirical_cumulants  # local: avoids an import cycle

    samples = np.asarray(samples, dtype=float)
    if samples.size < 1000:
        raise ValueError("at least 1000 replications are needed for a fourth cumulant")
    summ = empirical_cumulants(samples)
    theory = None
    if triple is not None:
        tt = triple.as_tuple() if isinstance(triple, MultipoleTriple) else tuple(triple)
        theory = cum4_theory(*tt)
    return summ.cum4, summ.cum4_se, theory


def reduced_bispectrum(triple, b_value):
    """b = B / (l1 l2 l3; 000); odd parity is rejected."""
    tt = triple.as_tuple() if isinstance(triple, MultipoleTriple) else tuple(triple)
    w0 = float(wigner3j_zero(*tt))
    if sum(tt) % 2 or w0 == 0.0:
        raise ValueError(f"reduced bispectrum undefined for {tt}: zero-order symbol vanishes")
    return b_value / w0
