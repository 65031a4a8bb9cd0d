"""
Gaussian fields on the sphere and their quadratic perturbation.

Coefficients are held as complex arrays ``alm[..., l, m]`` for m >= 0; the
negative orders follow from a_{l,-m} = (-1)^m conj(a_{l,m}).  Leading axes,
if any, index independent replications.

Transforms use a Gauss-Legendre grid in colatitude and a uniform grid in
longitude.  The Legendre part is a batched matrix product per order m and the
longitude part a real FFT, so synthesis/analysis of a band-Lambda field costs
O(Lambda^3) per map.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectrum import c_gaussian, field_variance
from .wigner import wigner3j_block, wigner3j_zero

__all__ = [
    "HarmonicCoefficientSet",
    "SphereGrid",
    "RngStream",
    "legendre_table",
    "synthesize",
    "analyze",
    "sample_gaussian_alm",
    "gaussian_alm_batch",
    "alm_two_pixel",
    "alm_two_harmonic",
    "perturb_and_normalize",
    "full_orders",
]

HARMONIC_BAND_CAP = 16


@dataclass
class HarmonicCoefficientSet:
    """Complex coefficients a_{l m}, m >= 0, for 1 <= l <= band_limit.

    ``alm`` has shape (..., band+1, band+1); entries with m > l and the l = 0
    row are zero.
    """

    alm: np.ndarray

    def __post_init__(self):
        self.alm = np.asarray(self.alm, dtype=complex)
        if self.alm.ndim < 2 or self.alm.shape[-1] != self.alm.shape[-2]:
            raise ValueError("alm must have trailing shape (band+1, band+1)")

    @property
    def band_limit(self):
        return self.alm.shape[-1] - 1

    @property
    def batch_shape(self):
        return self.alm.shape[:-2]

    def get(self, ell, m):
        if abs(m) > ell or ell > self.band_limit:
            raise IndexError(f"(l={ell}, m={m}) outside the set")
        if m >= 0:
            return self.alm[..., ell, m]
        return (-1) ** (m % 2) * np.conj(self.alm[..., ell, -m])

    def full(self, ell):
        """Orders m = -l..l of multipole l, shape (..., 2l+1)."""
        return full_orders(self.alm, ell)

    def truncate(self, band):
        if band > self.band_limit:
            raise ValueError("cannot truncate to a larger band")
        return HarmonicCoefficientSet(self.alm[..., : band + 1, : band + 1].copy())

    def __getitem__(self, idx):
        return HarmonicCoefficientSet(self.alm[idx])


def full_orders(alm, ell):
    pos = alm[..., ell, : ell + 1]
    sign = np.where(np.arange(1, ell + 1) % 2, -1.0, 1.0)
    neg = (np.conj(pos[..., 1:]) * sign)[..., ::-1]
    return np.concatenate([neg, pos], axis=-1)


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre colatitudes times uniform longitudes."""

    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("grid sizes must be positive")

    @classmethod
    def for_band(cls, band):
        """Smallest grid that analyses band-limited inputs exactly."""
        return cls(band + 1, 2 * band + 1)

    @classmethod
    def for_squared(cls, band):
        """Grid exact for the square of a band-limited field, (2B+2) x (4B+1)."""
        return cls(2 * band + 2, 4 * band + 1)

    @property
    def capacity(self):
        """Largest band whose synthesis/analysis round trip is exact."""
        return min(self.n_theta - 1, (self.n_phi - 1) // 2)

    @property
    def nodes(self):
        return _gl_nodes(self.n_theta)

    @property
    def x(self):
        return self.nodes[0]

    @property
    def theta(self):
        return np.arccos(self.nodes[0])

    @property
    def weights(self):
        return self.nodes[1]

    @property
    def phi(self):
        return 2 * np.pi * np.arange(self.n_phi) / self.n_phi

    def integrate(self, values):
        """Quadrature of grid values over the sphere (trailing two axes)."""
        w = self.weights[:, None] * (2 * np.pi / self.n_phi)
        return np.sum(values * w, axis=(-2, -1))


@lru_cache(maxsize=16)
def _gl_nodes(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=16)
def _legendre_cached(lmax, n_theta):
    x = _gl_nodes(n_theta)[0]
    lam = legendre_table(lmax, x)
    lam.setflags(write=False)
    return lam


def legendre_table(lmax, x):
    """Normalised associated Legendre functions lambda_{l m}(x), m >= 0.

    Y_{lm}(theta, phi) = lambda_{lm}(cos theta) e^{i m phi}, Condon-Shortley
    phase included.  Returns shape (len(x), lmax+1, lmax+1) indexed
    [k, l, m], zero for m > l.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1 - x * x, 0.0, None))
    lam = np.zeros((x.size, lmax + 1, lmax + 1))
    lam[:, 0, 0] = 1 / math.sqrt(4 * math.pi)
    for m in range(1, lmax + 1):
        lam[:, m, m] = -math.sqrt((2 * m + 1) / (2 * m)) * s * lam[:, m - 1, m - 1]
    for m in range(lmax):
        lam[:, m + 1, m] = math.sqrt(2 * m + 3) * x * lam[:, m, m]
    for ell in range(2, lmax + 1):
        m = np.arange(ell - 1)
        a = np.sqrt((4.0 * ell**2 - 1) / (ell**2 - m**2))
        b = np.sqrt(((ell - 1.0) ** 2 - m**2) / (4.0 * (ell - 1) ** 2 - 1))
        lam[:, ell, : ell - 1] = a * (x[:, None] * lam[:, ell - 1, : ell - 1] - b * lam[:, ell - 2, : ell - 1])
    return lam


def synthesize(alms, grid):
    """Field values on the grid, shape (..., n_theta, n_phi)."""
    alm = alms.alm if isinstance(alms, HarmonicCoefficientSet) else np.asarray(alms, dtype=complex)
    band = alm.shape[-1] - 1
    if band > grid.capacity:
        raise ValueError(f"grid {grid.n_theta}x{grid.n_phi} too small for band {band}")
    lam = _legendre_cached(band, grid.n_theta)           # (k, l, m)
    batch = alm.shape[:-2]
    a = alm.reshape((-1,) + alm.shape[-2:])              # (b, l, m)
    # per order m: (k, l) @ (l, b)
    fm = np.matmul(lam.transpose(2, 0, 1), a.transpose(2, 1, 0))   # (m, k, b)
    spec = np.zeros((a.shape[0], grid.n_theta, grid.n_phi // 2 + 1), dtype=complex)
    spec[:, :, : band + 1] = fm.transpose(2, 1, 0)
    vals = np.fft.irfft(spec, n=grid.n_phi, axis=-1) * grid.n_phi
    return vals.reshape(batch + (grid.n_theta, grid.n_phi))


def analyze(values, grid, band, keep_monopole=False):
    """Quadrature of values against conj(Y_lm) for l <= band.

    The monopole is dropped unless ``keep_monopole`` is set, matching the
    centred-field convention of :class:`HarmonicCoefficientSet`.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] != (grid.n_theta, grid.n_phi):
        raise ValueError("values do not match the grid shape")
    if band > grid.capacity:
        raise ValueError(f"band {band} exceeds grid capacity {grid.capacity}")
    batch = values.shape[:-2]
    v = values.reshape((-1, grid.n_theta, grid.n_phi))
    g = np.fft.rfft(v, axis=-1)[:, :, : band + 1] * (2 * np.pi / grid.n_phi)   # (b, k, m)
    g = g * grid.weights[None, :, None]
    lam = _legendre_cached(band, grid.n_theta)
    # per order m: (l, k) @ (k, b)
    am = np.matmul(lam.transpose(2, 1, 0), g.transpose(2, 1, 0))   # (m, l, b)
    alm = am.transpose(2, 1, 0)
    alm = np.where(np.tri(band + 1, dtype=bool), alm, 0)
    if not keep_monopole:
        alm[:, 0, 0] = 0
    return HarmonicCoefficientSet(alm.reshape(batch + (band + 1, band + 1)))


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Backed by Philox; distinct stream ids give independent streams, and the
    same pair always reproduces the same draws.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or self.stream_id < 0:
            raise ValueError("seed must be a 64-bit unsigned integer and stream_id >= 0")

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def sample_gaussian_alm(model, band_limit, rng):
    """Draw a_{l m; G} for 1 <= l <= band_limit.

    m = 0 entries are real N(0, C_{l;G}); m > 0 entries have independent real
    and imaginary parts N(0, C_{l;G}/2).
    """
    if band_limit < 1:
        raise ValueError("band_limit must be at least 1")
    gen = _as_generator(rng)
    z = gen.standard_normal((band_limit + 1, band_limit + 1, 2))
    ell = np.arange(band_limit + 1)
    sd = np.sqrt(c_gaussian(ell, model))
    alm = (z[..., 0] + 1j * z[..., 1]) * (sd[:, None] / math.sqrt(2))
    alm[:, 0] = z[:, 0, 0] * sd
    mask = np.tri(band_limit + 1, dtype=bool)
    mask[0, 0] = False
    return HarmonicCoefficientSet(np.where(mask, alm, 0))


def gaussian_alm_batch(model, band_limit, seed, stream_ids):
    """Stack of independent draws, one per stream id."""
    return HarmonicCoefficientSet(np.stack([
        sample_gaussian_alm(model, band_limit, RngStream(seed, int(s))).alm for s in stream_ids]))


def alm_two_pixel(gaussian_alms, model, lmax_out=None, grid=None):
    """Coefficients of H_2(T_G) = T_G^2 - E[T_G^2] through the pixel grid.

    The subtracted constant is the variance of the band-limited field.
    Returns a set of band ``lmax_out`` (default twice the input band).
    """
    band = gaussian_alms.band_limit
    lmax_out = 2 * band if lmax_out is None else lmax_out
    grid = SphereGrid.for_squared(band) if grid is None else grid
    # T^2 conj(Y_lm) has degree 2*band + lmax_out in cos(theta) and in phi
    if 2 * grid.n_theta - 1 < 2 * band + lmax_out or grid.n_phi < 2 * band + lmax_out + 1:
        raise ValueError("grid too small for the squared field")
    t = synthesize(gaussian_alms, grid)
    h2 = t * t - field_variance(model, band)
    return analyze(h2, grid, lmax_out)


def alm_two_harmonic(gaussian_alms, lmax_out=None, max_band=HARMONIC_BAND_CAP):
    """Same object as :func:`alm_two_pixel`, by the direct Gaunt double sum.

    a_{l m;2} = sum a_{l1 m1} a_{l2 m2} G(l1 m1; l2 m2; l m).  Cost grows like
    band^5, so it refuses bands above ``max_band``.
    """
    band = gaussian_alms.band_limit
    if band > max_band:
        raise ValueError(f"harmonic route limited to band <= {max_band}, got {band}")
    lmax_out = 2 * band if lmax_out is None else lmax_out
    alm = gaussian_alms.alm
    batch = alm.shape[:-2]
    a = alm.reshape((-1,) + alm.shape[-2:])
    out = np.zeros((a.shape[0], lmax_out + 1, lmax_out + 1), dtype=complex)
    for l1 in range(1, band + 1):
        f1 = full_orders(a, l1)
        for l2 in range(1, band + 1):
            f2 = full_orders(a, l2)
            prod = f1[:, :, None] * f2[:, None, :]
            jlo, W = wigner3j_block(l1, l2)
            msum = np.arange(-l1, l1 + 1)[:, None] + np.arange(-l2, l2 + 1)[None, :]
            for ell in range(max(jlo, 1), min(l1 + l2, lmax_out) + 1):
                if (l1 + l2 + ell) % 2:
                    continue
                pref = math.sqrt((2 * l1 + 1) * (2 * l2 + 1) * (2 * ell + 1) / (4 * math.pi))
                coef = pref * float(wigner3j_zero(l1, l2, ell)) * W[:, :, ell - jlo]
                for m in range(0, ell + 1):
                    sel = msum == m
                    if not sel.any():
                        continue
                    g = (-1) ** (m % 2) * coef[sel]
                    out[:, ell, m] += prod[:, sel] @ g
    return HarmonicCoefficientSet(out.reshape(batch + out.shape[-2:]))


def perturb_and_normalize(gaussian_alms, alm2, model, lmax):
    """Normalised perturbed coefficients (a_G + f_NL a_2) / sqrt(C_{l;G}), l <= lmax."""
    if gaussian_alms.band_limit < lmax or (model.f_nl != 0 and alm2 is None):
        raise ValueError("input bands do not cover the analysis band")
    a = gaussian_alms.alm[..., : lmax + 1, : lmax + 1]
    if model.f_nl != 0:
        if alm2.band_limit < lmax:
            raise ValueError("second-order coefficients do not cover the analysis band")
        a = a + model.f_nl * alm2.alm[..., : lmax + 1, : lmax + 1]
    ell = np.arange(lmax + 1)
    scale = np.zeros(lmax + 1)
    scale[1:] = 1 / np.sqrt(c_gaussian(ell[1:], model))
    return HarmonicCoefficientSet(a * scale[:, None])
