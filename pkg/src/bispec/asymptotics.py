"""
Shape integrals over narrow-band triangles and the asymptotic constants of
the estimator.

D_r(a, b, c, d) integrates x1^a x2^b x3^c Delta(x1, x2, x3)^(-d) over

    A_r = {r <= x1 < x2 < x3 <= 1, x3 <= x1 + x2}.

Scaling x = t (u, v, 1) turns it into a 2-D integral over
Omega_r = {r < u < 1, max(u, 1 - u) < v < 1} of u^a v^b Q(u, v)^(-d) K_lambda(u),
with Q(u, v) = Delta(u, v, 1), lambda = a + b + c - 4d + 3 and
K_lambda(u) = (1 - (r/u)^lambda) / lambda (K_0 = log(u / r)).

Q vanishes linearly on the edge u + v = 1.  Writing v = 1 - u + s,
Q = s (s + 2)(2u - s)(s + 2 - 2u), so the only singular factor is s^(-d).
For d < 1 the substitution s = t^(1/(1-d)) absorbs it exactly; for d >= 1 the
integral is computed with s >= eps for a geometric sequence of eps, and the
sequence is either extrapolated or flagged as divergent.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .wigner import delta_triangle

__all__ = [
    "QuadResult",
    "AsymptoticReport",
    "delta",
    "q_shape",
    "k_lambda",
    "d_r_reduced",
    "d_r_bruteforce",
    "cardinality_volume",
    "asymptotic_report",
]

EPSABS = 1e-13
EPSREL = 1e-11
EPS_SEQUENCE = tuple(2.0 ** -k for k in range(6, 19, 2))


def delta(x1, x2, x3):
    """(x1+x2+x3)(x1+x2-x3)(x1-x2+x3)(-x1+x2+x3), homogeneous of degree 4."""
    return delta_triangle(x1, x2, x3)


def q_shape(u, v):
    """Q(u, v) = Delta(u, v, 1)."""
    return delta_triangle(u, v, 1.0)


def k_lambda(u, lam, r):
    """(1 - (r/u)^lam) / lam, continuous at lam = 0 where it is log(u / r)."""
    x = math.log(r / u)
    if abs(lam) < 1e-12:
        return -x
    return -math.expm1(lam * x) / lam


@dataclass
class QuadResult:
    """Quadrature value with an error estimate and a divergence verdict.

    For edge-singular integrands ``eps_study`` holds (eps, value) pairs of the
    excluded-band sequence.
    """

    value: float
    error: float
    diverged: bool = False
    method: str = "substitution"
    eps_study: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _quad(f, a, b, **kw):
    val, err = integrate.quad(f, a, b, epsabs=kw.get("epsabs", EPSABS),
                              epsrel=kw.get("epsrel", EPSREL), limit=kw.get("limit", 200))
    return val, err


def _reduced_fixed(a, b, c, d, r, eps=0.0):
    """Omega_r integral with the edge band s < eps removed (eps=0: none)."""
    lam = a + b + c - 4 * d + 3
    p = None if d >= 1 else 1.0 / (1.0 - d)
    errs = []

    def regular(u, s):
        v = 1.0 - u + s
        rest = (s + 2) * (2 * u - s) * (s + 2 - 2 * u)
        return u**a * v**b * rest ** (-d)

    def inner(u):
        lo, hi = max(0.0, 2 * u - 1, eps), u
        if hi <= lo:
            return 0.0
        if p is not None:
            # s = t^p, s^-d ds = p dt
            g = lambda t: regular(u, t**p)
            val, err = _quad(g, lo ** (1 / p), hi ** (1 / p))
            val, err = p * val, p * err
        else:
            g = lambda s: s ** (-d) * regular(u, s)
            val, err = _quad(g, lo, hi)
        errs.append(err)
        return val * k_lambda(u, lam, r)

    total, outer_err = 0.0, 0.0
    for lo, hi in ((r, 0.5), (0.5, 1.0)):
        if hi <= lo:
            continue
        lo = max(lo, r)
        val, err = _quad(inner, lo, hi, epsrel=EPSREL * 10)
        total += val
        outer_err += err
    return total, outer_err + (max(errs) if errs else 0.0)


def _eps_study(fn):
    """Run fn(eps) along EPS_SEQUENCE; extrapolate or flag divergence.

    Successive increments shrinking geometrically (ratio < 0.75 on the last
    three steps) are summed as a geometric tail (Aitken); otherwise the
    sequence is reported as divergent and the last value returned.
    """
    study = []
    for eps in EPS_SEQUENCE:
        v, e = fn(eps)
        study.append((eps, v))
    vals = np.array([v for _, v in study])
    inc = np.diff(vals)
    ratios = np.abs(inc[1:]) / np.where(inc[:-1] != 0, np.abs(inc[:-1]), np.inf)
    if np.all(inc == 0):
        return QuadResult(float(vals[-1]), 0.0, False, "eps-study", study)
    if np.all(ratios[-3:] < 0.75):
        q = inc[-1] / inc[-2]
        limit = vals[-1] + inc[-1] * q / (1 - q)
        return QuadResult(float(limit), float(abs(limit - vals[-1])), False, "eps-study", study)
    return QuadResult(float(vals[-1]), float(abs(inc[-1])), True, "eps-study", study)


def d_r_reduced(a, b, c, d, r):
    """Reduced 2-D form of D_r(a, b, c, d).

    Returns a :class:`QuadResult`.  Singular cases (d >= 1) never raise; they
    set ``diverged`` when the excluded-band sequence grows without bound.
    """
    if not 0 < r < 0.5:
        raise ValueError(f"r must lie in (0, 1/2), got {r}")
    if d < 1:
        v, e = _reduced_fixed(a, b, c, d, r)
        return QuadResult(v, e, False, "substitution" if d > 0 else "direct")
    return _eps_study(lambda eps: _reduced_fixed(a, b, c, d, r, eps))


def _brute_fixed(a, b, c, d, r, eps=0.0):
    # x3 outer, x2 middle, s = x1 + x2 - x3 inner (s >= eps)
    p = None if d >= 1 else 1.0 / (1.0 - d)

    def regular(x1, x2, x3):
        rest = (x1 + x2 + x3) * (x1 - x2 + x3) * (-x1 + x2 + x3)
        return x1**a * x2**b * x3**c * rest ** (-d)

    def inner(x2, x3):
        lo = max(0.0, r + x2 - x3, eps)
        hi = 2 * x2 - x3
        if hi <= lo:
            return 0.0
        if p is not None:
            g = lambda t: regular(t**p + x3 - x2, x2, x3)
            return p * _quad(g, lo ** (1 / p), hi ** (1 / p), epsabs=1e-11, epsrel=1e-9)[0]
        g = lambda s: s ** (-d) * regular(s + x3 - x2, x2, x3)
        return _quad(g, lo, hi, epsabs=1e-11, epsrel=1e-9)[0]

    def middle(x3):
        lo = max(r, x3 / 2)
        if x3 <= lo:
            return 0.0
        return _quad(lambda x2: inner(x2, x3), lo, x3, epsabs=1e-10, epsrel=1e-8)[0]

    val, err = _quad(middle, r, 1.0, epsabs=1e-9, epsrel=1e-7)
    return val, err


def d_r_bruteforce(a, b, c, d, r):
    """Direct 3-D quadrature of D_r over A_r (oracle for :func:`d_r_reduced`)."""
    if not 0 < r < 0.5:
        raise ValueError(f"r must lie in (0, 1/2), got {r}")
    if d < 1:
        v, e = _brute_fixed(a, b, c, d, r)
        return QuadResult(v, e, False, "bruteforce")
    return _eps_study(lambda eps: _brute_fixed(a, b, c, d, r, eps))


def cardinality_volume(r):
    """Volume of A_r, 1/12 - r^2/2 + r^3/2 (count of triples / L^3 as L grows)."""
    return 1 / 12 - r**2 / 2 + r**3 / 2


@dataclass
class AsymptoticReport:
    alpha: float
    r: float
    amplitude: float
    i_eta2: float
    i_kappa: float
    i_kappa_diverged: bool
    sigma2_fnl: float
    k_fnl: float
    c_tv: float
    c_eta2: float
    c_kappa: float
    quadrature_error: dict

    def to_dict(self):
        return asdict(self)


def asymptotic_report(alpha, r, amplitude=1.0):
    """Limits of the estimator variance, fourth cumulant and TV constant.

    I_eta2 = D_r(1-a, 1-a, 1+a, 1/2), I_kappa = D_r(1-2a, 2(1-a), 2(1+a), 1),
    C_eta2 = A / pi^4, C_kappa = 6 A^2 / pi^8.
    """
    if not alpha > 4:
        raise ValueError(f"alpha must exceed 4, got {alpha}")
    if not 0 < r < 0.5:
        raise ValueError(f"r must lie in (0, 1/2), got {r}")
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    ie = d_r_reduced(1 - alpha, 1 - alpha, 1 + alpha, 0.5, r)
    ik = d_r_reduced(1 - 2 * alpha, 2 * (1 - alpha), 2 * (1 + alpha), 1.0, r)
    c_eta = amplitude / math.pi**4
    c_kap = 6 * amplitude**2 / math.pi**8
    return AsymptoticReport(
        alpha=alpha, r=r, amplitude=amplitude,
        i_eta2=ie.value, i_kappa=ik.value, i_kappa_diverged=ik.diverged,
        sigma2_fnl=1 / (c_eta * ie.value),
        k_fnl=c_kap * ik.value / (c_eta**4 * ie.value**4),
        c_tv=4 / math.sqrt(3) * math.sqrt(ik.value) / ie.value,
        c_eta2=c_eta, c_kappa=c_kap,
        quadrature_error={"i_eta2": ie.error, "i_kappa": ik.error},
    )
