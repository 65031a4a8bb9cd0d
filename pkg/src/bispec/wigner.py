"""
Wigner 3j and 6j symbols, Clebsch-Gordan coefficients and Gaunt integrals.

Scalar symbols are evaluated from the Racah single-sum formulas in exact
integer arithmetic and rounded once at the end, so they carry full double
precision at any multipole that fits in memory.  Bulk work (whole families of
symbols sharing l1, l2) goes through the three-term recursion in l3 of
Schulten and Gordon, vectorised over all (m1, m2) pairs at once.
"""

import math
import struct
import zlib
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

__all__ = [
    "triangle_ok",
    "selection",
    "wigner3j",
    "wigner3j_zero",
    "wigner3j_zero_asymptotic",
    "clebsch_gordan",
    "gaunt",
    "wigner6j",
    "wigner3j_jfamily",
    "wigner3j_block",
    "wigner3j_mmatrix",
    "ZeroTable",
    "precompute_zero_table",
    "save_zero_table",
    "load_zero_table",
    "delta_triangle",
]

DEFAULT_TABLE_BYTES = 512 * 2**20


def _check_ell(*ells):
    for ell in ells:
        if int(ell) != ell:
            raise ValueError(f"multipole must be an integer, got {ell}")
        if ell < 0:
            raise ValueError(f"multipole must be non-negative, got {ell}")


def _check_m(ell, m):
    if int(m) != m:
        raise ValueError(f"order must be an integer, got {m}")
    if abs(m) > ell:
        raise ValueError(f"|m| = {abs(m)} exceeds ell = {ell}")


def triangle_ok(l1, l2, l3):
    """True when |l1 - l2| <= l3 <= l1 + l2 (symmetric in its arguments)."""
    return abs(l1 - l2) <= l3 <= l1 + l2


def selection(l1, l2, l3, m1, m2, m3):
    """Selection-rule flags (triangle_ok, m_sum_zero, parity_even)."""
    return (triangle_ok(l1, l2, l3), m1 + m2 + m3 == 0, (l1 + l2 + l3) % 2 == 0)


def delta_triangle(x1, x2, x3):
    """Quartic triangle polynomial (x1+x2+x3)(x1+x2-x3)(x1-x2+x3)(-x1+x2+x3)."""
    return (x1 + x2 + x3) * (x1 + x2 - x3) * (x1 - x2 + x3) * (-x1 + x2 + x3)


@lru_cache(maxsize=4096)
def _fact(n):
    return math.factorial(n)


def _signed_sqrt(sign, value):
    """Return sign * sqrt(value) for a non-negative Fraction, correctly scaled.

    Works through integer square roots so that values far outside the double
    exponent range of value itself (but not of its root) are still exact.
    """
    if value == 0 or sign == 0:
        return 0.0
    p, q = value.numerator, value.denominator
    # scale so that the integer root carries ~64 significant bits
    shift = max(0, (q.bit_length() - p.bit_length()) // 2 + 64)
    root = math.isqrt((p << (2 * shift)) // q)
    return math.copysign(math.ldexp(float(root), -shift), sign)


def _delta_frac(a, b, c):
    return Fraction(_fact(a + b - c) * _fact(a - b + c) * _fact(-a + b + c), _fact(a + b + c + 1))


def wigner3j(l1, l2, l3, m1, m2, m3):
    """Wigner 3j symbol (l1 l2 l3; m1 m2 m3) for integer arguments.

    Exact Racah sum in rational arithmetic; zero whenever a selection rule
    fails.

    Examples
    --------
    >>> round(wigner3j(1, 1, 2, 0, 0, 0), 8)
    0.36514837
    """
    _check_ell(l1, l2, l3)
    for ell, m in ((l1, m1), (l2, m2), (l3, m3)):
        _check_m(ell, m)
    l1, l2, l3, m1, m2, m3 = (int(x) for x in (l1, l2, l3, m1, m2, m3))
    if m1 + m2 + m3 != 0 or not triangle_ok(l1, l2, l3):
        return 0.0
    if m1 == 0 and m2 == 0 and m3 == 0 and (l1 + l2 + l3) % 2:
        return 0.0

    kmin = max(0, l2 - l3 - m1, l1 - l3 + m2)
    kmax = min(l1 + l2 - l3, l1 - m1, l2 + m2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (_fact(k) * _fact(l3 - l2 + k + m1) * _fact(l3 - l1 + k - m2)
               * _fact(l1 + l2 - l3 - k) * _fact(l1 - k - m1) * _fact(l2 - k + m2))
        total += Fraction(-1 if k % 2 else 1, den)
    if total == 0:
        return 0.0
    prefac = _delta_frac(l1, l2, l3) * (
        _fact(l1 + m1) * _fact(l1 - m1) * _fact(l2 + m2) * _fact(l2 - m2)
        * _fact(l3 + m3) * _fact(l3 - m3))
    sign = (-1) ** ((l1 - l2 - m3) % 2) * (1 if total > 0 else -1)
    return _signed_sqrt(sign, prefac * total * total)


def _zero_log_magnitude(l1, l2, l3):
    J = l1 + l2 + l3
    g = J // 2
    return (0.5 * (gammaln(J - 2 * l1 + 1) + gammaln(J - 2 * l2 + 1)
                   + gammaln(J - 2 * l3 + 1) - gammaln(J + 2))
            + gammaln(g + 1) - gammaln(g - l1 + 1) - gammaln(g - l2 + 1) - gammaln(g - l3 + 1))


def wigner3j_zero(l1, l2, l3):
    """3j symbol with all orders zero, from the closed factorial form.

    Accepts scalars or broadcastable integer arrays.  Entries that break the
    triangle rule or have odd l1+l2+l3 are exactly zero.
    """
    l1, l2, l3 = (np.asarray(x, dtype=np.int64) for x in (l1, l2, l3))
    if np.any(l1 < 0) or np.any(l2 < 0) or np.any(l3 < 0):
        raise ValueError("multipoles must be non-negative")
    l1, l2, l3 = np.broadcast_arrays(l1, l2, l3)
    J = l1 + l2 + l3
    ok = (np.abs(l1 - l2) <= l3) & (l3 <= l1 + l2) & (J % 2 == 0)
    out = np.zeros(l1.shape)
    if np.any(ok):
        # sorted arguments make the result bit-symmetric under permutations
        a, b, c = np.sort(np.stack([l1[ok], l2[ok], l3[ok]]), axis=0)
        g = (a + b + c) // 2
        out[ok] = np.where(g % 2, -1.0, 1.0) * np.exp(_zero_log_magnitude(a, b, c))
    return out[()] if out.ndim == 0 else out


def wigner3j_zero_asymptotic(l1, l2, l3):
    """Large-multipole approximation (-1)^(J/2) sqrt(2/pi) Delta^(-1/4).

    Defined only for even J = l1+l2+l3 and strict triangles (Delta > 0).
    """
    _check_ell(l1, l2, l3)
    J = l1 + l2 + l3
    if J % 2:
        raise ValueError(f"odd l1+l2+l3 = {J}: the zero-order symbol vanishes")
    d = delta_triangle(float(l1), float(l2), float(l3))
    if d <= 0:
        raise ValueError(f"degenerate triangle ({l1},{l2},{l3}): Delta = 0")
    sign = -1.0 if (J // 2) % 2 else 1.0
    return sign * math.sqrt(2.0 / math.pi) * d ** -0.25


def clebsch_gordan(l1, m1, l2, m2, l, m):
    """Clebsch-Gordan coefficient C^{l m}_{l1 m1; l2 m2}."""
    sign = -1.0 if (l1 - l2 + m) % 2 else 1.0
    return sign * math.sqrt(2 * l + 1) * wigner3j(l1, l2, l, m1, m2, -m)


def gaunt(l1, m1, l2, m2, l, m):
    """Integral of Y_{l1 m1} Y_{l2 m2} conj(Y_{l m}) over the unit sphere."""
    _check_ell(l1, l2, l)
    for ell, mm in ((l1, m1), (l2, m2), (l, m)):
        _check_m(ell, mm)
    if m1 + m2 != m:
        return 0.0
    w0 = float(wigner3j_zero(l1, l2, l))
    if w0 == 0.0:
        return 0.0
    sign = -1.0 if m % 2 else 1.0
    pref = math.sqrt((2 * l1 + 1) * (2 * l2 + 1) * (2 * l + 1) / (4 * math.pi))
    return sign * pref * wigner3j(l1, l2, l, m1, m2, -m) * w0


def wigner6j(j1, j2, j3, j4, j5, j6):
    """Wigner 6j symbol {j1 j2 j3; j4 j5 j6}, exact Racah sum.

    >>> wigner6j(1, 1, 1, 1, 1, 1)
    0.16666666666666666
    """
    _check_ell(j1, j2, j3, j4, j5, j6)
    j1, j2, j3, j4, j5, j6 = (int(x) for x in (j1, j2, j3, j4, j5, j6))
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    for a, b, c in triads:
        if not triangle_ok(a, b, c):
            return 0.0
    a_s = [sum(t) for t in triads]
    b_s = [j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4]
    tmin, tmax = max(a_s), min(b_s)
    total = 0
    common = 1
    terms = []
    for t in range(tmin, tmax + 1):
        den = 1
        for a in a_s:
            den *= _fact(t - a)
        for b in b_s:
            den *= _fact(b - t)
        terms.append((t, den))
        common = common * den // math.gcd(common, den)
    for t, den in terms:
        term = _fact(t + 1) * (common // den)
        total += -term if t % 2 else term
    if total == 0:
        return 0.0
    pref = Fraction(1)
    for a, b, c in triads:
        pref *= _delta_frac(a, b, c)
    value2 = pref * Fraction(total * total, common * common)
    return _signed_sqrt(1 if total > 0 else -1, value2)


# --------------------------------------------------------------------------
# bulk recursion in l3
# --------------------------------------------------------------------------

def wigner3j_jfamily(l1, l2, m1, m2):
    """All symbols (l1 l2 j; m1 m2 -m1-m2) for |l1-l2| <= j <= l1+l2.

    Parameters
    ----------
    l1, l2 : int
    m1, m2 : int or array_like
        Broadcast against each other; every pair gives one family.

    Returns
    -------
    jlo : int
        Smallest j, equal to |l1 - l2|.
    values : ndarray, shape broadcast(m1, m2).shape + (l1 + l2 - jlo + 1,)
        Entry [..., j - jlo].  Zero below |m1 + m2| and for invalid orders.

    Notes
    -----
    Forward recursion runs from the lowest admissible j up to the first local
    maximum of |f|, backward recursion from l1+l2 down to that point, and the
    two pieces are matched by least squares on a three-point window.  The
    result is normalised by sum_j (2j+1) f_j^2 = 1 and the sign is fixed at
    j = l1+l2 by (-1)^(l1-l2-m3).
    """
    _check_ell(l1, l2)
    l1, l2 = int(l1), int(l2)
    m1, m2 = np.broadcast_arrays(np.asarray(m1, dtype=np.int64), np.asarray(m2, dtype=np.int64))
    shape = m1.shape
    m1 = m1.ravel().astype(float)
    m2 = m2.ravel().astype(float)
    m3 = -(m1 + m2)
    jlo, jhi = abs(l1 - l2), l1 + l2
    n = jhi - jlo + 1
    K = m1.size

    valid = (np.abs(m1) <= l1) & (np.abs(m2) <= l2) & (np.abs(m3) <= jhi)
    start = np.maximum(jlo, np.abs(m3)).astype(np.int64) - jlo
    start[~valid] = n  # nothing to compute

    js = np.arange(jlo, jhi + 2, dtype=float)
    jj = js[None, :]
    a2 = ((jj**2 - (l1 - l2) ** 2) * ((l1 + l2 + 1) ** 2 - jj**2) * (jj**2 - m3[:, None] ** 2))
    A = np.sqrt(np.clip(a2, 0.0, None))  # index i <-> j = jlo + i, length n + 1
    jn = js[None, :n]
    B = (2 * jn + 1) * (-m3[:, None] * (l1 * (l1 + 1) - l2 * (l2 + 1))
                        - (m1 - m2)[:, None] * jn * (jn + 1))
    X = jn * A[:, 1:]
    Y = B
    Z = (jn + 1) * A[:, :n]

    rows = np.arange(K)
    F = np.zeros((K, n))
    has = start < n
    F[rows[has], start[has]] = 1.0
    top = np.full(K, n - 1)
    active = has.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(1, n):
            step = active & (i > start)
            if not step.any():
                if not active.any():
                    break
                continue
            k = rows[step]
            prev2 = F[k, i - 2] if i >= 2 else 0.0
            x = X[k, i - 1]
            new = -(Y[k, i - 1] * F[k, i - 1] + Z[k, i - 1] * prev2) / x
            # l1 == l2 and m3 == 0: the family starts at j = 0, where the
            # recursion degenerates; use f(1)/f(0) = m1 / sqrt(l1 (l1 + 1)).
            zero_start = (i == 1) & (jlo == 0) & (start[k] == 0)
            if zero_start.any() and l1 > 0:
                new = np.where(zero_start, m1[k] / math.sqrt(l1 * (l1 + 1)) * F[k, 0], new)
            F[k, i] = new
            stop = np.abs(new) < np.abs(F[k, i - 1])
            top[k[stop]] = i - 1
            active[k[stop]] = False
            big = np.abs(new) > 1e250
            if big.any():
                kb = k[big]
                F[kb, : i + 1] *= 1e-250

        G = np.zeros((K, n))
        G[rows[has], n - 1] = 1.0
        low = np.maximum(top - 1, start)
        for i in range(n - 2, -1, -1):
            step = has & (i >= low)
            if not step.any():
                break
            k = rows[step]
            nxt2 = G[k, i + 2] if i + 2 < n else 0.0
            G[k, i] = -(Y[k, i + 1] * G[k, i + 1] + X[k, i + 1] * nxt2) / Z[k, i + 1]
            big = np.abs(G[k, i]) > 1e250
            if big.any():
                kb = k[big]
                G[kb, i:] *= 1e-250

    # match on the window top-1 .. top+1, clipped to the computed range
    num = np.zeros(K)
    den = np.zeros(K)
    for off in (-1, 0, 1):
        idx = top + off
        ok = has & (idx >= start) & (idx <= n - 1) & (idx <= top + 1)
        if off == 1:
            ok &= top + 1 <= n - 1
        k = rows[ok]
        num[k] += F[k, idx[ok]] * G[k, idx[ok]]
        den[k] += G[k, idx[ok]] ** 2
    scale = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    col = np.arange(n)[None, :]
    f = np.where(col <= top[:, None], F, scale[:, None] * G)
    f[col < start[:, None]] = 0.0
    f[~has] = 0.0

    norm = np.sum((2 * (jlo + np.arange(n)) + 1)[None, :] * f * f, axis=1)
    sign_top = np.where(((l1 - l2) - m3).astype(np.int64) % 2 == 1, -1.0, 1.0)
    fac = np.zeros(K)
    good = has & (norm > 0)
    fac[good] = sign_top[good] * np.sign(f[good, n - 1]) / np.sqrt(norm[good])
    f *= fac[:, None]
    return jlo, f.reshape(shape + (n,))


def wigner3j_block(l1, l2):
    """All symbols with fixed (l1, l2).

    Returns ``(jlo, W)`` with W[m1 + l1, m2 + l2, j - jlo] equal to
    (l1 l2 j; m1 m2 -m1-m2).
    """
    m1 = np.arange(-l1, l1 + 1)[:, None]
    m2 = np.arange(-l2, l2 + 1)[None, :]
    return wigner3j_jfamily(l1, l2, m1, m2)


def wigner3j_mmatrix(l1, l2, l3):
    """Matrix W[m1 + l1, m2 + l2] = (l1 l2 l3; m1 m2 -m1-m2)."""
    if not triangle_ok(l1, l2, l3):
        return np.zeros((2 * l1 + 1, 2 * l2 + 1))
    jlo, W = wigner3j_block(l1, l2)
    return np.ascontiguousarray(W[:, :, l3 - jlo])


# --------------------------------------------------------------------------
# dense zero-order table and its binary cache
# --------------------------------------------------------------------------

class ZeroTable:
    """Dense table of (l1 l2 l3; 0 0 0) for 0 <= l_i <= L.

    Every triangle is stored, ordered or not; odd-parity and non-triangle
    entries hold exact zeros.  Index with ``table[l1, l2, l3]``.
    """

    def __init__(self, L, values):
        self.L = int(L)
        self.values = values
        self.values.setflags(write=False)

    def __getitem__(self, key):
        return self.values[key]

    def ordered_even(self):
        """Triples l1 <= l2 <= l3 with even parity and a triangle, lexicographic."""
        l = np.arange(self.L + 1)
        a, b, c = np.meshgrid(l, l, l, indexing="ij")
        mask = (a <= b) & (b <= c) & (c <= a + b) & ((a + b + c) % 2 == 0)
        return np.stack([a[mask], b[mask], c[mask]], axis=1)

    def __eq__(self, other):
        return isinstance(other, ZeroTable) and self.L == other.L and np.array_equal(self.values, other.values)


def precompute_zero_table(L, max_bytes=DEFAULT_TABLE_BYTES):
    """Build the dense zero-order table up to L (inclusive)."""
    _check_ell(L)
    if L < 2:
        raise ValueError("table bound L must be at least 2")
    nbytes = 8 * (L + 1) ** 3
    if nbytes > max_bytes:
        raise MemoryError(f"zero-order table for L={L} needs {nbytes} bytes, cap is {max_bytes}")
    l = np.arange(L + 1)
    values = wigner3j_zero(l[:, None, None], l[None, :, None], l[None, None, :])
    return ZeroTable(L, np.ascontiguousarray(values, dtype=float))


_TABLE_MAGIC = b"BSPW3J0\x00"
_TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<8sIIQI")


def save_zero_table(table, path):
    """Write the table as little-endian binary (header + ordered even triples)."""
    trip = table.ordered_even()
    payload = np.ascontiguousarray(table.values[trip[:, 0], trip[:, 1], trip[:, 2]], dtype="<f8").tobytes()
    header = _TABLE_HEADER.pack(_TABLE_MAGIC, _TABLE_VERSION, table.L, len(trip), zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_zero_table(path):
    """Read a table written by :func:`save_zero_table`, verifying the header."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _TABLE_HEADER.size:
        raise ValueError("truncated table file")
    magic, version, L, count, crc = _TABLE_HEADER.unpack_from(raw)
    if magic != _TABLE_MAGIC:
        raise ValueError("not a zero-order 3j table file")
    if version != _TABLE_VERSION:
        raise ValueError(f"unsupported table version {version}")
    payload = raw[_TABLE_HEADER.size:]
    if len(payload) != 8 * count:
        raise ValueError("table payload length does not match header count")
    if zlib.crc32(payload) != crc:
        raise ValueError("table checksum mismatch")
    vals = np.frombuffer(payload, dtype="<f8").astype(float)
    table = np.zeros((L + 1,) * 3)
    skel = ZeroTable(L, np.zeros((1,)))
    trip = skel.ordered_even()
    if len(trip) != count:
        raise ValueError("table count inconsistent with L")
    a, b, c = trip.T
    for p, q, s in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
        table[p, q, s] = vals
    return ZeroTable(L, table)
