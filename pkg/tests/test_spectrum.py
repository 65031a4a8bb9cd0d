import math
import warnings

import numpy as np
import pytest
from sympy.physics.wigner import wigner_3j as sym3j

from bispec.spectrum import (PowerSpectrumModel, TruncationWarning, c_gaussian, c_total, c_two, c_two_cg,
                             c_two_tail_bound, field_variance)
from bispec.sphere import alm_two_pixel, gaussian_alm_batch


def test_model_validation():
    with pytest.raises(ValueError):
        PowerSpectrumModel(amplitude=0.0)
    with pytest.raises(ValueError):
        PowerSpectrumModel(alpha=2.0)
    with pytest.raises(ValueError):
        PowerSpectrumModel(band_limit=0)


def test_c_gaussian_examples():
    assert c_gaussian(1, PowerSpectrumModel(1, 3)) == 1 / 8
    assert c_gaussian(0, PowerSpectrumModel(2, 4)) == 2
    v = c_gaussian(np.arange(50), PowerSpectrumModel(1.3, 2.5))
    assert np.all(np.diff(v) < 0)
    with pytest.raises(ValueError):
        c_gaussian(-1, PowerSpectrumModel())


def _c_two_sympy(ell, A, alpha, band):
    # independent oracle: exact 3j from sympy
    s = 0.0
    for l1 in range(1, band + 1):
        for l2 in range(1, band + 1):
            if (l1 + l2 + ell) % 2 or not abs(l1 - l2) <= ell <= l1 + l2:
                continue
            z = float(sym3j(l1, l2, ell, 0, 0, 0))
            s += (2 * l1 + 1) * (2 * l2 + 1) * z * z * A * (1 + l1) ** -alpha * A * (1 + l2) ** -alpha
    return 2 * s / (4 * math.pi)


def test_c_two_against_sympy_oracle():
    m = PowerSpectrumModel(1.0, 3.0, band_limit=12)
    for ell in (1, 2, 5, 11):
        assert c_two(ell, m, warn=False) == pytest.approx(_c_two_sympy(ell, 1.0, 3.0, 12), rel=1e-12)


def test_c_two_dual_form_example():
    m = PowerSpectrumModel(1.0, 3.0, band_limit=30)
    assert c_two_cg(2, m) == pytest.approx(c_two(2, m, warn=False), rel=1e-10, abs=0)


def test_c_two_truncation_bound_holds():
    lo = PowerSpectrumModel(1.0, 3.0, band_limit=30)
    hi = PowerSpectrumModel(1.0, 3.0, band_limit=60)
    for ell in (2, 5, 10):
        diff = c_two(ell, hi, warn=False) - c_two(ell, lo, warn=False)
        assert 0 < diff < c_two_tail_bound(ell, lo)


def test_c_two_parity():
    # odd l1+l2+l terms vanish: a spectrum supported on odd l only gives zero at odd l
    m = PowerSpectrumModel(1.0, 4.0, band_limit=10)
    l = np.arange(1, 11)
    w = (2 * l + 1) * c_gaussian(l, m)
    from bispec.wigner import wigner3j_zero
    z = wigner3j_zero(l[:, None], l[None, :], 3)
    odd = ((l[:, None] + l[None, :] + 3) % 2) == 1
    assert np.all(z[odd] == 0)
    assert c_two(3, m, warn=False) == pytest.approx(2 / (4 * math.pi) * w @ (z * z) @ w, rel=1e-14)


def test_c_two_positive_and_warns():
    m = PowerSpectrumModel(1.0, 5.0, band_limit=8, tail_rtol=1e-12)
    with pytest.warns(TruncationWarning):
        v = c_two(np.arange(1, 17), m)
    assert np.all(v > 0)
    quiet = PowerSpectrumModel(1.0, 5.0, band_limit=64)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        c_two(4, quiet)
    with pytest.raises(ValueError):
        c_two(0, m)
    with pytest.raises(ValueError):
        c_two(17, m)


def test_c_total():
    m0 = PowerSpectrumModel(1.0, 5.0, 0.0, 16)
    l = np.arange(1, 10)
    assert np.array_equal(c_total(l, m0), c_gaussian(l, m0))
    m = m0.with_fnl(0.3)
    assert np.all(c_total(l, m) >= c_gaussian(l, m))
    assert c_total(4, m) == pytest.approx(c_gaussian(4, m) + 0.09 * c_two(4, m, warn=False))


def test_field_variance():
    m = PowerSpectrumModel(2.0, 3.0)
    assert field_variance(m, 3) == pytest.approx(2 * (3 / 8 + 5 / 27 + 7 / 64) / (4 * math.pi))


def test_c_total_monte_carlo():
    # Var(a_lm) of the perturbed field, l = 4, pooled over m, 10^4 fields
    m = PowerSpectrumModel(1.0, 5.0, 0.05, 40)
    ell, R = 4, 10_000
    y = []
    for start in range(0, R, 1000):
        aG = gaussian_alm_batch(m, 40, 77, range(start, start + 1000))
        a = aG.alm[:, : ell + 1, : ell + 1] + m.f_nl * alm_two_pixel(aG, m, lmax_out=ell).alm
        row = a[:, ell, : ell + 1]
        y.append((row[:, 0].real ** 2 + 2 * np.sum(np.abs(row[:, 1:]) ** 2, axis=1)) / (2 * ell + 1))
    y = np.concatenate(y)
    se = y.std(ddof=1) / math.sqrt(R)
    assert abs(y.mean() - c_total(ell, m)) < 3 * se
