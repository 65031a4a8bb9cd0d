"""
Acceptance suite: ten criteria at their stated tolerances.  Each sub-check is
recorded through the ``acceptance`` fixture; a per-criterion PASS/FAIL line is
printed in the terminal summary.  Checks that cannot hold as stated are
strict xfails and still report FAIL.
"""

import itertools
import math
import time

import numpy as np
import pytest

from bispec.asymptotics import cardinality_volume, d_r_bruteforce, d_r_reduced
from bispec.bispectrum import (BispectrumTable, cum4_bound_12, cum4_theory, ell0_from_r, eta_weight,
                               triple_array)
from bispec.estimator import tv_bound_finite, variance_theory
from bispec.montecarlo import (ExperimentConfig, empirical_cumulants, fit_loglog, ks_bootstrap_se, ks_normality,
                               run_replications)
from bispec.spectrum import PowerSpectrumModel, c_two, c_two_cg
from bispec.sphere import alm_two_pixel, gaussian_alm_batch
from bispec.wigner import clebsch_gordan, wigner3j, wigner3j_block, wigner3j_zero, wigner3j_zero_asymptotic

TOL = 1e-12


# ---------------------------------------------------------------- C1

def _cg_from_block(l1, l2):
    """CG[m1, m2, l] = C^{l, m1+m2}_{l1 m1; l2 m2} from the 3j block."""
    jlo, W = wigner3j_block(l1, l2)
    m1 = np.arange(-l1, l1 + 1)[:, None, None]
    m2 = np.arange(-l2, l2 + 1)[None, :, None]
    l = np.arange(jlo, l1 + l2 + 1)[None, None, :]
    m = m1 + m2
    sign = np.where((l1 - l2 + m) % 2 == 0, 1.0, -1.0)
    return jlo, sign * np.sqrt(2 * l + 1) * W


def _identity_errors(l1, l2, blocks):
    """Worst deviation of each identity family for the pair (l1, l2)."""
    jlo, W = blocks[l1, l2]
    err = {}
    J = l1 + l2 + np.arange(jlo, l1 + l2 + 1)
    # orthogonality: sum over all orders of 3j^2 = 1 on every triangle
    err["orthogonality"] = np.max(np.abs(np.sum(W**2, axis=(0, 1)) - 1))
    # bound: |3j| <= max_i(2 l_i + 1)^(-1/2)
    l3 = np.arange(jlo, l1 + l2 + 1)
    cap = 1 / np.sqrt(np.maximum(2 * max(l1, l2) + 1, 2 * l3 + 1))
    err["bound"] = max(0.0, float(np.max(np.abs(W) - cap[None, None, :])))
    # sign inversion
    sgn = np.where(J % 2 == 0, 1.0, -1.0)
    err["sign_inversion"] = np.max(np.abs(W[::-1, ::-1, :] - sgn * W))
    # odd permutation (swap columns 1, 2) and cyclic permutation
    _, Ws = blocks[l2, l1]
    err["swap"] = np.max(np.abs(np.transpose(Ws, (1, 0, 2)) - sgn * W))
    worst = 0.0
    for j in range(jlo, min(l1 + l2, 20) + 1):
        jl, Wc = blocks[l2, j]          # (l2, l3, l1; m2, m3, m1)
        if not jl <= l1 <= l2 + j:
            continue
        for i1, m1 in enumerate(range(-l1, l1 + 1)):
            for i2, m2 in enumerate(range(-l2, l2 + 1)):
                m3 = -m1 - m2
                if abs(m3) <= j:
                    worst = max(worst, abs(Wc[i2, m3 + j, l1 - jl] - W[i1, i2, j - jlo]))
    err["cyclic"] = worst
    return err


def _cg_identity_errors(l1, l2):
    jlo, C = _cg_from_block(l1, l2)
    err = {}
    # prop3: the CG matrix (rows (m1, m2), columns (l, m)) is orthogonal
    cols = []
    for il, l in enumerate(range(jlo, l1 + l2 + 1)):
        for m in range(-l, l + 1):
            col = np.zeros((2 * l1 + 1, 2 * l2 + 1))
            for i1, m1 in enumerate(range(-l1, l1 + 1)):
                m2 = m - m1
                if abs(m2) <= l2:
                    col[i1, m2 + l2] = C[i1, m2 + l2, il]
            cols.append(col.ravel())
    M = np.array(cols)
    err["prop3"] = np.max(np.abs(M @ M.T - np.eye(len(M))))
    # prop0: swapping (l1 m1) <-> (l2 m2) multiplies by (-1)^(l1+l2-l)
    _, Cs = _cg_from_block(l2, l1)
    l = np.arange(jlo, l1 + l2 + 1)
    mask = np.zeros(C.shape, bool)
    for i1, m1 in enumerate(range(-l1, l1 + 1)):
        for i2, m2 in enumerate(range(-l2, l2 + 1)):
            mask[i1, i2] = abs(m1 + m2) <= l
    sgn = np.where((l1 + l2 - l) % 2 == 0, 1.0, -1.0)
    err["prop0"] = np.max(np.abs(np.where(mask, np.transpose(Cs, (1, 0, 2)) - sgn * C, 0.0)))
    if l1 == l2:
        # prop1: sum_m1 (-1)^(l1-m1) C^{l,0}_{l1 m1; l1 -m1} = sqrt(2 l1 + 1) delta_{l,0}
        m1 = np.arange(-l1, l1 + 1)
        diag = C[m1 + l1, -m1 + l1, :]
        s = np.sum(np.where((l1 - m1) % 2 == 0, 1.0, -1.0)[:, None] * diag, axis=0)
        target = np.where(l == 0, math.sqrt(2 * l1 + 1), 0.0)
        err["prop1"] = np.max(np.abs(s - target))
        # prop2 at l = 0: C^{0,0}_{l1 m1; l1 -m1} = (-1)^(l1-m1) / sqrt(2 l1 + 1)
        ref = np.where((l1 - m1) % 2 == 0, 1.0, -1.0) / math.sqrt(2 * l1 + 1)
        err["prop2"] = np.max(np.abs(diag[:, 0] - ref))
    return err


def test_c1_wigner_identity_suite(acceptance):
    t0 = time.perf_counter()
    L = 20
    blocks = {(a, b): wigner3j_block(a, b) for a in range(L + 1) for b in range(L + 1)}
    worst = {}
    for l1 in range(L + 1):
        for l2 in range(L + 1):
            for k, v in itertools.chain(_identity_errors(l1, l2, blocks).items(),
                                        _cg_identity_errors(l1, l2).items()):
                worst[k] = max(worst.get(k, 0.0), float(v))

    # randomised l <= 60: exact scalar symbols, the recursion and CG round trip
    rng = np.random.default_rng(2024)
    rand = {"block_vs_exact": 0.0, "permutation": 0.0, "sign_inversion": 0.0, "bound": 0.0, "cg_roundtrip": 0.0,
            "orthogonality": 0.0}
    cache = {}
    for _ in range(400):
        l1, l2 = (int(x) for x in rng.integers(0, 61, 2))
        l3 = int(rng.integers(abs(l1 - l2), min(l1 + l2, 60) + 1))
        m1, m2 = int(rng.integers(-l1, l1 + 1)), int(rng.integers(-l2, l2 + 1))
        m3 = -m1 - m2
        if abs(m3) > l3:
            continue
        v = wigner3j(l1, l2, l3, m1, m2, m3)
        J = l1 + l2 + l3
        if (l1, l2) not in cache:
            cache[l1, l2] = wigner3j_block(l1, l2)
        jlo, W = cache[l1, l2]
        rand["block_vs_exact"] = max(rand["block_vs_exact"], abs(W[m1 + l1, m2 + l2, l3 - jlo] - v))
        rand["orthogonality"] = max(rand["orthogonality"], abs(np.sum(W[:, :, l3 - jlo] ** 2) - 1))
        sgn = (-1) ** J
        for p in itertools.permutations(range(3)):
            ls, ms = (l1, l2, l3), (m1, m2, m3)
            parity = 1 if p in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else sgn
            w = wigner3j(*(ls[i] for i in p), *(ms[i] for i in p))
            rand["permutation"] = max(rand["permutation"], abs(w - parity * v))
        rand["sign_inversion"] = max(rand["sign_inversion"], abs(wigner3j(l1, l2, l3, -m1, -m2, -m3) - sgn * v))
        rand["bound"] = max(rand["bound"], abs(v) - 1 / math.sqrt(2 * max(l1, l2, l3) + 1))
        cg = clebsch_gordan(l1, -m1, l2, -m2, l3, m3)
        rand["cg_roundtrip"] = max(rand["cg_roundtrip"],
                                   abs(v - (-1) ** (l3 + m3) / math.sqrt(2 * l3 + 1) * cg))
    elapsed = time.perf_counter() - t0
    ok_ex = all(v < TOL for v in worst.values())
    ok_rand = all(v < TOL for v in rand.values())
    acceptance("C1", "exhaustive_l<=20", ok_ex, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    acceptance("C1", "random_l<=60", ok_rand, ", ".join(f"{k} {v:.1e}" for k, v in rand.items()))
    acceptance("C1", "runtime<60s", elapsed < 60, f"{elapsed:.1f} s")
    assert ok_ex and ok_rand and elapsed < 60


# ---------------------------------------------------------------- C2

def test_c2_asymptotic_3j_family(acceptance):
    errs = []
    for k in (4, 8, 16, 32):
        t = (3 * k, 4 * k, 5 * k)
        errs.append(abs(wigner3j_zero_asymptotic(*t) ** 2 / wigner3j_zero(*t) ** 2 - 1))
    dec = all(a > b for a, b in zip(errs, errs[1:]))
    acceptance("C2", "strictly_decreasing", dec, " ".join(f"{e:.3e}" for e in errs))
    acceptance("C2", "final<0.05", errs[-1] < 0.05, f"{errs[-1]:.3e}")
    assert dec and errs[-1] < 0.05


# ---------------------------------------------------------------- C3

def test_c3_second_chaos_spectrum(acceptance):
    band = 16
    model = PowerSpectrumModel(1.0, 5.0, band_limit=band)
    dual = max(abs(c_two_cg(l, model) / c_two(l, model, warn=False) - 1) for l in range(1, band + 1))
    ok_dual = dual < 1e-10
    acceptance("C3", "dual_form", ok_dual, f"max rel diff {dual:.1e}")

    R = 10_000
    aG = gaussian_alm_batch(model, band, 33, range(R))
    a2 = alm_two_pixel(aG, model, lmax_out=6).alm
    ok_mc = True
    details = []
    for ell in (2, 4, 6):
        # isotropy: average |a_lm|^2 over the 2l+1 orders in each replication
        p = (np.abs(a2[:, ell, 0]) ** 2 + 2 * np.sum(np.abs(a2[:, ell, 1:ell + 1]) ** 2, axis=1)) / (2 * ell + 1)
        se = p.std(ddof=1) / math.sqrt(R)
        z = (p.mean() - c_two(ell, model, warn=False)) / se
        ok_mc &= abs(z) < 3
        details.append(f"l={ell} z={z:+.2f}")
    acceptance("C3", "mc_variance", ok_mc, ", ".join(details))
    assert ok_dual and ok_mc


# ---------------------------------------------------------------- C4

@pytest.fixture(scope="module")
def c4_run():
    cfg = ExperimentConfig(f_nl=0.0, replications=10_000, L_list=(12, 16, 24))
    return run_replications(cfg, 12, return_bhat=True, even_only=True)


def test_c4_bispectrum_moments(acceptance, c4_run):
    b = c4_run.b_hat
    worst = {"mean": 0.0, "variance": 0.0, "cum4": 0.0}
    for i, t in enumerate(c4_run.triples):
        c = empirical_cumulants(b[:, i])
        worst["mean"] = max(worst["mean"], abs(c.mean) / c.mean_se)
        worst["variance"] = max(worst["variance"], abs(c.variance - 1) / c.variance_se)
        worst["cum4"] = max(worst["cum4"], abs(c.cum4 - cum4_theory(*map(int, t))) / c.cum4_se)
    n = len(c4_run.triples)
    for key, lim in (("mean", 3), ("variance", 3), ("cum4", 4)):
        acceptance("C4", key, worst[key] < lim, f"worst |z| {worst[key]:.2f} over {n} even triples")
    assert worst["mean"] < 3 and worst["variance"] < 3 and worst["cum4"] < 4


@pytest.mark.xfail(strict=True, reason="cum4 exceeds 12/(2 l1 + 1) on many triples; 24/(2 l1 + 1) holds")
def test_c4_cum4_bound(acceptance, c4_run):
    ratios = [cum4_theory(*map(int, t)) / cum4_bound_12(*map(int, t)) for t in c4_run.triples]
    bad = sum(r > 1 for r in ratios)
    acceptance("C4", "bound_12/(2l1+1)", bad == 0, f"{bad} of {len(ratios)} triples violate, worst ratio "
                                                   f"{max(ratios):.3f}")
    assert bad == 0


# ---------------------------------------------------------------- C5

def test_c5_estimator_unbiased(acceptance):
    cfg = ExperimentConfig(f_nl=0.05, alpha=5.0, r=0.25, replications=1000)
    run = run_replications(cfg, 16)
    c = empirical_cumulants(run.f_hat)
    zm = (c.mean - 0.05) / c.mean_se
    zv = (c.variance - run.var_theory) / c.variance_se
    acceptance("C5", "mean", abs(zm) < 3, f"{c.mean:.4f} +- {c.mean_se:.4f}, z={zm:+.2f}")
    acceptance("C5", "variance", abs(zv) < 3, f"{c.variance:.4f} +- {c.variance_se:.4f} vs "
                                             f"{run.var_theory:.4f}, z={zv:+.2f}")
    assert abs(zm) < 3 and abs(zv) < 3


# ---------------------------------------------------------------- C6

def _symbol_tables(alpha=5.0, r=0.25, Ls=(12, 16, 24, 32)):
    model = PowerSpectrumModel(1.0, alpha)
    out = []
    for L in Ls:
        t = triple_array(L, ell0_from_r(L, r))
        eta = eta_weight(t, model)
        out.append(BispectrumTable(t, eta, np.zeros(len(t))))
    return Ls, out


@pytest.mark.xfail(strict=True, reason="pre-asymptotic: the local slope climbs towards 1 only for L in the hundreds")
def test_c6_variance_theory_slope(acceptance):
    Ls, tabs = _symbol_tables()
    fit = fit_loglog("variance_theory", Ls, [variance_theory(t) for t in tabs], 1.0)
    ok = abs(fit.slope - 1.0) <= 0.3
    acceptance("C6", "variance_theory_slope", ok, f"{fit.slope:.3f} (target 1 +- 0.3)")
    assert ok


def test_c6_tv_bound_slope(acceptance):
    Ls, tabs = _symbol_tables()
    fit = fit_loglog("tv_bound_finite", Ls, [tv_bound_finite(t) for t in tabs], -2.0)
    ok = abs(fit.slope + 2.0) <= 0.5
    acceptance("C6", "tv_bound_slope", ok, f"{fit.slope:.3f} (target -2 +- 0.5)")
    assert ok


# ---------------------------------------------------------------- C7

def test_c7_clt_proxy(acceptance):
    cfg = ExperimentConfig(f_nl=0.0, replications=1000)
    stats = {}
    for L in (12, 24):
        run = run_replications(cfg, L)
        sd = math.sqrt(run.var_theory)
        stats[L] = (ks_normality(run.f_hat, run.f_nl, sd), ks_bootstrap_se(run.f_hat, run.f_nl, sd))
    ks24, se24 = stats[24]
    ks12, _ = stats[12]
    ok_p = ks24.pvalue > 0.01
    ok_d = ks24.statistic <= ks12.statistic + se24
    acceptance("C7", "ks_L24", ok_p, f"D={ks24.statistic:.4f}, p={ks24.pvalue:.3f}")
    acceptance("C7", "ks_not_worse", ok_d, f"D24={ks24.statistic:.4f} <= D12={ks12.statistic:.4f} + "
                                           f"SE {se24:.4f}")
    assert ok_p and ok_d


# ---------------------------------------------------------------- C8

def test_c8_integral_engine(acceptance):
    vol = max(abs(d_r_reduced(0, 0, 0, 0, r).value - (1 / 12 - r**2 / 2 + r**3 / 2)) for r in (0.1, 0.2, 0.3))
    acceptance("C8", "volume", vol < 1e-8, f"max abs err {vol:.1e}")

    alpha = 5
    rel = 0.0
    for e in itertools.permutations((1 - alpha, 1 - alpha, 1 + alpha)):
        a = d_r_reduced(*e, 0.5, 0.25)
        bf = d_r_bruteforce(*e, 0.5, 0.25)
        rel = max(rel, abs(a.value / bf.value - 1), float(a.diverged or bf.diverged))
    acceptance("C8", "reduced_vs_bruteforce", rel < 1e-5, f"max rel diff {rel:.1e}")

    e = (1 - 2 * alpha, 2 * (1 - alpha), 2 * (1 + alpha))
    first, second = d_r_reduced(*e, 1, 0.25), d_r_reduced(*e, 1, 0.25)
    det = (first.diverged == second.diverged and first.value == second.value
           and first.eps_study == second.eps_study)
    outcome = "divergence flag" if first.diverged else f"extrapolated {first.value:.6g}"
    acceptance("C8", "d=1_deterministic", det, outcome)
    assert vol < 1e-8 and rel < 1e-5 and det


# ---------------------------------------------------------------- C9

def _brute_count(L, L0):
    return sum(1 for a in range(L0, L + 1) for b in range(a + 1, L + 1) for c in range(b + 1, min(L, a + b) + 1))


def test_c9_exact_counts(acceptance):
    res = {(L, L0): (len(triple_array(L, L0)), _brute_count(L, L0)) for L, L0 in ((4, 2), (5, 2), (20, 5))}
    ok = all(a == b for a, b in res.values())
    acceptance("C9", "exact_counts", ok, ", ".join(f"{k}: {a}/{b}" for k, (a, b) in res.items()))
    assert ok


def test_c9_count_matches_exact_volume(acceptance):
    L, r = 200, 0.25
    ratio = len(triple_array(L, ell0_from_r(L, r))) / L**3 / cardinality_volume(r)
    ok = abs(ratio - 1) < 0.1
    acceptance("C9", "count_vs_exact_volume", ok, f"ratio {ratio:.4f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="(1 - r)^3 / 12 is not the volume of the constrained region")
def test_c9_count_matches_heuristic(acceptance):
    L, r = 200, 0.25
    ratio = len(triple_array(L, ell0_from_r(L, r))) / L**3 / ((1 - r) ** 3 / 12)
    ok = abs(ratio - 1) < 0.1
    acceptance("C9", "count_vs_(1-r)^3/12", ok, f"ratio {ratio:.4f}")
    assert ok


# ---------------------------------------------------------------- C10

def test_c10_determinism_across_threads(acceptance, monkeypatch):
    monkeypatch.setenv("BISPEC_THREADS", "8")   # lift the CPU-count cap
    details = []
    ok = True
    # the harmonic route is limited to simulation band 16, i.e. L = 8
    for route, L in (("pixel", 16), ("harmonic", 8)):
        cfg = ExperimentConfig(f_nl=0.1, replications=200, chunk_size=16, route=route)
        runs = [run_replications(cfg, L, n_threads=n, return_bhat=True) for n in (1, 4, 8)]
        same = all(r.f_hat.tobytes() == runs[0].f_hat.tobytes() and r.b_hat.tobytes() == runs[0].b_hat.tobytes()
                   for r in runs[1:])
        again = run_replications(cfg, L, n_threads=1)
        same &= again.f_hat.tobytes() == runs[0].f_hat.tobytes()
        ok &= same
        details.append(f"{route} {'identical' if same else 'differs'}")
    acceptance("C10", "bit_identical_1_4_8", ok, ", ".join(details))
    assert ok
