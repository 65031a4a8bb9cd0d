"""
Replicated simulations of the estimator, cumulant estimation with jackknife
errors, normality tests and log-log scaling fits.

Replications are cut into fixed-size chunks.  A chunk's result depends only
on its replication ids, never on which worker ran it or how many workers
there were, so every run is bit-reproducible across thread counts.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bispectrum import BispectrumPlan, ell0_from_r, eta_weight, triple_array
from .estimator import TV_PREFACTOR, fit_fnl_batch
from .sphere import SphereGrid, alm_two_harmonic, alm_two_pixel, gaussian_alm_batch, perturb_and_normalize
from .spectrum import PowerSpectrumModel

__all__ = [
    "ExperimentConfig",
    "CumulantSummary",
    "KsResult",
    "ScalingFit",
    "McRun",
    "empirical_cumulants",
    "jackknife_se",
    "ks_normality",
    "ks_bootstrap_se",
    "fit_loglog",
    "run_replications",
    "scaling_study",
    "thread_cap",
    "stream_id",
]

FAILURE_BUDGET = 0.01


@dataclass
class ExperimentConfig:
    """Parameters of a Monte Carlo study.

    ``fnl_schedule`` is "fixed" (use ``f_nl`` at every L) or "inverse_L"
    (use ``fnl_c / L``).
    """

    amplitude: float = 1.0
    alpha: float = 5.0
    f_nl: float = 0.0
    r: float = 0.25
    L_list: tuple = (12, 16, 24, 32)
    replications: int = 1000
    base_seed: int = 20240601
    route: str = "pixel"
    fnl_schedule: str = "fixed"
    fnl_c: float = 0.0
    band_factor: int = 2
    chunk_size: int = 32
    even_only: bool = False
    eta_normalization: str = "gaunt"
    min_alpha: float = 4.0

    def __post_init__(self):
        self.L_list = tuple(int(x) for x in self.L_list)
        self.validate()

    def validate(self):
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not self.alpha > self.min_alpha:
            raise ValueError(f"alpha must exceed {self.min_alpha:g}, got {self.alpha}")
        if not 0 < self.r < 0.5:
            raise ValueError(f"r must lie in (0, 1/2), got {self.r}")
        if self.replications < 100:
            raise ValueError("at least 100 replications are required")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        if self.route not in ("pixel", "harmonic"):
            raise ValueError(f"route must be 'pixel' or 'harmonic', got {self.route!r}")
        if self.fnl_schedule not in ("fixed", "inverse_L"):
            raise ValueError(f"unknown f_NL schedule {self.fnl_schedule!r}")
        if self.band_factor < 2:
            raise ValueError("band_factor must be at least 2")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        for L in self.L_list:
            if L < ell0_from_r(L, self.r) + 2:
                raise ValueError(f"L={L} leaves fewer than two multipoles above ceil(rL)")

    def fnl_at(self, L):
        return self.f_nl if self.fnl_schedule == "fixed" else self.fnl_c / L

    def model_at(self, L):
        return PowerSpectrumModel(self.amplitude, self.alpha, self.fnl_at(L), self.band_factor * L)

    def to_dict(self):
        d = asdict(self)
        d["L_list"] = list(self.L_list)
        return d


# --------------------------------------------------------------------------
# cumulants
# --------------------------------------------------------------------------

def _kstats(n, s1, s2, s3, s4):
    k1 = s1 / n
    k2 = (n * s2 - s1**2) / (n * (n - 1))
    k3 = (2 * s1**3 - 3 * n * s1 * s2 + n**2 * s3) / (n * (n - 1) * (n - 2))
    k4 = ((-6 * s1**4 + 12 * n * s1**2 * s2 - 3 * n * (n - 1) * s2**2
           - 4 * n * (n + 1) * s1 * s3 + n**2 * (n + 1) * s4)
          / (n * (n - 1) * (n - 2) * (n - 3)))
    return k1, k2, k3, k4


def jackknife_se(values):
    """Leave-one-out jackknife standard error from an array of replicates."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    return np.sqrt((n - 1) / n * np.sum((values - values.mean(axis=0)) ** 2, axis=0))


@dataclass
class CumulantSummary:
    n: int
    mean: float
    variance: float
    skewness: float
    cum4: float
    mean_se: float
    variance_se: float
    skewness_se: float
    cum4_se: float

    def to_dict(self):
        return asdict(self)


def empirical_cumulants(samples):
    """k-statistics k1..k4 (unbiased cumulants) with jackknife SEs.

    Skewness is reported as k3 / k2^(3/2).  A constant stream gives zero
    variance and NaN skewness.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise ValueError("need at least four samples")
    c = x - x.mean()
    p = [np.sum(c**k) for k in (1, 2, 3, 4)]
    k1, k2, k3, k4 = _kstats(n, *p)
    k1 += x.mean()
    # leave-one-out power sums
    loo = [p[k - 1] - c**k for k in (1, 2, 3, 4)]
    j1, j2, j3, j4 = _kstats(n - 1, *loo)
    j1 = j1 + x.mean()
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = k3 / k2**1.5 if k2 > 0 else float("nan")
        jskew = j3 / j2**1.5
    return CumulantSummary(
        n=int(n), mean=float(k1), variance=float(k2), skewness=float(skew), cum4=float(k4),
        mean_se=float(jackknife_se(j1)), variance_se=float(jackknife_se(j2)),
        skewness_se=float(jackknife_se(jskew)) if k2 > 0 else float("nan"),
        cum4_se=float(jackknife_se(j4)),
    )


# --------------------------------------------------------------------------
# normality and scaling
# --------------------------------------------------------------------------

@dataclass
class KsResult:
    statistic: float
    pvalue: float
    n: int


def ks_normality(samples, center=0.0, scale=1.0):
    """One-sample KS test of (samples - center) / scale against N(0, 1)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    if not scale > 0:
        raise ValueError("scale must be positive")
    res = stats.kstest((x - center) / scale, "norm", method="asymp")
    return KsResult(float(res.statistic), float(res.pvalue), int(x.size))


def ks_bootstrap_se(samples, center=0.0, scale=1.0, n_boot=200, seed=0):
    """Bootstrap standard error of the KS statistic."""
    x = np.asarray(samples, dtype=float).ravel()
    z = np.sort((x - center) / scale)
    rng = np.random.default_rng(seed)
    n = z.size
    cdf_hi = np.arange(1, n + 1) / n
    cdf_lo = np.arange(0, n) / n
    out = np.empty(n_boot)
    for b in range(n_boot):
        zb = np.sort(z[rng.integers(0, n, n)])
        f = stats.norm.cdf(zb)
        out[b] = max(np.max(cdf_hi - f), np.max(f - cdf_lo))
    return float(out.std(ddof=1))


@dataclass
class ScalingFit:
    quantity: str
    points: list
    slope: float
    slope_se: float
    target: float | None = None


def fit_loglog(quantity, Ls, values, target=None):
    """Least-squares slope of log(value) against log(L)."""
    Ls = np.asarray(Ls, dtype=float)
    values = np.asarray(values, dtype=float)
    if Ls.size < 3:
        raise ValueError("a scaling fit needs at least three points")
    if Ls.max() / Ls.min() < 2:
        warnings.warn("L spread below a factor 2: slope poorly determined", RuntimeWarning, stacklevel=2)
    res = stats.linregress(np.log(Ls), np.log(values))
    return ScalingFit(quantity, [(int(L), float(v)) for L, v in zip(Ls, values)],
                      float(res.slope), float(res.stderr), target)


# --------------------------------------------------------------------------
# replications
# --------------------------------------------------------------------------

def thread_cap():
    """Worker cap from BISPEC_THREADS, else the CPU count."""
    env = os.environ.get("BISPEC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"BISPEC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def stream_id(L, rep):
    """Counter-RNG stream of replication ``rep`` at analysis band L."""
    return (int(L) << 32) | int(rep)


@dataclass
class McRun:
    L: int
    L0: int
    f_nl: float
    f_hat: np.ndarray
    triples: np.ndarray
    eta: np.ndarray
    var_theory: float
    cum4_bound: float
    tv_bound_finite: float
    failures: list = field(default_factory=list)
    b_hat: np.ndarray | None = None


class _Context:
    def __init__(self, config, L, even_only):
        self.config = config
        self.L = L
        self.L0 = ell0_from_r(L, config.r)
        self.model = config.model_at(L)
        self.band = config.band_factor * L
        triples = triple_array(L, self.L0)
        if even_only:
            triples = triples[(triples.sum(axis=1) % 2) == 0]
        self.plan = BispectrumPlan(triples)
        self.triples = self.plan.triples
        self.eta = eta_weight(self.triples, self.model, config.eta_normalization)
        if config.route == "pixel":
            self.grid = SphereGrid.for_squared(self.band)

    def coefficients(self, reps):
        cfg = self.config
        aG = gaussian_alm_batch(self.model, self.band, cfg.base_seed, [stream_id(self.L, r) for r in reps])
        a2 = None
        if self.model.f_nl != 0:
            if cfg.route == "pixel":
                a2 = alm_two_pixel(aG, self.model, lmax_out=self.L, grid=self.grid)
            else:
                a2 = alm_two_harmonic(aG, lmax_out=self.L)
        return perturb_and_normalize(aG, a2, self.model, self.L)

    def chunk(self, reps):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            at = self.coefficients(reps)
            b = self.plan.apply(at)
        f = fit_fnl_batch(self.eta, b)
        if not np.all(np.isfinite(f)):
            raise FloatingPointError("non-finite estimate")
        return f, b


def _run_chunk(ctx, reps):
    try:
        f, b = ctx.chunk(reps)
        return f, b, []
    except Exception:  # isolate the failing replications
        f = np.full(len(reps), np.nan)
        b = np.full((len(reps), len(ctx.triples)), np.nan)
        failures = []
        for i, r in enumerate(reps):
            try:
                fi, bi = ctx.chunk([r])
                f[i], b[i] = fi[0], bi[0]
            except Exception as exc:
                failures.append({"replication": int(r), "error": f"{type(exc).__name__}: {exc}"})
        return f, b, failures


def run_replications(config, L, n_threads=None, return_bhat=False, even_only=None,
                     replications=None):
    """R independent estimates of f_NL at analysis band L.

    Deterministic in (config, L); ``n_threads`` (capped by BISPEC_THREADS)
    changes only wall time.
    """
    even_only = config.even_only if even_only is None else even_only
    R = config.replications if replications is None else int(replications)
    ctx = _Context(config, L, even_only)
    chunks = [list(range(s, min(s + config.chunk_size, R))) for s in range(0, R, config.chunk_size)]
    workers = max(1, min(n_threads or thread_cap(), thread_cap(), len(chunks)))
    if workers == 1:
        results = [_run_chunk(ctx, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_chunk(ctx, c), chunks))
    f = np.concatenate([r[0] for r in results])
    b = np.concatenate([r[1] for r in results]) if return_bhat else None
    failures = [x for r in results for x in r[2]]
    if len(failures) > FAILURE_BUDGET * R:
        raise RuntimeError(f"{len(failures)} of {R} replications failed, above the "
                           f"{FAILURE_BUDGET:.0%} budget; first: {failures[0]['error']}")
    ok = np.isfinite(f)
    s = math.fsum(ctx.eta**2)
    use = ctx.eta != 0
    kap = 12.0 / (2 * ctx.triples[use].min(axis=1) + 1)
    c4 = math.fsum(ctx.eta[use] ** 4 * kap) / s**4
    return McRun(
        L=L, L0=ctx.L0, f_nl=ctx.model.f_nl, f_hat=f[ok], triples=ctx.triples, eta=ctx.eta,
        var_theory=1 / s, cum4_bound=c4, tv_bound_finite=TV_PREFACTOR * math.sqrt(c4 * s * s),
        failures=failures, b_hat=None if b is None else b[ok],
    )


def scaling_study(config, n_threads=None, runs=None):
    """Run every L of the config and fit log-log slopes.

    Returns ``(fits, rows, runs)``: the ScalingFit list, one summary dict per
    L and the McRun objects.
    """
    if len(config.L_list) < 3:
        raise ValueError("scaling study needs at least three values of L")
    runs = runs or [run_replications(config, L, n_threads=n_threads) for L in config.L_list]
    rows = []
    for run in runs:
        cum = empirical_cumulants(run.f_hat)
        sd = math.sqrt(run.var_theory)
        ks = ks_normality(run.f_hat, run.f_nl, sd)
        rows.append({
            "L": run.L, "L0": run.L0, "f_nl": run.f_nl, "n": cum.n,
            "mean": cum.mean, "mean_se": cum.mean_se,
            "variance": cum.variance, "variance_se": cum.variance_se,
            "skewness": cum.skewness, "skewness_se": cum.skewness_se,
            "cum4": cum.cum4, "cum4_se": cum.cum4_se,
            "cum4_ratio": cum.cum4 / cum.variance**2,
            "var_theory": run.var_theory, "cum4_bound": run.cum4_bound,
            "tv_bound_finite": run.tv_bound_finite,
            "ks_statistic": ks.statistic, "ks_pvalue": ks.pvalue,
            "ks_bootstrap_se": ks_bootstrap_se(run.f_hat, run.f_nl, sd),
            "failures": len(run.failures),
        })
    Ls = [row["L"] for row in rows]
    a4 = config.alpha - 4
    fits = [
        fit_loglog("variance_empirical", Ls, [row["variance"] for row in rows], a4),
        fit_loglog("variance_theory", Ls, [row["var_theory"] for row in rows], a4),
        fit_loglog("tv_bound_finite", Ls, [row["tv_bound_finite"] for row in rows], -2.0),
    ]
    ratios = [row["cum4_ratio"] for row in rows]
    if all(x > 0 for x in ratios):
        fits.append(fit_loglog("cum4_ratio", Ls, ratios, -4.0))
    return fits, rows, runs
