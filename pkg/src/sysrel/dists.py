"""Distribution kernel used by every model in the package.

Each family has one canonical parameterization:

=======================  ==============================================
family                   parameters
=======================  ==============================================
``normal``               ``mean``, ``sd``
``lognormal``            ``meanlog``, ``sdlog`` (of log X)
``weibull``              ``shape``, ``scale``
``gamma``                ``shape``, ``rate``
``beta``                 ``a``, ``b``
``exponential``          ``rate``
``binomial``             ``n``, ``p``
``poisson``              ``mean``
``hypergeometric``       ``N`` (lot), ``K`` (features), ``n`` (sample)
``ext_hypergeometric``   ``N``, ``K``, ``n``, ``theta`` (bias)
``uniform``              ``lo``, ``hi``
=======================  ==============================================

The Weibull form ``S(t) = exp(-(t/scale)**shape)`` converts to the
``S(t) = exp(-lam0 * t**lam1)`` form via ``lam0 = scale**-shape`` and
``lam1 = shape`` (see :func:`weibull_from_rate_form`). A gamma given by
its mean and standard deviation is built with :func:`gamma_mean_sd`.

Log densities are written out directly with numpy so they stay cheap
inside log-posteriors; CDFs, quantiles and samplers delegate to
``scipy.stats`` and ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats
from scipy.special import betaln, gammaln, log_ndtr, logsumexp, xlog1py, xlogy

__all__ = [
    "DistSpec",
    "ParameterError",
    "DomainError",
    "normal",
    "lognormal",
    "weibull",
    "weibull_from_rate_form",
    "gamma",
    "gamma_mean_sd",
    "beta",
    "exponential",
    "binomial",
    "poisson",
    "hypergeometric",
    "ext_hypergeometric",
    "uniform",
    "log_density",
    "scalar_log_density",
    "density",
    "sample",
    "cdf",
    "quantile",
    "ext_hypergeom_pmf",
    "ext_hypergeom_logpmf",
    "ext_hypergeom_support",
    "log_binom",
    "norm_logpdf",
    "norm_logcdf",
    "norm_logsf",
]

LOG_2PI = math.log(2.0 * math.pi)

_FAMILY_PARAMS = {
    "normal": ("mean", "sd"),
    "lognormal": ("meanlog", "sdlog"),
    "weibull": ("shape", "scale"),
    "gamma": ("shape", "rate"),
    "beta": ("a", "b"),
    "exponential": ("rate",),
    "binomial": ("n", "p"),
    "poisson": ("mean",),
    "hypergeometric": ("N", "K", "n"),
    "ext_hypergeometric": ("N", "K", "n", "theta"),
    "uniform": ("lo", "hi"),
}
DISCRETE = frozenset({"binomial", "poisson", "hypergeometric", "ext_hypergeometric"})


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class DomainError(ValueError):
    """Argument outside the domain of the requested operation."""


@dataclass(frozen=True)
class DistSpec:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILY_PARAMS:
            raise ParameterError(f"unknown family {self.family!r}")
        expected = set(_FAMILY_PARAMS[self.family])
        if set(self.params) != expected:
            raise ParameterError(
                f"{self.family} takes parameters {sorted(expected)}, got {sorted(self.params)}"
            )
        _validate(self.family, self.params)

    def __getitem__(self, key):
        return self.params[key]

    @property
    def discrete(self) -> bool:
        return self.family in DISCRETE

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.family}({args})"


def _positive(family, params, *names):
    for name in names:
        v = params[name]
        if not (np.isfinite(v) and v > 0):
            raise ParameterError(f"{family}: {name} must be positive and finite, got {v!r}")


def _count(family, params, *names):
    for name in names:
        v = params[name]
        if int(v) != v or v < 0:
            raise ParameterError(f"{family}: {name} must be a nonnegative integer, got {v!r}")


def _validate(family, params):
    if family == "normal":
        _positive(family, params, "sd")
        if not np.isfinite(params["mean"]):
            raise ParameterError("normal: mean must be finite")
    elif family == "lognormal":
        _positive(family, params, "sdlog")
        if not np.isfinite(params["meanlog"]):
            raise ParameterError("lognormal: meanlog must be finite")
    elif family == "weibull":
        _positive(family, params, "shape", "scale")
    elif family == "gamma":
        _positive(family, params, "shape", "rate")
    elif family == "beta":
        _positive(family, params, "a", "b")
    elif family == "exponential":
        _positive(family, params, "rate")
    elif family == "binomial":
        _count(family, params, "n")
        if not 0.0 <= params["p"] <= 1.0:
            raise ParameterError(f"binomial: p must lie in [0, 1], got {params['p']!r}")
    elif family == "poisson":
        if not (np.isfinite(params["mean"]) and params["mean"] >= 0):
            raise ParameterError("poisson: mean must be nonnegative")
    elif family in ("hypergeometric", "ext_hypergeometric"):
        _count(family, params, "N", "K", "n")
        if params["K"] > params["N"]:
            raise ParameterError(f"{family}: K={params['K']} exceeds N={params['N']}")
        if params["n"] > params["N"]:
            raise ParameterError(f"{family}: n={params['n']} exceeds N={params['N']}")
        if family == "ext_hypergeometric":
            _positive(family, params, "theta")
    elif family == "uniform":
        lo, hi = params["lo"], params["hi"]
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ParameterError(f"uniform: need finite lo < hi, got ({lo!r}, {hi!r})")


# ----------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------

def normal(mean=0.0, sd=1.0):
    return DistSpec("normal", {"mean": mean, "sd": sd})


def lognormal(meanlog=0.0, sdlog=1.0):
    return DistSpec("lognormal", {"meanlog": meanlog, "sdlog": sdlog})


def weibull(shape, scale=1.0):
    return DistSpec("weibull", {"shape": shape, "scale": scale})


def weibull_from_rate_form(lam0, lam1):
    """Weibull with survivor ``exp(-lam0 * t**lam1)``."""
    if lam0 <= 0 or lam1 <= 0:
        raise ParameterError("lam0 and lam1 must be positive")
    return weibull(lam1, lam0 ** (-1.0 / lam1))


def gamma(shape, rate=1.0):
    return DistSpec("gamma", {"shape": shape, "rate": rate})


def gamma_mean_sd(mean, sd):
    """Gamma with the given mean and standard deviation.

    ``shape = (mean/sd)**2`` and ``rate = mean/sd**2``.
    """
    if mean <= 0 or sd <= 0:
        raise ParameterError("gamma_mean_sd: mean and sd must be positive")
    return gamma((mean / sd) ** 2, mean / sd**2)


def beta(a=1.0, b=1.0):
    return DistSpec("beta", {"a": a, "b": b})


def exponential(rate=1.0):
    return DistSpec("exponential", {"rate": rate})


def binomial(n, p):
    return DistSpec("binomial", {"n": n, "p": p})


def poisson(mean):
    return DistSpec("poisson", {"mean": mean})


def hypergeometric(N, K, n):
    return DistSpec("hypergeometric", {"N": N, "K": K, "n": n})


def ext_hypergeometric(N, K, n, theta):
    return DistSpec("ext_hypergeometric", {"N": N, "K": K, "n": n, "theta": theta})


def uniform(lo=0.0, hi=1.0):
    return DistSpec("uniform", {"lo": lo, "hi": hi})


# ----------------------------------------------------------------------
# scalar helpers shared by the model modules
# ----------------------------------------------------------------------

def norm_logpdf(x, mean=0.0, sd=1.0):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def norm_logcdf(z):
    return log_ndtr(z)


def norm_logsf(z):
    return log_ndtr(-np.asarray(z, dtype=float))


def log_binom(n, k):
    """log C(n, k); ``-inf`` when k is outside 0..n."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where(ok, out, -np.inf)


# ----------------------------------------------------------------------
# extended hypergeometric
# ----------------------------------------------------------------------

def ext_hypergeom_support(N, K, n):
    """Inclusive range of feasible counts ``(lo, hi)``."""
    return max(0, n - N + K), min(n, K)


def _check_eh(N, K, n, theta):
    if theta <= 0 or not np.isfinite(theta):
        raise ParameterError(f"theta must be positive, got {theta!r}")
    if K > N or K < 0:
        raise ParameterError(f"need 0 <= K <= N, got K={K}, N={N}")
    if n > N or n < 0:
        raise ParameterError(f"need 0 <= n <= N, got n={n}, N={N}")


def ext_hypergeom_logpmf(N, K, n, theta, y):
    """Log of :func:`ext_hypergeom_pmf`; ``-inf`` off the support."""
    _check_eh(N, K, n, theta)
    lo, hi = ext_hypergeom_support(N, K, n)
    j = np.arange(lo, hi + 1)
    log_theta = math.log(theta)
    terms = log_binom(n, j) + log_binom(N - n, K - j) + j * log_theta
    # logsumexp shifts by the running max, so N in the thousands is fine
    log_norm = logsumexp(terms)
    y = np.asarray(y)
    inside = (y >= lo) & (y <= hi)
    yy = np.where(inside, y, lo)
    out = log_binom(n, yy) + log_binom(N - n, K - yy) + yy * log_theta - log_norm
    out = np.where(inside, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def ext_hypergeom_pmf(N, K, n, theta, y):
    """Probability of ``y`` features in a biased sample of size ``n``.

    A lot of ``N`` items holds ``K`` with the feature. Sampling favours
    featured items by the odds factor ``theta`` (``theta == 1`` is ordinary
    random sampling, i.e. the hypergeometric law)::

        P(y) = C(n, y) C(N-n, K-y) theta**y / sum_j C(n, j) C(N-n, K-j) theta**j

    with ``j`` running over ``max(0, n-N+K) .. min(n, K)``.
    """
    return np.exp(ext_hypergeom_logpmf(N, K, n, theta, y))


# ----------------------------------------------------------------------
# generic operations
# ----------------------------------------------------------------------

def log_density(dist: DistSpec, x):
    """Natural-log density (or mass) of ``dist`` at ``x``.

    Values outside the support give ``-inf``. ``x`` may be an array.
    """
    f, p = dist.family, dist.params
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if f == "normal":
            out = norm_logpdf(x, p["mean"], p["sd"])
        elif f == "lognormal":
            pos = x > 0
            xs = np.where(pos, x, 1.0)
            out = np.where(pos, norm_logpdf(np.log(xs), p["meanlog"], p["sdlog"]) - np.log(xs), -np.inf)
        elif f == "weibull":
            k, lam = p["shape"], p["scale"]
            pos = x >= 0
            z = np.where(pos, x, 0.0) / lam
            out = math.log(k / lam) + xlogy(k - 1.0, z) - z**k
            out = np.where(pos, out, -np.inf)
        elif f == "gamma":
            a, r = p["shape"], p["rate"]
            pos = x >= 0
            xs = np.where(pos, x, 0.0)
            out = a * math.log(r) - gammaln(a) + xlogy(a - 1.0, xs) - r * xs
            out = np.where(pos, out, -np.inf)
        elif f == "beta":
            a, b = p["a"], p["b"]
            inside = (x >= 0) & (x <= 1)
            xs = np.where(inside, x, 0.5)
            out = xlogy(a - 1.0, xs) + xlog1py(b - 1.0, -xs) - betaln(a, b)
            out = np.where(inside, out, -np.inf)
        elif f == "exponential":
            r = p["rate"]
            out = np.where(x >= 0, math.log(r) - r * x, -np.inf)
        elif f == "uniform":
            lo, hi = p["lo"], p["hi"]
            out = np.where((x >= lo) & (x <= hi), -math.log(hi - lo), -np.inf)
        elif f == "binomial":
            n, q = p["n"], p["p"]
            ok = (x == np.round(x)) & (x >= 0) & (x <= n)
            xs = np.where(ok, x, 0.0)
            out = log_binom(n, xs) + xlogy(xs, q) + xlog1py(n - xs, -q)
            out = np.where(ok, out, -np.inf)
        elif f == "poisson":
            m = p["mean"]
            ok = (x == np.round(x)) & (x >= 0)
            xs = np.where(ok, x, 0.0)
            out = xlogy(xs, m) - m - gammaln(xs + 1)
            out = np.where(ok, out, -np.inf)
        elif f == "hypergeometric":
            N, K, n = p["N"], p["K"], p["n"]
            ok = x == np.round(x)
            xs = np.where(ok, x, 0.0)
            out = log_binom(K, xs) + log_binom(N - K, n - xs) - log_binom(N, n)
            out = np.where(ok, out, -np.inf)
        elif f == "ext_hypergeometric":
            ok = x == np.round(x)
            xs = np.where(ok, x, -1).astype(int)
            out = np.asarray(ext_hypergeom_logpmf(p["N"], p["K"], p["n"], p["theta"], xs))
            out = np.where(ok, out, -np.inf)
        else:  # pragma: no cover - guarded by DistSpec
            raise ParameterError(f)
    return float(out) if np.ndim(out) == 0 else out


def scalar_log_density(dist: DistSpec):
    """Return ``f(x) -> float`` equal to ``log_density(dist, x)`` for scalar ``x``.

    Constants are folded once, so the closure is cheap enough for the inner
    loop of a sampler. Discrete families fall back to :func:`log_density`.
    """
    f, p = dist.family, dist.params
    ninf = -math.inf
    if f == "normal":
        m, sd = p["mean"], p["sd"]
        c = -math.log(sd) - 0.5 * LOG_2PI
        return lambda x: c - 0.5 * ((x - m) / sd) ** 2
    if f == "lognormal":
        m, sd = p["meanlog"], p["sdlog"]
        c = -math.log(sd) - 0.5 * LOG_2PI

        def lognormal_ld(x):
            if x <= 0:
                return ninf
            lx = math.log(x)
            return c - 0.5 * ((lx - m) / sd) ** 2 - lx

        return lognormal_ld
    if f == "gamma":
        a, r = p["shape"], p["rate"]
        c = a * math.log(r) - math.lgamma(a)

        def gamma_ld(x):
            if x < 0 or (x == 0 and a != 1):
                return float(log_density(dist, x))
            return c + (a - 1.0) * math.log(x) - r * x if x > 0 else c

        return gamma_ld
    if f == "beta":
        a, b = p["a"], p["b"]
        c = -float(betaln(a, b))

        def beta_ld(x):
            if not 0 < x < 1:
                return float(log_density(dist, x))
            return c + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)

        return beta_ld
    if f == "exponential":
        r = p["rate"]
        c = math.log(r)
        return lambda x: c - r * x if x >= 0 else ninf
    if f == "uniform":
        lo, hi = p["lo"], p["hi"]
        c = -math.log(hi - lo)
        return lambda x: c if lo <= x <= hi else ninf
    return lambda x: float(log_density(dist, x))


def density(dist: DistSpec, x):
    return np.exp(log_density(dist, x))


def _eh_support_and_pmf(p):
    lo, hi = ext_hypergeom_support(p["N"], p["K"], p["n"])
    ys = np.arange(lo, hi + 1)
    return ys, ext_hypergeom_pmf(p["N"], p["K"], p["n"], p["theta"], ys)


def sample(dist: DistSpec, rng: np.random.Generator, size=None):
    """Draw from ``dist`` using the caller's generator."""
    f, p = dist.family, dist.params
    if f == "normal":
        return rng.normal(p["mean"], p["sd"], size)
    if f == "lognormal":
        return rng.lognormal(p["meanlog"], p["sdlog"], size)
    if f == "weibull":
        return p["scale"] * rng.weibull(p["shape"], size)
    if f == "gamma":
        return rng.gamma(p["shape"], 1.0 / p["rate"], size)
    if f == "beta":
        return rng.beta(p["a"], p["b"], size)
    if f == "exponential":
        return rng.exponential(1.0 / p["rate"], size)
    if f == "uniform":
        return rng.uniform(p["lo"], p["hi"], size)
    if f == "binomial":
        return rng.binomial(int(p["n"]), p["p"], size)
    if f == "poisson":
        return rng.poisson(p["mean"], size)
    if f == "hypergeometric":
        N, K, n = int(p["N"]), int(p["K"]), int(p["n"])
        if n == 0:
            return np.zeros(size, dtype=int) if size is not None else 0
        return rng.hypergeometric(K, N - K, n, size)
    if f == "ext_hypergeometric":
        ys, pmf = _eh_support_and_pmf(p)
        return rng.choice(ys, size=size, p=pmf / pmf.sum())
    raise ParameterError(f)  # pragma: no cover


def _scipy(dist: DistSpec):
    f, p = dist.family, dist.params
    if f == "normal":
        return stats.norm(p["mean"], p["sd"])
    if f == "lognormal":
        return stats.lognorm(p["sdlog"], scale=math.exp(p["meanlog"]))
    if f == "weibull":
        return stats.weibull_min(p["shape"], scale=p["scale"])
    if f == "gamma":
        return stats.gamma(p["shape"], scale=1.0 / p["rate"])
    if f == "beta":
        return stats.beta(p["a"], p["b"])
    if f == "exponential":
        return stats.expon(scale=1.0 / p["rate"])
    if f == "uniform":
        return stats.uniform(p["lo"], p["hi"] - p["lo"])
    if f == "binomial":
        return stats.binom(int(p["n"]), p["p"])
    if f == "poisson":
        return stats.poisson(p["mean"])
    if f == "hypergeometric":
        return stats.hypergeom(int(p["N"]), int(p["K"]), int(p["n"]))
    return None


def cdf(dist: DistSpec, x):
    """P(X <= x)."""
    if dist.family == "ext_hypergeometric":
        ys, pmf = _eh_support_and_pmf(dist.params)
        cum = np.cumsum(pmf)
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(ys, np.floor(x), side="right") - 1
        out = np.where(idx >= 0, cum[np.clip(idx, 0, len(cum) - 1)], 0.0)
        return float(out) if out.ndim == 0 else out
    if dist.discrete:
        # scipy's hypergeom cdf is NaN between integers
        x = np.floor(np.asarray(x, dtype=float))
    out = _scipy(dist).cdf(x)
    return float(out) if np.ndim(out) == 0 else out


def quantile(dist: DistSpec, prob):
    """Inverse CDF for continuous families; ``prob`` must lie in (0, 1)."""
    if dist.discrete:
        raise ParameterError(f"quantile is defined for continuous families only, not {dist.family}")
    q = np.asarray(prob, dtype=float)
    if np.any((q <= 0) | (q >= 1)) or np.any(np.isnan(q)):
        raise DomainError(f"probability must lie in (0, 1), got {prob!r}")
    out = _scipy(dist).ppf(q)
    return float(out) if out.ndim == 0 else out
