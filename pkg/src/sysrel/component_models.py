"""Single-component data-combination models.

Three models live here:

* degradation measurements plus (censored) lifetimes, linked through a
  critical degradation level ``L`` (:class:`DegFailModel`);
* pass/fail tests plus specification measurements, with the
  measurements integrated out of the pass probability
  (:class:`SurrogateModel`);
* feature counts per lot from convenience (biased) and random samples
  (:class:`LotModel`).

Each model exposes a plain log-posterior over a parameter dataclass and a
``*Model`` wrapper that lays the parameters out in a
:class:`~sysrel.mcmc.ParamVector` for the Metropolis engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import log_ndtr

from . import dists
from .dists import DistSpec, log_binom, norm_logpdf
from .mcmc import POSITIVE, UNBOUNDED, UNIT, ParamVector, integer

__all__ = [
    "DataError",
    "DegFailData",
    "DegFailParams",
    "DegFailPriors",
    "DegFailModel",
    "degfail_log_posterior",
    "degfail_reliability",
    "SurrogateQAData",
    "SurrogateQAParams",
    "SurrogatePriors",
    "SurrogateModel",
    "surrogate_reliability",
    "surrogate_log_reliability",
    "surrogate_log_likelihood",
    "LotData",
    "LotParams",
    "LotPriors",
    "LotModel",
    "lot_log_posterior",
    "lot_sampling_log_pmf",
    "feature_prevalence",
]


class DataError(ValueError):
    """Dataset violates its schema invariants."""


_HALF_LOG_2PI = 0.5 * dists.LOG_2PI


def _arr(x):
    return np.asarray(x, dtype=float).reshape(-1)


# ======================================================================
# degradation + lifetimes
# ======================================================================

@dataclass
class DegFailData:
    failures: np.ndarray = field(default_factory=lambda: np.zeros(0))
    survivors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    deg_ages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    deg_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.failures = _arr(self.failures)
        self.survivors = _arr(self.survivors)
        self.deg_ages = _arr(self.deg_ages)
        self.deg_values = _arr(self.deg_values)
        if len(self.deg_ages) != len(self.deg_values):
            raise DataError("degradation ages and measurements differ in length")
        if not (len(self.failures) or len(self.survivors) or len(self.deg_ages)):
            raise DataError("no records")
        for name in ("failures", "survivors", "deg_ages"):
            if np.any(getattr(self, name) < 0):
                raise DataError(f"{name} must be nonnegative")
        if np.any(self.failures == 0):
            raise DataError("observed lifetimes must be positive")
        # sufficient summaries for the likelihood
        self._log_fail = np.log(self.failures)
        ages, counts = np.unique(self.survivors, return_counts=True)
        with np.errstate(divide="ignore"):
            self._log_surv = np.log(ages)
        self._surv_counts = counts.astype(float)

    @property
    def n_units(self):
        return len(self.deg_ages)


@dataclass
class DegFailParams:
    alpha: float
    log_beta: np.ndarray
    mu: float
    sigma_b: float
    sigma_y: float
    L: float


@dataclass(frozen=True)
class DegFailPriors:
    """Priors for the degradation/lifetime model.

    ``alpha`` may be a normal or a gamma; the default is the Gamma(4, rate
    1/30) prior with mean 120. ``L_over_alpha`` is a beta prior on the
    ratio; set ``L_fixed`` to pin the critical level instead.
    """

    alpha: DistSpec = field(default_factory=lambda: dists.gamma(4.0, 1.0 / 30.0))
    mu: DistSpec = field(default_factory=lambda: dists.normal(0.0, 1.0))
    sigma_y: DistSpec = field(default_factory=lambda: dists.gamma(4.0, 1.0 / 2.5))
    sigma_b: DistSpec = field(default_factory=lambda: dists.gamma(4.0, 5.0))
    L_over_alpha: DistSpec = field(default_factory=lambda: dists.beta(1.0, 1.0))
    L_fixed: float | None = None

    def __post_init__(self):
        if self.alpha.family not in ("normal", "gamma"):
            raise ValueError("alpha prior must be normal or gamma")
        if self.mu.family != "normal":
            raise ValueError("mu prior must be normal")
        if self.L_over_alpha.family != "beta":
            raise ValueError("L/alpha prior must be beta")
        fns = tuple(dists.scalar_log_density(getattr(self, k)) for k in ("alpha", "mu", "sigma_y", "sigma_b", "L_over_alpha"))
        object.__setattr__(self, "_fns", fns)


def degfail_log_posterior(p: DegFailParams, d: DegFailData, pr: DegFailPriors) -> float:
    """Unnormalized log-posterior of the degradation/lifetime model.

    The density is with respect to ``(alpha, log_beta, mu, sigma_b,
    sigma_y, L)``. Lifetimes are lognormal with log-mean
    ``mu + log(alpha - L)`` and sd ``sigma_b``; degradation unit ``j`` reads
    ``Normal(alpha - t_j / beta_j, sigma_y)``.
    """
    alpha, mu, sb, sy = p.alpha, p.mu, p.sigma_b, p.sigma_y
    L = pr.L_fixed if pr.L_fixed is not None else p.L
    if not (sb > 0 and sy > 0 and 0 < L < alpha):
        return -math.inf
    lb = np.asarray(p.log_beta, dtype=float)
    if len(lb) != d.n_units:
        raise DataError(f"{len(lb)} log_beta values for {d.n_units} degradation units")

    f_alpha, f_mu, f_sy, f_sb, f_ratio = pr._fns
    lp = f_alpha(alpha) + f_mu(mu) + f_sy(sy) + f_sb(sb)
    if pr.L_fixed is None:
        lp += f_ratio(L / alpha) - math.log(alpha)

    loc = mu + math.log(alpha - L)
    if len(d.failures):
        z = (d._log_fail - loc) / sb
        lp += -0.5 * float(z @ z) - len(z) * (math.log(sb) + _HALF_LOG_2PI) - float(d._log_fail.sum())
    if len(d.survivors):
        lp += float(log_ndtr((loc - d._log_surv) / sb) @ d._surv_counts)
    if d.n_units:
        z = (lb - mu) / sb
        r = d.deg_values - alpha + d.deg_ages * np.exp(-lb)
        lp += -0.5 * float(z @ z) - 0.5 * float(r @ r) / (sy * sy)
        lp -= d.n_units * (math.log(sb) + math.log(sy) + 2 * _HALF_LOG_2PI)
    return float(lp)


def degfail_reliability(p: DegFailParams, t, L=None):
    """Survivor function ``Phi((mu + log(alpha - L) - log t) / sigma_b)``.

    ``t`` must be positive; the limit at ``t -> 0`` is 1.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise dists.DomainError("reliability is defined for t > 0 (R(0) = 1 by limit)")
    L = p.L if L is None else L
    z = (p.mu + math.log(p.alpha - L) - np.log(t)) / p.sigma_b
    out = stats.norm.cdf(z)
    return float(out) if out.ndim == 0 else out


class DegFailModel:
    """Sampler layout for :func:`degfail_log_posterior`.

    Coordinates: ``alpha`` (positive), ``L_ratio = L/alpha`` (unit; absent
    when ``L`` is fixed), ``mu``, ``sigma_b``, ``sigma_y`` and the block
    ``log_beta``. Sampling the ratio adds ``log alpha`` to the target.
    """

    def __init__(self, data: DegFailData, priors: DegFailPriors | None = None):
        self.data = data
        self.priors = priors or DegFailPriors()

    def params(self, pv: ParamVector) -> DegFailParams:
        alpha = pv["alpha"]
        L = self.priors.L_fixed if self.priors.L_fixed is not None else pv["L_ratio"] * alpha
        lb = pv["log_beta"] if "log_beta" in pv else np.zeros(0)
        return DegFailParams(alpha, lb, pv["mu"], pv["sigma_b"], pv["sigma_y"], L)

    def log_post(self, pv: ParamVector) -> float:
        lp = degfail_log_posterior(self.params(pv), self.data, self.priors)
        if self.priors.L_fixed is None and lp > -math.inf:
            lp += math.log(pv["alpha"])
        return lp

    def reliability(self, pv: ParamVector, t):
        return degfail_reliability(self.params(pv), t)

    def initial(self) -> ParamVector:
        d, pr = self.data, self.priors
        if d.n_units >= 2 and np.ptp(d.deg_ages) > 0:
            slope, intercept = np.polyfit(d.deg_ages, d.deg_values, 1)
            resid = d.deg_values - (intercept + slope * d.deg_ages)
            sy = max(float(np.std(resid)), 1e-3 * max(1.0, abs(intercept)))
        else:
            intercept = float(np.max(d.deg_values)) if d.n_units else 100.0
            slope, sy = -1.0, 1.0
        alpha = intercept if intercept > 0 else 1.0
        if pr.L_fixed is not None and alpha <= pr.L_fixed:
            alpha = pr.L_fixed * 1.5
        L = pr.L_fixed if pr.L_fixed is not None else 0.2 * alpha
        rate = -slope if slope < 0 else 1.0 / max(1.0, float(np.max(d.deg_ages, initial=1.0)))
        # per-unit rates where the drop is positive, common rate otherwise
        drop = alpha - d.deg_values
        with np.errstate(divide="ignore", invalid="ignore"):
            lb = np.where((drop > 0) & (d.deg_ages > 0), np.log(d.deg_ages / drop), -math.log(rate))
        mu = float(np.mean(lb)) if d.n_units else -math.log(rate)
        if d.n_units:
            lb = np.clip(lb, mu - 2.0, mu + 2.0)
        obs = np.concatenate([d.failures, d.survivors])
        if len(obs):
            # keep the lifetime median beyond most observed ages
            mu = max(mu, float(np.log(np.median(obs))) - math.log(alpha - L))
        pv = ParamVector()
        pv.add("alpha", alpha, POSITIVE)
        if pr.L_fixed is None:
            pv.add("L_ratio", L / alpha, UNIT)
        pv.add("mu", mu, UNBOUNDED)
        pv.add("sigma_b", 0.3, POSITIVE)
        pv.add("sigma_y", sy, POSITIVE)
        if d.n_units:
            pv.add("log_beta", lb, UNBOUNDED)
        return pv


# ======================================================================
# pass/fail + specification measurements
# ======================================================================

@dataclass
class SurrogateQAData:
    pf_ages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pf_outcomes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spec_ages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spec_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    spec_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_specs: int | None = None

    def __post_init__(self):
        self.pf_ages = _arr(self.pf_ages)
        self.pf_outcomes = _arr(self.pf_outcomes)
        self.spec_ages = _arr(self.spec_ages)
        self.spec_index = np.asarray(self.spec_index, dtype=int).reshape(-1)
        self.spec_values = _arr(self.spec_values)
        if len(self.pf_ages) != len(self.pf_outcomes):
            raise DataError("pass/fail ages and outcomes differ in length")
        if not (len(self.spec_ages) == len(self.spec_index) == len(self.spec_values)):
            raise DataError("specification columns differ in length")
        if np.any((self.pf_outcomes != 0) & (self.pf_outcomes != 1)):
            raise DataError("pass/fail outcomes must be 0 or 1")
        if self.n_specs is None:
            self.n_specs = int(self.spec_index.max()) if len(self.spec_index) else 1
        if len(self.spec_index) and (self.spec_index.min() < 1 or self.spec_index.max() > self.n_specs):
            raise DataError(f"specification indices must lie in 1..{self.n_specs}")
        if np.any(self.pf_ages < 0) or np.any(self.spec_ages < 0):
            raise DataError("ages must be nonnegative")


@dataclass
class SurrogateQAParams:
    """Per-specification parameters, each an array of length J.

    Measurement ``j`` at age ``t`` is ``Normal(alpha + delta t, gamma)``;
    the unit passes when every measurement clears its threshold, which is
    ``Normal(theta, sigma)``-distributed.
    """

    alpha: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "delta", "gamma", "theta", "sigma"):
            setattr(self, name, _arr(getattr(self, name)))

    @property
    def J(self):
        return len(self.alpha)


def _surrogate_z(p: SurrogateQAParams, t):
    t = np.asarray(t, dtype=float)
    if np.any(p.gamma <= 0) or np.any(p.sigma <= 0):
        raise dists.ParameterError("gamma and sigma must be positive")
    scale = np.sqrt(p.gamma**2 + p.sigma**2)
    return (p.alpha + np.multiply.outer(t, p.delta) - p.theta) / scale


def surrogate_log_reliability(p: SurrogateQAParams, t):
    out = stats.norm.logcdf(_surrogate_z(p, t)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def surrogate_reliability(p: SurrogateQAParams, t):
    """Pass probability at age ``t`` with the measurements integrated out."""
    return np.exp(surrogate_log_reliability(p, t))


def surrogate_log_likelihood(p: SurrogateQAParams, d: SurrogateQAData) -> float:
    """Bernoulli pass/fail terms plus normal specification-measurement terms.

    Measurement ``i`` on specification ``k_i`` has sd ``gamma[k_i]``.
    """
    total = 0.0
    if len(d.pf_ages):
        log_r = np.atleast_1d(surrogate_log_reliability(p, d.pf_ages))
        with np.errstate(divide="ignore"):
            log_q = np.log(-np.expm1(log_r))
        total += float(np.sum(np.where(d.pf_outcomes == 1, log_r, log_q)))
    if len(d.spec_values):
        k = d.spec_index - 1
        mean = p.alpha[k] + p.delta[k] * d.spec_ages
        total += float(np.sum(norm_logpdf(d.spec_values, mean, p.gamma[k])))
    return total


@dataclass
class SurrogatePriors:
    alpha: DistSpec = field(default_factory=lambda: dists.normal(0.0, 10.0))
    delta: DistSpec = field(default_factory=lambda: dists.normal(0.0, 10.0))
    gamma: DistSpec = field(default_factory=lambda: dists.gamma(1.0, 0.1))
    theta: DistSpec = field(default_factory=lambda: dists.normal(0.0, 10.0))
    sigma: DistSpec = field(default_factory=lambda: dists.gamma(1.0, 0.1))

    def log_density(self, p: SurrogateQAParams) -> float:
        return float(
            sum(
                np.sum(dists.log_density(getattr(self, name), getattr(p, name)))
                for name in ("alpha", "delta", "gamma", "theta", "sigma")
            )
        )


class SurrogateModel:
    def __init__(self, data: SurrogateQAData, priors: SurrogatePriors | None = None):
        self.data = data
        self.priors = priors or SurrogatePriors()

    def params(self, pv):
        return SurrogateQAParams(pv["alpha"], pv["delta"], pv["gamma"], pv["theta"], pv["sigma"])

    def log_post(self, pv):
        p = self.params(pv)
        return self.priors.log_density(p) + surrogate_log_likelihood(p, self.data)

    def reliability(self, pv, t):
        return surrogate_reliability(self.params(pv), t)

    def initial(self) -> ParamVector:
        d = self.data
        J = d.n_specs
        alpha, delta, gamma = np.zeros(J), np.zeros(J), np.ones(J)
        for j in range(J):
            sel = d.spec_index == j + 1
            if sel.sum() >= 3 and np.ptp(d.spec_ages[sel]) > 0:
                b, a = np.polyfit(d.spec_ages[sel], d.spec_values[sel], 1)
                alpha[j], delta[j] = a, b
                gamma[j] = max(float(np.std(d.spec_values[sel] - a - b * d.spec_ages[sel])), 1e-3)
            elif sel.any():
                alpha[j] = float(d.spec_values[sel].mean())
        # thresholds two spreads below the measurement mean: pass probability ~ 0.98
        theta = alpha - 2.0 * np.sqrt(2.0) * gamma
        return (
            ParamVector()
            .add("alpha", alpha)
            .add("delta", delta)
            .add("gamma", gamma, POSITIVE)
            .add("theta", theta)
            .add("sigma", gamma.copy(), POSITIVE)
        )


# ======================================================================
# biased and random lot samples
# ======================================================================

@dataclass
class LotData:
    N: np.ndarray
    n_c: np.ndarray
    y_c: np.ndarray
    n_r: np.ndarray
    y_r: np.ndarray

    def __post_init__(self):
        for name in ("N", "n_c", "y_c", "n_r", "y_r"):
            v = np.asarray(getattr(self, name)).reshape(-1)
            if np.any(v < 0) or np.any(v != np.round(v)):
                raise DataError(f"{name} must hold nonnegative integers")
            setattr(self, name, v.astype(int))
        if len({len(self.N), len(self.n_c), len(self.y_c), len(self.n_r), len(self.y_r)}) != 1:
            raise DataError("lot columns differ in length")
        if len(self.N) == 0:
            raise DataError("no records")
        if np.any(self.y_c > self.n_c) or np.any(self.y_r > self.n_r):
            raise DataError("found more features than items sampled")
        if np.any(self.n_c + self.n_r > self.N):
            raise DataError("samples exceed lot size")

    @property
    def n_lots(self):
        return len(self.N)

    def K_bounds(self):
        """Feasible feature counts per lot: observed features up to N minus observed non-features."""
        lo = self.y_c + self.y_r
        hi = self.N - (self.n_c - self.y_c) - (self.n_r - self.y_r)
        return lo, hi


@dataclass
class LotParams:
    p: np.ndarray
    K: np.ndarray
    a: float
    b: float
    theta: float


@dataclass
class LotPriors:
    a: DistSpec = field(default_factory=lambda: dists.gamma(1.0, 0.1))
    b: DistSpec = field(default_factory=lambda: dists.gamma(1.0, 0.1))
    theta: DistSpec = field(default_factory=lambda: dists.lognormal(0.0, 1.0))

    def __post_init__(self):
        if self.theta.family != "lognormal":
            raise ValueError("the bias prior must be lognormal")


def lot_sampling_log_pmf(N, K, n_c, y_c, n_r, y_r, theta):
    """Log-probability of the convenience then random sample counts in one lot."""
    lc = dists.ext_hypergeom_logpmf(N, K, n_c, theta, y_c)
    if lc == -math.inf:
        return -math.inf
    Nr, Kr = N - n_c, K - y_c
    lr = log_binom(Kr, y_r) + log_binom(Nr - Kr, n_r - y_r) - log_binom(Nr, n_r)
    return float(lc + lr)


def lot_log_posterior(p: LotParams, d: LotData, priors: LotPriors | None = None) -> float:
    """Binomial feature counts, beta lot prevalences, biased and random sampling."""
    priors = priors or LotPriors()
    K = np.asarray(p.K)
    pj = np.asarray(p.p, dtype=float)
    lo, hi = d.K_bounds()
    if np.any(K != np.round(K)) or np.any(K < lo) or np.any(K > hi):
        return -math.inf
    if not (p.a > 0 and p.b > 0 and p.theta > 0) or np.any((pj <= 0) | (pj >= 1)):
        return -math.inf
    K = K.astype(int)
    total = dists.log_density(priors.theta, p.theta)
    total += dists.log_density(priors.a, p.a) + dists.log_density(priors.b, p.b)
    total += float(np.sum(dists.log_density(dists.beta(p.a, p.b), pj)))
    total += float(np.sum(log_binom(d.N, K) + K * np.log(pj) + (d.N - K) * np.log1p(-pj)))
    for j in range(d.n_lots):
        total += lot_sampling_log_pmf(d.N[j], K[j], d.n_c[j], d.y_c[j], d.n_r[j], d.y_r[j], p.theta)
    return float(total)


def feature_prevalence(K, d: LotData) -> float:
    """Fraction of unsampled items carrying the feature, pooled over lots."""
    K = np.asarray(K)
    unsampled = np.sum(d.N - d.n_c - d.n_r)
    if unsampled <= 0:
        raise DataError("no unsampled items")
    return float(np.sum(K - d.y_c - d.y_r) / unsampled)


class LotModel:
    """Coordinates ``p`` (unit block), ``K`` (integer block), ``a``, ``b``, ``theta``."""

    def __init__(self, data: LotData, priors: LotPriors | None = None):
        self.data = data
        self.priors = priors or LotPriors()

    def params(self, pv):
        return LotParams(pv["p"], pv["K"], pv["a"], pv["b"], pv["theta"])

    def log_post(self, pv):
        return lot_log_posterior(self.params(pv), self.data, self.priors)

    def prevalence(self, pv):
        return feature_prevalence(pv["K"], self.data)

    def initial(self) -> ParamVector:
        d = self.data
        lo, hi = d.K_bounds()
        n = d.n_c + d.n_r
        frac = np.where(n > 0, (d.y_c + d.y_r + 0.5) / (n + 1.0), 0.5)
        K = np.clip(np.round(frac * d.N), lo, hi)
        p = np.clip((K + 0.5) / (d.N + 1.0), 0.01, 0.99)
        ks = [integer(lo[j], hi[j]) for j in range(d.n_lots)]
        return (
            ParamVector()
            .add("p", p, UNIT)
            .add("K", K.astype(float), ks)
            .add("a", 1.0, POSITIVE)
            .add("b", 1.0, POSITIVE)
            .add("theta", 1.0, POSITIVE)
        )
