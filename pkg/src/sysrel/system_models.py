"""Multilevel system models.

Series composition of aging components with system pass/fail data,
partially informative system tests, a hierarchical nonhomogeneous Poisson
process (NHPP) for fleets of repairable units in series, a hierarchical
Weibull series system with component and system lifetimes, and the prior
densities a series structure induces between component and system levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln, log_expit, log_ndtr

from . import dists
from .component_models import DataError, DegFailData, DegFailModel, DegFailParams, DegFailPriors, degfail_log_posterior
from .component_models import SurrogateModel, SurrogatePriors, SurrogateQAData, SurrogateQAParams
from .component_models import surrogate_log_likelihood, surrogate_log_reliability
from .dists import DistSpec, ParameterError
from .mcmc import POSITIVE, UNBOUNDED, ParamVector

__all__ = [
    "LogisticAging",
    "WeibullLifetime",
    "DegradationLognormal",
    "component_reliability",
    "series_reliability",
    "BinomialAgeData",
    "LifetimeData",
    "LogisticComponent",
    "WeibullComponent",
    "DegradationComponent",
    "MultilevelSystem",
    "multilevel_log_posterior",
    "binomial_age_log_likelihood",
    "PartialSystemTest",
    "partial_test_log_likelihood",
    "PartialTestSystem",
    "NHPPFleetData",
    "NHPPParams",
    "NHPPPriors",
    "NHPPModel",
    "nhpp_interval_means",
    "nhpp_log_likelihood",
    "nhpp_log_posterior",
    "nhpp_reliability",
    "WeibullSeriesData",
    "WeibullSeriesParams",
    "WeibullSeriesModel",
    "weibull_series_log_posterior",
    "weibull_series_system_density",
    "induced_series_prior_density",
]

_HALF_LOG_2PI = 0.5 * dists.LOG_2PI


# ======================================================================
# component reliability functions
# ======================================================================

@dataclass(frozen=True)
class LogisticAging:
    """``logit R(t) = theta0 + theta1 (t - center)``."""

    theta0: float
    theta1: float
    center: float = 0.0


@dataclass(frozen=True)
class WeibullLifetime:
    """``R(t) = exp(-lam0 t**lam1)``; shape ``lam1``, scale ``lam0**(-1/lam1)``."""

    lam0: float
    lam1: float

    def __post_init__(self):
        if not (self.lam0 > 0 and self.lam1 > 0):
            raise ParameterError("lam0 and lam1 must be positive")

    @classmethod
    def from_shape_scale(cls, shape, scale):
        return cls(scale ** (-shape), shape)


@dataclass(frozen=True)
class DegradationLognormal:
    """Lognormal lifetime from linear degradation crossing level ``D``."""

    mu: float
    sigma_b: float
    alpha: float
    D: float

    def __post_init__(self):
        if not self.sigma_b > 0:
            raise ParameterError("sigma_b must be positive")
        if not self.alpha > self.D:
            raise ParameterError("alpha must exceed D")


def component_reliability(m, t):
    """Probability that a component of age ``t`` works."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise dists.DomainError("ages must be nonnegative")
    if isinstance(m, LogisticAging):
        out = expit(m.theta0 + m.theta1 * (t - m.center))
    elif isinstance(m, WeibullLifetime):
        out = np.exp(-m.lam0 * t**m.lam1)
    elif isinstance(m, DegradationLognormal):
        with np.errstate(divide="ignore"):
            z = (np.log(t) - m.mu - math.log(m.alpha - m.D)) / m.sigma_b
        out = np.exp(log_ndtr(-z))
    else:
        raise ParameterError(f"unknown component model {type(m).__name__}")
    return float(out) if out.ndim == 0 else out


def series_reliability(models: Sequence, t):
    if not models:
        raise ParameterError("a series system needs at least one component")
    out = component_reliability(models[0], t)
    for m in models[1:]:
        out = out * component_reliability(m, t)
    return out


# ======================================================================
# multilevel series system
# ======================================================================

@dataclass
class BinomialAgeData:
    ages: np.ndarray
    trials: np.ndarray
    successes: np.ndarray

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=float).reshape(-1)
        self.trials = np.asarray(self.trials, dtype=float).reshape(-1)
        self.successes = np.asarray(self.successes, dtype=float).reshape(-1)
        if not len(self.ages) == len(self.trials) == len(self.successes):
            raise DataError("binomial columns differ in length")
        if np.any(self.successes < 0) or np.any(self.successes > self.trials):
            raise DataError("need 0 <= successes <= trials")
        if np.any(self.ages < 0):
            raise DataError("ages must be nonnegative")
        self._log_choose = float(np.sum(dists.log_binom(self.trials, self.successes)))

    @property
    def failures(self):
        return self.trials - self.successes


def binomial_age_log_likelihood(log_r, log_q, d: BinomialAgeData) -> float:
    """Binomial log-likelihood from log success and log failure probabilities per row."""
    s, f = d.successes, d.failures
    with np.errstate(invalid="ignore"):
        terms = np.where(s > 0, s * log_r, 0.0) + np.where(f > 0, f * log_q, 0.0)
    return d._log_choose + float(np.sum(terms))


def _log_q_from_log_r(log_r):
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(log_r))


@dataclass
class LifetimeData:
    times: np.ndarray
    censored: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if self.censored is None:
            self.censored = np.zeros(len(self.times), dtype=bool)
        self.censored = np.asarray(self.censored, dtype=bool).reshape(-1)
        if len(self.censored) != len(self.times):
            raise DataError("lifetimes and censoring flags differ in length")
        if np.any(self.times[~self.censored] <= 0) or np.any(self.times < 0):
            raise DataError("lifetimes must be positive")

    @property
    def observed(self):
        return self.times[~self.censored]

    @property
    def censored_times(self):
        return self.times[self.censored]


class LogisticComponent:
    """Pass/fail tests at ages with a logistic aging curve.

    Ages are centered on the mean test age; ``theta0`` and ``theta1`` get
    independent normal priors.
    """

    kind = "logistic"

    def __init__(self, data: BinomialAgeData, prior_mean=0.0, prior_sd=10.0, center=None):
        self.data = data
        self.center = float(np.mean(data.ages)) if center is None else float(center)
        self.prior = dists.scalar_log_density(dists.normal(prior_mean, prior_sd))
        self._tc = data.ages - self.center

    def names(self):
        return ["theta0", "theta1"]

    def add_params(self, pv: ParamVector, prefix: str):
        d = self.data
        frac = (d.successes.sum() + 0.5) / (d.trials.sum() + 1.0)
        pv.add(prefix + "theta0", math.log(frac / (1 - frac)), UNBOUNDED)
        pv.add(prefix + "theta1", 0.0, UNBOUNDED)

    def model(self, pv, prefix) -> LogisticAging:
        return LogisticAging(pv[prefix + "theta0"], pv[prefix + "theta1"], self.center)

    def log_reliability(self, pv, prefix, t):
        return log_expit(pv[prefix + "theta0"] + pv[prefix + "theta1"] * (np.asarray(t, float) - self.center))

    def log_post(self, pv, prefix) -> float:
        a, b = pv[prefix + "theta0"], pv[prefix + "theta1"]
        eta = a + b * self._tc
        ll = binomial_age_log_likelihood(log_expit(eta), log_expit(-eta), self.data)
        return self.prior(a) + self.prior(b) + ll


class WeibullComponent:
    """Observed and right-censored Weibull lifetimes.

    Sampled as ``(shape, scale)``; the rate form is ``lam0 = scale**-shape``,
    ``lam1 = shape``. Default priors are wide lognormals.
    """

    kind = "weibull"

    def __init__(self, data: LifetimeData, shape_prior: DistSpec | None = None, scale_prior: DistSpec | None = None):
        self.data = data
        self.shape_prior = shape_prior or dists.lognormal(0.0, 1.5)
        self.scale_prior = scale_prior or dists.lognormal(math.log(20.0), 2.0)
        self._f_shape = dists.scalar_log_density(self.shape_prior)
        self._f_scale = dists.scalar_log_density(self.scale_prior)
        self._obs = data.observed
        self._log_obs_sum = float(np.sum(np.log(self._obs)))
        self._cens = data.censored_times

    def names(self):
        return ["shape", "scale"]

    def add_params(self, pv, prefix):
        scale = float(np.mean(self.data.times)) * 1.2 if len(self.data.times) else 10.0
        pv.add(prefix + "shape", 1.5, POSITIVE)
        pv.add(prefix + "scale", scale, POSITIVE)

    def model(self, pv, prefix) -> WeibullLifetime:
        return WeibullLifetime.from_shape_scale(pv[prefix + "shape"], pv[prefix + "scale"])

    def log_reliability(self, pv, prefix, t):
        k, lam = pv[prefix + "shape"], pv[prefix + "scale"]
        return -((np.asarray(t, float) / lam) ** k)

    def log_post(self, pv, prefix) -> float:
        k, lam = pv[prefix + "shape"], pv[prefix + "scale"]
        n = len(self._obs)
        lp = self._f_shape(k) + self._f_scale(lam)
        lp += n * (math.log(k) - k * math.log(lam)) + (k - 1.0) * self._log_obs_sum
        lp -= float(np.sum((self._obs / lam) ** k)) + float(np.sum((self._cens / lam) ** k))
        return lp


class DegradationComponent:
    """Degradation measurements plus lifetimes with a known critical level ``D``."""

    kind = "degradation"

    def __init__(self, data: DegFailData, D: float, priors: DegFailPriors | None = None):
        if priors is None:
            priors = DegFailPriors(L_fixed=D)
        elif priors.L_fixed != D:
            raise ValueError("priors must fix L at D")
        self.data = data
        self.D = float(D)
        self.priors = priors
        self._inner = DegFailModel(data, priors)

    def names(self):
        return ["alpha", "mu", "sigma_b", "sigma_y"] + (["log_beta"] if self.data.n_units else [])

    def add_params(self, pv, prefix):
        init = self._inner.initial()
        for name in init.entries:
            pv.add(prefix + name, init[name], init.supports[init.slice_of(name).start])

    def _params(self, pv, prefix):
        lb = pv[prefix + "log_beta"] if self.data.n_units else np.zeros(0)
        return DegFailParams(pv[prefix + "alpha"], lb, pv[prefix + "mu"], pv[prefix + "sigma_b"], pv[prefix + "sigma_y"], self.D)

    def model(self, pv, prefix) -> DegradationLognormal:
        return DegradationLognormal(pv[prefix + "mu"], pv[prefix + "sigma_b"], pv[prefix + "alpha"], self.D)

    def log_reliability(self, pv, prefix, t):
        alpha = pv[prefix + "alpha"]
        if alpha <= self.D:
            return np.full(np.shape(t), -np.inf)
        with np.errstate(divide="ignore"):
            z = (np.log(np.asarray(t, float)) - pv[prefix + "mu"] - math.log(alpha - self.D)) / pv[prefix + "sigma_b"]
        return log_ndtr(-z)

    def log_post(self, pv, prefix) -> float:
        return degfail_log_posterior(self._params(pv, prefix), self.data, self.priors)


def _series_log(log_rs):
    return np.sum(log_rs, axis=0)


class MultilevelSystem:
    """Components with their own data plus binomial system tests.

    ``system_log_reliability`` maps the stacked component log-reliabilities
    (shape ``(n_components, n_ages)``) to system log-reliability; the default
    is a series structure. Parameters of component ``c`` carry the prefix
    ``"c{i}."``, e.g. ``"c0.theta1"``.
    """

    def __init__(
        self,
        components: Sequence,
        system_data: BinomialAgeData | None = None,
        system_log_reliability: Callable | None = None,
    ):
        if not components:
            raise ValueError("at least one component is required")
        self.components = list(components)
        self.system_data = system_data
        self.system_log_reliability = system_log_reliability or _series_log

    def prefix(self, i):
        return f"c{i}."

    def initial(self) -> ParamVector:
        pv = ParamVector()
        for i, c in enumerate(self.components):
            c.add_params(pv, self.prefix(i))
        return pv

    def component_log_reliabilities(self, pv, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.vstack([c.log_reliability(pv, self.prefix(i), t) for i, c in enumerate(self.components)])

    def log_reliability(self, pv, t):
        return self.system_log_reliability(self.component_log_reliabilities(pv, t))

    def reliability(self, pv, t):
        return np.exp(self.log_reliability(pv, t))

    def component_reliabilities(self, pv, t):
        return np.exp(self.component_log_reliabilities(pv, t))

    def log_post(self, pv) -> float:
        return multilevel_log_posterior(self, pv)


def multilevel_log_posterior(system: MultilevelSystem, pv: ParamVector) -> float:
    """Component log-posteriors plus the system binomial log-likelihood."""
    total = 0.0
    for i, c in enumerate(system.components):
        total += c.log_post(pv, system.prefix(i))
        if total == -math.inf:
            return total
    d = system.system_data
    if d is not None and len(d.ages):
        log_r = system.log_reliability(pv, d.ages)
        total += binomial_age_log_likelihood(log_r, _log_q_from_log_r(log_r), d)
    return float(total)


# ======================================================================
# partially informative system tests
# ======================================================================

@dataclass(frozen=True)
class PartialSystemTest:
    """Outcome of one system test with partial attribution.

    ``worked`` components are known to have worked, ``failed`` known to
    have failed, and at least one member of ``some_failed`` failed.
    """

    worked: frozenset = frozenset()
    failed: frozenset = frozenset()
    some_failed: frozenset = frozenset()
    age: float = 0.0

    def __post_init__(self):
        for name in ("worked", "failed", "some_failed"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.worked & self.failed) or (self.worked & self.some_failed) or (self.failed & self.some_failed):
            raise DataError("component sets of a partial test must be disjoint")
        if self.age < 0:
            raise DataError("ages must be nonnegative")


def _plog(x):
    return math.log(x) if x > 0 else -math.inf


def _log_fail(p):
    return math.log1p(-p) if p < 1 else -math.inf


def partial_test_log_likelihood(tests: Sequence[PartialSystemTest], p) -> float:
    """Log-probability of partial test outcomes.

    ``p[i][k]`` is the probability that component ``k`` works in test ``i``.
    An empty ``some_failed`` set contributes nothing.
    """
    total = 0.0
    for i, test in enumerate(tests):
        pi = p[i]
        for k in test.worked:
            total += _plog(pi[k])
        for k in test.failed:
            total += _log_fail(pi[k])
        if len(test.some_failed) == 1:
            # a singleton "some failed" set is a known failure
            (k,) = test.some_failed
            total += _log_fail(pi[k])
        elif test.some_failed:
            # log(1 - prod p) from the sum of logs
            s = sum(_plog(pi[k]) for k in test.some_failed)
            total += math.log(-math.expm1(s)) if s < 0 else -math.inf
    return total


class PartialTestSystem:
    """Series system of surrogate-data components with partial system tests.

    Component ``k`` (0-based, matching the ids used in the tests) has its own
    pass/fail and specification data; its pass probability at the test age
    feeds the partial-test likelihood.
    """

    def __init__(self, components: Sequence[SurrogateQAData], tests: Sequence[PartialSystemTest], priors: SurrogatePriors | None = None):
        self.models = [SurrogateModel(d, priors) for d in components]
        self.tests = list(tests)
        ids = set()
        for t in self.tests:
            ids |= t.worked | t.failed | t.some_failed
        if ids and (min(ids) < 0 or max(ids) >= len(self.models)):
            raise DataError(f"test component ids must lie in 0..{len(self.models) - 1}")
        self._ages = np.array([t.age for t in self.tests])

    def initial(self) -> ParamVector:
        pv = ParamVector()
        for k, m in enumerate(self.models):
            sub = m.initial()
            for name in sub.entries:
                pv.add(f"c{k}.{name}", sub[name], sub.supports[sub.slice_of(name).start])
        return pv

    def params(self, pv, k) -> SurrogateQAParams:
        g = lambda n: pv[f"c{k}.{n}"]
        return SurrogateQAParams(g("alpha"), g("delta"), g("gamma"), g("theta"), g("sigma"))

    def component_reliabilities(self, pv, t):
        t = np.atleast_1d(np.asarray(t, float))
        return np.vstack([np.exp(surrogate_log_reliability(self.params(pv, k), t)) for k in range(len(self.models))])

    def reliability(self, pv, t):
        return np.prod(self.component_reliabilities(pv, t), axis=0)

    def log_post(self, pv) -> float:
        total = 0.0
        for k, m in enumerate(self.models):
            p = self.params(pv, k)
            total += m.priors.log_density(p) + surrogate_log_likelihood(p, m.data)
        if self.tests and total > -math.inf:
            p_ik = self.component_reliabilities(pv, self._ages).T
            total += partial_test_log_likelihood(self.tests, p_ik)
        return float(total)


# ======================================================================
# hierarchical NHPP for a fleet in series
# ======================================================================

@dataclass
class NHPPFleetData:
    """Failure counts ``counts[i, j]`` for unit ``i`` in interval ``((j-1)t, jt]``.

    ``include`` masks units out of the fit (e.g. a structurally different
    outlier) without altering the counts.
    """

    counts: np.ndarray
    interval: float = 1.0
    include: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise DataError("counts must be a units-by-intervals matrix")
        if np.any(c < 0) or np.any(c != np.round(c)):
            raise DataError("counts must be nonnegative integers")
        if not self.interval > 0:
            raise DataError("interval length must be positive")
        self.counts = c.astype(float)
        if self.include is None:
            self.include = np.ones(c.shape[0], dtype=bool)
        self.include = np.asarray(self.include, dtype=bool).reshape(-1)
        if len(self.include) != c.shape[0]:
            raise DataError("inclusion mask length must equal the number of units")

    @property
    def n_units(self):
        return int(self.include.sum())

    @property
    def n_intervals(self):
        return self.counts.shape[1]

    @property
    def active_counts(self):
        return self.counts[self.include]


@dataclass
class NHPPParams:
    """Per-unit extended power-law parameters (one entry per included unit).

    Intensity ``nu(t) = (phi/eta) (t/eta)**(phi-1) + rho``.
    """

    eta: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if not len(self.eta) == len(self.phi) == len(self.rho):
            raise ParameterError("eta, phi and rho differ in length")


HYPER_NAMES = ("mu_eta", "sd_eta", "mu_phi", "sd_phi", "mu_rho", "sd_rho")


def _cum_mean(p: NHPPParams, t):
    """Cumulative mean function at times ``t`` (broadcast over units in rows)."""
    t = np.asarray(t, dtype=float)
    return (t / p.eta[:, None]) ** p.phi[:, None] + p.rho[:, None] * t


def _mean_increment(p: NHPPParams, s, l):
    """``Lambda(s + l) - Lambda(s)`` without cancellation when ``l << s``."""
    s = np.asarray(s, dtype=float)
    l = np.asarray(l, dtype=float)
    eta, phi, rho = p.eta[:, None], p.phi[:, None], p.rho[:, None]
    near = l <= s
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rel = (s / eta) ** phi * np.expm1(phi * np.log1p(l / s))
    power = np.where(near, rel, ((s + l) / eta) ** phi - (s / eta) ** phi)
    return power + rho * l


def nhpp_interval_means(p: NHPPParams, n_intervals: int, interval: float):
    grid = interval * np.arange(n_intervals + 1)
    return np.diff(_cum_mean(p, grid), axis=1)


def nhpp_log_likelihood(p: NHPPParams, d: NHPPFleetData) -> float:
    """Independent Poisson counts per unit and interval."""
    x = d.active_counts
    if x.shape[0] != len(p.eta):
        raise ParameterError(f"{len(p.eta)} parameter sets for {x.shape[0]} included units")
    if np.any(p.eta <= 0) or np.any(p.phi <= 0) or np.any(p.rho < 0):
        return -math.inf
    mu = nhpp_interval_means(p, d.n_intervals, d.interval)
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogmu = np.where(x > 0, x * np.log(mu), 0.0)
    return float(np.sum(xlogmu) - np.sum(mu) - np.sum(gammaln(x + 1.0)))


def nhpp_reliability(p: NHPPParams, l, s):
    """Probability that a job of length ``l`` started at age ``s`` sees no failure on any unit."""
    l = np.asarray(l, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(l <= 0) or np.any(s < 0):
        raise dists.DomainError("need l > 0 and s >= 0")
    s_, l_ = np.broadcast_arrays(s, l)
    flat_s, flat_l = s_.reshape(-1), l_.reshape(-1)
    log_r = -_mean_increment(p, flat_s, flat_l).sum(axis=0)
    out = np.exp(log_r).reshape(s_.shape)
    return float(out) if out.ndim == 0 else out


@dataclass
class NHPPPriors:
    """Weibull ``(shape, scale)`` hyperpriors for the six gamma mean/sd hyperparameters."""

    mu_eta: DistSpec
    sd_eta: DistSpec
    mu_phi: DistSpec = field(default_factory=lambda: dists.weibull(2.0, 1.0))
    sd_phi: DistSpec = field(default_factory=lambda: dists.weibull(2.0, 0.5))
    mu_rho: DistSpec = field(default_factory=lambda: dists.weibull(1.0, 1.0))
    sd_rho: DistSpec = field(default_factory=lambda: dists.weibull(1.0, 1.0))

    @classmethod
    def default_for(cls, d: NHPPFleetData) -> "NHPPPriors":
        """Scales tied to the observation window and the mean failure rate."""
        horizon = d.interval * d.n_intervals
        rate = max(float(d.active_counts.sum()) / max(d.n_units, 1) / horizon, 1e-3)
        return cls(
            mu_eta=dists.weibull(1.0, horizon),
            sd_eta=dists.weibull(1.0, horizon),
            mu_rho=dists.weibull(1.0, rate),
            sd_rho=dists.weibull(1.0, rate),
        )

    def log_density(self, hyper: Mapping) -> float:
        return float(sum(dists.log_density(getattr(self, k), hyper[k]) for k in HYPER_NAMES))


def _gamma_mean_sd_logpdf(x, mean, sd):
    shape = (mean / sd) ** 2
    rate = mean / sd**2
    with np.errstate(divide="ignore"):
        out = shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * np.log(x) - rate * x
    return float(np.sum(np.where(x > 0, out, -np.inf)))


def nhpp_log_posterior(p: NHPPParams, d: NHPPFleetData, priors: NHPPPriors) -> float:
    h = p.hyper
    if any(not h[k] > 0 for k in HYPER_NAMES):
        return -math.inf
    total = priors.log_density(h)
    total += _gamma_mean_sd_logpdf(p.eta, h["mu_eta"], h["sd_eta"])
    total += _gamma_mean_sd_logpdf(p.phi, h["mu_phi"], h["sd_phi"])
    total += _gamma_mean_sd_logpdf(p.rho, h["mu_rho"], h["sd_rho"])
    if total == -math.inf:
        return total
    return float(total + nhpp_log_likelihood(p, d))


class NHPPModel:
    """Sampler layout: blocks ``eta``, ``phi``, ``rho`` and six positive hyperparameters."""

    def __init__(self, data: NHPPFleetData, priors: NHPPPriors | None = None):
        self.data = data
        self.priors = priors or NHPPPriors.default_for(data)

    def params(self, pv) -> NHPPParams:
        return NHPPParams(pv["eta"], pv["phi"], pv["rho"], {k: pv[k] for k in HYPER_NAMES})

    def log_post(self, pv):
        return nhpp_log_posterior(self.params(pv), self.data, self.priors)

    def reliability(self, pv, l, s):
        return nhpp_reliability(self.params(pv), l, s)

    def initial(self) -> ParamVector:
        d = self.data
        C = d.n_units
        horizon = d.interval * d.n_intervals
        totals = d.active_counts.sum(axis=1)
        # split each unit's count evenly between the power-law and constant parts
        rho = np.maximum(0.5 * totals / horizon, 1e-3)
        eta = horizon / np.maximum(0.5 * totals, 0.5)
        phi = np.full(C, 1.0)
        pv = ParamVector().add("eta", eta, POSITIVE).add("phi", phi, POSITIVE).add("rho", rho, POSITIVE)
        for k, v in zip(HYPER_NAMES, (eta.mean(), eta.mean(), 1.0, 0.5, rho.mean(), rho.mean())):
            pv.add(k, float(v), POSITIVE)
        return pv


# ======================================================================
# hierarchical Weibull series system
# ======================================================================

@dataclass
class WeibullSeriesData:
    component_times: list
    system_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.component_times = [np.asarray(x, dtype=float).reshape(-1) for x in self.component_times]
        self.system_times = np.asarray(self.system_times, dtype=float).reshape(-1)
        for x in self.component_times + [self.system_times]:
            if np.any(x <= 0):
                raise DataError("lifetimes must be positive")
        self._log_comp = [np.log(x) for x in self.component_times]

    @property
    def n_components(self):
        return len(self.component_times)


@dataclass
class WeibullSeriesParams:
    """Component shapes ``alpha`` and scales ``beta`` with gamma hyperparameters.

    ``alpha_i ~ Gamma(lam_a, rate zeta_a)`` and ``beta_i ~ Gamma(lam_b, rate zeta_b)``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    lam_a: float
    zeta_a: float
    lam_b: float
    zeta_b: float

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))


def _gamma_logpdf_sum(x, shape, rate):
    return float(np.sum(shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * np.log(x) - rate * x))


def weibull_series_system_density(p: WeibullSeriesParams, t):
    """Density of the minimum of the component lifetimes: ``R_S(t) sum_i h_i(t)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = p.alpha[:, None], p.beta[:, None]
    z = t[None, :] / b
    hazard = (a / b) * z ** (a - 1.0)
    out = np.exp(-np.sum(z**a, axis=0)) * hazard.sum(axis=0)
    return out


def weibull_series_log_posterior(p: WeibullSeriesParams, d: WeibullSeriesData, hyper_rates=(1.0, 1.0, 1.0, 1.0)) -> float:
    """Component and system lifetime log-likelihoods with hierarchical gamma priors."""
    if len(p.alpha) != d.n_components or len(p.beta) != d.n_components:
        raise ParameterError("one (alpha, beta) pair per component is required")
    hyp = np.array([p.lam_a, p.zeta_a, p.lam_b, p.zeta_b])
    if np.any(hyp <= 0) or np.any(p.alpha <= 0) or np.any(p.beta <= 0):
        return -math.inf
    rates = np.asarray(hyper_rates, dtype=float)
    total = float(np.sum(np.log(rates) - rates * hyp))
    total += _gamma_logpdf_sum(p.alpha, p.lam_a, p.zeta_a)
    total += _gamma_logpdf_sum(p.beta, p.lam_b, p.zeta_b)
    for a, b, x, lx in zip(p.alpha, p.beta, d.component_times, d._log_comp):
        if len(x):
            total += len(x) * (math.log(a) - a * math.log(b)) + (a - 1.0) * float(lx.sum()) - float(np.sum((x / b) ** a))
    if len(d.system_times):
        t = d.system_times
        a, b = p.alpha[:, None], p.beta[:, None]
        log_z = np.log(t)[None, :] - np.log(b)
        log_h = np.log(a / b) + (a - 1.0) * log_z
        total += float(np.sum(np.logaddexp.reduce(log_h, axis=0)) - np.sum(np.exp(a * log_z)))
    return total


class WeibullSeriesModel:
    """Sampler layout: blocks ``alpha``, ``beta`` and hyperparameters."""

    def __init__(self, data: WeibullSeriesData, hyper_rates=(1.0, 1.0, 1.0, 1.0)):
        self.data = data
        self.hyper_rates = tuple(float(r) for r in hyper_rates)

    def params(self, pv) -> WeibullSeriesParams:
        return WeibullSeriesParams(pv["alpha"], pv["beta"], pv["lam_a"], pv["zeta_a"], pv["lam_b"], pv["zeta_b"])

    def log_post(self, pv):
        return weibull_series_log_posterior(self.params(pv), self.data, self.hyper_rates)

    def component_reliabilities(self, pv, t):
        t = np.atleast_1d(np.asarray(t, float))
        return np.exp(-((t[None, :] / pv["beta"][:, None]) ** pv["alpha"][:, None]))

    def reliability(self, pv, t):
        return np.prod(self.component_reliabilities(pv, t), axis=0)

    def initial(self) -> ParamVector:
        k = self.data.n_components
        pooled = np.concatenate([x for x in self.data.component_times if len(x)] or [self.data.system_times])
        beta = np.array([float(np.mean(x)) * 1.1 if len(x) else float(np.mean(pooled)) for x in self.data.component_times])
        alpha = np.full(k, 1.5)
        return (
            ParamVector()
            .add("alpha", alpha, POSITIVE)
            .add("beta", beta, POSITIVE)
            .add("lam_a", 1.0, POSITIVE)
            .add("zeta_a", 1.0 / alpha.mean(), POSITIVE)
            .add("lam_b", 1.0, POSITIVE)
            .add("zeta_b", 1.0 / beta.mean(), POSITIVE)
        )


# ======================================================================
# induced priors
# ======================================================================

def induced_series_prior_density(p, k: int, direction: str = "components-uniform"):
    """Prior density a series structure of ``k`` components induces.

    ``components-uniform``: component reliabilities are iid Uniform(0, 1);
    the system reliability (their product) has density
    ``(-log p)**(k-1) / Gamma(k)`` with mean ``2**-k``.

    ``system-uniform``: the system reliability is Uniform(0, 1) and split
    into ``k`` iid factors; ``-log p_i`` is then Gamma(1/k, 1), so each
    component reliability has density ``(-log p)**(1/k - 1) / Gamma(1/k)``
    with mean ``2**(-1/k)``.
    """
    if int(k) != k or k < 1:
        raise ParameterError("k must be a positive integer")
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise dists.DomainError("p must lie in (0, 1)")
    u = -np.log(p)
    if direction == "components-uniform":
        out = np.exp((k - 1) * np.log(u) - gammaln(k))
    elif direction == "system-uniform":
        out = np.exp((1.0 / k - 1.0) * np.log(u) - gammaln(1.0 / k))
    else:
        raise ParameterError(f"unknown direction {direction!r}")
    return float(out) if out.ndim == 0 else out
