"""Worked-example datasets and their generating truths."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .component_models import DegFailData

# degradation/lifetime truth: curve crosses L at 0.35 * (100 - 20) = 28 years
DEGFAIL_TRUTH = dict(alpha=100.0, L=20.0, mu=math.log(0.35), sigma_b=0.2, sigma_y=5.0)


def degfail_dataset(rng, truth=None, n_units=80, age=20.0, n_fail=4, fail_window=2.0, deg_ages=None) -> DegFailData:
    """Simulate a population inspected at ``age``.

    ``n_fail`` units failed within the last ``fail_window`` years and the rest
    survive to ``age``; one destructive degradation measurement is taken per
    year. Failure times are drawn from the lifetime law truncated to the
    window, which matches conditioning the full population on that outcome.
    """
    tr = dict(DEGFAIL_TRUTH if truth is None else truth)
    loc = tr["mu"] + math.log(tr["alpha"] - tr["L"])
    sb = tr["sigma_b"]
    with np.errstate(divide="ignore"):
        lo, hi = (np.log([age - fail_window, age]) - loc) / sb
    z = stats.truncnorm.rvs(lo, hi, size=n_fail, random_state=rng)
    failures = np.sort(np.exp(loc + sb * z))
    survivors = np.full(n_units - n_fail, age)
    t = np.arange(1.0, age + 1.0) if deg_ages is None else np.asarray(deg_ages, float)
    beta = np.exp(tr["mu"] + sb * rng.standard_normal(len(t)))
    y = tr["alpha"] - t / beta + tr["sigma_y"] * rng.standard_normal(len(t))
    return DegFailData(failures=failures, survivors=survivors, deg_ages=t, deg_values=y)


# ----------------------------------------------------------------------
# three-component series system with system tests
# ----------------------------------------------------------------------

LOGISTIC_AGES = np.array([0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0])
LOGISTIC_FAILURES = {4.0: 1, 15.0: 2, 20.0: 6}
LOGISTIC_TRIALS = 25

# only the extremes of the uncensored lifetimes are reported; the interior
# six are placed evenly between them
WEIBULL_OBSERVED = np.linspace(14.1, 33.5, 8)
WEIBULL_CENSORED = {20.0: 13, 40.0: 4}

SYSTEM_AGES = np.array([0.0, 5.0, 10.0, 15.0, 20.0])
SYSTEM_FAILURES = {0.0: 1, 20.0: 3}
SYSTEM_TRIALS = 15

SERIES_D = 20.0


def logistic_component_data():
    from .system_models import BinomialAgeData

    fails = np.array([LOGISTIC_FAILURES.get(a, 0) for a in LOGISTIC_AGES])
    n = np.full(len(LOGISTIC_AGES), LOGISTIC_TRIALS)
    return BinomialAgeData(LOGISTIC_AGES, n, n - fails)


def weibull_component_data():
    from .system_models import LifetimeData

    cens = np.concatenate([np.full(c, a) for a, c in WEIBULL_CENSORED.items()])
    times = np.concatenate([WEIBULL_OBSERVED, cens])
    flags = np.concatenate([np.zeros(len(WEIBULL_OBSERVED), bool), np.ones(len(cens), bool)])
    return LifetimeData(times, flags)


def degradation_component_data(seed=20):
    """Ten degradation points every two years; 80 lifetimes, two failed before 20."""
    rng = np.random.default_rng(seed)
    return degfail_dataset(rng, n_units=80, age=20.0, n_fail=2, fail_window=20.0, deg_ages=np.arange(2.0, 21.0, 2.0))


def system_test_data():
    from .system_models import BinomialAgeData

    fails = np.array([SYSTEM_FAILURES.get(a, 0) for a in SYSTEM_AGES])
    n = np.full(len(SYSTEM_AGES), SYSTEM_TRIALS)
    return BinomialAgeData(SYSTEM_AGES, n, n - fails)


def multilevel_series_system(system_log_reliability=None):
    """Logistic, Weibull and degradation components in series with system tests."""
    from .system_models import DegradationComponent, LogisticComponent, MultilevelSystem, WeibullComponent

    comps = [
        LogisticComponent(logistic_component_data()),
        WeibullComponent(weibull_component_data()),
        DegradationComponent(degradation_component_data(), SERIES_D),
    ]
    return MultilevelSystem(comps, system_test_data(), system_log_reliability)


# ----------------------------------------------------------------------
# three-component network with a probabilistic system CPT
# ----------------------------------------------------------------------

# P(S = 1 | C1 C2 C3), rows indexed by the bits C1 C2 C3 (C1 most significant)
THREE_COMPONENT_CPT = (0.0, 0.1, 0.25, 0.4, 0.05, 0.3, 0.5, 0.9)


def three_component_network():
    """System node ``S`` with parents ``C1, C2, C3`` and a monotone CPT."""
    from .representations import BayesNet

    parents = {"C1": (), "C2": (), "C3": (), "S": ("C1", "C2", "C3")}
    cpts = {"C1": [0.5], "C2": [0.5], "C3": [0.5], "S": list(THREE_COMPONENT_CPT)}
    return BayesNet(parents, cpts)


# ----------------------------------------------------------------------
# two-pump flowgraphs
# ----------------------------------------------------------------------

def pump_flowgraph(lam0, lam1, p10=0.0, repair_rate=1.0):
    """States 0, 1, 2 = no, one, two failed pumps.

    Either of two pumps fails at rate ``lam0`` each, so ``0 -> 1`` waits
    Exponential(2 lam0). From state 1 the survivor fails at rate ``lam1``
    (``1 -> 2`` with probability ``1 - p10``) or a repair returns the system
    to state 0 after an Exponential(repair_rate) wait. ``p10 = 0`` removes
    the feedback branch.
    """
    from .dists import exponential
    from .representations import Branch, Flowgraph

    branches = [Branch(0, 1, 1.0, exponential(2.0 * lam0))]
    if p10 > 0:
        branches.append(Branch(1, 0, p10, exponential(repair_rate)))
    if p10 < 1:
        branches.append(Branch(1, 2, 1.0 - p10, exponential(lam1)))
    return Flowgraph([0, 1, 2], branches, source=0, sinks={2})
