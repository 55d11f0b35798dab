"""Test allocation for a two-component series system with a bias term.

System reliability is linked to component reliabilities by

    p1 = p2 p3 / (p2 p3 + (1 - p2 p3) exp(-beta)),

i.e. ``logit p1 = logit(p2 p3) + beta``. A candidate allocation
``(n1, n2, n3)`` of system and component tests is scored by simulating data
from prior draws, updating, and taking an upper quantile of the resulting
credible-interval lengths for ``p1``. A small genetic algorithm searches the
budget-feasible allocations.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import log_expit, logit

from .mcmc import UNIT, UNBOUNDED, Chain, MCMCError, MetropolisConfig, ParamVector, run_batched, run_chain

__all__ = [
    "AllocationError",
    "Allocation",
    "AllocationSpace",
    "BiasedSeriesParams",
    "BiasedSeriesData",
    "AllocationPriors",
    "CriterionConfig",
    "CriterionResult",
    "GAConfig",
    "GAResult",
    "bias_link",
    "feasible",
    "biased_series_log_posterior",
    "allocation_prior_draws",
    "preposterior_lengths",
    "preposterior_criterion",
    "ga_optimize",
]


class AllocationError(ValueError):
    """Invalid allocation, search space or criterion failure."""


# ----------------------------------------------------------------------
# bias link and budget
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BiasedSeriesParams:
    p2: float
    p3: float
    beta: float

    def __post_init__(self):
        for name in ("p2", "p3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AllocationError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def p1(self) -> float:
        return float(bias_link(self.p2, self.p3, self.beta))


def bias_link(p2, p3, beta=0.0):
    """System reliability under the bias-linked series relation.

    Written as ``p + p(1-p)(1-e^-beta) / (p + (1-p)e^-beta)`` with
    ``p = p2 p3`` so that ``beta = 0`` returns ``p2 * p3`` exactly.
    """
    p = np.asarray(p2, dtype=float) * np.asarray(p3, dtype=float)
    beta = np.asarray(beta, dtype=float)
    e = np.exp(-beta)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = p + p * (1.0 - p) * -np.expm1(-beta) / (p + (1.0 - p) * e)
    out = np.where((p == 0.0) | np.isinf(e), 0.0, out)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Allocation:
    """Test counts ``(n1, n2, n3)`` with per-test costs and a budget."""

    counts: tuple
    costs: tuple
    budget: float

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c != float(x) for c, x in zip(counts, self.counts)):
            raise AllocationError("counts must be integers")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        if len(self.counts) != len(self.costs):
            raise AllocationError("one cost per test type required")
        if any(c < 0 for c in self.counts):
            raise AllocationError("counts must be nonnegative")
        if any(not (c > 0 and math.isfinite(c)) for c in self.costs):
            raise AllocationError("costs must be positive")
        if not self.budget > 0:
            raise AllocationError("budget must be positive")

    @property
    def cost(self) -> float:
        return float(sum(n * c for n, c in zip(self.counts, self.costs)))


def feasible(a: Allocation) -> bool:
    # relative slack absorbs rounding in non-integer costs
    return a.cost <= a.budget * (1.0 + 1e-12)


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BiasedSeriesData:
    """Binomial counts: ``(trials, successes)`` for the system and two components."""

    system: tuple = (0, 0)
    comp2: tuple = (0, 0)
    comp3: tuple = (0, 0)

    def __post_init__(self):
        for name in ("system", "comp2", "comp3"):
            n, y = getattr(self, name)
            if not (0 <= y <= n):
                raise AllocationError(f"{name}: need 0 <= successes <= trials, got {y}/{n}")

    def arrays(self):
        return tuple(np.asarray(v, dtype=float) for pair in (self.system, self.comp2, self.comp3) for v in pair)


@dataclass(frozen=True)
class AllocationPriors:
    """Logit-normal priors on ``p2, p3`` and a normal prior on ``beta``."""

    logit_sd: float = 3.5
    beta_mean: float = 0.0
    beta_sd: float = 1.5


def _log_p_and_q(lp):
    """``(log p, log(1-p))`` from log p, stable near 1."""
    with np.errstate(divide="ignore"):
        return lp, np.where(lp < -0.693, np.log1p(-np.exp(lp)), np.log(-np.expm1(lp)))


def biased_series_log_posterior(x, data, priors: AllocationPriors = AllocationPriors()):
    """Unnormalized log posterior at ``x[..., :] = (p2, p3, beta)``.

    ``data`` is ``(n1, y1, n2, y2, n3, y3)``; each entry broadcasts against
    ``x[..., 0]`` so batched chains can carry their own counts.
    """
    x = np.asarray(x, dtype=float)
    p2, p3, beta = x[..., 0], x[..., 1], x[..., 2]
    n1, y1, n2, y2, n3, y3 = data
    with np.errstate(divide="ignore", invalid="ignore"):
        z2, z3 = logit(p2), logit(p3)
        lp2, lp3 = log_expit(z2), log_expit(z3)
        lq2, lq3 = lp2 - z2, lp3 - z3
        la, lb = _log_p_and_q(lp2 + lp3)
        z1 = la - lb + beta
        lp1 = log_expit(z1)
        lq1 = lp1 - z1
        ll = y1 * lp1 + (n1 - y1) * lq1 + y2 * lp2 + (n2 - y2) * lq2 + y3 * lp3 + (n3 - y3) * lq3
        s = priors.logit_sd
        # logit-normal density in p: normal on logit p, Jacobian 1/(p(1-p))
        lprior = -0.5 * (z2 / s) ** 2 - lp2 - lq2 - 0.5 * (z3 / s) ** 2 - lp3 - lq3
        lprior = lprior - 0.5 * ((beta - priors.beta_mean) / priors.beta_sd) ** 2
        out = ll + lprior
    inside = (p2 > 0) & (p2 < 1) & (p3 > 0) & (p3 < 1) & np.isfinite(beta)
    return np.where(inside & ~np.isnan(out), out, -np.inf)


def allocation_prior_draws(
    existing: BiasedSeriesData,
    priors: AllocationPriors = AllocationPriors(),
    cfg: MetropolisConfig | None = None,
) -> Chain:
    """Posterior draws of ``(p2, p3, beta)`` given existing data.

    These draws serve as the prior for the pre-posterior criterion.
    """
    cfg = cfg or MetropolisConfig(burn_in=2000, samples=20000, step_sizes=1.0, seed=0)
    data = existing.arrays()
    pv = ParamVector().add("p2", 0.9, UNIT).add("p3", 0.9, UNIT).add("beta", 0.0, UNBOUNDED)
    return run_chain(lambda v: float(biased_series_log_posterior(v.values, data, priors)), pv, cfg)


# ----------------------------------------------------------------------
# pre-posterior criterion
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionConfig:
    ci_level: float = 0.90
    quantile: float = 0.90
    replications: int = 100
    burn_in: int = 500
    draws: int = 2000
    seed: int = 0
    max_failed_fraction: float = 0.10

    def __post_init__(self):
        for name in ("ci_level", "quantile"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise AllocationError(f"{name} must lie in (0, 1), got {v!r}")
        if self.replications < 1 or self.draws < 1 or self.burn_in < 0:
            raise AllocationError("replications and draws must be >= 1, burn_in >= 0")


@dataclass
class CriterionResult:
    value: float
    lengths: np.ndarray
    failed: int
    truths: np.ndarray = field(repr=False, default=None)


def _stage_rngs(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _binomial_crn(u_rows, n, p):
    """Successes among the first ``n`` trials driven by shared uniforms."""
    if n == 0:
        return np.zeros(p.shape[0])
    return (u_rows[:n].T < p[:, None]).sum(axis=1).astype(float)


def preposterior_lengths(
    a: Allocation,
    prior_draws: Chain | np.ndarray,
    cfg: CriterionConfig = CriterionConfig(),
    existing: BiasedSeriesData = BiasedSeriesData(),
    priors: AllocationPriors = AllocationPriors(),
) -> CriterionResult:
    """Central-interval lengths of ``p1`` over simulated data sets.

    Random streams are derived per stage from ``cfg.seed``: prior-draw
    selection, one stream per test type, and the inner samplers. Trial ``j``
    of replication ``r`` uses the same uniform for every allocation, so
    criteria of different allocations share common random numbers.
    """
    if len(a.counts) != 3:
        raise AllocationError("allocation must have three counts (system, component 2, component 3)")
    if not feasible(a):
        raise AllocationError(f"allocation {a.counts} costs {a.cost:g}, exceeding the budget {a.budget:g}")
    theta = prior_draws.draws if isinstance(prior_draws, Chain) else np.asarray(prior_draws, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != 3 or theta.shape[0] == 0:
        raise AllocationError("prior draws must be a nonempty (m, 3) array of (p2, p3, beta)")
    R = cfg.replications
    r_pick, r1, r2, r3, r_mc = _stage_rngs(cfg.seed, 5)
    truth = theta[r_pick.integers(0, theta.shape[0], size=R)]
    p1 = bias_link(truth[:, 0], truth[:, 1], truth[:, 2])
    n1, n2, n3 = a.counts
    y1 = _binomial_crn(r1.random((n1, R)), n1, np.atleast_1d(p1))
    y2 = _binomial_crn(r2.random((n2, R)), n2, truth[:, 0])
    y3 = _binomial_crn(r3.random((n3, R)), n3, truth[:, 1])
    e = existing.arrays()
    data_all = (e[0] + n1, e[1] + y1, e[2] + n2, e[3] + y2, e[4] + n3, e[5] + y3)

    init = truth.copy()
    lp0 = biased_series_log_posterior(init, tuple(np.broadcast_to(d, (R,)) for d in data_all), priors)
    ok = np.isfinite(lp0)
    failed = int(R - ok.sum())
    if failed > cfg.max_failed_fraction * R:
        raise AllocationError(f"{failed} of {R} replications failed to initialize")
    if failed:
        warnings.warn(f"{failed} of {R} replications failed to initialize and were skipped", RuntimeWarning)
    data_ok = tuple(np.broadcast_to(d, (R,))[ok] for d in data_all)
    mc = MetropolisConfig(burn_in=cfg.burn_in, samples=cfg.draws, step_sizes=1.0)
    try:
        draws, _ = run_batched(
            lambda x: biased_series_log_posterior(x, data_ok, priors), init[ok], [UNIT, UNIT, UNBOUNDED], mc, r_mc
        )
    except MCMCError as exc:
        raise AllocationError(f"inner update failed: {exc}") from exc
    sys_draws = bias_link(draws[..., 0], draws[..., 1], draws[..., 2])
    tail = (1.0 - cfg.ci_level) / 2.0
    lo, hi = np.quantile(sys_draws, [tail, 1.0 - tail], axis=0)
    lengths = hi - lo
    return CriterionResult(float(np.quantile(lengths, cfg.quantile)), lengths, failed, truth)


def preposterior_criterion(
    a: Allocation,
    prior_draws: Chain | np.ndarray,
    cfg: CriterionConfig = CriterionConfig(),
    existing: BiasedSeriesData = BiasedSeriesData(),
    priors: AllocationPriors = AllocationPriors(),
) -> float:
    """Upper ``cfg.quantile`` of simulated posterior interval lengths for ``p1``."""
    return preposterior_lengths(a, prior_draws, cfg, existing, priors).value


# ----------------------------------------------------------------------
# genetic algorithm
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class AllocationSpace:
    """Integer box ``lower <= n <= upper`` intersected with the budget."""

    costs: tuple
    budget: float
    lower: tuple | None = None
    upper: tuple | None = None

    def __post_init__(self):
        costs = tuple(float(c) for c in self.costs)
        object.__setattr__(self, "costs", costs)
        k = len(costs)
        lower = tuple(0 for _ in costs) if self.lower is None else tuple(int(x) for x in self.lower)
        upper = (
            tuple(int(math.floor(self.budget / c * (1 + 1e-12))) for c in costs)
            if self.upper is None
            else tuple(int(x) for x in self.upper)
        )
        if len(lower) != k or len(upper) != k:
            raise AllocationError("bounds must have one entry per test type")
        if any(l < 0 or l > u for l, u in zip(lower, upper)):
            raise AllocationError("need 0 <= lower <= upper for every test type")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if not feasible(self.allocation(lower)):
            raise AllocationError("no feasible allocation: the lower bounds already exceed the budget")

    def allocation(self, counts) -> Allocation:
        return Allocation(tuple(int(c) for c in counts), self.costs, self.budget)

    def repair(self, genome: np.ndarray) -> np.ndarray:
        """Clip to bounds, then decrement the count carrying the largest cost until feasible."""
        g = np.clip(np.asarray(genome, dtype=int), self.lower, self.upper)
        c = np.asarray(self.costs)
        lower = np.asarray(self.lower)
        limit = self.budget * (1 + 1e-12)
        while float(g @ c) > limit:
            spend = np.where(g > lower, g * c, -1.0)
            i = int(np.argmax(spend))
            excess = float(g @ c) - self.budget
            g[i] -= max(1, min(int(math.ceil(excess / c[i])), int(g[i] - lower[i])))
        return g


@dataclass(frozen=True)
class GAConfig:
    population: int = 20
    generations: int = 30
    crossover_rate: float = 0.9
    mutation_rate: float = 0.3
    elitism: int = 1
    max_evaluations: int | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.population < 2:
            raise AllocationError("population must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AllocationError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise AllocationError("elitism must be in [0, population)")
        if self.generations < 1:
            raise AllocationError("generations must be >= 1")


@dataclass
class GAResult:
    best: Allocation
    value: float
    log: list  # (generation, index, counts, value), one entry per distinct evaluation


def _random_genome(space: AllocationSpace, rng) -> np.ndarray:
    # split the budget by a Dirichlet draw so initial genomes span the frontier
    share = rng.dirichlet(np.ones(len(space.costs)))
    room = space.budget - float(np.dot(space.lower, space.costs))
    g = np.asarray(space.lower) + np.floor(share * room / np.asarray(space.costs)).astype(int)
    return space.repair(g)


def ga_optimize(space: AllocationSpace, criterion: Callable[[Allocation], float], ga: GAConfig = GAConfig()) -> GAResult:
    """Minimize ``criterion`` over feasible integer allocations.

    Integer genomes, tournament selection of size two, uniform crossover,
    per-gene mutation by a geometric step of random sign, and elitism.
    Offspring are repaired to feasibility. Each distinct genome is evaluated
    once; ``max_evaluations`` caps the number of distinct evaluations.
    """
    rng = np.random.default_rng(ga.seed)
    lower, upper = np.asarray(space.lower), np.asarray(space.upper)
    spread = np.maximum(upper - lower, 1)
    geo_p = 1.0 / (1.0 + 0.1 * spread)
    cache: dict = {}
    log: list = []
    cap = ga.max_evaluations or math.inf

    def evaluate(pop, gen):
        new = []
        for g in pop:
            key = tuple(int(x) for x in g)
            if key not in cache and key not in new and len(cache) + len(new) < cap:
                new.append(key)
        if new:
            allocs = [space.allocation(k) for k in new]
            if ga.workers > 1:
                with ThreadPoolExecutor(ga.workers) as ex:
                    vals = list(ex.map(criterion, allocs))
            else:
                vals = [criterion(x) for x in allocs]
            for i, (k, v) in enumerate(zip(new, vals)):
                v = float(v)
                cache[k] = v if np.isfinite(v) else math.inf
                log.append((gen, i, k, cache[k]))
        return np.array([cache.get(tuple(int(x) for x in g), math.inf) for g in pop])

    pop = [space.repair(lower)] + [_random_genome(space, rng) for _ in range(ga.population - 1)]
    fit = evaluate(pop, 0)
    for gen in range(1, ga.generations + 1):
        if len(cache) >= cap:
            break
        order = np.argsort(fit, kind="stable")
        children = [pop[i].copy() for i in order[: ga.elitism]]
        while len(children) < ga.population:
            parents = []
            for _ in range(2):
                i, j = rng.integers(0, len(pop), size=2)
                parents.append(pop[i] if fit[i] <= fit[j] else pop[j])
            child = parents[0].copy()
            if rng.random() < ga.crossover_rate:
                mask = rng.random(child.size) < 0.5
                child = np.where(mask, parents[0], parents[1])
            mut = rng.random(child.size) < ga.mutation_rate
            if mut.any():
                step = rng.geometric(geo_p) * rng.choice((-1, 1), size=child.size)
                child = child + np.where(mut, step, 0)
            children.append(space.repair(child))
        pop = children
        fit = evaluate(pop, gen)
    if not log:
        raise AllocationError("no allocation was evaluated")
    best_key = min(cache, key=lambda k: (cache[k], -sum(k)))
    if not np.isfinite(cache[best_key]):
        raise AllocationError("criterion was not finite at any evaluated allocation")
    return GAResult(space.allocation(best_key), cache[best_key], log)
