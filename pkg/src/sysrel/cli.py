"""Command-line front end: ``sysrel KIND --config FILE [--out DIR] [--seed N]``.

Each run reads a TOML configuration, parses its datasets, fits the model
and writes plot-ready tables to the output directory. Exit status is 0 on
success, 2 for unreadable input, 3 for invalid configuration or data and
4 for failures while computing.

Randomness derives from the single config seed: ``SeedSequence(seed)``
spawns four children used, in order, by the main sampler, the allocation
prior sampler, the pre-posterior criterion and the genetic algorithm.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import dists
from .allocation import (
    AllocationError,
    AllocationPriors,
    AllocationSpace,
    BiasedSeriesData,
    CriterionConfig,
    GAConfig,
    allocation_prior_draws,
    ga_optimize,
    preposterior_criterion,
)
from .component_models import DataError, DegFailModel, DegFailPriors, LotModel, LotPriors, SurrogateModel, SurrogatePriors
from .io import (
    ParseError,
    band_table_to_csv,
    emit_band_table,
    load_config,
    parse_bn,
    parse_dataset,
    parse_dist,
    parse_flowgraph,
    write_table,
)
from .mcmc import Chain, MCMCError, MetropolisConfig, chain_to_csv, run_chain
from .representations import BNError, FlowgraphError, bn_structure_function, bn_system_reliability, flowgraph_solve, mgf_invert, mgf_moments
from .system_models import (
    DegradationComponent,
    LogisticComponent,
    MultilevelSystem,
    NHPPFleetData,
    NHPPModel,
    PartialTestSystem,
    WeibullComponent,
    WeibullSeriesModel,
)

__all__ = ["ANALYSES", "AnalysisConfig", "ConfigError", "StageError", "run_analysis", "main", "EXIT_OK", "EXIT_PARSE", "EXIT_INVALID", "EXIT_RUNTIME"]

log = logging.getLogger("sysrel")

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4

ANALYSES = (
    "degfail",
    "surrogate",
    "lots",
    "multilevel-series",
    "partial-tests",
    "nhpp",
    "weibull-series",
    "bn-system",
    "flowgraph",
    "allocate",
)

_STAGES = ("mcmc", "prior", "criterion", "ga")


class ConfigError(ValueError):
    """Configuration is missing a field, names a missing file or holds a bad value."""


class StageError(RuntimeError):
    """A failure tagged with the analysis stage where it happened."""

    def __init__(self, stage, cause):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage '{stage}': {cause}")


_INVALID = (ConfigError, DataError, BNError, FlowgraphError, AllocationError, dists.ParameterError, dists.DomainError)


def exit_code(exc) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ParseError):
        return EXIT_PARSE
    if isinstance(cause, _INVALID):
        return EXIT_INVALID
    return EXIT_RUNTIME


@contextmanager
def _stage(name):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class AnalysisConfig:
    """A validated analysis request.

    ``raw`` is the parsed TOML table; ``base`` resolves relative paths.
    """

    kind: str
    raw: dict
    base: str = "."
    out: str = "out"
    seed: int = 0
    replications: int | None = None
    threads: int = 1
    _seeds: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ANALYSES:
            raise ConfigError(f"unknown analysis {self.kind!r}; expected one of {', '.join(ANALYSES)}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.replications is not None and self.replications < 1:
            raise ConfigError("replications must be positive")
        children = np.random.SeedSequence(self.seed).spawn(len(_STAGES))
        self._seeds = [int(c.generate_state(1)[0]) for c in children]
        _REQUIRED[self.kind](self)

    @classmethod
    def from_file(cls, path, kind=None, out=None, seed=None, replications=None, threads=None):
        if not os.path.isfile(path):
            raise ConfigError(f"configuration file {path!r} does not exist")
        raw = load_config(path)
        declared = raw.get("analysis")
        if kind is not None and declared is not None and declared != kind:
            raise ConfigError(f"configuration declares analysis {declared!r} but {kind!r} was requested")
        kind = kind or declared
        if kind is None:
            raise ConfigError("no analysis kind given")
        base = raw.pop("_base")
        # a command-line directory is relative to the working directory,
        # a configured one to the configuration file
        if out is None:
            out = os.path.join(base, raw.get("output", "out"))
        if threads is None:
            threads = _env_threads()
        return cls(
            kind,
            raw,
            base=base,
            out=os.path.abspath(out),
            seed=raw.get("seed", 0) if seed is None else seed,
            replications=replications,
            threads=threads,
        )

    def stage_seed(self, stage) -> int:
        return self._seeds[_STAGES.index(stage)]

    def section(self, name) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    def path(self, value, what) -> str:
        if not isinstance(value, str):
            raise ConfigError(f"{what} must be a file path")
        p = value if os.path.isabs(value) else os.path.join(self.base, value)
        if not os.path.isfile(p):
            raise ConfigError(f"{what}: file {value!r} does not exist")
        return p

    def require(self, section, key, what=None):
        sec = self.section(section)
        if key not in sec:
            raise ConfigError(f"{self.kind} requires {section}.{key}" + (f" ({what})" if what else ""))
        return sec[key]

    def data_path(self, key="path"):
        return self.path(self.require("data", key), f"data.{key}")


def _env_threads():
    v = os.environ.get("SYSREL_THREADS")
    if v is None:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"SYSREL_THREADS must be a positive integer, got {v!r}") from None
    if n < 1:
        raise ConfigError("SYSREL_THREADS must be a positive integer")
    return n


def _need_data(cfg):
    cfg.data_path()


def _need_components(cfg, allowed):
    comps = cfg.raw.get("components")
    if not isinstance(comps, list) or not comps:
        raise ConfigError(f"{cfg.kind} requires at least one [[components]] table")
    for i, c in enumerate(comps):
        if not isinstance(c, dict):
            raise ConfigError(f"components[{i}] must be a table")
        for k in allowed:
            if k not in c:
                raise ConfigError(f"components[{i}] requires {k!r}")
    return comps


def _check_multilevel(cfg):
    for i, c in enumerate(_need_components(cfg, ("model", "path"))):
        if c["model"] not in ("logistic", "weibull", "degradation"):
            raise ConfigError(f"components[{i}].model must be logistic, weibull or degradation")
        if c["model"] == "degradation" and "D" not in c:
            raise ConfigError(f"components[{i}] is a degradation model and requires D")
        cfg.path(c["path"], f"components[{i}].path")
    if "system" in cfg.section("data"):
        cfg.data_path("system")
    if "network" in cfg.raw:
        cfg.path(cfg.raw["network"], "network")


def _check_partial(cfg):
    paths = cfg.require("data", "components")
    if not isinstance(paths, list) or not paths:
        raise ConfigError("data.components must list one surrogate dataset per component")
    for i, p in enumerate(paths):
        cfg.path(p, f"data.components[{i}]")
    cfg.data_path("tests")


def _check_nhpp(cfg):
    cfg.data_path()
    cfg.require("bands", "mission", "mission length l for R(l, s)")


def _check_bn(cfg):
    cfg.path(cfg.raw.get("network"), "network")
    _need_components(cfg, ("name", "dist"))


def _check_flowgraph(cfg):
    cfg.path(cfg.raw.get("flowgraph"), "flowgraph")


def _check_allocate(cfg):
    cfg.require("allocation", "costs")
    cfg.require("allocation", "budget")


_REQUIRED = {
    "degfail": _need_data,
    "surrogate": _need_data,
    "lots": _need_data,
    "multilevel-series": _check_multilevel,
    "partial-tests": _check_partial,
    "nhpp": _check_nhpp,
    "weibull-series": _need_data,
    "bn-system": _check_bn,
    "flowgraph": _check_flowgraph,
    "allocate": _check_allocate,
}


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------

def _dist_priors(cfg, cls, table=None):
    kw = {}
    for key, val in (cfg.section("priors") if table is None else table).items():
        if key not in cls.__dataclass_fields__:
            raise ConfigError(f"unknown prior {key!r} for {cfg.kind}")
        kw[key] = parse_dist(val) if isinstance(val, str) else val
    return cls(**kw)


def _mcmc_config(cfg, section="mcmc", stage="mcmc", defaults=(1000, 2000)):
    sec = cfg.section(section)
    unknown = set(sec) - {"burn_in", "samples", "thin", "step_size", "adapt_interval", "target_accept"}
    if unknown:
        raise ConfigError(f"unknown [{section}] keys {sorted(unknown)}")
    try:
        return MetropolisConfig(
            burn_in=int(sec.get("burn_in", defaults[0])),
            samples=int(sec.get("samples", defaults[1])),
            thin=int(sec.get("thin", 1)),
            step_sizes=sec.get("step_size"),
            seed=cfg.stage_seed(stage),
            adapt_interval=int(sec.get("adapt_interval", 50)),
            target_accept=float(sec.get("target_accept", 0.4)),
        )
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def _grid(cfg, default=(0.0, 20.0, 21)):
    sec = cfg.section("bands")
    if "grid" in sec:
        g = np.asarray(sec["grid"], dtype=float)
    else:
        g = np.linspace(float(sec.get("start", default[0])), float(sec.get("stop", default[1])), int(sec.get("points", default[2])))
    if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
        raise ConfigError("bands grid must be a nonempty strictly increasing list")
    return g


def _level(cfg, section="bands", key="level"):
    level = float(cfg.section(section).get(key, 0.90))
    if not 0 < level < 1:
        raise ConfigError(f"{section}.{key} must lie in (0, 1)")
    return level


def _summary_rows(chain: Chain, level, derived=()):
    lo, hi = (1 - level) / 2, (1 + level) / 2
    cols = [(n, chain.draws[:, j]) for j, n in enumerate(chain.names)]
    cols += [(n, np.array([f(pv) for pv in chain], dtype=float)) for n, f in derived]
    rows = []
    for name, v in cols:
        q = np.quantile(v, [lo, hi])
        rows.append((name, float(v.mean()), float(q[0]), float(q[1])))
    return rows


def _fit_and_report(cfg, out, log_post, initial, reliability=None, derived=(), abscissa="t", default_grid=(0.0, 20.0, 21)):
    """Sample, then write chain.csv, summary.csv and (when given) bands.csv."""
    with _stage("mcmc"):
        chain = run_chain(log_post, initial, _mcmc_config(cfg))
    level = _level(cfg)
    files = {}
    with _stage("summary"):
        chain_to_csv(chain, os.path.join(out, "chain.csv"))
        files["chain"] = os.path.join(out, "chain.csv")
        write_table(os.path.join(out, "summary.csv"), ("parameter", "mean", "lower", "upper"), _summary_rows(chain, level, derived))
        files["summary"] = os.path.join(out, "summary.csv")
    if reliability is not None:
        with _stage("bands"):
            grid = _grid(cfg, default_grid)
            table = emit_band_table(chain, reliability, grid, level, abscissa)
            band_table_to_csv(table, os.path.join(out, "bands.csv"))
            files["bands"] = os.path.join(out, "bands.csv")
    return files, chain


# ----------------------------------------------------------------------
# analyses
# ----------------------------------------------------------------------

def _run_degfail(cfg, out):
    with _stage("data"):
        data = parse_dataset(cfg.data_path(), "degfail")
    with _stage("model"):
        pr = dict(cfg.section("priors"))
        if "L" in pr:
            pr["L_fixed"] = float(pr.pop("L"))
        priors = _dist_priors(cfg, DegFailPriors, pr)
        model = DegFailModel(data, priors)
        init = model.initial()
    derived = [("L", lambda pv: pv["L_ratio"] * pv["alpha"])] if priors.L_fixed is None else []
    top = 2.0 * max(float(np.max(np.concatenate([data.failures, data.survivors, data.deg_ages]))), 1.0)
    grid_default = (top / 40, top, 40)
    files, _ = _fit_and_report(cfg, out, model.log_post, init, lambda pv, t: model.reliability(pv, t), derived, default_grid=grid_default)
    return files


def _run_surrogate(cfg, out):
    with _stage("data"):
        data = parse_dataset(cfg.data_path(), "surrogate")
    with _stage("model"):
        model = SurrogateModel(data, _dist_priors(cfg, SurrogatePriors))
        init = model.initial()
    top = float(np.max(np.concatenate([data.pf_ages, data.spec_ages]), initial=1.0))
    files, _ = _fit_and_report(cfg, out, model.log_post, init, lambda pv, t: model.reliability(pv, t), default_grid=(0.0, 2 * top, 41))
    return files


def _run_lots(cfg, out):
    with _stage("data"):
        data = parse_dataset(cfg.data_path(), "lots")
    with _stage("model"):
        model = LotModel(data, _dist_priors(cfg, LotPriors))
        init = model.initial()
    files, _ = _fit_and_report(cfg, out, model.log_post, init, derived=[("prevalence", model.prevalence)])
    return files


def _component(cfg, i, c):
    path = cfg.path(c["path"], f"components[{i}].path")
    if c["model"] == "logistic":
        return LogisticComponent(parse_dataset(path, "binomial-age"), prior_sd=float(c.get("prior_sd", 10.0)))
    if c["model"] == "weibull":
        kw = {k + "_prior": parse_dist(c[k + "_prior"]) for k in ("shape", "scale") if k + "_prior" in c}
        return WeibullComponent(parse_dataset(path, "lifetimes"), **kw)
    return DegradationComponent(parse_dataset(path, "degfail"), float(c["D"]))


def _run_multilevel(cfg, out):
    comps = cfg.raw["components"]
    with _stage("data"):
        models = [_component(cfg, i, c) for i, c in enumerate(comps)]
        system_data = parse_dataset(cfg.data_path("system"), "binomial-age") if "system" in cfg.section("data") else None
    with _stage("model"):
        structure = None
        if "network" in cfg.raw:
            net = parse_bn(cfg.path(cfg.raw["network"], "network"))
            names = [c.get("name", f"C{i + 1}") for i, c in enumerate(comps)]
            structure = bn_structure_function(net, names, cfg.raw.get("system", "S"))
        system = MultilevelSystem(models, system_data, structure)
        init = system.initial()
    files, _ = _fit_and_report(cfg, out, system.log_post, init, lambda pv, t: system.reliability(pv, t))
    return files


def _run_partial(cfg, out):
    with _stage("data"):
        comps = [parse_dataset(cfg.path(p, f"data.components[{i}]"), "surrogate") for i, p in enumerate(cfg.section("data")["components"])]
        tests = parse_dataset(cfg.data_path("tests"), "partial-tests")
    with _stage("model"):
        system = PartialTestSystem(comps, tests, _dist_priors(cfg, SurrogatePriors))
        init = system.initial()
    files, _ = _fit_and_report(cfg, out, system.log_post, init, lambda pv, t: system.reliability(pv, t))
    return files


def _run_nhpp(cfg, out):
    sec = cfg.section("data")
    with _stage("data"):
        raw = parse_dataset(cfg.data_path(), "nhpp")
        exclude = set(sec.get("exclude", []))
        unknown = exclude - set(raw.units)
        if unknown:
            raise ConfigError(f"data.exclude names unknown units {sorted(unknown)}")
        include = np.array([u not in exclude for u in raw.units])
        data = NHPPFleetData(raw.counts, float(sec.get("interval", 1.0)), include)
    with _stage("model"):
        model = NHPPModel(data)
        init = model.initial()
    mission = float(cfg.section("bands")["mission"])
    horizon = data.interval * data.n_intervals
    files, _ = _fit_and_report(
        cfg, out, model.log_post, init, lambda pv, s: model.reliability(pv, mission, s), abscissa="s", default_grid=(0.0, horizon, 21)
    )
    return files


def _run_weibull_series(cfg, out):
    with _stage("data"):
        data = parse_dataset(cfg.data_path(), "weibull-series")
    with _stage("model"):
        rates = cfg.section("priors").get("hyper_rates", (1.0, 1.0, 1.0, 1.0))
        if len(rates) != 4:
            raise ConfigError("priors.hyper_rates needs four rates")
        model = WeibullSeriesModel(data, rates)
        init = model.initial()
    files, _ = _fit_and_report(cfg, out, model.log_post, init, lambda pv, t: model.reliability(pv, t))
    return files


def _run_bn_system(cfg, out):
    with _stage("data"):
        net = parse_bn(cfg.path(cfg.raw["network"], "network"))
        comps = [(c["name"], parse_dist(c["dist"])) for c in cfg.raw["components"]]
    with _stage("bands"):
        grid = _grid(cfg)
        system = cfg.raw.get("system", "S")
        curves = {name: 1.0 - np.asarray(dists.cdf(d, grid), dtype=float) for name, d in comps}
        r = np.array([bn_system_reliability(net, {n: float(v[i]) for n, v in curves.items()}, system) for i in range(grid.size)])
        # fixed parameters give a one-draw posterior and zero-width bands
        table = emit_band_table([r], lambda rr, g: rr, grid, _level(cfg))
        band_table_to_csv(table, os.path.join(out, "bands.csv"))
    return {"bands": os.path.join(out, "bands.csv")}


def _run_flowgraph(cfg, out):
    with _stage("data"):
        fg = parse_flowgraph(cfg.path(cfg.raw["flowgraph"], "flowgraph"))
    with _stage("solve"):
        t = flowgraph_solve(fg, cfg.raw.get("source"), cfg.raw.get("sink"))
        m = mgf_moments(t, 2)
        write_table(
            os.path.join(out, "moments.csv"),
            ("quantity", "value"),
            [("probability", float(t(0.0))), ("mean", m.mean), ("variance", m.variance)],
        )
    with _stage("invert"):
        grid = _grid(cfg, (0.0, 6.0 * m.mean + 6.0 * math.sqrt(max(m.variance, 0.0)), 61))
        inv = mgf_invert(t, grid)
        if inv.diagnostics:
            bad = ", ".join(f"t={grid[i]:g}: {msg}" for i, msg in sorted(inv.diagnostics.items())[:3])
            raise FlowgraphError(f"saddlepoint inversion failed at {len(inv.diagnostics)} grid point(s) ({bad}); narrow the grid")
        write_table(os.path.join(out, "density.csv"), ("t", "density"), zip(grid.tolist(), inv.density.tolist()))
        table = emit_band_table([inv.reliability], lambda r, g: r, grid, _level(cfg))
        band_table_to_csv(table, os.path.join(out, "bands.csv"))
    return {k: os.path.join(out, f"{k}.csv") for k in ("moments", "density", "bands")}


_TESTS = ("system", "comp2", "comp3")


def _run_allocate(cfg, out):
    sec = cfg.section("allocation")
    with _stage("model"):
        costs = tuple(float(c) for c in sec["costs"])
        if len(costs) != 3:
            raise ConfigError("allocation.costs needs three unit costs (system, comp2, comp3)")
        ex = sec.get("existing", {})
        existing = BiasedSeriesData(*(tuple(int(v) for v in ex.get(k, (0, 0))) for k in _TESTS))
        pr = cfg.section("priors")
        unknown = set(pr) - {"logit_sd", "beta_mean", "beta_sd"}
        if unknown:
            raise ConfigError(f"unknown allocation priors {sorted(unknown)}")
        priors = AllocationPriors(**{k: float(v) for k, v in pr.items()})
        space = AllocationSpace(costs, float(sec["budget"]), sec.get("lower"), sec.get("upper"))
        crit = dict(cfg.section("criterion"))
        if cfg.replications is not None:
            crit["replications"] = cfg.replications
        try:
            ccfg = CriterionConfig(**crit, seed=cfg.stage_seed("criterion"))
        except TypeError as exc:
            raise ConfigError(f"[criterion]: {exc}") from None
        ga_sec = dict(cfg.section("ga"))
        ga_sec.setdefault("workers", cfg.threads)
        try:
            gcfg = GAConfig(**ga_sec, seed=cfg.stage_seed("ga"))
        except TypeError as exc:
            raise ConfigError(f"[ga]: {exc}") from None
    with _stage("prior"):
        prior = allocation_prior_draws(existing, priors, _mcmc_config(cfg, "prior_mcmc", "prior", (2000, 20000)))
        chain_to_csv(prior, os.path.join(out, "prior_chain.csv"))
    with _stage("ga"):
        res = ga_optimize(space, lambda a: preposterior_criterion(a, prior, ccfg, existing, priors), gcfg)
    with _stage("report"):
        counts = res.best.counts
        rows = [(name, int(n), c, n * c, n * c / space.budget) for name, n, c in zip(_TESTS, counts, costs)]
        write_table(os.path.join(out, "allocation.csv"), ("test", "count", "unit_cost", "spend", "budget_share"), rows)
        ev = [(g, i, *map(int, c), v) for g, i, c, v in res.log]
        write_table(os.path.join(out, "evaluations.csv"), ("generation", "index", *(f"n_{k}" for k in _TESTS), "criterion"), ev)
    log.info("best allocation %s, criterion %.6g", counts, res.value)
    return {k: os.path.join(out, f"{k}.csv") for k in ("prior_chain", "allocation", "evaluations")}


_RUNNERS = {
    "degfail": _run_degfail,
    "surrogate": _run_surrogate,
    "lots": _run_lots,
    "multilevel-series": _run_multilevel,
    "partial-tests": _run_partial,
    "nhpp": _run_nhpp,
    "weibull-series": _run_weibull_series,
    "bn-system": _run_bn_system,
    "flowgraph": _run_flowgraph,
    "allocate": _run_allocate,
}


def run_analysis(cfg: AnalysisConfig) -> dict:
    """Run ``cfg`` and return a mapping from output name to written path.

    Errors are re-raised as :class:`StageError` naming the failing stage.
    """
    with _stage("output"):
        os.makedirs(cfg.out, exist_ok=True)
    return _RUNNERS[cfg.kind](cfg, cfg.out)


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sysrel", description="Bayesian reliability analyses from datasets and a TOML configuration.")
    sub = p.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in ANALYSES:
        s = sub.add_parser(kind, help=f"run a {kind} analysis")
        s.add_argument("--config", "-c", required=True, help="TOML configuration file")
        s.add_argument("--out", "-o", help="output directory (default: config 'output' or ./out)")
        s.add_argument("--seed", type=int, help="override the configuration seed")
        s.add_argument("--replications", type=int, help="override criterion.replications (allocate)")
        s.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)], format="%(name)s: %(message)s")
    try:
        with _stage("config"):
            cfg = AnalysisConfig.from_file(args.config, args.kind, args.out, args.seed, args.replications)
        files = run_analysis(cfg)
    except (StageError, ParseError, ConfigError) as exc:
        print(f"sysrel: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except MCMCError as exc:  # pragma: no cover
        print(f"sysrel: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name in sorted(files):
        print(f"{name}: {files[name]}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
