"""File formats: datasets, band tables, network and flowgraph definitions, configs.

Datasets are comma-separated with a mandatory header row. Blank lines and
lines starting with ``#`` are skipped. Column order is free; extra columns
are an error so typos surface early. Every parse error carries
``path:line:column``.
"""

from __future__ import annotations

import ast
import csv
import io
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dists
from .component_models import DataError, DegFailData, LotData, SurrogateQAData
from .system_models import BinomialAgeData, LifetimeData, NHPPFleetData, PartialSystemTest, WeibullSeriesData

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ParseError",
    "atomic_write_text",
    "DATASET_KINDS",
    "parse_dataset",
    "ReliabilityBandTable",
    "emit_band_table",
    "band_table_to_csv",
    "band_table_from_csv",
    "write_table",
    "parse_dist",
    "parse_bn",
    "parse_flowgraph",
    "load_config",
]


class ParseError(ValueError):
    """Malformed input; the message starts with ``path:line:column`` when known."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path, self.line, self.column = path, line, column
        loc = ":".join(str(x) for x in (path, line, column) if x is not None)
        super().__init__(f"{loc}: {message}" if loc else message)


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, header, rows):
    """Write a CSV table atomically; floats use ``repr`` for exact round trips."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write_text(path, buf.getvalue())


# ----------------------------------------------------------------------
# generic CSV records
# ----------------------------------------------------------------------

@dataclass
class _Record:
    line: int
    values: dict
    columns: dict  # name -> 1-based column number


def _read_text(source):
    if hasattr(source, "read"):
        return source.read(), getattr(source, "name", "<stream>")
    with open(source, newline="") as fh:
        return fh.read(), os.fspath(source)


def _num(kind):
    def conv(s):
        if s == "":
            return None
        try:
            v = float(s)
        except ValueError:
            raise ValueError(f"expected a number, got {s!r}") from None
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {s!r}")
        if kind == "int":
            if v != round(v):
                raise ValueError(f"expected an integer, got {s!r}")
            return int(round(v))
        return v

    return conv


def _text(s):
    return s if s != "" else None


def _flag(s):
    if s == "":
        return None
    low = s.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"expected 0/1 or true/false, got {s!r}")


def _ids(s):
    if s.strip() == "":
        return frozenset()
    try:
        return frozenset(int(x) for x in s.split(";") if x.strip() != "")
    except ValueError:
        raise ValueError(f"expected ';'-separated component ids, got {s!r}") from None


def _records(source, schema: dict, required: set) -> tuple[list[_Record], str]:
    """Parse CSV text against ``schema`` (column name -> converter)."""
    text, path = _read_text(source)
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("no records (file is empty)", path)
    header_line, header_text = lines[0]
    header = [h.strip() for h in next(csv.reader([header_text]))]
    for j, h in enumerate(header):
        if h not in schema:
            raise ParseError(f"unknown column {h!r}; expected columns {sorted(schema)}", path, header_line, j + 1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column name in header", path, header_line)
    missing = sorted(required - set(header))
    if missing:
        raise ParseError(f"missing required column(s) {missing}", path, header_line)
    cols = {h: j + 1 for j, h in enumerate(header)}
    out = []
    for lineno, raw in lines[1:]:
        fields = [f.strip() for f in next(csv.reader([raw]))]
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(fields)}", path, lineno)
        values = {}
        for j, (h, f) in enumerate(zip(header, fields)):
            try:
                values[h] = schema[h](f)
            except ValueError as exc:
                raise ParseError(f"column {h!r}: {exc}", path, lineno, j + 1) from None
        for h in required:
            if values[h] is None:
                raise ParseError(f"column {h!r} is empty", path, lineno, cols[h])
        out.append(_Record(lineno, values, cols))
    if not out:
        raise ParseError("no records (header only)", path)
    return out, path


def _fail(rec: _Record, path, col, msg):
    raise ParseError(f"row {rec.line - 1}: {msg}", path, rec.line, rec.columns.get(col))


# ----------------------------------------------------------------------
# dataset kinds
# ----------------------------------------------------------------------

def _binomial_age(source):
    recs, path = _records(source, {"age": _num("float"), "trials": _num("int"), "successes": _num("int")}, {"age", "trials", "successes"})
    for r in recs:
        v = r.values
        if v["age"] < 0:
            _fail(r, path, "age", "age must be nonnegative")
        if v["trials"] < 0:
            _fail(r, path, "trials", "trials must be nonnegative")
        if not 0 <= v["successes"] <= v["trials"]:
            _fail(r, path, "successes", f"successes {v['successes']} outside 0..{v['trials']} trials")
    col = lambda k: [r.values[k] for r in recs]
    return BinomialAgeData(col("age"), col("trials"), col("successes"))


def _lifetimes(source):
    recs, path = _records(source, {"time": _num("float"), "censored": _flag}, {"time"})
    times, cens = [], []
    for r in recs:
        t, c = r.values["time"], bool(r.values.get("censored") or False)
        if t < 0 or (t == 0 and not c):
            _fail(r, path, "time", "lifetimes must be positive")
        times.append(t)
        cens.append(c)
    return LifetimeData(times, cens)


def _degfail(source):
    recs, path = _records(source, {"record": _text, "age": _num("float"), "value": _num("float")}, {"record", "age"})
    buckets = {"failure": [], "survivor": [], "degradation": []}
    values = []
    for r in recs:
        kind, age, val = r.values["record"], r.values["age"], r.values.get("value")
        if kind not in buckets:
            _fail(r, path, "record", f"record must be one of {sorted(buckets)}, got {kind!r}")
        if age < 0 or (kind == "failure" and age == 0):
            _fail(r, path, "age", "ages must be nonnegative and failure ages positive")
        if kind == "degradation":
            if val is None:
                _fail(r, path, "value", "degradation records need a value")
            values.append(val)
        elif val is not None:
            _fail(r, path, "value", f"{kind} records take no value")
        buckets[kind].append(age)
    return DegFailData(buckets["failure"], buckets["survivor"], buckets["degradation"], values)


def _surrogate(source):
    schema = {"record": _text, "age": _num("float"), "value": _num("float"), "spec": _num("int")}
    recs, path = _records(source, schema, {"record", "age", "value"})
    pf_a, pf_o, sa, si, sv = [], [], [], [], []
    for r in recs:
        v = r.values
        if v["age"] < 0:
            _fail(r, path, "age", "age must be nonnegative")
        if v["record"] == "passfail":
            if v["value"] not in (0.0, 1.0):
                _fail(r, path, "value", "pass/fail outcomes must be 0 or 1")
            pf_a.append(v["age"])
            pf_o.append(v["value"])
        elif v["record"] == "spec":
            if v.get("spec") is None or v["spec"] < 1:
                _fail(r, path, "spec", "specification records need a 1-based spec index")
            sa.append(v["age"])
            si.append(v["spec"])
            sv.append(v["value"])
        else:
            _fail(r, path, "record", f"record must be 'passfail' or 'spec', got {v['record']!r}")
    return SurrogateQAData(pf_a, pf_o, sa, si, sv)


def _lots(source):
    names = ("N", "n_c", "y_c", "n_r", "y_r")
    recs, path = _records(source, {k: _num("int") for k in names}, set(names))
    for r in recs:
        v = r.values
        for k in names:
            if v[k] < 0:
                _fail(r, path, k, f"{k} must be nonnegative")
        if v["y_c"] > v["n_c"]:
            _fail(r, path, "y_c", "more convenience-sample features than items")
        if v["y_r"] > v["n_r"]:
            _fail(r, path, "y_r", "more random-sample features than items")
        if v["n_c"] + v["n_r"] > v["N"]:
            _fail(r, path, "N", "samples exceed lot size")
    return LotData(*([r.values[k] for r in recs] for k in names))


def _partial_tests(source):
    schema = {"age": _num("float"), "worked": _ids, "failed": _ids, "some_failed": _ids}
    recs, path = _records(source, schema, {"age"})
    tests = []
    for r in recs:
        v = r.values
        w, f, s = (v.get(k) or frozenset() for k in ("worked", "failed", "some_failed"))
        if (w & f) or (w & s) or (f & s):
            _fail(r, path, "worked", "a component appears in more than one of worked/failed/some_failed")
        if v["age"] < 0:
            _fail(r, path, "age", "age must be nonnegative")
        tests.append(PartialSystemTest(w, f, s, v["age"]))
    return tests


def _nhpp(source):
    recs, path = _records(source, {"unit": _num("int"), "interval": _num("int"), "count": _num("int")}, {"unit", "interval", "count"})
    cells = {}
    for r in recs:
        u, j, c = r.values["unit"], r.values["interval"], r.values["count"]
        if j < 1:
            _fail(r, path, "interval", "intervals are numbered from 1")
        if c < 0:
            _fail(r, path, "count", "counts must be nonnegative")
        if (u, j) in cells:
            _fail(r, path, "interval", f"duplicate entry for unit {u}, interval {j}")
        cells[(u, j)] = c
    units = sorted({u for u, _ in cells})
    J = max(j for _, j in cells)
    counts = np.zeros((len(units), J))
    for i, u in enumerate(units):
        for j in range(1, J + 1):
            if (u, j) not in cells:
                raise ParseError(f"unit {u} has no count for interval {j}", path)
            counts[i, j - 1] = cells[(u, j)]
    data = NHPPFleetData(counts)
    data.units = units
    return data


def _weibull_series(source):
    recs, path = _records(source, {"level": _text, "component": _num("int"), "time": _num("float")}, {"level", "time"})
    comp, sys_t = {}, []
    for r in recs:
        v = r.values
        if v["time"] <= 0:
            _fail(r, path, "time", "lifetimes must be positive")
        if v["level"] == "system":
            sys_t.append(v["time"])
        elif v["level"] == "component":
            if v.get("component") is None or v["component"] < 1:
                _fail(r, path, "component", "component rows need a 1-based component index")
            comp.setdefault(v["component"], []).append(v["time"])
        else:
            _fail(r, path, "level", f"level must be 'component' or 'system', got {v['level']!r}")
    k = max(comp) if comp else 0
    return WeibullSeriesData([comp.get(i, []) for i in range(1, k + 1)], sys_t)


DATASET_KINDS: dict[str, Callable] = {
    "binomial-age": _binomial_age,
    "lifetimes": _lifetimes,
    "degfail": _degfail,
    "surrogate": _surrogate,
    "lots": _lots,
    "partial-tests": _partial_tests,
    "nhpp": _nhpp,
    "weibull-series": _weibull_series,
}


def parse_dataset(source, kind: str):
    """Read a dataset of the given kind; see :data:`DATASET_KINDS` for the grammars."""
    if kind not in DATASET_KINDS:
        raise ParseError(f"unknown dataset kind {kind!r}; expected one of {sorted(DATASET_KINDS)}")
    try:
        return DATASET_KINDS[kind](source)
    except DataError as exc:
        raise ParseError(str(exc), getattr(source, "name", None) if hasattr(source, "read") else os.fspath(source)) from exc


# ----------------------------------------------------------------------
# reliability bands
# ----------------------------------------------------------------------

@dataclass
class ReliabilityBandTable:
    x: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    abscissa: str = "t"

    def __post_init__(self):
        self.x, self.mean, self.lower, self.upper = (np.asarray(a, dtype=float).reshape(-1) for a in (self.x, self.mean, self.lower, self.upper))
        if not (len(self.x) == len(self.mean) == len(self.lower) == len(self.upper)):
            raise ValueError("band columns differ in length")
        if len(self.x) and np.any(np.diff(self.x) <= 0):
            raise ValueError("abscissa must be strictly increasing")

    def __eq__(self, other):
        return (
            isinstance(other, ReliabilityBandTable)
            and self.abscissa == other.abscissa
            and all(np.array_equal(a, b) for a, b in zip((self.x, self.mean, self.lower, self.upper), (other.x, other.mean, other.lower, other.upper)))
        )


def emit_band_table(chain, fn, grid, level=0.90, abscissa="t") -> ReliabilityBandTable:
    """Posterior mean and central ``level`` band of ``fn(draw, grid)`` at each grid point.

    ``chain`` is a :class:`~sysrel.mcmc.Chain` (``fn`` receives parameter
    vectors) or any iterable of draws passed to ``fn`` unchanged.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    vals = [np.broadcast_to(np.asarray(fn(d, grid), dtype=float), grid.shape) for d in chain]
    if not vals:
        raise ValueError("chain is empty")
    v = np.vstack(vals)
    lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2], axis=0)
    mean = v.mean(axis=0)
    # averaging identical values can leave the mean an ulp outside the band
    tol = 1e-12 * np.maximum(1.0, np.abs(mean))
    mean = np.where((mean < lo) & (lo - mean <= tol), lo, mean)
    mean = np.where((mean > hi) & (mean - hi <= tol), hi, mean)
    return ReliabilityBandTable(grid, mean, lo, hi, abscissa)


def band_table_to_csv(table: ReliabilityBandTable, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([table.abscissa, "mean", "lower", "upper"])
    for row in zip(table.x, table.mean, table.lower, table.upper):
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


def band_table_from_csv(source) -> ReliabilityBandTable:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    text, path = _read_text(source)
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    absc = first.split(",")[0].strip() or "t"
    schema = {absc: _num("float"), "mean": _num("float"), "lower": _num("float"), "upper": _num("float")}
    recs, path = _records(io.StringIO(text), schema, set(schema))
    for r in recs:
        v = r.values
        if not v["lower"] <= v["upper"]:
            _fail(r, path, "lower", "lower band exceeds upper band")
    col = lambda k: [r.values[k] for r in recs]
    try:
        return ReliabilityBandTable(col(absc), col("mean"), col("lower"), col("upper"), absc)
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc


# ----------------------------------------------------------------------
# distribution strings, e.g. "gamma(4, 0.0333)" or "weibull(shape=2, scale=10)"
# ----------------------------------------------------------------------

_DIST_CTORS = {
    "normal": dists.normal,
    "lognormal": dists.lognormal,
    "weibull": dists.weibull,
    "gamma": dists.gamma,
    "beta": dists.beta,
    "exponential": dists.exponential,
    "uniform": dists.uniform,
}


def parse_dist(text: str) -> dists.DistSpec:
    m = re.fullmatch(r"\s*([a-z_]+)\s*\((.*)\)\s*", text)
    if not m or m.group(1) not in _DIST_CTORS:
        raise ParseError(f"cannot read distribution {text!r}; expected e.g. 'gamma(4, 0.5)' with a family in {sorted(_DIST_CTORS)}")
    try:
        call = ast.parse(f"f({m.group(2)})", mode="eval").body
        args = [ast.literal_eval(a) for a in call.args]
        kwargs = {k.arg: ast.literal_eval(k.value) for k in call.keywords}
        return _DIST_CTORS[m.group(1)](*args, **kwargs)
    except dists.ParameterError:
        raise
    except (SyntaxError, ValueError, TypeError) as exc:
        raise ParseError(f"cannot read distribution {text!r}: {exc}") from None


# ----------------------------------------------------------------------
# network and flowgraph text formats
# ----------------------------------------------------------------------

def _directives(source):
    text, path = _read_text(source)
    out = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((i, line.split()))
    if not out:
        raise ParseError("no records (file is empty)", path)
    return out, path


def parse_bn(source):
    """Read a binary network.

    Grammar, one directive per line::

        node NAME
        edge PARENT CHILD
        cpt NAME PROB              # parentless node
        cpt NAME BITS PROB         # BITS: parent values in edge order, e.g. 101

    The first ``edge`` into a node names its most significant parent bit.
    """
    from .representations import BayesNet, bn_validate

    items, path = _directives(source)
    parents, cpts, nodes = {}, {}, []
    for line, tok in items:
        head = tok[0]
        try:
            if head == "node" and len(tok) == 2:
                nodes.append(tok[1])
                parents.setdefault(tok[1], [])
            elif head == "edge" and len(tok) == 3:
                for v in tok[1:]:
                    if v not in parents:
                        raise ParseError(f"edge uses undeclared node {v!r}", path, line)
                parents[tok[2]].append(tok[1])
            elif head == "cpt" and len(tok) in (3, 4):
                name = tok[1]
                if name not in parents:
                    raise ParseError(f"cpt for undeclared node {name!r}", path, line)
                bits = tok[2] if len(tok) == 4 else ""
                if any(b not in "01" for b in bits):
                    raise ParseError(f"parent configuration {bits!r} must be a 0/1 string", path, line)
                prob = float(tok[-1])
                key = tuple(int(b) for b in bits)
                if key in cpts.setdefault(name, {}):
                    raise ParseError(f"duplicate cpt row {bits or '(root)'} for {name!r}", path, line)
                cpts[name][key] = prob
            else:
                raise ParseError(f"unrecognized directive {' '.join(tok)!r}", path, line)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad number: {exc}", path, line) from None
    for name, rows in cpts.items():
        k = len(parents[name])
        for key in rows:
            if len(key) != k:
                raise ParseError(f"cpt rows for {name!r} need {k} parent bits, got {len(key)}", path)
    net = BayesNet({v: tuple(ps) for v, ps in parents.items()}, cpts)
    problems = bn_validate(net)
    if problems:
        raise ParseError("; ".join(problems), path)
    return net


def parse_flowgraph(source):
    """Read a flowgraph.

    Grammar, one directive per line::

        state ID [source] [sink]
        branch FROM TO PROB FAMILY KEY=VALUE ...

    ``FAMILY`` is ``exponential rate=R``, ``gamma shape=K rate=R`` or
    ``fixed time=T``.
    """
    from .representations import Branch, Flowgraph, flowgraph_validate

    items, path = _directives(source)
    states, branches, source_state, sinks = [], [], None, set()
    for line, tok in items:
        head = tok[0]
        if head == "state" and len(tok) >= 2:
            sid = tok[1]
            states.append(sid)
            for flag in tok[2:]:
                if flag == "source":
                    if source_state is not None:
                        raise ParseError("more than one source state", path, line)
                    source_state = sid
                elif flag == "sink":
                    sinks.add(sid)
                else:
                    raise ParseError(f"unknown state flag {flag!r}", path, line)
        elif head == "branch" and len(tok) >= 5:
            u, v, fam = tok[1], tok[2], tok[4]
            try:
                p = float(tok[3])
                params = dict(kv.split("=", 1) for kv in tok[5:])
                params = {k: float(x) for k, x in params.items()}
            except ValueError:
                raise ParseError("branch probability and parameters must be numbers written KEY=VALUE", path, line) from None
            try:
                if fam == "fixed":
                    if set(params) != {"time"}:
                        raise ParseError("fixed delays take time=T", path, line)
                    wait = params["time"]
                elif fam in ("exponential", "gamma"):
                    wait = _DIST_CTORS[fam](**params)
                else:
                    raise ParseError(f"unknown waiting-time family {fam!r}", path, line)
            except (TypeError, dists.ParameterError) as exc:
                raise ParseError(f"bad parameters for {fam}: {exc}", path, line) from None
            branches.append(Branch(u, v, p, wait))
        else:
            raise ParseError(f"unrecognized directive {' '.join(tok)!r}", path, line)
    fg = Flowgraph(states, branches, source_state, sinks)
    problems = flowgraph_validate(fg)
    if problems:
        raise ParseError("; ".join(problems), path)
    return fg


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

def load_config(path) -> dict:
    """Read a TOML configuration and record its directory for relative paths."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid configuration: {exc}", path) from None
    cfg["_base"] = os.path.dirname(os.path.abspath(path))
    return cfg
