"""Flowgraph models: Mason's-rule reduction, MGF moments and saddlepoint inversion.

A branch ``u -> v`` carries a transition probability ``p`` and a waiting-time
distribution; its transmittance is ``p * M(s)``. Solving the graph from a
source to a sink gives the transmittance of the first-passage time, whose
value at ``s = 0`` is the probability of ever reaching the sink.

Expressions are evaluated as second-order jets ``(f, f', f'')`` in ``s`` so
the saddlepoint equations use exact derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import differentiate, integrate, optimize

from ..dists import DistSpec

__all__ = [
    "FlowgraphError",
    "Branch",
    "Flowgraph",
    "Transmittance",
    "flowgraph_validate",
    "flowgraph_solve",
    "mgf_moments",
    "mgf_invert",
    "InversionResult",
    "Moments",
    "MAX_LOOPS",
]

MAX_LOOPS = 20
_PROB_TOL = 1e-9


class FlowgraphError(ValueError):
    """Invalid flowgraph, unsolvable query or failed numerical step."""


# ----------------------------------------------------------------------
# jets and expressions
# ----------------------------------------------------------------------

class Jet:
    """Value with first and second derivative; arrays broadcast."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1=0.0, d2=0.0):
        self.v, self.d1, self.d2 = v, d1, d2

    def __add__(self, o):
        return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    def __sub__(self, o):
        return Jet(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)

    def __mul__(self, o):
        return Jet(self.v * o.v, self.d1 * o.v + self.v * o.d1, self.d2 * o.v + 2 * self.d1 * o.d1 + self.v * o.d2)

    def __truediv__(self, o):
        h = self.v / o.v
        h1 = (self.d1 - h * o.d1) / o.v
        h2 = (self.d2 - 2 * h1 * o.d1 - h * o.d2) / o.v
        return Jet(h, h1, h2)


class Expr:
    """Node of a transmittance expression."""

    def jet(self, s) -> Jet:
        raise NotImplementedError

    def poles(self) -> list[float]:
        return []

    def __add__(self, o):
        return Sum([self, o])

    def __mul__(self, o):
        return Prod([self, o])


@dataclass(frozen=True)
class Const(Expr):
    c: float

    def jet(self, s):
        z = np.zeros_like(np.asarray(s, dtype=float))
        return Jet(z + self.c, z, z)


@dataclass(frozen=True)
class Leaf(Expr):
    """``p * M(s)`` for one branch."""

    p: float
    wait: DistSpec | float

    def pole(self) -> float:
        if isinstance(self.wait, DistSpec):
            return float(self.wait["rate"])
        return math.inf

    def poles(self):
        return [self.pole()]

    def jet(self, s):
        s = np.asarray(s, dtype=float)
        w = self.wait
        if not isinstance(w, DistSpec):
            m = self.p * np.exp(w * s)
            return Jet(m, w * m, w * w * m)
        r = w["rate"]
        k = 1.0 if w.family == "exponential" else w["shape"]
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = np.where(s < r, r - s, np.nan)
            m = self.p * (r / gap) ** k
            return Jet(m, k / gap * m, k * (k + 1) / gap**2 * m)


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def jet(self, s):
        out = self.terms[0].jet(s)
        for t in self.terms[1:]:
            out = out + t.jet(s)
        return out

    def poles(self):
        return [p for t in self.terms for p in t.poles()]


@dataclass(frozen=True)
class Prod(Expr):
    factors: tuple

    def __init__(self, factors):
        object.__setattr__(self, "factors", tuple(factors))

    def jet(self, s):
        out = self.factors[0].jet(s)
        for f in self.factors[1:]:
            out = out * f.jet(s)
        return out

    def poles(self):
        return [p for f in self.factors for p in f.poles()]


@dataclass(frozen=True)
class Diff(Expr):
    a: Expr
    b: Expr

    def jet(self, s):
        return self.a.jet(s) - self.b.jet(s)

    def poles(self):
        return self.a.poles() + self.b.poles()


@dataclass(frozen=True)
class Quot(Expr):
    num: Expr
    den: Expr

    def jet(self, s):
        return self.num.jet(s) / self.den.jet(s)

    def poles(self):
        return self.num.poles() + self.den.poles()


# ----------------------------------------------------------------------
# flowgraph structure
# ----------------------------------------------------------------------

_WAIT_FAMILIES = ("exponential", "gamma")


@dataclass(frozen=True)
class Branch:
    """Transition ``u -> v`` with probability ``p`` and waiting time ``wait``.

    ``wait`` is an exponential or gamma :class:`DistSpec`, or a nonnegative
    number for a fixed delay.
    """

    u: object
    v: object
    p: float
    wait: DistSpec | float

    def leaf(self) -> Leaf:
        return Leaf(float(self.p), self.wait if isinstance(self.wait, DistSpec) else float(self.wait))


@dataclass
class Flowgraph:
    states: list
    branches: list
    source: object = None
    sinks: set = field(default_factory=set)

    def __post_init__(self):
        self.states = list(dict.fromkeys(self.states))
        self.sinks = set(self.sinks)

    def graph(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(self.states)
        for b in self.branches:
            g.add_edge(b.u, b.v, branch=b)
        return g


def flowgraph_validate(fg: Flowgraph) -> list[str]:
    """All problems with ``fg``; empty when valid.

    Outgoing probabilities of each state that has branches must sum to 1.
    Sinks may have no outgoing branches.
    """
    problems = []
    known = set(fg.states)
    out = {}
    for i, b in enumerate(fg.branches):
        for end in (b.u, b.v):
            if end not in known:
                problems.append(f"branch {i} ({b.u} -> {b.v}) uses unknown state {end!r}")
        if not (0.0 < b.p <= 1.0):
            problems.append(f"branch {i} ({b.u} -> {b.v}) has probability {b.p!r} outside (0, 1]")
        w = b.wait
        if isinstance(w, DistSpec):
            if w.family not in _WAIT_FAMILIES:
                problems.append(f"branch {i} ({b.u} -> {b.v}) waiting family {w.family!r} has no closed-form MGF")
        elif not (np.isfinite(w) and w >= 0):
            problems.append(f"branch {i} ({b.u} -> {b.v}) fixed delay must be a nonnegative number")
        out[b.u] = out.get(b.u, 0.0) + b.p
    for u, total in out.items():
        if abs(total - 1.0) > _PROB_TOL:
            problems.append(f"outgoing probabilities of state {u!r} sum to {total:.12g}, not 1")
    if fg.source is not None and fg.source not in known:
        problems.append(f"source {fg.source!r} is not a state")
    for s in fg.sinks:
        if s not in known:
            problems.append(f"sink {s!r} is not a state")
    return problems


# ----------------------------------------------------------------------
# Mason's rule
# ----------------------------------------------------------------------

def _independent_sets(loops, touching):
    """Yield index tuples of pairwise non-touching loops (nonempty)."""
    n = len(loops)

    def extend(chosen, start):
        for j in range(start, n):
            if all(not touching[j][i] for i in chosen):
                nxt = chosen + (j,)
                yield nxt
                yield from extend(nxt, j + 1)

    yield from extend((), 0)


def _delta(loop_gains, loop_nodes, allowed) -> Expr:
    """``1 - sum L + sum LL - ...`` over loops whose indices are in ``allowed``."""
    idx = list(allowed)
    touching = [[bool(loop_nodes[a] & loop_nodes[b]) for b in idx] for a in idx]
    plus, minus = [Const(1.0)], []
    for group in _independent_sets(idx, touching):
        term = Prod([loop_gains[idx[g]] for g in group])
        (minus if len(group) % 2 else plus).append(term)
    d = Sum(plus)
    return Diff(d, Sum(minus)) if minus else d


class Transmittance:
    """Solved source-to-sink transmittance ``T(s)``.

    Calling returns ``T(s)``; :meth:`jet` returns ``(T, T', T'')``. Valid for
    ``s < s_max``, the smaller of the nearest branch-MGF pole and the first
    positive zero of the loop determinant.
    """

    def __init__(self, numerator: Expr, delta: Expr, src=None, dst=None):
        self.numerator = numerator
        self.delta = delta
        self.expr = Quot(numerator, delta)
        self.src, self.dst = src, dst
        self._s_max = None

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s >= self.pole):
            raise FlowgraphError(f"s must be below the branch MGF pole {self.pole:g}")
        d = self.delta.jet(s).v
        if np.any(np.abs(d) < 1e-14):
            raise FlowgraphError("loop determinant vanishes at the requested s")
        return s

    def __call__(self, s):
        s = self._check(s)
        out = self.expr.jet(s).v
        return float(out) if out.ndim == 0 else out

    def jet(self, s) -> Jet:
        return self.expr.jet(self._check(s))

    @property
    def pole(self) -> float:
        ps = self.expr.poles()
        return min(ps) if ps else math.inf

    @property
    def p_total(self) -> float:
        return self(0.0)

    @property
    def s_max(self) -> float:
        if self._s_max is None:
            self._s_max = self._find_s_max()
        return self._s_max

    def _find_s_max(self):
        pole = self.pole
        dfun = lambda s: float(self.delta.jet(s).v)
        if dfun(0.0) <= 0:
            raise FlowgraphError("loop determinant is not positive at s = 0")
        hi = pole if math.isfinite(pole) else 1.0
        while True:
            # scan for the first sign change of the determinant below hi
            grid = hi * (1.0 - np.geomspace(1.0, 1e-12, 400))
            grid = np.concatenate([[0.0], grid[1:]])
            vals = self.delta.jet(grid).v
            bad = np.nonzero(~(vals > 0))[0]
            if bad.size:
                k = bad[0]
                return optimize.brentq(dfun, grid[k - 1], grid[k], xtol=1e-14, rtol=4 * np.finfo(float).eps)
            if math.isfinite(pole):
                return pole
            if hi > 1e8:
                return math.inf
            hi *= 4.0

    def __repr__(self):
        return f"Transmittance({self.src!r} -> {self.dst!r}, p_total={self.p_total:.6g})"


def flowgraph_solve(fg: Flowgraph, src=None, dst=None) -> Transmittance:
    """First-passage transmittance from ``src`` to ``dst`` by Mason's rule.

    Parallel branches are summed and branches leaving ``dst`` are dropped.
    Loop enumeration is capped at :data:`MAX_LOOPS` simple loops.
    """
    problems = flowgraph_validate(fg)
    if problems:
        raise FlowgraphError("; ".join(problems))
    src = fg.source if src is None else src
    if dst is None:
        if len(fg.sinks) != 1:
            raise FlowgraphError("dst not given and the flowgraph does not have exactly one sink")
        dst = next(iter(fg.sinks))
    for name, x in (("source", src), ("sink", dst)):
        if x not in fg.states:
            raise FlowgraphError(f"{name} {x!r} is not a state")
    if src == dst:
        raise FlowgraphError("source and sink coincide")

    edges = {}
    for b in fg.branches:
        if b.u == dst:
            continue
        edges.setdefault((b.u, b.v), []).append(b.leaf())
    g = nx.DiGraph()
    g.add_nodes_from(fg.states)
    g.add_edges_from(edges)
    if not nx.has_path(g, src, dst):
        raise FlowgraphError(f"sink {dst!r} is unreachable from {src!r}")
    # only states on some src -> dst route matter
    keep = nx.descendants(g, src) | {src}
    keep &= nx.ancestors(g, dst) | {dst}
    g = g.subgraph(keep).copy()
    gain = {e: (leaves[0] if len(leaves) == 1 else Sum(leaves)) for e, leaves in edges.items() if e in g.edges}

    loops = []
    for cyc in nx.simple_cycles(g):
        loops.append(cyc)
        if len(loops) > MAX_LOOPS:
            raise FlowgraphError(f"more than {MAX_LOOPS} simple loops; reduce the graph before solving")
    loop_nodes = [set(c) for c in loops]
    loop_gains = [Prod([gain[(c[i], c[(i + 1) % len(c)])] for i in range(len(c))]) for c in loops]
    delta = _delta(loop_gains, loop_nodes, range(len(loops)))

    terms = []
    for path in nx.all_simple_paths(g, src, dst):
        pg = Prod([gain[(path[i], path[i + 1])] for i in range(len(path) - 1)])
        on = set(path)
        free = [i for i, nodes in enumerate(loop_nodes) if not (nodes & on)]
        terms.append(Prod([pg, _delta(loop_gains, loop_nodes, free)]) if free else pg)
    numerator = terms[0] if len(terms) == 1 else Sum(terms)
    return Transmittance(numerator, delta, src, dst)


# ----------------------------------------------------------------------
# moments and inversion
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float | None


def mgf_moments(t: Transmittance, order: int = 2) -> Moments:
    """Mean (and variance for ``order=2``) of the conditional passage time.

    Differentiates ``M(s)/M(0)`` at 0 numerically with scipy's adaptive
    central-difference routines; the initial step stays inside the region
    of convergence.
    """
    if order not in (1, 2):
        raise FlowgraphError("order must be 1 or 2")
    m0 = t(0.0)
    if not m0 > 0:
        raise FlowgraphError("transmittance is zero at s = 0")
    smax = t.s_max
    step = min(0.5, smax / 4.0) if math.isfinite(smax) else 0.5

    def norm(s):
        return t.expr.jet(s).v / m0

    r1 = differentiate.derivative(norm, 0.0, initial_step=step)
    if not r1.success:
        raise FlowgraphError(
            f"first-derivative differentiation failed (status {int(r1.status)}, "
            f"{int(r1.nit)} iterations, initial step {step:g}, error estimate {float(r1.error):.3g})"
        )
    mean = float(r1.df)
    if order == 1:
        return Moments(mean, None)
    r2 = differentiate.hessian(lambda x: norm(x[0]), np.array([0.0]), initial_step=step)
    if not np.all(r2.success):
        raise FlowgraphError(
            f"second-derivative differentiation failed (status {np.ravel(r2.status)[0]}, "
            f"initial step {step:g}, error estimate {float(np.ravel(r2.error)[0]):.3g})"
        )
    m2 = float(np.ravel(r2.ddf)[0])
    return Moments(mean, m2 - mean**2)


@dataclass
class InversionResult:
    grid: np.ndarray
    density: np.ndarray
    reliability: np.ndarray
    saddlepoints: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    normalizer: float = 1.0


class _CGF:
    """Cumulant generating function of the normalized passage time."""

    def __init__(self, t: Transmittance):
        self.t = t
        self.m0 = t(0.0)
        self.smax = t.s_max

    def parts(self, s):
        j = self.t.expr.jet(s)
        k1 = j.d1 / j.v
        return np.log(j.v / self.m0), k1, j.d2 / j.v - k1 * k1

    def k1(self, s):
        j = self.t.expr.jet(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            return float(j.d1 / j.v)

    def upper(self):
        if math.isfinite(self.smax):
            return self.smax - 1e-9 * max(1.0, abs(self.smax))
        return math.inf

    def solve(self, x):
        """Saddlepoint ``s`` with ``K'(s) = x``; raises FlowgraphError."""
        f = lambda s: self.k1(s) - x
        lo = -1.0
        while True:
            flo = f(lo)
            if not np.isfinite(flo) or lo < -1e12:
                raise FlowgraphError(f"no saddlepoint for t={x:g}: t is below the support of the passage time")
            if flo < 0:
                break
            lo *= 2.0
        hi = self.upper()
        if math.isinf(hi):
            hi = 1.0
            while f(hi) < 0:
                hi *= 2.0
                if hi > 1e12:
                    raise FlowgraphError(f"no saddlepoint for t={x:g}")
        elif f(hi) < 0:
            raise FlowgraphError(f"t={x:g} lies beyond the reach of the saddlepoint equation")
        return optimize.brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)

    def raw_density(self, s):
        """Unnormalized saddlepoint density at ``t = K'(s)``, with ``K''(s)``."""
        k, k1, k2 = self.parts(s)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            f = np.exp(k - s * k1) / np.sqrt(2 * np.pi * k2)
        return f, k2

    def mass(self, a, b):
        """Integral of the raw density over ``t`` between ``K'(a)`` and ``K'(b)``."""
        def g(s):
            f, k2 = self.raw_density(s)
            with np.errstate(invalid="ignore", over="ignore"):
                out = float(f * k2)
            return out if np.isfinite(out) else 0.0

        val, _ = integrate.quad(g, a, b, limit=200, epsabs=1e-13, epsrel=1e-10)
        return val


def mgf_invert(t: Transmittance, grid: Sequence[float]) -> InversionResult:
    """First-order saddlepoint density and reliability of the passage time.

    The density ``(2 pi K''(s))^(-1/2) exp(K(s) - s t)`` with ``K'(s) = t`` is
    renormalized to integrate to ``M(0)`` over ``(0, inf)``. Reliability is the
    integral of the renormalized density beyond ``t``, so it is nonincreasing
    with ``R(0) = M(0)``. Grid points where the saddlepoint equation has no
    solution get NaN and an entry in ``diagnostics``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise FlowgraphError("grid must be a nonempty 1-d sequence")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise FlowgraphError("grid points must be finite and nonnegative")
    cgf = _CGF(t)
    if not cgf.smax > 0:
        raise FlowgraphError("transmittance has no convergence region to the right of 0")
    z = cgf.mass(-np.inf, 0.0) + cgf.mass(0.0, cgf.upper())
    if not (np.isfinite(z) and z > 0):
        raise FlowgraphError("saddlepoint density could not be normalized")

    n = grid.size
    dens = np.full(n, np.nan)
    rel = np.full(n, np.nan)
    shat = np.full(n, np.nan)
    diags = {}
    for i, x in enumerate(grid):
        if x == 0.0:
            shat[i] = -np.inf
            dens[i] = 0.0
            rel[i] = cgf.m0
            continue
        try:
            shat[i] = cgf.solve(x)
        except (FlowgraphError, ValueError, RuntimeError) as exc:
            diags[i] = str(exc)
            continue
        f, k2 = cgf.raw_density(shat[i])
        if not (np.isfinite(f) and k2 > 0):
            diags[i] = f"degenerate saddlepoint at t={x:g} (K''={float(k2):.3g})"
            shat[i] = np.nan
            continue
        dens[i] = cgf.m0 * float(f) / z

    # tail masses accumulated from the right so R is monotone by construction
    ok = np.nonzero(np.isfinite(shat) & (grid > 0))[0]
    order = ok[np.argsort(shat[ok])[::-1]]
    acc, prev = 0.0, cgf.upper()
    for i in order:
        a = shat[i]
        if a < 0 < prev:
            acc += cgf.mass(0.0, prev) + cgf.mass(a, 0.0)
        else:
            acc += cgf.mass(a, prev)
        prev = a
        rel[i] = cgf.m0 * min(acc / z, 1.0)
    return InversionResult(grid, dens, rel, shat, diags, z)
