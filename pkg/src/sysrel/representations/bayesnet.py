"""Binary Bayesian networks for system reliability.

Every node takes the value 1 (working) or 0 (failed). A node's CPT holds
``P(node = 1 | parents)`` with one row per parent configuration; the row
index reads the parent values as a binary number with the first listed
parent as the most significant bit. For parents ``(C1, C2, C3)`` row 5 is
``C1=1, C2=0, C3=1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

__all__ = [
    "BNError",
    "BayesNet",
    "bn_validate",
    "bn_joint_probability",
    "bn_system_reliability",
    "bn_marginal",
    "bn_structure_function",
    "FaultTree",
    "fault_tree_to_bn",
]


class BNError(ValueError):
    """Invalid network or query."""


def _row_index(bits: Sequence[int]) -> int:
    idx = 0
    for b in bits:
        idx = 2 * idx + int(b)
    return idx


@dataclass
class BayesNet:
    """Binary network given by parent lists and CPT rows.

    ``cpts[v]`` may be a sequence of ``2**len(parents[v])`` probabilities or a
    mapping from parent-value tuples to probabilities. Construction does not
    validate; call :func:`bn_validate`.
    """

    parents: dict
    cpts: dict

    def __post_init__(self):
        self.parents = {v: tuple(ps) for v, ps in self.parents.items()}
        for v in self.cpts:
            self.parents.setdefault(v, ())
        for ps in list(self.parents.values()):
            for u in ps:
                self.parents.setdefault(u, ())
        self.cpts = {v: self._as_rows(v, rows) for v, rows in self.cpts.items()}

    def _as_rows(self, v, rows):
        if isinstance(rows, Mapping):
            k = len(self.parents.get(v, ()))
            out = np.full(2**k, np.nan)
            for key, prob in rows.items():
                key = (key,) if np.ndim(key) == 0 else tuple(key)
                if len(key) != k:
                    raise BNError(f"CPT key {key} for {v!r} does not match its {k} parents")
                out[_row_index(key)] = prob
            return out
        return np.atleast_1d(np.asarray(rows, dtype=float))

    @classmethod
    def from_edges(cls, nodes: Sequence, edges: Sequence, cpts: Mapping) -> "BayesNet":
        parents = {v: [] for v in nodes}
        for u, v in edges:
            parents.setdefault(v, []).append(u)
            parents.setdefault(u, [])
        return cls(parents, dict(cpts))

    @property
    def nodes(self) -> list:
        return list(self.parents)

    @property
    def edges(self) -> list:
        return [(u, v) for v, ps in self.parents.items() for u in ps]

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.parents)
        g.add_edges_from(self.edges)
        return g

    def cpt_value(self, v, parent_values: Sequence[int]) -> float:
        return float(self.cpts[v][_row_index(parent_values)])


def bn_validate(net: BayesNet) -> list[str]:
    """All structural and numerical problems; an empty list means valid."""
    problems = []
    g = net.graph()
    for v in g.nodes:
        if g.has_edge(v, v):
            problems.append(f"node {v!r} is its own parent")
    try:
        cycle = nx.find_cycle(g)
        problems.append("graph has a directed cycle: " + " -> ".join(str(u) for u, _ in cycle))
    except nx.NetworkXNoCycle:
        pass
    for v, ps in net.parents.items():
        if len(set(ps)) != len(ps):
            problems.append(f"node {v!r} lists a parent twice")
        if v not in net.cpts:
            problems.append(f"node {v!r} has no CPT")
            continue
        rows = net.cpts[v]
        want = 2 ** len(ps)
        if len(rows) != want:
            problems.append(f"node {v!r} has {len(rows)} CPT rows, expected {want} for {len(ps)} parents")
        bad = [i for i, x in enumerate(rows) if not (np.isfinite(x) and 0.0 <= x <= 1.0)]
        if bad:
            problems.append(f"node {v!r} has CPT rows outside [0, 1] or missing: {bad}")
    return problems


def _require_valid(net):
    problems = bn_validate(net)
    if problems:
        raise BNError("; ".join(problems))


def bn_joint_probability(net: BayesNet, assignment: Mapping) -> float:
    """Product of ``P(v | parents[v])`` for a full 0/1 assignment."""
    _require_valid(net)
    missing = [v for v in net.parents if v not in assignment]
    if missing:
        raise BNError(f"assignment misses nodes {missing}")
    total = 1.0
    for v, ps in net.parents.items():
        x = int(assignment[v])
        if x not in (0, 1):
            raise BNError(f"node {v!r} must be 0 or 1")
        p1 = net.cpt_value(v, [int(assignment[u]) for u in ps])
        total *= p1 if x == 1 else 1.0 - p1
    return total


def _relevant(net: BayesNet, target, fixed):
    """Ancestors of ``target`` reached without passing through ``fixed`` nodes, in topological order."""
    seen, stack = set(), [target]
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        if v in fixed and v != target:
            continue
        stack.extend(net.parents[v])
    order = [v for v in nx.topological_sort(net.graph()) if v in seen]
    return order


def _plan(net: BayesNet, target, inputs, require_inputs=True):
    """Nodes to enumerate for ``P(target = 1)`` given independent ``inputs``."""
    _require_valid(net)
    if target not in net.parents:
        raise BNError(f"unknown node {target!r}")
    order = _relevant(net, target, inputs)
    if require_inputs:
        for v in order:
            if v not in inputs and not net.parents[v] and v != target:
                raise BNError(f"missing success probability for component {v!r}")
    free = [v for v in order if v != target]
    configs = []
    for bits in itertools.product((0, 1), repeat=len(free)):
        x = dict(zip(free, bits))
        # constant part of the weight from CPTs of non-input nodes
        w = 1.0
        for v in free:
            if v not in inputs:
                p1 = net.cpt_value(v, [x[u] for u in net.parents[v]])
                w *= p1 if x[v] else 1.0 - p1
        if w == 0.0:
            continue
        w *= net.cpt_value(target, [x[u] for u in net.parents[target]])
        if w == 0.0:
            continue
        configs.append((w, [(v, x[v]) for v in free if v in inputs]))
    return configs


def _sum(configs, probs):
    total = 0.0
    for w, states in configs:
        term = w
        for v, xv in states:
            term = term * (probs[v] if xv else 1.0 - probs[v])
        total = total + term
    return total


def _enumerate_success(net: BayesNet, target, probs: Mapping, require_inputs=True):
    """P(target = 1) with nodes in ``probs`` treated as independent inputs.

    Values in ``probs`` may be arrays (broadcast together).
    """
    if target in probs:
        return np.asarray(probs[target], dtype=float)
    probs = {v: np.asarray(p, dtype=float) for v, p in probs.items()}
    for v, p in probs.items():
        if np.any((p < 0) | (p > 1)):
            raise BNError(f"probability for {v!r} outside [0, 1]")
    return np.asarray(_sum(_plan(net, target, probs, require_inputs), probs), dtype=float)


def bn_system_reliability(net: BayesNet, comp_p: Mapping, system="S"):
    """Probability that ``system`` works given independent component success probabilities.

    Sums the system CPT over every configuration of its relevant ancestors,
    weighting each by the product of ``comp_p`` (or its complement) and any
    intermediate CPT rows. Entries of ``comp_p`` may be arrays, e.g. one
    value per age.
    """
    out = _enumerate_success(net, system, comp_p)
    return float(out) if np.ndim(out) == 0 else out


def bn_marginal(net: BayesNet, node, inputs: Mapping | None = None):
    """Marginal ``P(node = 1)``; root CPTs apply unless ``inputs`` overrides them."""
    out = _enumerate_success(net, node, dict(inputs or {}), require_inputs=False)
    return float(out) if np.ndim(out) == 0 else out


def bn_structure_function(net: BayesNet, components: Sequence, system="S"):
    """Return ``f(log_rs) -> log system reliability`` for use with multilevel models.

    ``log_rs`` has one row per entry of ``components`` (in that order) and
    one column per age.
    """
    components = list(components)
    configs = _plan(net, system, set(components))

    def log_system(log_rs):
        probs = {c: np.exp(log_rs[i]) for i, c in enumerate(components)}
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(_sum(configs, probs), dtype=float))

    return log_system


# ----------------------------------------------------------------------
# fault trees
# ----------------------------------------------------------------------

@dataclass
class FaultTree:
    """Gates over failure events.

    ``gates[name] = ("AND" | "OR", children)``; an AND gate's event occurs
    when all children fail, an OR gate's when any child fails. Leaves that
    are not gates are basic events.
    """

    gates: dict
    top: str
    basic: list = field(default_factory=list)

    def __post_init__(self):
        self.gates = {g: (kind.upper(), tuple(ch)) for g, (kind, ch) in self.gates.items()}
        for g, (kind, ch) in self.gates.items():
            if kind not in ("AND", "OR"):
                raise BNError(f"gate {g!r} has unknown type {kind!r}")
            if not ch:
                raise BNError(f"gate {g!r} has no inputs")
        if self.top not in self.gates and self.top not in self.basic:
            raise BNError(f"top event {self.top!r} is neither a gate nor a basic event")
        leaves = {c for _, ch in self.gates.values() for c in ch if c not in self.gates}
        self.basic = list(dict.fromkeys(list(self.basic) + sorted(leaves, key=str)))


def fault_tree_to_bn(tree: FaultTree) -> BayesNet:
    """Translate a fault tree into a success-valued network.

    A node value of 1 means the event did *not* occur (the item works). An
    AND gate over failures therefore works when any input works (OR on
    successes); an OR gate works only when every input works. Basic events
    become parentless nodes whose success probabilities are supplied at query
    time (their stored CPT is 0.5 and is ignored by
    :func:`bn_system_reliability`).
    """
    parents, cpts = {}, {}
    for b in tree.basic:
        parents[b] = ()
        cpts[b] = [0.5]
    for g, (kind, ch) in tree.gates.items():
        parents[g] = ch
        rows = []
        for bits in itertools.product((0, 1), repeat=len(ch)):
            works = any(bits) if kind == "AND" else all(bits)
            rows.append(1.0 if works else 0.0)
        cpts[g] = rows
    net = BayesNet(parents, cpts)
    _require_valid(net)
    return net
