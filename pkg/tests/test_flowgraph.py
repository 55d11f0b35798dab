import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import differentiate, integrate

from sysrel.dists import exponential, gamma, normal
from sysrel.representations import (
    Branch,
    Flowgraph,
    FlowgraphError,
    flowgraph_solve,
    flowgraph_validate,
    mgf_invert,
    mgf_moments,
)
from sysrel.representations.flowgraph import MAX_LOOPS
from sysrel.scenarios import pump_flowgraph


def branch_mgf(b, s):
    w = b.wait
    if not hasattr(w, "family"):
        return math.exp(w * s)
    r = w["rate"]
    k = 1.0 if w.family == "exponential" else w["shape"]
    return (r / (r - s)) ** k


def first_step(fg, src, dst, s=0.0):
    """Solve T_i = sum_j p_ij M_ij(s) T_j with T_dst = 1 as a linear system."""
    states = [x for x in fg.states if x != dst]
    idx = {x: i for i, x in enumerate(states)}
    n = len(states)
    a = np.eye(n)
    rhs = np.zeros(n)
    for b in fg.branches:
        if b.u == dst:
            continue
        w = b.p * branch_mgf(b, s)
        if b.v == dst:
            rhs[idx[b.u]] += w
        else:
            a[idx[b.u], idx[b.v]] -= w
    return np.linalg.solve(a, rhs)[idx[src]]


def simulate_passage(fg, src, dst, n, rng):
    """Passage times of ``n`` walks; NaN for walks absorbed elsewhere."""
    out_b = {}
    for b in fg.branches:
        out_b.setdefault(b.u, []).append(b)
    times = np.empty(n)
    for i in range(n):
        x, t = src, 0.0
        while x != dst:
            bs = out_b.get(x)
            if not bs:
                t = np.nan
                break
            b = bs[rng.choice(len(bs), p=[c.p for c in bs])]
            w = b.wait
            if not hasattr(w, "family"):
                t += w
            elif w.family == "exponential":
                t += rng.exponential(1.0 / w["rate"])
            else:
                t += rng.gamma(w["shape"], 1.0 / w["rate"])
            x = b.v
        times[i] = t
    return times


# --- validation -------------------------------------------------------------

def test_validate_probability_sum():
    fg = Flowgraph([0, 1, 2], [Branch(0, 1, 0.5, exponential(1.0)), Branch(0, 2, 0.4, exponential(1.0))], 0, {1, 2})
    assert any("sum to 0.9" in p for p in flowgraph_validate(fg))


def test_validate_probability_range_and_family():
    fg = Flowgraph([0, 1], [Branch(0, 1, 1.5, normal(0, 1))], 0, {1})
    problems = flowgraph_validate(fg)
    assert any("outside (0, 1]" in p for p in problems)
    assert any("no closed-form MGF" in p for p in problems)


def test_validate_unknown_state():
    fg = Flowgraph([0, 1], [Branch(0, 9, 1.0, exponential(1.0))], 0, {1})
    assert any("unknown state 9" in p for p in flowgraph_validate(fg))


def test_pump_graphs_valid():
    assert flowgraph_validate(pump_flowgraph(1, 3)) == []
    assert flowgraph_validate(pump_flowgraph(1, 3, p10=0.4)) == []


def test_unreachable_sink():
    fg = Flowgraph([0, 1, 2], [Branch(0, 1, 1.0, exponential(1.0))], 0, {1, 2})
    with pytest.raises(FlowgraphError, match="unreachable"):
        flowgraph_solve(fg, 0, 2)


def test_too_many_loops():
    states = list(range(5)) + ["end"]
    branches = []
    for u in range(5):
        targets = [v for v in range(5) if v != u] + ["end"]
        branches += [Branch(u, v, 1.0 / len(targets), exponential(2.0)) for v in targets]
    with pytest.raises(FlowgraphError, match=f"more than {MAX_LOOPS}"):
        flowgraph_solve(Flowgraph(states, branches, 0, {"end"}))


# --- solving ----------------------------------------------------------------

def test_series_is_product():
    lam0, lam1 = 1.0, 3.0
    t = flowgraph_solve(pump_flowgraph(lam0, lam1))
    s = np.linspace(-5.0, 1.99, 100)
    want = (2 * lam0 / (2 * lam0 - s)) * (lam1 / (lam1 - s))
    assert np.allclose(t(s), want, rtol=1e-14, atol=0)
    assert t.s_max == 2 * lam0


def test_feedback_closed_form():
    lam0, lam1, p10, mu = 1.0, 3.0, 0.3, 2.0
    t = flowgraph_solve(pump_flowgraph(lam0, lam1, p10, mu))
    s = np.linspace(-4.0, 0.8, 50)
    t01 = 2 * lam0 / (2 * lam0 - s)
    t12 = (1 - p10) * lam1 / (lam1 - s)
    t10 = p10 * mu / (mu - s)
    assert np.allclose(t(s), t01 * t12 / (1 - t01 * t10), rtol=1e-13)


def test_feedback_vanishing_loop_reduces_to_series():
    s = np.linspace(-3.0, 1.5, 40)
    series = flowgraph_solve(pump_flowgraph(1.0, 3.0))
    near = flowgraph_solve(pump_flowgraph(1.0, 3.0, p10=1e-12, repair_rate=5.0))
    assert np.allclose(near(s), series(s), rtol=1e-10)


def test_determinant_zero_raises():
    t = flowgraph_solve(pump_flowgraph(1.0, 3.0, p10=0.5, repair_rate=2.0))
    assert 0 < t.s_max < 2.0
    with pytest.raises(FlowgraphError):
        t(2.0)  # at the branch pole
    assert abs(float(t.delta.jet(t.s_max).v)) < 1e-12


def test_parallel_branches_sum():
    fg = Flowgraph([0, 1], [Branch(0, 1, 0.25, exponential(1.0)), Branch(0, 1, 0.75, gamma(2.0, 3.0))], 0, {1})
    t = flowgraph_solve(fg)
    s = np.linspace(-2, 0.9, 20)
    assert np.allclose(t(s), 0.25 / (1 - s) + 0.75 * (3 / (3 - s)) ** 2, rtol=1e-14)


def random_flowgraph(rng, n):
    """Transient states 0..n-1, two absorbing states 'a' and 'b'."""
    states = list(range(n)) + ["a", "b"]
    branches = []
    for u in range(n):
        k = int(rng.integers(1, 4))
        others = [x for x in states if x != u]
        targets = [others[i] for i in rng.choice(len(others), size=min(k, n + 1), replace=False)]
        if u == n - 1 and "a" not in targets:
            targets[0] = "a"
        p = rng.dirichlet(np.ones(len(targets)))
        for v, pv in zip(targets, p):
            wait = exponential(float(rng.uniform(1, 4))) if rng.uniform() < 0.7 else gamma(float(rng.uniform(1, 3)), float(rng.uniform(2, 5)))
            branches.append(Branch(u, v, float(pv), wait))
    return Flowgraph(states, branches, 0, {"a", "b"})


@pytest.mark.parametrize("seed", range(25))
def test_mason_matches_first_step(seed):
    rng = np.random.default_rng(seed)
    fg = random_flowgraph(rng, int(rng.integers(2, 5)))
    try:
        t = flowgraph_solve(fg, 0, "a")
    except FlowgraphError as exc:
        assert "unreachable" in str(exc) or "loops" in str(exc)
        return
    assert t.p_total == pytest.approx(first_step(fg, 0, "a"), abs=1e-12)
    for s in (-1.5, -0.3, 0.5 * min(t.s_max, 1.0)):
        assert t(s) == pytest.approx(first_step(fg, 0, "a", s), rel=1e-11)


# --- moments ----------------------------------------------------------------

def test_series_moments():
    lam0, lam1 = 1.0, 3.0
    m = mgf_moments(flowgraph_solve(pump_flowgraph(lam0, lam1)))
    assert abs(m.mean - (1 / (2 * lam0) + 1 / lam1)) < 1e-6
    assert abs(m.variance - (1 / (2 * lam0) ** 2 + 1 / lam1**2)) < 1e-6


@pytest.mark.parametrize("lam", [0.1, 1.0, 7.0])
def test_single_exponential_moments(lam):
    t = flowgraph_solve(Flowgraph([0, 1], [Branch(0, 1, 1.0, exponential(lam))], 0, {1}))
    m = mgf_moments(t)
    assert m.mean == pytest.approx(1 / lam, rel=1e-7)
    assert m.variance == pytest.approx(1 / lam**2, rel=1e-6)
    assert mgf_moments(t, order=1).variance is None


def test_moments_vanishing_loop():
    a = mgf_moments(flowgraph_solve(pump_flowgraph(1.0, 3.0)))
    b = mgf_moments(flowgraph_solve(pump_flowgraph(1.0, 3.0, p10=1e-12)))
    assert b.mean == pytest.approx(a.mean, rel=1e-8)
    assert b.variance == pytest.approx(a.variance, rel=1e-7)


def test_moments_are_conditional_on_reaching_sink():
    # sink reached with probability 0.4 after Exp(2); other exit after Exp(1)
    fg = Flowgraph([0, 1, 2], [Branch(0, 1, 0.4, exponential(2.0)), Branch(0, 2, 0.6, exponential(1.0))], 0, {1, 2})
    t = flowgraph_solve(fg, 0, 1)
    assert t.p_total == pytest.approx(0.4)
    assert mgf_moments(t).mean == pytest.approx(0.5, rel=1e-7)


def test_feedback_mean_monte_carlo():
    lam0, lam1, p10, mu = 1.0, 3.0, 0.3, 2.0
    fg = pump_flowgraph(lam0, lam1, p10, mu)
    m = mgf_moments(flowgraph_solve(fg))
    times = simulate_passage(fg, 0, 2, 20_000, np.random.default_rng(1))
    se = times.std(ddof=1) / math.sqrt(times.size)
    assert abs(times.mean() - m.mean) < 3 * se
    # geometric number of cycles gives the mean in closed form
    cycles = 1 / (1 - p10)
    assert m.mean == pytest.approx(cycles / (2 * lam0) + (cycles - 1) / mu + 1 / lam1, rel=1e-8)


# --- inversion --------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_invert_exponential(lam):
    t = flowgraph_solve(Flowgraph([0, 1], [Branch(0, 1, 1.0, exponential(lam))], 0, {1}))
    grid = np.linspace(0.1 / lam, 5 / lam, 30)
    res = mgf_invert(t, grid)
    assert res.diagnostics == {}
    assert np.max(np.abs(res.density / (lam * np.exp(-lam * grid)) - 1)) <= 0.02
    assert np.allclose(res.reliability, np.exp(-lam * grid), atol=2e-3)


def test_invert_hypoexponential():
    lam0, lam1 = 1.0, 3.0
    t = flowgraph_solve(pump_flowgraph(lam0, lam1))
    grid = np.linspace(0.1, 5.0, 50)
    res = mgf_invert(t, grid)
    want = (2 * lam0 * lam1 / (lam1 - 2 * lam0)) * (np.exp(-2 * lam0 * grid) - np.exp(-lam1 * grid))
    assert np.max(np.abs(res.density / want - 1)) <= 0.02


def test_invert_reliability_shape_and_mass():
    fg = Flowgraph([0, 1, 2], [Branch(0, 1, 0.4, gamma(3.0, 2.0)), Branch(0, 2, 0.6, exponential(1.0))], 0, {1, 2})
    t = flowgraph_solve(fg, 0, 1)
    grid = np.concatenate([[0.0], np.linspace(0.05, 8, 60)])
    res = mgf_invert(t, grid)
    assert res.reliability[0] == pytest.approx(0.4)
    assert np.all(res.density >= 0)
    assert np.all(np.diff(res.reliability) <= 1e-15)
    assert res.reliability[-1] < 1e-3
    mass = integrate.trapezoid(res.density, grid)
    assert mass == pytest.approx(0.4, rel=1e-2)


def test_invert_per_point_diagnostic():
    # a fixed delay of 1 then Exp(1): no density below t = 1
    fg = Flowgraph([0, 1, 2], [Branch(0, 1, 1.0, 1.0), Branch(1, 2, 1.0, exponential(1.0))], 0, {2})
    grid = np.array([0.5, 1.5, 2.5, 4.0])
    res = mgf_invert(flowgraph_solve(fg), grid)
    assert 0 in res.diagnostics
    assert np.isnan(res.density[0])
    assert np.all(np.isfinite(res.density[1:]))
    want = np.exp(-(grid[1:] - 1.0))
    assert np.max(np.abs(res.density[1:] / want - 1)) < 0.02


def test_invert_rejects_bad_grid():
    t = flowgraph_solve(pump_flowgraph(1.0, 3.0))
    with pytest.raises(FlowgraphError):
        mgf_invert(t, [-1.0, 1.0])


# --- jets -------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.5, 4.0), st.floats(-3.0, 0.4))
def test_jet_derivatives_match_finite_differences(p10, mu, s):
    t = flowgraph_solve(pump_flowgraph(1.0, 3.0, p10, mu))
    s = min(s, 0.5 * t.s_max)
    j = t.jet(s)
    step = 0.2 * (t.s_max - s)
    r1 = differentiate.derivative(lambda x: t.expr.jet(x).v, s, initial_step=step)
    r2 = differentiate.derivative(lambda x: t.expr.jet(x).d1, s, initial_step=step)
    assert j.d1 == pytest.approx(float(r1.df), rel=1e-8)
    assert j.d2 == pytest.approx(float(r2.df), rel=1e-8)
