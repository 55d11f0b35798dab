"""Dataset grammars, band tables and text formats."""

import io
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sysrel import dists, scenarios
from sysrel.component_models import DegFailModel
from sysrel.io import (
    DATASET_KINDS,
    ParseError,
    ReliabilityBandTable,
    atomic_write_text,
    band_table_from_csv,
    band_table_to_csv,
    emit_band_table,
    load_config,
    parse_bn,
    parse_dataset,
    parse_dist,
    parse_flowgraph,
    write_table,
)
from sysrel.mcmc import MetropolisConfig, ParamVector, run_chain
from sysrel.representations import bn_system_reliability, flowgraph_solve
from sysrel.scenarios import THREE_COMPONENT_CPT, three_component_network


def src(text, name="data.csv"):
    buf = io.StringIO(text)
    buf.name = name
    return buf


# ----------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------

def test_empty_degfail_file_has_no_records(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ParseError, match="no records"):
        parse_dataset(str(p), "degfail")


def test_header_only_has_no_records():
    with pytest.raises(ParseError, match="no records"):
        parse_dataset(src("record,age,value\n# nothing\n\n"), "degfail")


def test_component_one_file_gives_eight_rows(tmp_path):
    fails = scenarios.LOGISTIC_FAILURES
    lines = ["# pass/fail tests, 25 per age", "age,trials,successes"]
    lines += [f"{a:g},25,{25 - fails.get(a, 0)}" for a in scenarios.LOGISTIC_AGES]
    p = tmp_path / "c1.csv"
    p.write_text("\n".join(lines) + "\n")
    d = parse_dataset(str(p), "binomial-age")
    assert len(d.ages) == 8
    np.testing.assert_array_equal(d.ages, [0, 2, 4, 6, 8, 10, 15, 20])
    np.testing.assert_array_equal(d.trials, 25)
    np.testing.assert_array_equal(d.failures, [0, 0, 1, 0, 0, 0, 2, 6])


def test_successes_above_trials_names_row():
    text = "age,trials,successes\n0,25,25\n4,25,26\n"
    with pytest.raises(ParseError) as e:
        parse_dataset(src(text, "c1.csv"), "binomial-age")
    msg = str(e.value)
    assert msg.startswith("c1.csv:3:3:")
    assert "row 2" in msg and "successes 26" in msg
    assert (e.value.line, e.value.column) == (3, 3)


def test_columns_may_be_reordered_and_commented():
    d = parse_dataset(src("successes, age ,trials\n# c\n3,1.5,4\n\n4,2,4\n"), "binomial-age")
    np.testing.assert_array_equal(d.ages, [1.5, 2])
    np.testing.assert_array_equal(d.successes, [3, 4])


@pytest.mark.parametrize(
    "text, where, what",
    [
        ("age,trials\n0,1\n", ":1", "missing required column"),
        ("age,trials,successes,extra\n0,1,1,2\n", ":1:4", "unknown column 'extra'"),
        ("age,age,successes\n0,1,1\n", ":1", "duplicate column"),
        ("age,trials,successes\n0,1\n", ":2", "expected 3 fields"),
        ("age,trials,successes\nzero,1,1\n", ":2:1", "expected a number"),
        ("age,trials,successes\n0,1.5,1\n", ":2:2", "expected an integer"),
        ("age,trials,successes\n0,,1\n", ":2:2", "is empty"),
        ("age,trials,successes\nnan,1,1\n", ":2:1", "finite"),
        ("age,trials,successes\n-1,1,1\n", ":2:1", "nonnegative"),
    ],
)
def test_malformed_rows_are_located(text, where, what):
    with pytest.raises(ParseError) as e:
        parse_dataset(src(text, "f.csv"), "binomial-age")
    assert str(e.value).startswith("f.csv" + where + ":")
    assert what in str(e.value)


def test_unknown_kind():
    with pytest.raises(ParseError, match="unknown dataset kind"):
        parse_dataset(src("a\n1\n"), "nope")


def test_lifetimes():
    d = parse_dataset(src("time,censored\n3.5,0\n20,1\n7,false\n"), "lifetimes")
    np.testing.assert_array_equal(d.observed, [3.5, 7])
    np.testing.assert_array_equal(d.censored_times, [20])
    d = parse_dataset(src("time\n1\n2\n"), "lifetimes")
    assert not d.censored.any()
    with pytest.raises(ParseError, match="positive"):
        parse_dataset(src("time\n0\n"), "lifetimes")
    with pytest.raises(ParseError, match="0/1"):
        parse_dataset(src("time,censored\n1,maybe\n"), "lifetimes")


def test_degfail_records():
    text = "record,age,value\nfailure,18.5,\nsurvivor,20,\nsurvivor,20,\ndegradation,1,97.5\ndegradation,2,95\n"
    d = parse_dataset(src(text), "degfail")
    np.testing.assert_array_equal(d.failures, [18.5])
    np.testing.assert_array_equal(d.survivors, [20, 20])
    np.testing.assert_array_equal(d.deg_values, [97.5, 95])
    for bad, what in [
        ("record,age,value\nwhatever,1,\n", "record must be one of"),
        ("record,age,value\ndegradation,1,\n", "need a value"),
        ("record,age,value\nsurvivor,1,3\n", "take no value"),
        ("record,age,value\nfailure,0,\n", "positive"),
    ]:
        with pytest.raises(ParseError, match=what):
            parse_dataset(src(bad), "degfail")


def test_surrogate_records():
    text = "record,age,value,spec\npassfail,1,1,\npassfail,2,0,\nspec,1,9.5,1\nspec,1,3.2,2\n"
    d = parse_dataset(src(text), "surrogate")
    assert d.n_specs == 2
    np.testing.assert_array_equal(d.pf_outcomes, [1, 0])
    with pytest.raises(ParseError, match="0 or 1"):
        parse_dataset(src("record,age,value\npassfail,1,0.5\n"), "surrogate")
    with pytest.raises(ParseError, match="spec index"):
        parse_dataset(src("record,age,value\nspec,1,0.5\n"), "surrogate")


def test_lots_records():
    d = parse_dataset(src("N,n_c,y_c,n_r,y_r\n50,10,3,5,0\n"), "lots")
    assert d.n_lots == 1
    with pytest.raises(ParseError, match="exceed lot size"):
        parse_dataset(src("N,n_c,y_c,n_r,y_r\n10,10,3,5,0\n"), "lots")
    with pytest.raises(ParseError, match="more random-sample"):
        parse_dataset(src("N,n_c,y_c,n_r,y_r\n20,1,0,2,3\n"), "lots")


def test_partial_test_records():
    tests = parse_dataset(src("age,worked,failed,some_failed\n1,0;1,,\n2,,2,0;1\n3,,,\n"), "partial-tests")
    assert tests[0].worked == {0, 1} and not tests[0].failed
    assert tests[1].failed == {2} and tests[1].some_failed == {0, 1}
    assert tests[2].some_failed == frozenset()
    with pytest.raises(ParseError, match="more than one"):
        parse_dataset(src("age,worked,failed\n1,0,0\n"), "partial-tests")
    with pytest.raises(ParseError, match="component ids"):
        parse_dataset(src("age,worked\n1,a;b\n"), "partial-tests")


def test_nhpp_long_format():
    text = "unit,interval,count\n7,2,1\n7,1,0\n3,1,4\n3,2,2\n"
    d = parse_dataset(src(text), "nhpp")
    assert d.units == [3, 7]
    np.testing.assert_array_equal(d.counts, [[4, 2], [0, 1]])
    with pytest.raises(ParseError, match="no count for interval 2"):
        parse_dataset(src("unit,interval,count\n1,1,0\n1,2,0\n2,1,0\n"), "nhpp")
    with pytest.raises(ParseError, match="duplicate"):
        parse_dataset(src("unit,interval,count\n1,1,0\n1,1,0\n"), "nhpp")


def test_weibull_series_records():
    d = parse_dataset(src("level,component,time\ncomponent,2,3\ncomponent,1,1\nsystem,,2\n"), "weibull-series")
    assert d.n_components == 2
    np.testing.assert_array_equal(d.component_times[1], [3])
    np.testing.assert_array_equal(d.system_times, [2])
    with pytest.raises(ParseError, match="1-based component"):
        parse_dataset(src("level,component,time\ncomponent,,3\n"), "weibull-series")


def test_every_kind_reports_empty_files():
    for kind in DATASET_KINDS:
        with pytest.raises(ParseError, match="no records"):
            parse_dataset(src("", f"{kind}.csv"), kind)


# ----------------------------------------------------------------------
# band tables
# ----------------------------------------------------------------------

def test_single_draw_band_collapses():
    t = emit_band_table([0.3], lambda d, g: np.exp(-d * g), [0.5, 1, 2], 0.9)
    np.testing.assert_array_equal(t.lower, t.mean)
    np.testing.assert_array_equal(t.upper, t.mean)


def test_constant_reliability_band():
    t = emit_band_table(range(50), lambda d, g: np.full_like(g, 0.7), [1, 2, 3], 0.9)
    for col in (t.mean, t.lower, t.upper):
        np.testing.assert_allclose(col, 0.7, rtol=0, atol=1e-15)


def test_band_quantiles_match_numpy():
    rng = np.random.default_rng(0)
    draws = rng.uniform(0.1, 1.0, 400)
    grid = np.array([0.5, 1.0, 3.0])
    t = emit_band_table(draws, lambda d, g: np.exp(-d * g), grid, 0.8)
    vals = np.exp(-np.outer(draws, grid))
    np.testing.assert_allclose(t.lower, np.quantile(vals, 0.1, axis=0))
    np.testing.assert_allclose(t.upper, np.quantile(vals, 0.9, axis=0))
    np.testing.assert_allclose(t.mean, vals.mean(axis=0))


def test_band_errors():
    f = lambda d, g: g
    with pytest.raises(ValueError, match="chain is empty"):
        emit_band_table([], f, [1.0])
    with pytest.raises(ValueError, match="grid is empty"):
        emit_band_table([1], f, [])
    with pytest.raises(ValueError, match="increasing"):
        emit_band_table([1], f, [2.0, 1.0])
    with pytest.raises(ValueError, match="level"):
        emit_band_table([1], f, [1.0], level=1.0)


def test_band_from_chain_draws():
    pv_chain = run_chain(
        lambda pv: -0.5 * pv["x"] ** 2,
        ParamVector().add("x", 0.0),
        MetropolisConfig(burn_in=50, samples=100, seed=1),
    )
    t = emit_band_table(pv_chain, lambda pv, g: np.full_like(g, pv["x"]), [0.0, 1.0])
    assert t.mean[0] == pytest.approx(pv_chain.column("x").mean())


finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def band_tables(draw):
    n = draw(st.integers(1, 12))
    xs = sorted(set(draw(st.lists(finite, min_size=n, max_size=n))))
    rows = []
    for _ in xs:
        a, b, c = sorted(draw(st.lists(finite, min_size=3, max_size=3)))
        rows.append((b, a, c))
    m, lo, hi = (np.array(c, dtype=float) for c in zip(*rows))
    return ReliabilityBandTable(np.array(xs), m, lo, hi, draw(st.sampled_from(["t", "s"])))


@given(band_tables())
@settings(max_examples=100, deadline=None)
def test_band_table_round_trip(table):
    assert band_table_from_csv(band_table_to_csv(table)) == table


def test_band_table_file_round_trip(tmp_path):
    t = ReliabilityBandTable([1.0, 2.0], [0.9, 0.8], [0.85, 0.7], [0.95, 0.88])
    p = tmp_path / "b.csv"
    band_table_to_csv(t, str(p))
    assert band_table_from_csv(str(p)) == t
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp")] == []


def test_band_table_rejects_bad_rows():
    with pytest.raises(ParseError, match="lower band exceeds"):
        band_table_from_csv("t,mean,lower,upper\n1,0.5,0.6,0.4\n")
    with pytest.raises(ParseError, match="increasing"):
        band_table_from_csv("t,mean,lower,upper\n2,0.5,0.4,0.6\n1,0.5,0.4,0.6\n")


def test_write_table_uses_repr_floats(tmp_path):
    p = tmp_path / "t.csv"
    write_table(str(p), ("name", "value"), [("a", 0.1 + 0.2), ("b", np.float64(1 / 3)), ("c", 4)])
    assert p.read_text() == "name,value\na,0.30000000000000004\nb,0.3333333333333333\nc,4\n"


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.txt"
    atomic_write_text(str(p), "one")
    atomic_write_text(str(p), "two")
    assert p.read_text() == "two"
    assert os.listdir(tmp_path) == ["x.txt"]


def test_degfail_band_covers_true_crossing():
    # the true curve passes 0.5 at age 28; a moderate fit should cover it
    data = scenarios.degfail_dataset(np.random.default_rng(1000))
    model = DegFailModel(data)
    chain = run_chain(model.log_post, model.initial(), MetropolisConfig(burn_in=2000, samples=2000, seed=0))
    t = emit_band_table(chain, model.reliability, [28.0], 0.9)
    assert 0 <= t.lower[0] <= t.upper[0] <= 1
    if not t.lower[0] <= 0.5 <= t.upper[0]:
        warnings.warn(f"90% band at t=28 is ({t.lower[0]:.3f}, {t.upper[0]:.3f}); truth 0.5 not covered")


# ----------------------------------------------------------------------
# distribution strings
# ----------------------------------------------------------------------

def test_parse_dist():
    assert parse_dist("gamma(4, 0.0333)") == dists.gamma(4, 0.0333)
    assert parse_dist(" weibull(shape=2, scale=10) ") == dists.weibull(2, 10)
    assert parse_dist("normal()") == dists.normal()
    for bad in ("gama(1, 2)", "gamma(1, 2", "gamma(__import__('os'))", "normal(1, 2, 3)"):
        with pytest.raises(ParseError):
            parse_dist(bad)
    with pytest.raises(dists.ParameterError):
        parse_dist("gamma(-1, 1)")


# ----------------------------------------------------------------------
# network and flowgraph text
# ----------------------------------------------------------------------

NET = "node C1\nnode C2\nnode C3\nnode S\nedge C1 S\nedge C2 S\nedge C3 S\n" + "".join(
    f"cpt S {i:03b} {p!r}  # row {i}\n" for i, p in enumerate(THREE_COMPONENT_CPT)
) + "cpt C1 0.5\ncpt C2 0.5\ncpt C3 0.5\n"


def test_parse_bn_matches_scenario_network():
    net = parse_bn(src(NET, "n.txt"))
    ref = three_component_network()
    rng = np.random.default_rng(2)
    for p in rng.uniform(size=(20, 3)):
        comp = dict(zip(("C1", "C2", "C3"), p))
        assert bn_system_reliability(net, comp) == pytest.approx(bn_system_reliability(ref, comp), abs=1e-15)


@pytest.mark.parametrize(
    "text, what",
    [
        ("", "no records"),
        ("node A\nedge A B\n", "undeclared node 'B'"),
        ("node A\ncpt B 0.5\n", "undeclared node"),
        ("node A\ncpt A 2x 0.5\n", "0/1 string"),
        ("node A\ncpt A 0.5\ncpt A 0.4\n", "duplicate"),
        ("node A\nnode B\nedge A B\ncpt A 0.5\ncpt B 0.5\n", "parent bits"),
        ("node A\ncpt A half\n", "bad number"),
        ("node A\nfrobnicate A\n", "unrecognized directive"),
        ("node A\nnode B\nedge A B\ncpt A 0.5\ncpt B 1 0.5\n", "B"),
    ],
)
def test_parse_bn_errors(text, what):
    with pytest.raises(ParseError, match=what):
        parse_bn(src(text))


def test_bn_error_lines():
    with pytest.raises(ParseError) as e:
        parse_bn(src("node A\n\n# c\nedge A Z\n", "n.txt"))
    assert str(e.value).startswith("n.txt:4:")


FG = """\
state 0 source
state 1
state 2 sink
branch 0 1 1 exponential rate=3
branch 1 0 0.25 exponential rate=5
branch 1 2 0.75 exponential rate=2
"""


def test_parse_flowgraph_matches_scenario():
    fg = parse_flowgraph(src(FG))
    ref = scenarios.pump_flowgraph(1.5, 2.0, p10=0.25, repair_rate=5.0)
    a, b = flowgraph_solve(fg), flowgraph_solve(ref)
    s = np.linspace(-2, 0.9, 15)
    np.testing.assert_allclose(a(s), b(s), rtol=1e-13)


def test_parse_flowgraph_fixed_and_gamma():
    fg = parse_flowgraph(src("state a source\nstate b\nstate c sink\nbranch a b 1 fixed time=2\nbranch b c 1 gamma shape=2 rate=4\n"))
    t = flowgraph_solve(fg)
    assert t(0.3) == pytest.approx(np.exp(0.6) * (4 / 3.7) ** 2)


@pytest.mark.parametrize(
    "text, what",
    [
        ("state a source\nstate b source\n", "more than one source"),
        ("state a bogus\n", "unknown state flag"),
        ("state a source\nstate b sink\nbranch a b 1 weibull shape=1\n", "unknown waiting-time family"),
        ("state a source\nstate b sink\nbranch a b x exponential rate=1\n", "must be numbers"),
        ("state a source\nstate b sink\nbranch a b 1 exponential rate=-1\n", "bad parameters"),
        ("state a source\nstate b sink\nbranch a b 1 fixed rate=1\n", "time=T"),
        ("state a source\nstate b sink\nbranch a b 1 exponential scale=1\n", "bad parameters"),
        ("state a source\nstate b sink\nbranch a c 1 exponential rate=1\n", "c"),
    ],
)
def test_parse_flowgraph_errors(text, what):
    with pytest.raises(ParseError, match=what):
        parse_flowgraph(src(text))


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

def test_load_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('analysis = "degfail"\n[data]\npath = "d.csv"\n[mcmc]\nsamples = 10\n')
    cfg = load_config(str(p))
    assert cfg["data"]["path"] == "d.csv" and cfg["mcmc"]["samples"] == 10
    assert cfg["_base"] == str(tmp_path)
    p.write_text("[oops\n")
    with pytest.raises(ParseError, match="invalid configuration"):
        load_config(str(p))
