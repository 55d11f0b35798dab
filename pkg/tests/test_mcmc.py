import math

import numpy as np
import pytest

from sysrel import mcmc
from sysrel.mcmc import (
    POSITIVE,
    UNBOUNDED,
    UNIT,
    Chain,
    MCMCError,
    MetropolisConfig,
    ParamVector,
    adapt_steps,
    bounded,
    integer,
    metropolis_sweep,
    run_batched,
    run_chain,
    summarize,
)


def std_normal(pv):
    return -0.5 * pv["x"] ** 2


def one_param(value=0.0, support=UNBOUNDED, name="x"):
    return ParamVector().add(name, value, support)


def test_param_vector_access():
    pv = ParamVector().add("a", 1.0).add("b", [1.0, 2.0, 3.0], POSITIVE)
    assert pv["a"] == 1.0
    assert pv.names == ["a", "b[0]", "b[1]", "b[2]"]
    pv["b"] = [4.0, 5.0, 6.0]
    assert pv["b"].tolist() == [4.0, 5.0, 6.0]
    with pytest.raises(ValueError):
        pv.add("a", 2.0)
    with pytest.raises(ValueError):
        ParamVector().add("s", -1.0, POSITIVE)


def test_zero_step_never_moves():
    pv = ParamVector().add("x", 0.3).add("y", 0.7)
    rng = np.random.default_rng(0)
    lp = lambda p: -0.5 * (p["x"] ** 2 + p["y"] ** 2)
    for _ in range(200):
        pv, _ = metropolis_sweep(pv, lp, [0.0, 1.0], rng)
        assert pv["x"] == 0.3


def test_uphill_proposal_always_accepted():
    # log-posterior increasing in x, proposals from a huge step: any upward move is taken
    lp = lambda p: p["x"]
    rng = np.random.default_rng(1)
    pv = one_param(0.0)
    for _ in range(500):
        new, acc = metropolis_sweep(pv, lp, [1.0], rng)
        if new["x"] > pv["x"]:
            assert acc[0]
        if not acc[0]:
            assert new["x"] == pv["x"]
        pv = one_param(0.0)


def test_uphill_move_accepted_even_with_low_uniform():
    rng = np.random.default_rng(3)
    lp = lambda p: p["x"]
    ups = 0
    for _ in range(300):
        new, acc = metropolis_sweep(one_param(0.0), lp, [0.5], rng)
        if new["x"] > 0:
            ups += 1
            assert acc[0]
    assert ups > 100


def test_nan_log_post_names_parameter():
    lp = lambda p: float("nan") if p["y"] != 1.0 else 0.0
    pv = ParamVector().add("x", 0.0).add("y", 1.0)
    with pytest.raises(MCMCError, match="y"):
        metropolis_sweep(pv, lp, [0.0, 1.0], np.random.default_rng(0))


def test_normal_target_recovers_moments():
    cfg = MetropolisConfig(burn_in=2000, samples=100_000, seed=11)
    chain = run_chain(std_normal, one_param(), cfg)
    x = chain.column("x")
    assert abs(x.mean()) < 0.05
    assert abs(x.std() - 1.0) < 0.05
    q05, q95 = np.quantile(x, [0.05, 0.95])
    assert abs(q05 + 1.6449) < 0.05 and abs(q95 - 1.6449) < 0.05


def test_single_retained_draw():
    chain = run_chain(std_normal, one_param(), MetropolisConfig(burn_in=0, samples=1, thin=1))
    assert chain.draws.shape == (1, 1)


def test_thinning_counts():
    chain = run_chain(std_normal, one_param(), MetropolisConfig(burn_in=10, samples=7, thin=3))
    assert len(chain) == 7


def test_bitwise_reproducible():
    lp = lambda p: -0.5 * (p["x"] ** 2 + (math.log(p["s"]) - 1) ** 2)
    pv = ParamVector().add("x", 0.0).add("s", 1.0, POSITIVE)
    cfg = MetropolisConfig(burn_in=300, samples=500, seed=42)
    a = run_chain(lp, pv, cfg)
    b = run_chain(lp, pv, cfg)
    assert a.draws.tobytes() == b.draws.tobytes()
    assert np.array_equal(a.acceptance, b.acceptance)


def test_acceptance_after_adaptation():
    lp = lambda p: -0.5 * (p["a"] ** 2 + (p["b"] / 10.0) ** 2)
    pv = ParamVector().add("a", 0.0).add("b", 0.0)
    chain = run_chain(lp, pv, MetropolisConfig(burn_in=3000, samples=5000, seed=5, step_sizes=[20.0, 0.01]))
    assert np.all((chain.acceptance > 0.2) & (chain.acceptance < 0.6))


def test_bad_initial_state():
    lp = lambda p: -np.inf if p["x"] > 1 else 0.0
    with pytest.raises(MCMCError, match="initial"):
        run_chain(lp, one_param(2.0), MetropolisConfig(samples=1))


def test_adapt_steps_examples():
    assert adapt_steps([0.7], [0.4], 0.4)[0] == 0.7
    assert adapt_steps([0.7], [0.0], 0.4)[0] == pytest.approx(0.35)
    assert adapt_steps([0.7], [1.0], 0.4)[0] == pytest.approx(1.4)
    out = adapt_steps([1.0, 1.0], [0.3, 0.6], 0.4)
    assert out[0] < 1.0 < out[1]
    assert np.all((out >= 0.5) & (out <= 2.0))


def test_summarize_constant_and_median():
    pv = ParamVector().add("x", 0.0)
    chain = Chain(
        names=["x"],
        draws=np.array([[1.0], [2.0], [3.0], [4.0], [5.0]]),
        acceptance=np.ones(1),
        steps=np.ones(1),
        log_post=np.zeros(5),
        template=pv,
    )
    mean, q = summarize(chain, lambda p: 2.5, [0.1, 0.5, 0.9])
    assert mean == 2.5 and np.all(q == 2.5)
    mean, q = summarize(chain, lambda p: p["x"], [0.5])
    assert q[0] == 3.0 and mean == 3.0


def test_summarize_empty_chain():
    chain = Chain(["x"], np.zeros((0, 1)), np.zeros(1), np.zeros(1), np.zeros(0), template=one_param())
    with pytest.raises(MCMCError):
        summarize(chain, lambda p: 1.0)


@pytest.mark.parametrize(
    "support,lp,start,check",
    [
        (POSITIVE, lambda p: -p["x"], 1.0, lambda x: x > 0),
        (UNIT, lambda p: math.log(p["x"]) if p["x"] > 0 else -np.inf, 0.5, lambda x: 0 < x < 1),
        (bounded(-2, 3), lambda p: 0.0, 0.0, lambda x: -2 < x < 3),
        (integer(0, 5), lambda p: 0.0, 2.0, lambda x: x in range(6)),
    ],
)
def test_supports_preserved(support, lp, start, check):
    chain = run_chain(lp, one_param(start, support), MetropolisConfig(burn_in=200, samples=3000, seed=2))
    assert all(check(v) for v in chain.column("x"))


def test_positive_transform_targets_original_density():
    # Gamma(3, 2) target written in the original coordinate
    lp = lambda p: 2 * math.log(p["x"]) - 2 * p["x"]
    chain = run_chain(lp, one_param(1.0, POSITIVE), MetropolisConfig(burn_in=1000, samples=60_000, seed=8))
    x = chain.column("x")
    se = math.sqrt(0.75 / len(x)) * 5  # inflate for autocorrelation
    assert abs(x.mean() - 1.5) < max(se, 0.03)


def test_unit_transform_targets_beta():
    lp = lambda p: math.log(p["x"]) + 3 * math.log1p(-p["x"])  # Beta(2, 4)
    chain = run_chain(lp, one_param(0.5, UNIT), MetropolisConfig(burn_in=1000, samples=60_000, seed=9))
    assert abs(chain.column("x").mean() - 1 / 3) < 0.01


def test_two_state_detailed_balance():
    # x in (0, 2); density 0.3 on (0,1) and 0.7 on [1,2): state = floor(x)
    lp = lambda p: math.log(0.3 if p["x"] < 1 else 0.7)
    cfg = MetropolisConfig(burn_in=500, samples=100_000, seed=4)
    chain = run_chain(lp, one_param(0.5, bounded(0, 2)), cfg)
    s = (chain.column("x") >= 1).astype(float)
    # Monte Carlo standard error by batch means
    batches = s.reshape(50, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(s.mean() - 0.7) < 3 * se


def test_integer_walk_discrete_target():
    w = np.array([1.0, 2.0, 3.0, 4.0])
    lp = lambda p: math.log(w[int(p["k"])])
    chain = run_chain(lp, one_param(0.0, integer(0, 3), "k"), MetropolisConfig(burn_in=200, samples=40_000, seed=6))
    freq = np.bincount(chain.column("k").astype(int), minlength=4) / len(chain)
    np.testing.assert_allclose(freq, w / w.sum(), atol=0.02)


def test_batched_chains_normal_target():
    R = 50
    lp = lambda x: -0.5 * ((x[:, 0] - np.arange(R)) ** 2) - 2.0 * x[:, 1] + np.log(x[:, 1])
    init = np.column_stack([np.zeros(R), np.ones(R)])
    draws, acc = run_batched(lp, init, [UNBOUNDED, POSITIVE], MetropolisConfig(burn_in=500, samples=4000, seed=1))
    assert draws.shape == (4000, R, 2)
    means = draws[:, :, 0].mean(axis=0)
    np.testing.assert_allclose(means, np.arange(R), atol=0.25)
    # Gamma(2, 2) mean 1
    assert abs(draws[:, :, 1].mean() - 1.0) < 0.05
    assert np.all(draws[:, :, 1] > 0)
    assert np.all((acc > 0.15) & (acc < 0.7))


def test_chain_csv_roundtrip(tmp_path):
    pv = ParamVector().add("x", 0.0).add("b", [1.0, 2.0], POSITIVE)
    lp = lambda p: -0.5 * p["x"] ** 2 - p["b"].sum()
    chain = run_chain(lp, pv, MetropolisConfig(burn_in=10, samples=20, seed=0))
    path = tmp_path / "chain.csv"
    mcmc.chain_to_csv(chain, path)
    back = mcmc.chain_from_csv(path)
    assert back.names == ["x", "b[0]", "b[1]"]
    assert back.draws.tobytes() == chain.draws.tobytes()
    header = path.read_text().splitlines()[0]
    assert header == "x,b[0],b[1]"
