"""Variable-at-a-time random-walk Metropolis.

Every coordinate of a :class:`ParamVector` is updated in declaration order
once per sweep. Constrained coordinates move on an unconstrained scale:

* ``positive``: log scale, ``x' = x * exp(eps)``
* ``unit``: logit scale
* ``bounded(lo, hi)``: scaled logit
* ``integer(lo, hi)``: uniform jump in ``{-k..-1, 1..k}`` with
  ``k = max(1, round(step))``; proposals outside ``[lo, hi]`` are rejected

and the log-Jacobian of the transform is added to the acceptance ratio, so
the chain targets the log-posterior as written in the original
coordinates. Step sizes adapt only during burn-in.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "Support",
    "UNBOUNDED",
    "POSITIVE",
    "UNIT",
    "bounded",
    "integer",
    "ParamVector",
    "MetropolisConfig",
    "Chain",
    "MCMCError",
    "metropolis_sweep",
    "run_chain",
    "adapt_steps",
    "summarize",
    "run_batched",
    "chain_to_csv",
    "chain_from_csv",
]


class MCMCError(RuntimeError):
    """Sampler failure: bad initial state or a NaN log-posterior."""


@dataclass(frozen=True)
class Support:
    kind: str
    lo: float = -math.inf
    hi: float = math.inf

    def contains(self, x) -> bool:
        if not np.isfinite(x):
            return False
        if self.kind == "unbounded":
            return True
        if self.kind == "positive":
            return x > 0
        if self.kind == "unit":
            return 0 < x < 1
        if self.kind == "bounded":
            return self.lo < x < self.hi
        if self.kind == "integer":
            return x == round(x) and self.lo <= x <= self.hi
        raise ValueError(self.kind)

    def __str__(self):
        if self.kind in ("bounded", "integer"):
            return f"{self.kind}({self.lo:g},{self.hi:g})"
        return self.kind


UNBOUNDED = Support("unbounded")
POSITIVE = Support("positive")
UNIT = Support("unit")


def bounded(lo, hi) -> Support:
    if not lo < hi:
        raise ValueError(f"bounded support needs lo < hi, got ({lo}, {hi})")
    return Support("bounded", float(lo), float(hi))


def integer(lo, hi) -> Support:
    if not lo <= hi:
        raise ValueError(f"integer support needs lo <= hi, got ({lo}, {hi})")
    return Support("integer", float(lo), float(hi))


class ParamVector:
    """Named parameter state.

    Entries are scalars or 1-d blocks; each scalar element is a separate
    Metropolis coordinate. ``pv["mu"]`` returns a float for a scalar entry
    and an array view for a block.
    """

    def __init__(self):
        self._slices: dict[str, slice] = {}
        self._scalar: dict[str, bool] = {}
        self._supports: list[Support] = []
        self._names: list[str] = []
        self.values = np.zeros(0)

    def add(self, name: str, value, support: Support | list = UNBOUNDED) -> "ParamVector":
        """Append an entry; ``support`` may be one per element for blocks."""
        if name in self._slices:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.ndim != 1:
            raise ValueError(f"parameter {name!r} must be scalar or 1-d")
        scalar = np.ndim(value) == 0
        start = len(self.values)
        self._slices[name] = slice(start, start + len(arr))
        self._scalar[name] = scalar
        self.values = np.concatenate([self.values, arr])
        sups = list(support) if isinstance(support, (list, tuple)) else [support] * len(arr)
        if len(sups) != len(arr):
            raise ValueError(f"{len(sups)} supports for {len(arr)} elements of {name!r}")
        self._supports.extend(sups)
        self._names.extend([name] if scalar else [f"{name}[{i}]" for i in range(len(arr))])
        for i, (x, support) in enumerate(zip(arr, sups)):
            if not support.contains(x):
                label = name if scalar else f"{name}[{i}]"
                raise ValueError(f"initial value {x!r} of {label} is outside its support {support}")
        return self

    def __getitem__(self, name):
        sl = self._slices[name]
        if self._scalar[name]:
            return float(self.values[sl.start])
        return self.values[sl]

    def __setitem__(self, name, value):
        self.values[self._slices[name]] = value

    def __contains__(self, name):
        return name in self._slices

    def __len__(self):
        return len(self.values)

    @property
    def names(self) -> list[str]:
        """Flat coordinate names, e.g. ``["mu", "beta[0]", "beta[1]"]``."""
        return list(self._names)

    @property
    def entries(self) -> list[str]:
        return list(self._slices)

    @property
    def supports(self) -> list[Support]:
        return list(self._supports)

    def slice_of(self, name) -> slice:
        return self._slices[name]

    def copy(self) -> "ParamVector":
        out = ParamVector.__new__(ParamVector)
        out._slices = self._slices
        out._scalar = self._scalar
        out._supports = self._supports
        out._names = self._names
        out.values = self.values.copy()
        return out

    def with_values(self, values) -> "ParamVector":
        out = self.copy()
        out.values = np.asarray(values, dtype=float).copy()
        return out

    def as_dict(self) -> dict:
        return {k: self[k] for k in self._slices}

    def __repr__(self):
        body = ", ".join(f"{n}={v:.6g}" for n, v in zip(self._names, self.values))
        return f"ParamVector({body})"


@dataclass
class MetropolisConfig:
    burn_in: int = 1000
    samples: int = 1000
    thin: int = 1
    step_sizes: Sequence[float] | float | None = None
    seed: int = 0
    adapt_interval: int = 50
    target_accept: float = 0.4

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be >= 1")

    def initial_steps(self, dim) -> np.ndarray:
        if self.step_sizes is None:
            steps = np.full(dim, 0.5)
        else:
            steps = np.broadcast_to(np.asarray(self.step_sizes, dtype=float), (dim,)).copy()
        if np.any(steps < 0):
            raise ValueError("step sizes must be nonnegative")
        return steps


@dataclass
class Chain:
    names: list[str]
    draws: np.ndarray
    acceptance: np.ndarray
    steps: np.ndarray
    log_post: np.ndarray
    config: MetropolisConfig | None = None
    template: ParamVector | None = field(default=None, repr=False)

    def __len__(self):
        return self.draws.shape[0]

    def column(self, name) -> np.ndarray:
        """Draws of a coordinate (``"mu"``) or a whole block (``"beta"``)."""
        if self.template is not None and name in self.template:
            sl = self.template.slice_of(name)
            block = self.draws[:, sl]
            return block[:, 0] if self.template._scalar[name] else block
        return self.draws[:, self.names.index(name)]

    def param_vector(self, i) -> ParamVector:
        if self.template is None:
            raise MCMCError("chain has no parameter template (was it read from CSV?)")
        return self.template.with_values(self.draws[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self.param_vector(i)


# ----------------------------------------------------------------------
# one-coordinate moves
# ----------------------------------------------------------------------

def _propose(x, support: Support, step, rng):
    """Return ``(x_new, log_jacobian_ratio)``; ``x_new`` is None if rejected outright."""
    kind = support.kind
    if kind == "unbounded":
        return x + step * rng.standard_normal(), 0.0
    if kind == "positive":
        eps = step * rng.standard_normal()
        return x * math.exp(eps), eps
    if kind == "unit":
        z = logit(x) + step * rng.standard_normal()
        xn = float(expit(z))
        if not 0.0 < xn < 1.0:
            return None, 0.0
        return xn, math.log(xn * (1 - xn)) - math.log(x * (1 - x))
    if kind == "bounded":
        lo, hi = support.lo, support.hi
        z = logit((x - lo) / (hi - lo)) + step * rng.standard_normal()
        xn = lo + (hi - lo) * float(expit(z))
        if not lo < xn < hi:
            return None, 0.0
        return xn, math.log((xn - lo) * (hi - xn)) - math.log((x - lo) * (hi - x))
    if kind == "integer":
        k = max(1, int(round(step)))
        jump = int(rng.integers(1, k + 1)) * (1 if rng.random() < 0.5 else -1)
        xn = x + jump
        if xn < support.lo or xn > support.hi:
            return None, 0.0
        return float(xn), 0.0
    raise ValueError(kind)


def _sweep_inplace(state: ParamVector, lp, log_post, steps, rng, accepted):
    vals = state.values
    supports = state._supports
    names = state._names
    for i in range(len(vals)):
        if steps[i] == 0:
            continue
        old = vals[i]
        new, log_jac = _propose(old, supports[i], steps[i], rng)
        if new is None:
            continue
        vals[i] = new
        lp_new = log_post(state)
        if math.isnan(lp_new):
            vals[i] = old
            raise MCMCError(f"log-posterior returned NaN after moving {names[i]} to {new!r}")
        log_ratio = lp_new - lp + log_jac
        if log_ratio >= 0 or math.log(rng.random()) < log_ratio:
            lp = lp_new
            accepted[i] += 1
        else:
            vals[i] = old
    return lp


def metropolis_sweep(state: ParamVector, log_post: Callable[[ParamVector], float], steps, rng):
    """One pass over every coordinate in declaration order.

    Returns the new state and a boolean array of per-coordinate acceptances.
    The input state is not modified.
    """
    state = state.copy()
    lp = log_post(state)
    if not np.isfinite(lp):
        raise MCMCError(f"log-posterior is not finite at the current state ({lp!r})")
    accepted = np.zeros(len(state), dtype=int)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (len(state),))
    _sweep_inplace(state, lp, log_post, steps, rng, accepted)
    return state, accepted.astype(bool)


def adapt_steps(steps, rates, target=0.4):
    """Multiplicative step update with the factor clamped to [0.5, 2].

    The log-factor is linear in the acceptance rate on each side of the
    target: rate 0 halves the step, rate 1 doubles it, rate == target
    leaves it unchanged.
    """
    steps = np.asarray(steps, dtype=float)
    rates = np.asarray(rates, dtype=float)
    below = (rates - target) / target
    above = (rates - target) / (1.0 - target)
    log_factor = math.log(2.0) * np.where(rates < target, below, above)
    factor = np.clip(np.exp(log_factor), 0.5, 2.0)
    factor = np.where(rates == target, 1.0, factor)
    return steps * factor


def _diagnose_initial(log_post, state: ParamVector):
    bad = []
    for name, sup, x in zip(state.names, state.supports, state.values):
        if not sup.contains(x):
            bad.append(f"{name}={x!r} outside {sup}")
    return bad


def run_chain(log_post: Callable[[ParamVector], float], initial: ParamVector, cfg: MetropolisConfig) -> Chain:
    """Burn in with step adaptation, then collect ``cfg.samples`` thinned draws."""
    state = initial.copy()
    lp = log_post(state)
    if not np.isfinite(lp):
        bad = _diagnose_initial(log_post, state)
        detail = "; ".join(bad) if bad else "all values inside their supports; check data/priors at " + repr(state)
        raise MCMCError(f"initial log-posterior is {lp!r}: {detail}")
    rng = np.random.default_rng(cfg.seed)
    dim = len(state)
    steps = cfg.initial_steps(dim)
    window = np.zeros(dim, dtype=int)
    for it in range(1, cfg.burn_in + 1):
        lp = _sweep_inplace(state, lp, log_post, steps, rng, window)
        if it % cfg.adapt_interval == 0:
            moving = steps > 0
            steps = np.where(moving, adapt_steps(steps, window / cfg.adapt_interval, cfg.target_accept), 0.0)
            window[:] = 0

    draws = np.empty((cfg.samples, dim))
    lps = np.empty(cfg.samples)
    accepted = np.zeros(dim, dtype=int)
    for k in range(cfg.samples):
        for _ in range(cfg.thin):
            lp = _sweep_inplace(state, lp, log_post, steps, rng, accepted)
        draws[k] = state.values
        lps[k] = lp
    rates = accepted / (cfg.samples * cfg.thin)
    return Chain(
        names=state.names,
        draws=draws,
        acceptance=rates,
        steps=steps,
        log_post=lps,
        config=cfg,
        template=initial.copy(),
    )


def summarize(chain: Chain, g: Callable[[ParamVector], float] | None = None, probs: Iterable[float] = (0.05, 0.95)):
    """Monte Carlo mean and empirical quantiles of ``g`` over the draws.

    ``g`` defaults to the first coordinate. Quantiles use linear
    interpolation between order statistics.
    """
    if len(chain) == 0:
        raise MCMCError("cannot summarize an empty chain")
    probs = np.asarray(list(probs), dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    if g is None:
        values = chain.draws[:, 0]
    else:
        values = np.array([g(pv) for pv in chain])
    return float(values.mean()), np.quantile(values, probs)


# ----------------------------------------------------------------------
# many independent chains at once
# ----------------------------------------------------------------------

def _to_free(x, support: Support):
    if support.kind == "unbounded":
        return x
    if support.kind == "positive":
        return np.log(x)
    if support.kind == "unit":
        return logit(x)
    if support.kind == "bounded":
        return logit((x - support.lo) / (support.hi - support.lo))
    raise ValueError(f"run_batched does not handle {support.kind} coordinates")


def _from_free(z, support: Support):
    """Inverse transform and log|dx/dz|."""
    if support.kind == "unbounded":
        return z, np.zeros_like(z)
    if support.kind == "positive":
        return np.exp(z), z
    if support.kind == "unit":
        x = expit(z)
        return x, np.log(x) + np.log1p(-x)
    if support.kind == "bounded":
        u = expit(z)
        w = support.hi - support.lo
        return support.lo + w * u, np.log(w) + np.log(u) + np.log1p(-u)
    raise ValueError(support.kind)


def run_batched(
    log_post: Callable[[np.ndarray], np.ndarray],
    initial: np.ndarray,
    supports: Sequence[Support],
    cfg: MetropolisConfig,
    rng: np.random.Generator | None = None,
):
    """Run ``R`` independent chains of the same sampler in lockstep.

    ``log_post`` maps an ``(R, d)`` array of states to ``R`` log-posterior
    values (each row may have its own data baked into the callable).
    Returns ``(draws, acceptance)`` with draws of shape
    ``(samples, R, d)`` and acceptance of shape ``(R, d)``. Each chain
    adapts its own step sizes during burn-in.
    """
    x = np.array(initial, dtype=float, copy=True)
    R, d = x.shape
    if len(supports) != d:
        raise ValueError("one support per coordinate required")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    z = np.column_stack([_to_free(x[:, j], supports[j]) for j in range(d)])
    lp = log_post(x)
    if not np.all(np.isfinite(lp)):
        raise MCMCError(f"initial log-posterior not finite for chains {np.flatnonzero(~np.isfinite(lp)).tolist()}")
    steps = np.broadcast_to(cfg.initial_steps(d), (R, d)).copy()
    window = np.zeros((R, d))
    accepted = np.zeros((R, d))

    def sweep(counter):
        nonlocal lp
        for j in range(d):
            zj = z[:, j].copy()
            xj = x[:, j].copy()
            _, jac_old = _from_free(zj, supports[j])
            zn = zj + steps[:, j] * rng.standard_normal(R)
            xn, jac_new = _from_free(zn, supports[j])
            x[:, j] = xn
            lp_new = log_post(x)
            if np.any(np.isnan(lp_new)):
                raise MCMCError(f"log-posterior returned NaN after moving coordinate {j}")
            log_ratio = lp_new - lp + jac_new - jac_old
            ok = np.log(rng.random(R)) < log_ratio
            x[:, j] = np.where(ok, xn, xj)
            z[:, j] = np.where(ok, zn, zj)
            lp = np.where(ok, lp_new, lp)
            counter[:, j] += ok

    for it in range(1, cfg.burn_in + 1):
        sweep(window)
        if it % cfg.adapt_interval == 0:
            steps = adapt_steps(steps, window / cfg.adapt_interval, cfg.target_accept)
            window[:] = 0
    draws = np.empty((cfg.samples, R, d))
    for k in range(cfg.samples):
        for _ in range(cfg.thin):
            sweep(accepted)
        draws[k] = x
    return draws, accepted / (cfg.samples * cfg.thin)


# ----------------------------------------------------------------------
# columnar export
# ----------------------------------------------------------------------

def chain_to_csv(chain: Chain, path_or_buffer=None):
    """Header of coordinate names, one row per retained draw.

    Floats are written with ``repr`` so a read-back is exact.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(chain.names)
    for row in chain.draws:
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path_or_buffer is None:
        return text
    if hasattr(path_or_buffer, "write"):
        path_or_buffer.write(text)
    else:
        from .io import atomic_write_text

        atomic_write_text(path_or_buffer, text)
    return text


def chain_from_csv(source) -> Chain:
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("chain table is empty")
    names = rows[0]
    draws = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(names))
    return Chain(
        names=names,
        draws=draws,
        acceptance=np.full(len(names), np.nan),
        steps=np.full(len(names), np.nan),
        log_post=np.full(len(draws), np.nan),
    )
