"""Statistical model checking by discrete-event simulation.

Nothing here builds the state space. Transient estimates simulate many
trajectories in lockstep with the vectorised successor function; long-run
estimates follow one trajectory with a code-generated scalar stepper.

Randomness: trajectories are split into fixed-size chunks and chunk ``c``
draws from ``Philox(SeedSequence([seed, c]))``, so an estimate depends only on
(seed, model, parameters).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import ir
from .ir import Expr, Ident, Literal, Unary
from .statespace import BoundsError, Successors, as_mask, eval_vec

CHUNK = 4096
DEFAULT_SAMPLES = 10_000
DEFAULT_CONFIDENCE = 0.95


@dataclass
class EstimateRecord:
    estimate: float
    confidence: float
    ci_low: float
    ci_high: float
    samples: int
    seed: int
    diagnostics: dict = field(default_factory=dict)


@dataclass
class TrajectorySample:
    seed: int
    steps: list  # (time, action label or "", state tuple)
    hit_time: float | None = None
    absorbed: bool = False


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk])))


def wilson_interval(successes: int, n: int, confidence: float) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one sample")
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == n else min(1.0, centre + half)
    return float(low), float(high)


# ---------------------------------------------------------------------------
# scalar stepping


_PY_OPS = {"&": "and", "|": "or", "=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
           "+": "+", "-": "-", "*": "*", "/": "/"}


def _py(expr: Expr, slot: dict[str, int]) -> str:
    if isinstance(expr, Literal):
        return repr(expr.value)
    if isinstance(expr, Ident):
        return f"s[{slot[expr.name]}]"
    if isinstance(expr, Unary):
        return f"(not {_py(expr.operand, slot)})" if expr.op == "!" else f"(-{_py(expr.operand, slot)})"
    return f"({_py(expr.left, slot)} {_PY_OPS[expr.op]} {_py(expr.right, slot)})"


class Stepper:
    """Per-state successor enumeration; states are tuples of ints (bools as 0/1)."""

    def __init__(self, model: ir.ModelIR):
        self.succ = Successors(model)
        self.model = self.succ.model
        lay = self.succ.layout
        self.names = lay.names
        self.slot = {n: i for i, n in enumerate(lay.names)}
        self.labels = [t.label or "" for t in self.succ.transitions]
        init = lay.decode(self.succ.initial_key())
        self.initial = tuple(int(init[n]) for n in lay.names)
        src = ["def moves(s):", "    out = []"]
        for k, t in enumerate(self.succ.transitions):
            src.append(f"    if {_py(t.guard, self.slot)}:")
            src.append("        n = list(s)")
            for name, expr in t.updates:
                i = self.slot[name]
                src.append(f"        v = int({_py(expr, self.slot)})")
                src.append(f"        if v < {lay.lows[i]} or v > {lay.highs[i]}: raise BoundsError({k}, s, {name!r}, v)")
                src.append(f"        n[{i}] = v")
            src.append("        n = tuple(n)")
            src.append(f"        if n != s: out.append(({k}, {t.rate!r}, n))")
        src.append("    return out")
        scope = {"BoundsError": _bounds_error}
        exec(compile("\n".join(src), f"<moves {id(self)}>", "exec"), scope)
        self._moves = scope["moves"]
        self._cache: dict[tuple, tuple] = {}

    def moves(self, state: tuple) -> list[tuple[int, float, tuple]]:
        """Enabled moves ``(template, rate, successor)`` of ``state``."""
        return self._moves(state)

    def _table(self, state: tuple):
        hit = self._cache.get(state)
        if hit is None:
            mv = self._moves(state)
            if mv:
                cum = np.cumsum([r for _, r, _ in mv])
                hit = (float(cum[-1]), cum, mv)
            else:
                hit = (0.0, None, mv)
            if len(self._cache) < 2_000_000:
                self._cache[state] = hit
        return hit

    def step(self, state: tuple, rng: np.random.Generator):
        """Sample ``(dwell, template, next state)``; ``None`` if ``state`` is absorbing."""
        total, cum, mv = self._table(state)
        if total == 0.0:
            return None
        dwell = rng.exponential(1.0 / total)
        k = int(np.searchsorted(cum, rng.random() * total, side="right"))
        k = min(k, len(mv) - 1)
        tid, _, nxt = mv[k]
        return dwell, tid, nxt

    def predicate(self, expr: Expr):
        expr = ir.simplify(expr, ir.constant_values(self.model))
        return eval(compile(f"lambda s: bool({_py(expr, self.slot)})", "<pred>", "eval"))

    def function(self, expr: Expr):
        expr = ir.simplify(expr, ir.constant_values(self.model))
        return eval(compile(f"lambda s: float({_py(expr, self.slot)})", "<fn>", "eval"))

    def reward_function(self, items):
        """Sum of ``value`` over the ``(guard, value)`` items whose guard holds."""
        consts = ir.constant_values(self.model)
        terms = []
        for guard, value in items:
            g, v = _py(ir.simplify(guard, consts), self.slot), _py(ir.simplify(value, consts), self.slot)
            terms.append(f"({v} if {g} else 0.0)")
        return eval(compile(f"lambda s: float({' + '.join(terms) or '0.0'})", "<reward>", "eval"))

    def as_dict(self, state: tuple) -> dict:
        lay = self.succ.layout
        return {n: bool(v) if lay.is_bool[i] else v for i, (n, v) in enumerate(zip(self.names, state))}


def _bounds_error(k, s, name, v):
    return BoundsError(f"template {k}: update of {name} to {v} out of range in state {s}")


def step(model_or_stepper, state: tuple, rng: np.random.Generator):
    """One race step from ``state``: ``(dwell, next state)`` or ``None`` when absorbing."""
    stepper = model_or_stepper if isinstance(model_or_stepper, Stepper) else Stepper(model_or_stepper)
    out = stepper.step(state, rng)
    if out is None:
        return None
    return out[0], out[2]


def simulate_trajectory(
    model_or_stepper, horizon: float, seed: int, target: Expr | None = None, max_steps: int = 1_000_000
) -> TrajectorySample:
    """Single trajectory up to ``horizon`` (stopping early when ``target`` holds)."""
    st = model_or_stepper if isinstance(model_or_stepper, Stepper) else Stepper(model_or_stepper)
    rng = chunk_rng(seed, 0)
    hit = st.predicate(target) if target is not None else None
    s = st.initial
    now = 0.0
    sample = TrajectorySample(seed, [(0.0, "", s)])
    if hit is not None and hit(s):
        sample.hit_time = 0.0
        return sample
    for _ in range(max_steps):
        out = st.step(s, rng)
        if out is None:
            sample.absorbed = True
            break
        dwell, tid, s = out
        now += dwell
        if now > horizon:
            break
        sample.steps.append((now, st.labels[tid], s))
        if hit is not None and hit(s):
            sample.hit_time = now
            break
    return sample


def write_trajectory_csv(sample: TrajectorySample, names, path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "action", *names])
        for t, action, state in sample.steps:
            w.writerow([repr(t), action, *state])


# ---------------------------------------------------------------------------
# estimators


def _lockstep_chunk(succ: Successors, target: Expr, t: float, n: int, rng: np.random.Generator) -> int:
    """Number of ``n`` trajectories that satisfy ``target`` within time ``t``."""
    lay = succ.layout
    width = len(succ.transitions)
    keys = np.full(n, succ.initial_key(), dtype=np.int64)
    clock = np.zeros(n)

    def satisfied(k):
        return as_mask(eval_vec(target, lay.env(k)), len(k))

    done = satisfied(keys)
    hits = int(done.sum())
    keys, clock = keys[~done], clock[~done]
    while len(keys):
        m = len(keys)
        rows, tids, targets = succ.expand(keys)
        rates = np.zeros((m, width))
        succs = np.zeros((m, width), dtype=np.int64)
        rates[rows, tids] = succ.rates[tids]
        succs[rows, tids] = targets
        cum = np.cumsum(rates, axis=1)
        total = cum[:, -1]
        alive = total > 0
        # one draw of each kind per live trajectory keeps the stream layout fixed
        dwell = rng.exponential(size=m)
        pick = rng.random(m)
        clock = clock + np.where(alive, dwell / np.where(alive, total, 1.0), np.inf)
        alive &= clock <= t
        choice = np.minimum((cum <= (pick * total)[:, None]).sum(axis=1), width - 1)
        keys = succs[np.arange(m), choice]
        keys, clock = keys[alive], clock[alive]
        reached = satisfied(keys)
        hits += int(reached.sum())
        keys, clock = keys[~reached], clock[~reached]
    return hits


def estimate_bounded_reach(
    model: ir.ModelIR,
    phi: Expr,
    t: float,
    samples: int = DEFAULT_SAMPLES,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
) -> EstimateRecord:
    """Fraction of trajectories reaching ``phi`` within ``t`` with a Wilson interval."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if t < 0:
        raise ValueError("time bound must be non-negative")
    succ = Successors(model)
    target = ir.simplify(phi, ir.constant_values(succ.model))
    hits = 0
    for c, start in enumerate(range(0, samples, CHUNK)):
        n = min(CHUNK, samples - start)
        hits += _lockstep_chunk(succ, target, float(t), n, chunk_rng(seed, c))
    low, high = wilson_interval(hits, samples, confidence)
    return EstimateRecord(hits / samples, confidence, low, high, samples, seed, {"successes": hits, "t": t})


def estimate_longrun(
    model: ir.ModelIR,
    state_value,
    horizon: float,
    burn_in: float,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
    batches: int = 20,
) -> EstimateRecord:
    """Time average of ``state_value`` over (burn_in, horizon] by batch means.

    ``state_value`` is an expression or a list of ``(guard, value)`` reward items.
    """
    if not 0 <= burn_in < horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    if batches < 2:
        raise ValueError("need at least two batches")
    st = Stepper(model)
    value = st.function(state_value) if isinstance(state_value, Expr) else st.reward_function(state_value)
    rng = chunk_rng(seed, 0)
    width = (horizon - burn_in) / batches
    area = np.zeros(batches)
    span = np.zeros(batches)
    s = st.initial
    now = 0.0
    steps = 0
    while now < horizon:
        out = st.step(s, rng)
        dwell, nxt = (horizon - now, s) if out is None else (out[0], out[2])
        seg_start, seg_end = now, min(now + dwell, horizon)
        v = value(s)
        a = max(seg_start, burn_in)
        while a < seg_end:
            b = min(int((a - burn_in) // width), batches - 1)
            edge = seg_end if b == batches - 1 else min(seg_end, burn_in + (b + 1) * width)
            if edge <= a:  # float edge case at a batch boundary
                edge = min(seg_end, np.nextafter(a, np.inf))
            dt = edge - a
            area[b] += v * dt
            span[b] += dt
            a = edge
        now += dwell
        s = nxt
        steps += 1
    means = area / span
    estimate = float(area.sum() / span.sum())
    sd = float(np.std(means, ddof=1))
    half = float(stats.t.ppf(0.5 + confidence / 2.0, batches - 1) * sd / math.sqrt(batches))
    return EstimateRecord(
        estimate, confidence, estimate - half, estimate + half, batches, seed,
        {"steps": steps, "horizon": horizon, "burn_in": burn_in, "batch_means": means.tolist()},
    )


def estimate_longrun_reward(
    model: ir.ModelIR,
    reward_name: str,
    horizon: float,
    burn_in: float,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
    batches: int = 20,
) -> EstimateRecord:
    """Long-run average of a state reward structure along one trajectory."""
    try:
        struct = model.reward(reward_name)
    except KeyError:
        raise KeyError(f"unknown reward structure {reward_name!r}") from None
    items = [(item.guard, item.value) for item in struct.items]
    return estimate_longrun(model, items, horizon, burn_in, seed, confidence, batches)

