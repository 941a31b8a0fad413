"""Exact numerical engines over an explored :class:`StateSpace`.

Long-run measures weight per-BSCC stationary distributions (Gauss-Seidel)
by the probability of reaching each BSCC. Time-bounded reachability uses
uniformization with truncated Poisson weights.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import _kernels, ir
from .ir import Expr
from .parser import BoundedReach, Filter, LongRunReward, NamedProperty, PropertyAST, SteadyProb, bind
from .statespace import StateSpace

log = logging.getLogger(__name__)

EPS_STEADY = 1e-8  # relative change between Gauss-Seidel sweeps
EPS_LINEAR = 1e-10  # absolute change for reachability probabilities
EPS_POISSON = 1e-8  # omitted Poisson tail mass
UNIFORMIZATION_SLACK = 1.02
MAX_ITERATIONS = 1_000_000


class PropertyError(Exception):
    """Property cannot be evaluated (unsupported form, empty filter, ...)."""


class ConvergenceError(PropertyError):
    pass


@dataclass
class StationaryResult:
    pi: np.ndarray
    bscc_labels: np.ndarray  # component id per state, -1 for transient
    bscc_reach: dict[int, float]
    residual: float
    iterations: int


@dataclass
class ResultRecord:
    property_id: str
    value: float
    engine: str = "exact"
    params: dict = field(default_factory=dict)
    runtime_ms: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.params.get("t")


# ---------------------------------------------------------------------------
# graph structure


def decompose_bsccs(space: StateSpace) -> tuple[np.ndarray, int]:
    """Label bottom SCCs ``0..k-1``; transient states get -1. Returns (labels, k)."""
    n_comp, comp = csgraph.connected_components(space.rates, directed=True, connection="strong")
    coo = space.rates.tocoo()
    leaving = comp[coo.row] != comp[coo.col]
    bottom = np.ones(n_comp, dtype=bool)
    bottom[np.unique(comp[coo.row[leaving]])] = False
    bottom_ids = np.flatnonzero(bottom)
    remap = np.full(n_comp, -1, dtype=np.int64)
    # number BSCCs by their smallest state index
    first = np.full(n_comp, space.num_states, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(space.num_states))
    ordered = bottom_ids[np.argsort(first[bottom_ids])]
    remap[ordered] = np.arange(len(ordered))
    return remap[comp], len(ordered)


def _transposed(space: StateSpace) -> sp.csr_matrix:
    # built on demand rather than cached: it doubles the matrix footprint
    rt = space.rates.T.tocsr()
    rt.sort_indices()
    return rt


def backward_reachable(space: StateSpace, targets: np.ndarray, rt: sp.csr_matrix | None = None) -> np.ndarray:
    """Mask of states with a path into ``targets`` (including the targets)."""
    rt = _transposed(space) if rt is None else rt
    seen = targets.copy()
    frontier = np.flatnonzero(targets)
    while len(frontier):
        preds = np.unique(rt[frontier].indices)
        preds = preds[~seen[preds]]
        seen[preds] = True
        frontier = preds
    return seen


def reach_probability(
    space: StateSpace, targets: np.ndarray, tol: float = EPS_LINEAR, rt: sp.csr_matrix | None = None
) -> np.ndarray:
    """Probability of eventually entering ``targets`` (a boolean mask) from each state."""
    targets = np.asarray(targets, dtype=bool)
    if not targets.any():
        raise ValueError("target set is empty")
    can_reach = backward_reachable(space, targets, rt)
    x = np.zeros(space.num_states)
    x[targets] = 1.0
    solve = can_reach & ~targets
    if solve.any():
        r = space.rates
        it, change = _kernels.gauss_seidel_reach(
            r.indptr, r.indices, r.data, space.exit_rates, x, solve, tol, MAX_ITERATIONS
        )
        if change >= tol:
            raise ConvergenceError(f"reachability did not converge after {it} iterations")
    return x


# ---------------------------------------------------------------------------
# long-run analysis


def _stationary_block(rt: sp.csr_matrix, exit_rates: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    n = len(exit_rates)
    if n == 1:
        return np.ones(1), 0
    pi = np.full(n, 1.0 / n)
    it, change = _kernels.gauss_seidel_stationary(rt.indptr, rt.indices, rt.data, exit_rates, pi, tol, MAX_ITERATIONS)
    if change < tol:
        return pi, it
    log.warning("Gauss-Seidel stalled (change %.3g after %d sweeps); falling back to power iteration", change, it)
    q = UNIFORMIZATION_SLACK * exit_rates.max()
    p_t = (rt / q).tocsr()
    stay = 1.0 - exit_rates / q
    pi = np.full(n, 1.0 / n)
    for k in range(1, MAX_ITERATIONS + 1):
        new = p_t @ pi + stay * pi
        new /= new.sum()
        mask = new > 0
        change = np.max(np.abs(new[mask] - pi[mask]) / new[mask])
        pi = new
        if change < tol:
            return pi, it + k
    raise ConvergenceError("steady-state solution did not converge")


def steady_distribution(space: StateSpace, tol: float = EPS_STEADY) -> StationaryResult:
    """Long-run distribution from the initial state (cached on ``space``)."""
    cached = getattr(space, "_stationary", None)
    if cached is not None and cached[0] == tol:
        return cached[1]
    labels, k = decompose_bsccs(space)
    if k == 0:
        raise ConvergenceError("no bottom strongly connected component found")
    rt = _transposed(space)
    n = space.num_states
    pi = np.zeros(n)
    reach: dict[int, float] = {}
    iterations = 0
    for b in range(k):
        members = np.flatnonzero(labels == b)
        if labels[0] == b:
            weight = 1.0
        elif labels[0] >= 0:
            weight = 0.0
        else:
            weight = float(reach_probability(space, labels == b, rt=rt)[0])
        reach[b] = weight
        if weight == 0.0:
            continue
        block = rt if len(members) == n else rt[members][:, members].tocsr()
        local, it = _stationary_block(block, space.exit_rates[members], tol)
        iterations += it
        pi[members] = weight * local
    residual = float(np.max(np.abs(rt @ pi - space.exit_rates * pi)))
    del rt
    result = StationaryResult(pi, labels, reach, residual, iterations)
    space._stationary = (tol, result)
    return result


def steady_prob(space: StateSpace, phi: Expr) -> float:
    pi = steady_distribution(space).pi
    return float(pi[space.mask(phi)].sum())


def state_rewards(space: StateSpace, name: str) -> np.ndarray:
    try:
        struct = space.model.reward(name)
    except KeyError:
        raise PropertyError(f"unknown reward structure {name!r}") from None
    rho = np.zeros(space.num_states)
    for item in struct.items:
        rho += np.where(space.mask(item.guard), space.values(item.value), 0.0)
    return rho


def longrun_state_reward(space: StateSpace, name: str) -> float:
    rho = state_rewards(space, name)
    return float(steady_distribution(space).pi @ rho)


# ---------------------------------------------------------------------------
# transient analysis


def poisson_weights(qt: float, eps: float = EPS_POISSON) -> tuple[int, int, np.ndarray]:
    """Poisson(qt) probabilities on the smallest window [L, R] holding mass >= 1 - eps.

    Starts from the mode, computed in log space, and grows the window towards
    the larger neighbouring term, so it stays stable for large ``qt``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if qt < 0:
        raise ValueError("qt must be non-negative")
    if qt == 0:
        return 0, 0, np.ones(1)
    mode = int(math.floor(qt))
    p_mode = math.exp(-qt + mode * math.log(qt) - math.lgamma(mode + 1))
    left, right = [p_mode], [p_mode]  # left grows downwards from the mode
    lo, hi = mode, mode
    p_lo = p_hi = p_mode
    total = p_mode
    while total < 1.0 - eps:
        next_lo = p_lo * lo / qt if lo > 0 else 0.0
        next_hi = p_hi * qt / (hi + 1)
        if next_lo >= next_hi and lo > 0:
            lo -= 1
            p_lo = next_lo
            left.append(p_lo)
            total += p_lo
        else:
            hi += 1
            p_hi = next_hi
            right.append(p_hi)
            total += p_hi
        if next_lo == 0.0 and next_hi == 0.0:  # pragma: no cover - underflow guard
            break
    weights = np.array(left[:0:-1] + right)
    return lo, hi, weights


def _as_masks(space: StateSpace, targets) -> np.ndarray:
    cols = []
    for t in targets:
        cols.append(space.mask(t) if not isinstance(t, np.ndarray) else np.asarray(t, dtype=bool))
    return np.column_stack(cols) if cols else np.zeros((space.num_states, 0), dtype=bool)


def bounded_reach_sweep(
    space: StateSpace,
    targets: Sequence,
    t_values: Sequence[float],
    eps: float = EPS_POISSON,
    rows: Sequence[np.ndarray | None] | None = None,
    reduce: Sequence[str] | None = None,
):
    """Pr_s(F<=t target) for several targets and time bounds in one pass.

    ``targets`` are formulas or boolean masks; ``rows[c]`` optionally restricts
    the states whose values are returned for target ``c``. Returns
    ``out[i][c]``: values for ``t_values[i]`` and target ``c``, plus a
    diagnostics dict. With ``reduce[c]`` set to "min" or "max", ``out[i][c]``
    is that aggregate over the rows instead of a vector.

    Accumulators for a time bound live only while its Poisson window is open.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    ts = [float(t) for t in t_values]
    if any(t < 0 for t in ts):
        raise ValueError("time bound must be non-negative")
    masks = np.ascontiguousarray(_as_masks(space, targets))
    n, m = masks.shape
    rows = list(rows) if rows is not None else [None] * m
    sel = [np.arange(n) if r is None else np.asarray(r) for r in rows]
    reduce = list(reduce) if reduce is not None else [None] * m
    out: list[list] = [[None] * m for _ in ts]

    def finish(i, acc):
        for c in range(m):
            x = acc[c]
            np.minimum(x, 1.0, out=x)
            # target states are certain; the truncated tail would leave them at 1 - eps
            x[masks[sel[c], c]] = 1.0
            if reduce[c] == "min":
                out[i][c] = float(x.min())
            elif reduce[c] == "max":
                out[i][c] = float(x.max())
            else:
                out[i][c] = x

    non_absorbing = ~masks.all(axis=1)
    qmax = float(space.exit_rates[non_absorbing].max()) if non_absorbing.any() else 0.0
    if qmax == 0.0:
        for i in range(len(ts)):
            finish(i, [masks[sel[c], c].astype(float) for c in range(m)])
        return out, {"q": 0.0, "iterations": 0}
    q = UNIFORMIZATION_SLACK * qmax
    windows = [poisson_weights(q * t, eps) for t in ts]
    kmax = max(w[1] for w in windows)
    r = space.rates
    diag = 1.0 - space.exit_rates / q
    v = masks.astype(float)
    buf = np.empty_like(v)
    open_acc: dict[int, list[np.ndarray]] = {}
    for k in range(kmax + 1):
        active = [i for i, (lo, hi, _) in enumerate(windows) if lo <= k <= hi]
        if active:
            picked = [v[sel[c], c] for c in range(m)]
            for i in active:
                lo, hi, w = windows[i]
                acc = open_acc.setdefault(i, [np.zeros(len(sel[c])) for c in range(m)])
                wk = w[k - lo]
                for c in range(m):
                    acc[c] += wk * picked[c]
                if k == hi:
                    finish(i, open_acc.pop(i))
        if k < kmax:
            _kernels.uniformized_step(r.indptr, r.indices, r.data, 1.0 / q, diag, v, masks, buf)
            v, buf = buf, v
    return out, {"q": q, "iterations": kmax, "truncation": [(w[0], w[1]) for w in windows]}


def bounded_reach_all_states(space: StateSpace, phi, t: float, eps: float = EPS_POISSON) -> np.ndarray:
    """Vector of Pr_s(F<=t phi) over all states."""
    out, _ = bounded_reach_sweep(space, [phi], [t], eps)
    return out[0][0]


# ---------------------------------------------------------------------------
# property evaluation


def _filter_rows(space: StateSpace, cond: Expr) -> np.ndarray:
    rows = space.satisfy(cond)
    if len(rows) == 0:
        raise PropertyError(f"filter condition {ir.format_expr(cond)} holds in no reachable state")
    return rows


def eval_property(
    space: StateSpace,
    prop: PropertyAST,
    params: Mapping[str, float] | None = None,
    property_id: str = "",
    eps: float = EPS_POISSON,
) -> ResultRecord:
    """Value of ``prop`` in the initial state (or aggregated by a filter)."""
    start = time.perf_counter()
    params = dict(params or {})
    try:
        prop = bind(prop, params)
    except KeyError as exc:
        raise PropertyError(str(exc.args[0])) from None
    diagnostics: dict = {}
    if isinstance(prop, (SteadyProb, LongRunReward)):
        params.pop("t", None)  # long-run measures have no time bound
    if isinstance(prop, SteadyProb):
        value = steady_prob(space, prop.condition)
        diagnostics["iterations"] = steady_distribution(space).iterations
    elif isinstance(prop, LongRunReward):
        value = longrun_state_reward(space, prop.name)
        diagnostics["iterations"] = steady_distribution(space).iterations
    elif isinstance(prop, BoundedReach):
        out, diagnostics = bounded_reach_sweep(space, [prop.target], [prop.bound], eps, rows=[np.array([0])])
        value = float(out[0][0][0])
        params["t"] = prop.bound
    elif isinstance(prop, Filter):
        if not isinstance(prop.inner, BoundedReach):
            raise PropertyError("filters are supported only over P=?[F<=t ...]")
        rows = _filter_rows(space, prop.condition)
        out, diagnostics = bounded_reach_sweep(
            space, [prop.inner.target], [prop.inner.bound], eps, rows=[rows], reduce=[prop.mode]
        )
        value = out[0][0]
        params["t"] = prop.inner.bound
    else:
        raise PropertyError(f"unsupported property {prop!r}")
    ms = (time.perf_counter() - start) * 1000.0
    return ResultRecord(property_id, value, "exact", params, ms, diagnostics)


def _bounded_parts(prop: PropertyAST):
    if isinstance(prop, BoundedReach):
        return prop, None, "init"
    if isinstance(prop, Filter):
        if not isinstance(prop.inner, BoundedReach):
            raise PropertyError("filters are supported only over P=?[F<=t ...]")
        return prop.inner, prop.condition, prop.mode
    return None


def evaluate_properties(
    space: StateSpace,
    props: Sequence[NamedProperty],
    t_values: Sequence[float] | None = None,
    params: Mapping[str, float] | None = None,
    eps: float = EPS_POISSON,
    batch: int = 9,
) -> list[ResultRecord]:
    """Evaluate a property list, sweeping symbolic bounds over ``t_values``.

    All time-bounded properties share one uniformization pass per batch of
    ``batch`` target formulas. Records come out in property order, sweeps in
    ascending ``t`` order.
    """
    params = dict(params or {})
    records: dict[int, list[ResultRecord]] = {}
    bounded = []
    for k, named in enumerate(props):
        pid = named.name or f"prop{k + 1}"
        parts = _bounded_parts(named.prop)
        if parts is None:
            records[k] = [eval_property(space, named.prop, params, pid, eps)]
            continue
        reach, cond, mode = parts
        if isinstance(reach.bound, str):
            if reach.bound in params:
                ts = [float(params[reach.bound])]
            elif t_values:
                ts = [float(t) for t in t_values]
            else:
                raise PropertyError(f"{pid}: time bound {reach.bound!r} is not bound")
        else:
            ts = [float(reach.bound)]
        rows = np.array([0]) if cond is None else _filter_rows(space, cond)
        bounded.append((k, pid, reach.target, rows, mode, ts))

    for b in range(0, len(bounded), batch):
        chunk = bounded[b:b + batch]
        t_all = sorted({t for *_, ts in chunk for t in ts})
        start = time.perf_counter()
        modes = ["min" if c[4] == "init" else c[4] for c in chunk]  # "init" rows hold only state 0
        out, diag = bounded_reach_sweep(space, [c[2] for c in chunk], t_all, eps, rows=[c[3] for c in chunk], reduce=modes)
        ms = (time.perf_counter() - start) * 1000.0 / max(1, len(chunk))
        for c, (k, pid, _target, _rows, mode, ts) in enumerate(chunk):
            recs = []
            for t in ts:
                value = out[t_all.index(t)][c]
                recs.append(
                    ResultRecord(pid, value, "exact", {**params, "t": t}, ms / len(ts), {"iterations": diag["iterations"]})
                )
            records[k] = recs
    return [r for k in sorted(records) for r in records[k]]
