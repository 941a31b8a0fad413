"""Explicit-state semantics of folded models.

States are packed into 64-bit keys (one bit field per variable, offset by the
variable's lower bound). Exploration is breadth-first and processes a whole
BFS level at a time with numpy: every transition template is evaluated on the
entire frontier at once, and the level's successors are then ordered by
(source index, template index). This yields exactly the indices a FIFO
breadth-first search would assign, so numbering is reproducible.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import ir
from .ir import Binary, Expr, Ident, Literal, Unary

log = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 50_000_000


class ExplorationError(Exception):
    pass


class BoundsError(ExplorationError):
    """An update drives a variable outside its declared range."""


class StateLimitError(ExplorationError):
    pass


class InvariantViolation(ExplorationError):
    pass


# ---------------------------------------------------------------------------
# vectorised expression evaluation


def eval_vec(expr: Expr, env: Mapping[str, object]):
    """Evaluate ``expr`` elementwise; ``env`` maps names to arrays or scalars."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Ident):
        try:
            return env[expr.name]
        except KeyError:
            raise ir.UnboundIdentifierError(f"unbound identifier {expr.name!r}") from None
    if isinstance(expr, Unary):
        v = eval_vec(expr.operand, env)
        return np.logical_not(v) if expr.op == "!" else np.negative(v)
    a = eval_vec(expr.left, env)
    b = eval_vec(expr.right, env)
    op = expr.op
    if op == "&":
        return np.logical_and(a, b)
    if op == "|":
        return np.logical_or(a, b)
    if op == "=":
        return np.equal(a, b)
    if op == "!=":
        return np.not_equal(a, b)
    if op == "<":
        return np.less(a, b)
    if op == "<=":
        return np.less_equal(a, b)
    if op == ">":
        return np.greater(a, b)
    if op == ">=":
        return np.greater_equal(a, b)
    if op == "+":
        return np.add(a, b)
    if op == "-":
        return np.subtract(a, b)
    if op == "*":
        return np.multiply(a, b)
    if op == "/":
        if np.any(np.equal(b, 0)):
            raise ir.DivisionByZeroError(f"division by zero in {ir.format_expr(expr)}")
        return np.true_divide(a, b)
    raise ir.TypeMismatchError(f"unknown operator {op!r}")


def as_mask(value, n: int) -> np.ndarray:
    out = np.asarray(value, dtype=bool)
    if out.shape != (n,):
        out = np.broadcast_to(out, (n,)).copy()
    return out


# ---------------------------------------------------------------------------
# state packing


@dataclass(frozen=True)
class Layout:
    names: tuple[str, ...]
    is_bool: tuple[bool, ...]
    lows: tuple[int, ...]
    highs: tuple[int, ...]
    shifts: tuple[int, ...]
    widths: tuple[int, ...]

    @classmethod
    def of(cls, model: ir.ModelIR) -> "Layout":
        names, is_bool, lows, highs, shifts, widths = [], [], [], [], [], []
        shift = 0
        for v in model.variables:
            if v.type == ir.BOOL:
                lo, hi = 0, 1
            else:
                lo, hi = int(v.low.value), int(v.high.value)
                if lo > hi:
                    raise ExplorationError(f"empty range [{lo}..{hi}] for {v.name!r}")
            width = max(1, int(hi - lo).bit_length())
            names.append(v.name)
            is_bool.append(v.type == ir.BOOL)
            lows.append(lo)
            highs.append(hi)
            shifts.append(shift)
            widths.append(width)
            shift += width
        if shift > 62:
            raise ExplorationError(f"state vector needs {shift} bits; at most 62 are supported")
        return cls(tuple(names), tuple(is_bool), tuple(lows), tuple(highs), tuple(shifts), tuple(widths))

    @cached_property
    def position(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    def field_mask(self, i: int) -> np.int64:
        return np.int64(((1 << self.widths[i]) - 1) << self.shifts[i])

    def pack_one(self, values: Mapping[str, object]) -> int:
        key = 0
        for i, n in enumerate(self.names):
            key |= (int(values[n]) - self.lows[i]) << self.shifts[i]
        return key

    def field(self, keys: np.ndarray, i: int) -> np.ndarray:
        raw = (keys >> self.shifts[i]) & ((1 << self.widths[i]) - 1)
        return raw + self.lows[i] if self.lows[i] else raw

    def unpack(self, keys: np.ndarray, dtype=np.int64) -> dict[str, np.ndarray]:
        return {n: self.field(keys, i).astype(dtype, copy=False) for i, n in enumerate(self.names)}

    def env(self, keys: np.ndarray) -> dict[str, np.ndarray]:
        """Evaluation environment: booleans as bool arrays, integers as int64."""
        out = {}
        for i, n in enumerate(self.names):
            col = self.field(keys, i)
            out[n] = col.astype(bool) if self.is_bool[i] else col
        return out

    def decode(self, key: int) -> dict[str, object]:
        out = {}
        for i, n in enumerate(self.names):
            raw = ((int(key) >> self.shifts[i]) & ((1 << self.widths[i]) - 1)) + self.lows[i]
            out[n] = bool(raw) if self.is_bool[i] else raw
        return out


# ---------------------------------------------------------------------------
# transition templates


@dataclass(frozen=True)
class Transition:
    """One synchronised combination of commands (or a lone unlabelled command)."""

    label: str | None
    guard: Expr
    rate: float
    updates: tuple[tuple[str, Expr], ...]
    origin: tuple[tuple[str, int], ...]  # (module name, command index)


def compile_transitions(model: ir.ModelIR) -> list[Transition]:
    """Expand the synchronised product into a fixed, ordered template list.

    Templates follow declaration order; a label's combinations are emitted at
    its first occurrence. A label fires only if every module whose alphabet
    contains it contributes one enabled command, at the product of the rates.
    """
    if not ir.is_folded(model):
        model = ir.fold_constants(model)
    participants: dict[str, list[ir.ModuleDecl]] = {}
    for m in model.modules:
        for a in sorted(m.alphabet):
            participants.setdefault(a, []).append(m)
    out: list[Transition] = []
    emitted: set[str] = set()
    for m in model.modules:
        for idx, c in enumerate(m.commands):
            if c.action is None:
                out.append(Transition(None, c.guard, float(c.rate.value), c.updates, ((m.name, idx),)))
                continue
            if c.action in emitted:
                continue
            emitted.add(c.action)
            choices = [
                [(mod.name, k, cmd) for k, cmd in enumerate(mod.commands) if cmd.action == c.action]
                for mod in participants[c.action]
            ]
            for combo in itertools.product(*choices):
                rate = 1.0
                for _, _, cmd in combo:
                    rate *= float(cmd.rate.value)
                out.append(
                    Transition(
                        c.action,
                        ir.simplify(ir.conj(cmd.guard for _, _, cmd in combo), {}),
                        rate,
                        tuple(u for _, _, cmd in combo for u in cmd.updates),
                        tuple((name, k) for name, k, _ in combo),
                    )
                )
    return out


def _conjuncts(expr: Expr) -> list[Expr]:
    if isinstance(expr, Binary) and expr.op == "&":
        return _conjuncts(expr.left) + _conjuncts(expr.right)
    return [expr]


class Successors:
    """Vectorised successor function shared by exploration and simulation."""

    def __init__(self, model: ir.ModelIR):
        if not ir.is_folded(model):
            model = ir.fold_constants(model)
        self.model = model
        self.layout = Layout.of(model)
        self.transitions = compile_transitions(model)
        self._guards = [
            [(term, sorted(set(ir.identifiers(term)))) for term in _conjuncts(t.guard)]
            for t in self.transitions
        ]
        self.rates = np.array([t.rate for t in self.transitions])
        pos = self.layout.position
        self._updates = [
            [(pos[name], expr, sorted(set(ir.identifiers(expr)))) for name, expr in t.updates]
            for t in self.transitions
        ]

    def enabled(self, t: int, env, n: int) -> np.ndarray:
        """Row indices (into the batch) where template ``t`` is enabled."""
        rows = None
        for term, names in self._guards[t]:
            if rows is None:
                rows = np.flatnonzero(as_mask(eval_vec(term, env), n))
            else:
                sub = {k: env[k][rows] for k in names}
                rows = rows[as_mask(eval_vec(term, sub), len(rows))]
            if len(rows) == 0:
                break
        return rows

    def apply(self, t: int, keys: np.ndarray, env, rows: np.ndarray) -> np.ndarray:
        """Successor keys of ``keys[rows]`` under template ``t``."""
        lay = self.layout
        new = keys[rows].copy()
        if not self._updates[t]:
            return new
        for i, expr, names in self._updates[t]:
            sub = {k: env[k][rows] for k in names}
            val = np.broadcast_to(np.asarray(eval_vec(expr, sub)), rows.shape).astype(np.int64)
            bad = (val < lay.lows[i]) | (val > lay.highs[i])
            if bad.any():
                w = int(np.flatnonzero(bad)[0])
                state = lay.decode(int(keys[rows[w]]))
                tr = self.transitions[t]
                raise BoundsError(
                    f"update {lay.names[i]}'={ir.format_expr(expr)} of {tr.label or 'unlabelled command'} "
                    f"{list(tr.origin)} leaves [{lay.lows[i]}..{lay.highs[i]}] (value {int(val[w])}) "
                    f"in state {state}"
                )
            new = (new & ~lay.field_mask(i)) | ((val - lay.lows[i]) << lay.shifts[i])
        return new

    def expand(self, keys: np.ndarray):
        """All non-self-loop moves of ``keys``: (row, template, target key)."""
        env = self.layout.env(keys)
        n = len(keys)
        rows_out, tids, targets = [], [], []
        for t in range(len(self.transitions)):
            rows = self.enabled(t, env, n)
            if len(rows) == 0:
                continue
            new = self.apply(t, keys, env, rows)
            moved = new != keys[rows]
            rows_out.append(rows[moved])
            tids.append(np.full(int(moved.sum()), t, dtype=np.int32))
            targets.append(new[moved])
        if not rows_out:
            empty = np.zeros(0, dtype=np.int64)
            return empty, np.zeros(0, dtype=np.int32), empty
        return np.concatenate(rows_out), np.concatenate(tids), np.concatenate(targets)

    def initial_key(self) -> int:
        values = {v.name: v.init.value for v in self.model.variables}
        return self.layout.pack_one(values)


# ---------------------------------------------------------------------------
# state space


class StateSpace:
    """Reachable states with their sparse rate matrix.

    ``rates`` holds the off-diagonal rates R(s, s'); the generator is
    ``Q = R - diag(exit_rates)``. State 0 is the initial state.
    """

    def __init__(self, model: ir.ModelIR, layout: Layout, keys: np.ndarray, rates: sp.csr_matrix, levels: int):
        self.model = model
        self.layout = layout
        self.keys = keys
        self.rates = rates
        self.levels = levels
        self.exit_rates = np.asarray(rates.sum(axis=1)).ravel()
        self._labels: dict[Expr, np.ndarray] = {}
        self._consts = ir.constant_values(model)

    @property
    def num_states(self) -> int:
        return len(self.keys)

    @property
    def num_transitions(self) -> int:
        return self.rates.nnz

    @cached_property
    def columns(self) -> dict[str, np.ndarray]:
        return self.layout.unpack(self.keys, dtype=np.int16)

    def env(self, names=None) -> dict[str, np.ndarray]:
        """Evaluation environment over all states, restricted to ``names``."""
        out = {}
        for i, n in enumerate(self.layout.names):
            if names is not None and n not in names:
                continue
            col = self.columns[n]
            out[n] = col.astype(bool) if self.layout.is_bool[i] else col.astype(np.int64)
        return out

    def generator(self) -> sp.csr_matrix:
        return (self.rates - sp.diags(self.exit_rates)).tocsr()

    def state(self, index: int) -> dict[str, object]:
        return self.layout.decode(int(self.keys[index]))

    def index_of(self, values: Mapping[str, object]) -> int:
        key = self.layout.pack_one(values)
        hit = np.flatnonzero(self.keys == key)
        if len(hit) == 0:
            raise KeyError(f"state {dict(values)} is not reachable")
        return int(hit[0])

    def mask(self, phi: Expr) -> np.ndarray:
        """Boolean vector of states satisfying ``phi`` (cached per formula)."""
        if phi in self._labels:
            return self._labels[phi]
        expr = ir.simplify(phi, self._consts)
        if ir.type_of(expr, self.model.type_env()) != ir.BOOL:
            raise ir.TypeMismatchError(f"state formula {ir.format_expr(phi)} is not boolean")
        out = as_mask(eval_vec(expr, self.env(set(ir.identifiers(expr)))), self.num_states)
        out.flags.writeable = False
        self._labels[phi] = out
        return out

    def satisfy(self, phi: Expr) -> np.ndarray:
        """Indices of the states satisfying ``phi``."""
        return np.flatnonzero(self.mask(phi))

    def values(self, expr: Expr) -> np.ndarray:
        """Numeric value of ``expr`` in every state."""
        expr = ir.simplify(expr, self._consts)
        out = eval_vec(expr, self.env(set(ir.identifiers(expr))))
        return np.broadcast_to(np.asarray(out, dtype=float), (self.num_states,))

    # -- dumps

    def write_transitions(self, path: str | Path):
        coo = self.rates.tocoo()
        order = np.lexsort((coo.col, coo.row))
        table = np.empty(len(order), dtype=[("r", np.int64), ("c", np.int64), ("v", np.float64)])
        table["r"], table["c"], table["v"] = coo.row[order], coo.col[order], coo.data[order]
        with open(path, "w") as fh:
            fh.write(f"{self.num_states} {self.num_transitions}\n")
            np.savetxt(fh, table, fmt=["%d", "%d", "%.17g"])

    def write_states(self, path: str | Path):
        names = self.layout.names
        cols = [self.columns[n] for n in names]
        with open(path, "w") as fh:
            fh.write("(" + ",".join(names) + ")\n")
            for i in range(self.num_states):
                parts = []
                for k, n in enumerate(names):
                    v = int(cols[k][i])
                    parts.append(f"{n}={'true' if v else 'false'}" if self.layout.is_bool[k] else f"{n}={v}")
                fh.write(f"{i} " + " ".join(parts) + "\n")


Invariant = tuple[str, Callable[[dict], np.ndarray]]


def explore(
    model: ir.ModelIR,
    max_states: int = DEFAULT_MAX_STATES,
    invariants: Sequence[Invariant] = (),
) -> StateSpace:
    """Breadth-first reachability from the initial valuation.

    ``invariants`` are ``(name, check)`` pairs where ``check(columns)`` marks
    violating states; they are verified on every newly discovered level.
    """
    succ = Successors(model)
    lay = succ.layout
    init = np.array([succ.initial_key()], dtype=np.int64)
    sorted_keys = init.copy()
    sorted_ids = np.zeros(1, dtype=np.int64)
    levels_keys = [init]
    frontier = init
    next_id = 1
    counts, cols, vals = [], [], []
    depth = 0

    def check(keys):
        if not invariants:
            return
        cols = lay.unpack(keys)
        for name, fn in invariants:
            bad = fn(cols)
            if np.any(bad):
                w = int(np.flatnonzero(bad)[0])
                raise InvariantViolation(f"invariant {name!r} fails in {lay.decode(int(keys[w]))}")

    check(init)
    while len(frontier):
        rows, tids, targets = succ.expand(frontier)
        order = np.lexsort((tids, rows))
        rows, tids, targets = rows[order], tids[order], targets[order]
        pos = np.searchsorted(sorted_keys, targets)
        pos_c = np.minimum(pos, len(sorted_keys) - 1)
        found = sorted_keys[pos_c] == targets
        dst = np.empty(len(targets), dtype=np.int64)
        dst[found] = sorted_ids[pos_c[found]]
        fresh = targets[~found]
        uniq, first, inverse = np.unique(fresh, return_index=True, return_inverse=True)
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
        dst[~found] = next_id + rank[inverse]
        new_keys = np.empty(len(uniq), dtype=np.int64)
        new_keys[rank] = uniq
        if next_id + len(new_keys) > max_states:
            raise StateLimitError(
                f"state limit {max_states} exceeded at BFS depth {depth + 1}: "
                f"{next_id} states explored, {len(new_keys)} more discovered"
            )
        check(new_keys)

        # merge parallel moves per (source, target); the level arrives sorted by source
        pair, inverse = np.unique((rows << 32) | dst, return_inverse=True)
        counts.append(np.bincount(pair >> 32, minlength=len(frontier)))
        cols.append((pair & 0xFFFFFFFF).astype(np.int32))
        vals.append(np.bincount(inverse.ravel(), weights=succ.rates[tids], minlength=len(pair)))
        del pair, inverse, rows, tids, targets, dst

        ins = np.searchsorted(sorted_keys, uniq)
        sorted_keys = np.insert(sorted_keys, ins, uniq)
        sorted_ids = np.insert(sorted_ids, ins, next_id + rank)
        next_id += len(new_keys)
        levels_keys.append(new_keys)
        frontier = new_keys
        depth += 1
        log.debug("depth %d: %d new states (%d total)", depth, len(new_keys), next_id)

    keys = np.concatenate(levels_keys)
    n = len(keys)
    del levels_keys, sorted_keys, sorted_ids
    degree = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
    index_type = np.int32 if degree.sum() < 2**31 else np.int64
    indptr = np.zeros(n + 1, dtype=index_type)
    np.cumsum(degree, out=indptr[1:])
    del counts, degree
    indices = np.concatenate(cols).astype(index_type, copy=False) if cols else np.zeros(0, dtype=index_type)
    del cols
    data = np.concatenate(vals) if vals else np.zeros(0)
    del vals
    rates = sp.csr_matrix((data, indices, indptr), shape=(n, n), copy=False)
    rates.has_sorted_indices = True
    log.info("explored %d states, %d transitions, depth %d", n, rates.nnz, depth)
    return StateSpace(ir.fold_constants(model) if not ir.is_folded(model) else model, lay, keys, rates, depth)
