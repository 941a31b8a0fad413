"""Command-line front end.

Exit codes: 0 success, 1 property or solver failure, 2 usage error,
3 parse error (diagnostics on stderr).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

from . import analysis, parser, scenario, smc, statespace
from .analysis import PropertyError, ResultRecord
from .parser import BoundedReach, Filter, LongRunReward, ParseError, SteadyProb

CSV_HEADER = ["property_id", "config", "t", "value", "engine", "ci_low", "ci_high", "runtime_ms", "iterations"]
THREADS_ENV = "ORAN_VERIFIER_THREADS"


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return f"{float(x):.9g}"


def parse_t_range(text: str) -> list[float]:
    """``a..b`` -> integers a..b inclusive; a bare number is a single bound."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        try:
            a, b = int(lo), int(hi)
        except ValueError:
            raise UsageError(f"--t expects integer bounds a..b, got {text!r}") from None
        if b < a:
            raise UsageError(f"empty range {text!r}")
        return [float(t) for t in range(a, b + 1)]
    try:
        return [float(text)]
    except ValueError:
        raise UsageError(f"bad --t value {text!r}") from None


def parse_t_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --t-list value {text!r}") from None


def parse_params(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"--param expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--param {name}: not a number: {value!r}") from None
    return out


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        value = flag
    elif os.environ.get(THREADS_ENV):
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    argv: list
    config_hash: str
    version: str
    started: float
    threads: int
    states: int | None = None
    transitions: int | None = None
    records: list = field(default_factory=list)

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")


@dataclass
class Row:
    property_id: str
    config: str
    t: float | None
    value: float
    engine: str
    ci_low: float | None = None
    ci_high: float | None = None
    runtime_ms: float | None = None
    iterations: int | None = None

    def cells(self):
        return [
            self.property_id, self.config, fmt(self.t), fmt(self.value), self.engine,
            fmt(self.ci_low), fmt(self.ci_high), fmt(self.runtime_ms),
            "" if self.iterations is None else str(self.iterations),
        ]


def row_from_record(rec: ResultRecord, config: str) -> Row:
    it = rec.diagnostics.get("iterations")
    return Row(rec.property_id, config, rec.t, rec.value, rec.engine, None, None, rec.runtime_ms,
               None if it is None else int(it))


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.cells())


def print_rows(rows, out=sys.stdout):
    for r in rows:
        t = "" if r.t is None else f" t={fmt(r.t)}"
        ci = "" if r.ci_low is None else f"  [{fmt(r.ci_low)}, {fmt(r.ci_high)}]"
        print(f"{r.property_id}{t}: {fmt(r.value)}{ci} ({r.engine})", file=out)


def read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def config_from_args(args) -> scenario.ScenarioConfig:
    if args.preset:
        return scenario.preset(args.preset)
    try:
        return scenario.load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from None


def t_values_from_args(args, default=None):
    if getattr(args, "t_list", None):
        return parse_t_list(args.t_list)
    if getattr(args, "t", None):
        return parse_t_range(args.t)
    return default


# ---------------------------------------------------------------------------
# subcommands


def cmd_presets(args) -> int:
    for name in scenario.PRESETS:
        cfg = scenario.preset(name)
        caps = "/".join(str(rc.capacity) for rc in cfg.rcs)
        print(f"{name}: {len(cfg.rcs)} RCs (capacity {caps}), {len(cfg.ues)} UEs")
    return 0


def cmd_gen(args) -> int:
    cfg = config_from_args(args)
    t_values = t_values_from_args(args, default=[float(t) for t in range(1, 16)])
    try:
        props_text = scenario.generate_properties(cfg, t_values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model_text = scenario.generate_model_text(cfg)
    Path(args.out_model).write_text(model_text)
    Path(args.out_props).write_text(props_text)
    print(f"wrote {args.out_model} and {args.out_props} ({cfg.name})")
    return 0


def _exact_rows(space, props, t_values, params, config):
    rows = []
    for rec in analysis.evaluate_properties(space, props, t_values, params):
        rows.append(row_from_record(rec, config))
    return rows


def _smc_rows(model, props, t_values, params, config, args, errors):
    rows = []
    for k, named in enumerate(props):
        pid = named.name or f"prop{k + 1}"
        prop = named.prop
        try:
            if isinstance(prop, Filter):
                raise PropertyError(f"{pid}: filter properties are unsupported by engine smc")
            if isinstance(prop, BoundedReach):
                if isinstance(prop.bound, str):
                    if prop.bound in params:
                        ts = [params[prop.bound]]
                    elif t_values:
                        ts = t_values
                    else:
                        raise PropertyError(f"{pid}: time bound {prop.bound!r} is not bound")
                else:
                    ts = [prop.bound]
                for t in ts:
                    start = time.perf_counter()
                    est = smc.estimate_bounded_reach(model, prop.target, t, args.samples, args.confidence, args.seed)
                    ms = (time.perf_counter() - start) * 1000.0
                    rows.append(Row(pid, config, t, est.estimate, "smc", est.ci_low, est.ci_high, ms, est.samples))
                continue
            start = time.perf_counter()
            if isinstance(prop, LongRunReward):
                est = smc.estimate_longrun_reward(model, prop.name, args.horizon, args.burn_in, args.seed, args.confidence)
            elif isinstance(prop, SteadyProb):
                est = smc.estimate_longrun(model, prop.condition, args.horizon, args.burn_in, args.seed, args.confidence)
            else:
                raise PropertyError(f"{pid}: unsupported by engine smc")
            ms = (time.perf_counter() - start) * 1000.0
            rows.append(Row(pid, config, None, est.estimate, "smc", est.ci_low, est.ci_high, ms, est.diagnostics["steps"]))
        except (PropertyError, KeyError) as exc:
            errors.append(str(exc.args[0]) if exc.args else str(exc))
    return rows


def _evaluate(model, props, t_values, params, config, args):
    """Rows plus error messages for one model/property set."""
    errors: list[str] = []
    if args.engine == "smc":
        return _smc_rows(model, props, t_values, params, config, args, errors), errors, None
    start = time.perf_counter()
    space = statespace.explore(model, max_states=args.max_states)
    explore_s = time.perf_counter() - start
    print(f"{config}: {space.num_states} states, {space.num_transitions} transitions "
          f"({explore_s:.1f} s)", file=sys.stderr)
    rows = []
    # evaluate in property order, isolating failures to the offending property
    try:
        rows = _exact_rows(space, props, t_values, params, config)
    except PropertyError:
        for named in props:
            try:
                rows.extend(_exact_rows(space, [named], t_values, params, config))
            except PropertyError as exc:
                errors.append(f"{named.name or named.prop}: {exc}")
    return rows, errors, space


def _record_size(manifest, space):
    if space is not None:
        manifest.states, manifest.transitions = space.num_states, space.num_transitions


def _finish(rows, errors, args, manifest) -> int:
    print_rows(rows)
    if args.out:
        write_csv(rows, args.out)
    if getattr(args, "manifest", None):
        manifest.records = [dict(zip(CSV_HEADER, r.cells())) for r in rows]
        manifest.write(args.manifest)
    for msg in errors:
        print(f"error: {msg}", file=sys.stderr)
    return 1 if errors else 0


def cmd_check(args) -> int:
    model_text = read_text(args.model)
    props_text = read_text(args.props)
    model = parser.parse_model(model_text)
    params = parse_params(args.param)
    props = parser.read_properties(props_text)
    t_values = t_values_from_args(args, default=parser.read_t_values(props_text))
    config = args.config_name or Path(args.model).stem
    manifest = RunManifest(list(args.argv), hashlib.sha256(model_text.encode()).hexdigest(), tool_version(),
                           time.time(), args.threads)
    rows, errors, space = _evaluate(model, props, t_values, params, config, args)
    _record_size(manifest, space)
    return _finish(rows, errors, args, manifest)


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    t_values = t_values_from_args(args, default=[float(t) for t in range(1, 16)])
    props_text = scenario.generate_properties(cfg, t_values)
    props = parser.read_properties(props_text)
    if args.props != "all":
        prefix = args.props.upper() + "."
        props = [p for p in props if p.name == args.props.upper() or p.name.startswith(prefix)]
        if not props:
            raise UsageError(f"no generated property matches {args.props!r}")
    model_text = scenario.generate_model_text(cfg)
    model = parser.parse_model(model_text)
    manifest = RunManifest(list(args.argv), hashlib.sha256(model_text.encode()).hexdigest(), tool_version(),
                           time.time(), args.threads)
    rows, errors, space = _evaluate(model, props, t_values, {}, cfg.name, args)
    _record_size(manifest, space)
    return _finish(rows, errors, args, manifest)


def cmd_simulate(args) -> int:
    model = parser.parse_model(read_text(args.model))
    named = parser.parse_property(args.prop)
    params = parse_params(args.param)
    t_values = t_values_from_args(args)
    errors: list[str] = []
    config = args.config_name or Path(args.model).stem
    rows = _smc_rows(model, [named], t_values, params, config, args, errors)
    if args.trajectory_out:
        prop = named.prop
        target, horizon = None, args.horizon
        if isinstance(prop, BoundedReach):
            target = prop.target
            horizon = params.get(prop.bound) if isinstance(prop.bound, str) else prop.bound
            if horizon is None:
                horizon = t_values[-1] if t_values else args.horizon
        stepper = smc.Stepper(model)
        sample = smc.simulate_trajectory(stepper, horizon, args.seed, target)
        smc.write_trajectory_csv(sample, stepper.names, args.trajectory_out)
    return _finish(rows, errors, args, None)


def cmd_dump(args) -> int:
    model = parser.parse_model(read_text(args.model))
    space = statespace.explore(model, max_states=args.max_states)
    space.write_states(f"{args.out}.sta")
    space.write_transitions(f"{args.out}.tra")
    print(f"{space.num_states} states, {space.num_transitions} transitions -> {args.out}.sta, {args.out}.tra")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="oran-verifier", description="CTMC model checker for O-RAN cell-switching scenarios")
    ap.add_argument("--threads", type=int, default=None, help=f"worker threads (env {THREADS_ENV})")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--preset", choices=scenario.PRESETS)
        g.add_argument("--config", help="scenario config JSON")

    def times(p):
        p.add_argument("--t", help="integer bounds a..b inclusive")
        p.add_argument("--t-list", help="comma-separated bounds, e.g. 0.5,1.5")

    def engine(p):
        p.add_argument("--engine", choices=["exact", "smc"], default="exact")
        p.add_argument("--samples", type=int, default=smc.DEFAULT_SAMPLES)
        p.add_argument("--confidence", type=float, default=smc.DEFAULT_CONFIDENCE)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--horizon", type=float, default=1e5, help="SMC long-run horizon")
        p.add_argument("--burn-in", type=float, default=1e3, help="SMC long-run burn-in")
        p.add_argument("--max-states", type=int, default=statespace.DEFAULT_MAX_STATES)

    def outputs(p):
        p.add_argument("--out", help="results CSV")
        p.add_argument("--manifest", help="run manifest JSON")

    sub.add_parser("presets", help="list built-in scenarios")

    p = sub.add_parser("gen", help="write model and property files")
    source(p)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-props", required=True)
    times(p)

    p = sub.add_parser("check", help="evaluate a property file")
    p.add_argument("--model", required=True)
    p.add_argument("--props", required=True)
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--config-name", help="config column value (default: model file stem)")
    times(p)
    engine(p)
    outputs(p)

    p = sub.add_parser("sweep", help="evaluate generated properties over a time sweep")
    source(p)
    p.add_argument("--props", default="p4", help="property family (p1..p4) or 'all'")
    times(p)
    engine(p)
    outputs(p)

    p = sub.add_parser("simulate", help="estimate one property by simulation")
    p.add_argument("--model", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--config-name")
    p.add_argument("--trajectory-out", help="write one sample trajectory as CSV")
    p.add_argument("--out", help="results CSV")
    times(p)
    engine(p)

    p = sub.add_parser("dump", help="write state and transition listings")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--max-states", type=int, default=statespace.DEFAULT_MAX_STATES)
    return ap


COMMANDS = {
    "presets": cmd_presets,
    "gen": cmd_gen,
    "check": cmd_check,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "dump": cmd_dump,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        args.argv = argv
        args.threads = resolve_threads(args.threads)
        if getattr(args, "engine", None) == "smc":
            args.samples = int(args.samples)
            if args.samples < 1 or not 0 < args.confidence < 1:
                raise UsageError("need --samples >= 1 and --confidence in (0, 1)")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{ap.prog}: error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        for d in exc.diagnostics:
            print(f"{d.line}:{d.column}: {d.severity}: {d.message}", file=sys.stderr)
        return 3
    except (PropertyError, statespace.ExplorationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
