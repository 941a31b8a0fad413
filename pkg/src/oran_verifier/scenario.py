"""Compile UE/RC topologies into guarded-command CTMC models.

Each radio cell (RC) and each user equipment (UE) becomes one module. A UE
toggles on/off with exponential sojourns; when on and unconnected it joins a
covering RC that is on and has room, or else wakes a covering RC that is on
standby. An RC drops to standby as soon as it serves nobody.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import ir
from .parser import parse_model

PRESETS = ("cnf1", "cnf2", "cnf3", "cnf4", "cnf5", "cnf6")


@dataclass(frozen=True)
class RcSpec:
    id: int
    capacity: int
    power_operating: float = 1.0
    power_standby: float = 0.01


@dataclass(frozen=True)
class UeSpec:
    id: int
    coverage: frozenset[int]
    mean_on: float  # mean ON sojourn, 1/r_on
    mean_off: float  # mean OFF sojourn, 1/r_off

    @property
    def off_rate(self) -> float:
        """Rate of leaving ON."""
        return 1.0 / self.mean_on

    @property
    def on_rate(self) -> float:
        """Rate of leaving OFF."""
        return 1.0 / self.mean_off


@dataclass(frozen=True)
class ScenarioConfig:
    rcs: tuple[RcSpec, ...]
    ues: tuple[UeSpec, ...]
    default_rate: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        rc_ids = [rc.id for rc in self.rcs]
        ue_ids = [ue.id for ue in self.ues]
        if not self.rcs:
            raise ValueError("scenario needs at least one RC")
        if len(set(rc_ids)) != len(rc_ids) or len(set(ue_ids)) != len(ue_ids):
            raise ValueError("RC and UE ids must be unique")
        if sorted(rc_ids) != list(range(1, len(rc_ids) + 1)):
            raise ValueError(f"RC ids must be 1..{len(rc_ids)}, got {sorted(rc_ids)}")
        if any(i < 1 for i in ue_ids):
            raise ValueError("UE ids are 1-based")
        if not self.default_rate > 0:
            raise ValueError("default_rate must be positive")
        for rc in self.rcs:
            if rc.capacity < 1:
                raise ValueError(f"RC{rc.id}: capacity must be >= 1")
            if not 0 <= rc.power_standby <= rc.power_operating:
                raise ValueError(f"RC{rc.id}: need 0 <= power_standby <= power_operating")
        for ue in self.ues:
            if not ue.coverage:
                raise ValueError(f"UE{ue.id}: empty coverage")
            if not ue.coverage <= set(rc_ids):
                raise ValueError(f"UE{ue.id}: coverage {sorted(ue.coverage)} names unknown RCs")
            if not (ue.mean_on > 0 and ue.mean_off > 0):
                raise ValueError(f"UE{ue.id}: sojourn means must be positive")

    def rc(self, rc_id: int) -> RcSpec:
        return next(rc for rc in self.rcs if rc.id == rc_id)

    def ue(self, ue_id: int) -> UeSpec:
        return next(ue for ue in self.ues if ue.id == ue_id)

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "default_rate": self.default_rate,
            "rcs": [asdict(rc) for rc in self.rcs],
            "ues": [
                {"id": ue.id, "coverage": sorted(ue.coverage), "mean_on": ue.mean_on, "mean_off": ue.mean_off}
                for ue in self.ues
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "ScenarioConfig":
        unknown = set(data) - {"default_rate", "rcs", "ues", "name"}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        rcs = tuple(
            RcSpec(
                int(rc["id"]),
                int(rc["capacity"]),
                float(rc.get("power_operating", 1.0)),
                float(rc.get("power_standby", 0.01)),
            )
            for rc in data["rcs"]
        )
        ues = tuple(
            UeSpec(int(ue["id"]), frozenset(int(c) for c in ue["coverage"]), float(ue["mean_on"]), float(ue["mean_off"]))
            for ue in data["ues"]
        )
        return cls(rcs, ues, float(data.get("default_rate", 1.0)), name=name or data.get("name", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return ScenarioConfig.from_dict(json.loads(path.read_text()), name=path.stem)


def preset(name: str) -> ScenarioConfig:
    """One of the six shipped configurations ``cnf1`` .. ``cnf6``."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("oran_verifier").joinpath(f"presets/{name}.json").read_text()
    return ScenarioConfig.from_dict(json.loads(text), name=name)


def subset(cfg: ScenarioConfig, ue_ids) -> ScenarioConfig:
    """The same scenario restricted to the given UEs."""
    keep = set(ue_ids)
    return replace(cfg, ues=tuple(ue for ue in cfg.ues if ue.id in keep))


# ---------------------------------------------------------------------------
# model generation


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _room(i: int) -> str:
    return f"rc{i}_on & rc{i}_serving<rc{i}_capacity"


def generate_model_text(cfg: ScenarioConfig) -> str:
    """Model source implementing the switching policy for ``cfg``."""
    if cfg.default_rate != 1.0:
        warnings.warn(
            f"default_rate={cfg.default_rate}: synchronised commands multiply rates, "
            "so connect/disconnect rates scale quadratically",
            stacklevel=2,
        )
    rcs = [rc.id for rc in sorted(cfg.rcs, key=lambda r: r.id)]
    ues = sorted(cfg.ues, key=lambda u: u.id)
    covering = {i: [ue.id for ue in ues if i in ue.coverage] for i in rcs}
    uniform_power = len({(rc.power_operating, rc.power_standby) for rc in cfg.rcs}) == 1

    out = ["ctmc", ""]
    out.append(f"const double default_rate = {_num(cfg.default_rate)};")
    out.append(f"const int N_RCs = {len(rcs)};")
    out += [f"const int rc{i}_id = {i};" for i in rcs]
    out += [f"const int rc{i}_capacity = {cfg.rc(i).capacity};" for i in rcs]
    if uniform_power:
        out.append(f"const double power_consumption_rc_on = {_num(cfg.rcs[0].power_operating)};")
        out.append(f"const double power_consumption_rc_off = {_num(cfg.rcs[0].power_standby)};")
    else:
        for i in rcs:
            out.append(f"const double power_consumption_rc{i}_on = {_num(cfg.rc(i).power_operating)};")
            out.append(f"const double power_consumption_rc{i}_off = {_num(cfg.rc(i).power_standby)};")

    for i in rcs:
        serving = f"rc{i}_serving"
        out += ["", f"module rc{i}"]
        out.append(f"  rc{i}_on : bool init false;")
        out.append(f"  {serving} : [0..rc{i}_capacity] init 0;")
        out.append(f"  [rc{i}_off] {serving}=0 & rc{i}_on -> default_rate : (rc{i}_on'=false) & ({serving}'=0);")
        for j in covering[i]:
            out.append(
                f"  [ue{j}_to_rc{i}] {serving}<rc{i}_capacity & rc{i}_on -> default_rate : "
                f"({serving}'={serving}+1);"
            )
        for j in covering[i]:
            out.append(
                f"  [ue{j}_on_rc{i}] {serving}=0 & !rc{i}_on -> default_rate : "
                f"(rc{i}_on'=true) & ({serving}'={serving}+1);"
            )
        for j in covering[i]:
            out.append(
                f"  [ue{j}_from_rc{i}] {serving}>0 & rc{i}_on -> default_rate : "
                f"({serving}'={serving}-1);"
            )
        out.append("endmodule")

    for ue in ues:
        j = ue.id
        out.append("")
        out.append(f"const double ue{j}_off_rate = {_num(ue.off_rate)};")
        out.append(f"const double ue{j}_on_rate = {_num(ue.on_rate)};")
        out += [f"const bool ue{j}_within_rc{i} = {'true' if i in ue.coverage else 'false'};" for i in rcs]
        out.append(f"module ue{j}")
        out.append(f"  ue{j}_on : bool init false;")
        out.append(f"  ue{j}_rc : [0..N_RCs] init 0;")
        out.append(f"  [] ue{j}_on -> ue{j}_off_rate : (ue{j}_on'=false);")
        out.append(f"  [] !ue{j}_on -> ue{j}_on_rate : (ue{j}_on'=true);")
        idle = f"ue{j}_on & ue{j}_rc=0"
        for i in sorted(ue.coverage):
            out.append(
                f"  [ue{j}_to_rc{i}] {idle} & ue{j}_within_rc{i} & {_room(i)} -> default_rate : "
                f"(ue{j}_rc'=rc{i}_id);"
            )
        none_free = " & ".join(f"!(ue{j}_within_rc{k} & {_room(k)})" for k in rcs)
        for i in sorted(ue.coverage):
            out.append(
                f"  [ue{j}_on_rc{i}] {idle} & {none_free} & (ue{j}_within_rc{i} & !rc{i}_on) -> default_rate : "
                f"(ue{j}_rc'=rc{i}_id);"
            )
        for i in sorted(ue.coverage):
            out.append(
                f"  [ue{j}_from_rc{i}] !ue{j}_on & ue{j}_rc=rc{i}_id -> default_rate : (ue{j}_rc'=0);"
            )
        out.append("endmodule")

    for reward, flag, attr in (("standby", "!", "off"), ("operating", "", "on")):
        out += ["", f'rewards "{reward}"']
        for i in rcs:
            const = f"power_consumption_rc_{attr}" if uniform_power else f"power_consumption_rc{i}_{attr}"
            out.append(f"  {flag}rc{i}_on : {const};")
        out.append("endrewards")
    return "\n".join(out) + "\n"


def generate_model(cfg: ScenarioConfig) -> ir.ModelIR:
    return parse_model(generate_model_text(cfg))


def generate_properties(cfg: ScenarioConfig, t_values) -> str:
    """Property suite P1-P4 for ``cfg``; P4 uses the symbolic bound ``t``."""
    t_values = [float(t) for t in t_values]
    if not t_values or any(t < 0 for t in t_values):
        raise ValueError("t_values must be a non-empty list of non-negative bounds")
    lines = ["// t-values: " + ",".join(_num(t) for t in t_values)]
    lines.append('"P1": R{"standby"}=?[S]')
    lines.append('"P2": R{"operating"}=?[S]')
    for rc in sorted(cfg.rcs, key=lambda r: r.id):
        lines.append(f'"P3.{rc.id}": S=? [rc{rc.id}_on]')
    for ue in sorted(cfg.ues, key=lambda u: u.id):
        j = ue.id
        lines.append(f'"P4.{j}": filter(min, P=? [F<=t ue{j}_rc>0], ue{j}_on & ue{j}_rc=0)')
    return "\n".join(lines) + "\n"


def sync_labels(model: ir.ModelIR) -> set[str]:
    """Action labels shared by more than one module."""
    owners: dict[str, int] = {}
    for m in model.modules:
        for a in m.alphabet:
            owners[a] = owners.get(a, 0) + 1
    return {a for a, n in owners.items() if n > 1}


# ---------------------------------------------------------------------------
# coupling invariants (checked during exploration)


def coupling_invariants(cfg: ScenarioConfig):
    """``(name, check)`` pairs; ``check(columns)`` returns a mask of violating states."""

    def serving_matches(cols):
        bad = np.zeros(len(next(iter(cols.values()))), dtype=bool)
        for rc in cfg.rcs:
            count = sum((cols[f"ue{ue.id}_rc"] == rc.id).astype(np.int64) for ue in cfg.ues)
            bad |= cols[f"rc{rc.id}_serving"] != count
        return bad

    def standby_empty(cols):
        return np.logical_or.reduce(
            [(cols[f"rc{rc.id}_on"] == 0) & (cols[f"rc{rc.id}_serving"] > 0) for rc in cfg.rcs]
        )

    def connected_covered(cols):
        bad = np.zeros(len(next(iter(cols.values()))), dtype=bool)
        for ue in cfg.ues:
            rc = cols[f"ue{ue.id}_rc"]
            bad |= (rc > 0) & ~np.isin(rc, sorted(ue.coverage))
        return bad

    def within_capacity(cols):
        return np.logical_or.reduce([cols[f"rc{rc.id}_serving"] > rc.capacity for rc in cfg.rcs])

    return [
        ("serving equals connected UEs", serving_matches),
        ("standby RC serves nobody", standby_empty),
        ("UE connected only to covering RC", connected_covered),
        ("serving within capacity", within_capacity),
    ]
