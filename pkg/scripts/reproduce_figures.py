"""Regenerate the per-RC occupancy and availability-curve data for all presets.

Usage: python scripts/reproduce_figures.py [--out figures] [--reuse] [--presets cnf1,cnf3]

Runs ``sweep --props all --t 1..15`` for every preset (one results CSV per
preset under ``<out>/runs``), then writes plot-ready tables:

  rc_occupancy.csv     config, P3.1, P3.2, P3.3
  power.csv            config, P1, P2
  p4_cnf1.csv          t, UE1..UE9 for cnf1
  p4_ue4.csv           t, cnf1..cnf6
  p4_ue8.csv           t, cnf1..cnf6
"""

import argparse
import csv
from pathlib import Path

from oran_verifier import cli, scenario


def run_preset(name, runs: Path, reuse: bool) -> dict:
    path = runs / f"{name}.csv"
    if not (reuse and path.exists()):
        code = cli.run(["sweep", "--preset", name, "--props", "all", "--t", "1..15",
                        "--out", str(path), "--manifest", str(runs / f"{name}.json")])
        if code != 0:
            raise SystemExit(f"sweep for {name} failed with exit code {code}")
    values = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t"]) if row["t"] else None
            values[(row["property_id"], t)] = row["value"]
    return values


def write(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="figures")
    ap.add_argument("--reuse", action="store_true", help="keep existing per-preset result CSVs")
    ap.add_argument("--presets", default=",".join(scenario.PRESETS))
    args = ap.parse_args()
    out = Path(args.out)
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    names = [n for n in args.presets.split(",") if n]
    results = {name: run_preset(name, runs, args.reuse) for name in names}
    ts = [float(t) for t in range(1, 16)]

    write(out / "rc_occupancy.csv", ["config", "P3.1", "P3.2", "P3.3"],
          [[n] + [results[n][(f"P3.{i}", None)] for i in (1, 2, 3)] for n in names])
    write(out / "power.csv", ["config", "P1", "P2"],
          [[n, results[n][("P1", None)], results[n][("P2", None)]] for n in names])
    if "cnf1" in results:
        write(out / "p4_cnf1.csv", ["t"] + [f"UE{j}" for j in range(1, 10)],
              [[int(t)] + [results["cnf1"][(f"P4.{j}", t)] for j in range(1, 10)] for t in ts])
    for ue in (4, 8):
        write(out / f"p4_ue{ue}.csv", ["t"] + names,
              [[int(t)] + [results[n][(f"P4.{ue}", t)] for n in names] for t in ts])


if __name__ == "__main__":
    main()
