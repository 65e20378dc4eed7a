"""Run artifacts: JSON-lines event log, CSV time series, metrics.

Every run directory carries the same fixed-schema files so downstream
tooling can validate by column name. Metrics are derived from the
event log alone, which keeps them recomputable from archived runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

POPULATION_COLUMNS = ("t", "population", "pp_count", "coins_available",
                      "coins_collected", "births", "deaths")
BIRTH_COLUMNS = ("t", "ent_id", "mother_id", "father_id", "mother_age",
                 "theta_c1", "theta_c2", "theta_c3", "theta_c4",
                 "theta_consumption", "theta_reproduction")
GENE_COLUMNS = tuple(f"g{i:02d}" for i in range(70))
EXPECTATION_COLUMNS = ("component", "bin", "value")
TRAINING_COLUMNS = ("step", "t", "reward", "population", "births", "resets")
SENSITIVITY_COLUMNS = ("rate", "seed", "final_population", "collapsed",
                       "collapse_time")

CSV_SCHEMAS = {
    "population.csv": POPULATION_COLUMNS,
    "births.csv": BIRTH_COLUMNS + GENE_COLUMNS,
    "expectations.csv": EXPECTATION_COLUMNS,
    "training_curve.csv": TRAINING_COLUMNS,
    "sensitivity.csv": SENSITIVITY_COLUMNS,
}


def write_events(path, events) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps(ev, sort_keys=True))
            f.write("\n")


def read_events(path) -> list[dict]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        writer.writerows(rows)


def write_expectations_csv(path, table: np.ndarray) -> None:
    from .rule import COMPONENTS
    rows = []
    for i, name in enumerate(COMPONENTS):
        for b in range(table.shape[1]):
            rows.append((name, b, repr(float(table[i, b]))))
    write_csv(path, EXPECTATION_COLUMNS, rows)


def read_expectations_csv(path) -> np.ndarray:
    from .rule import COMPONENTS
    index = {name: i for i, name in enumerate(COMPONENTS)}
    cells = {}
    bins = 0
    with open(path) as f:
        reader = csv.DictReader(f)
        for row in reader:
            i = index[row["component"]]
            b = int(row["bin"])
            bins = max(bins, b + 1)
            cells[(i, b)] = float(row["value"])
    table = np.zeros((len(COMPONENTS), bins))
    for (i, b), v in cells.items():
        table[i, b] = v
    return table


@dataclass
class RunMetrics:
    """Aggregates derivable from one run's event log."""

    initial_population: int = 0
    population_steps: list = field(default_factory=list)  # (step, count)
    birth_records: list = field(default_factory=list)     # event payloads + t
    death_steps: list = field(default_factory=list)
    coins_spawned: int = 0
    coins_collected: int = 0
    pickup_steps: list = field(default_factory=list)      # coin-kind pickups
    theta_updates: int = 0
    param_updates: int = 0
    gene_changes: int = 0
    survived: bool = True
    collapse_time: float | None = None
    end_time: float | None = None
    partial: bool = False

    def theta4_series(self):
        """(t, theta4) per birth, in birth order."""
        return [(r["t"], r["theta"][3]) for r in self.birth_records]

    def theta_series(self, component: int):
        return [(r["t"], r["theta"][component]) for r in self.birth_records]

    def population_at_end(self) -> int:
        return self.population_steps[-1][1] if self.population_steps \
            else self.initial_population


def extract_metrics(events, dt: float = 0.02) -> RunMetrics:
    """Deterministic aggregation over an event stream.

    Safe to re-run; a log without a ``run_end`` record is flagged
    partial and aggregated as far as it goes.
    """
    m = RunMetrics()
    population = 0
    saw_end = False
    baseline_gene = None
    for ev in events:
        kind = ev["type"]
        step = ev["step"]
        payload = ev.get("payload", {})
        t = step * dt
        if kind == "run_start":
            population = payload["n_ents"]
            m.initial_population = population
            m.population_steps.append((step, population))
        elif kind == "birth":
            population += 1
            m.population_steps.append((step, population))
            rec = dict(payload)
            rec["t"] = t
            rec["ent_id"] = ev["entId"]
            m.birth_records.append(rec)
            if baseline_gene is None:
                baseline_gene = payload.get("gene")
            elif payload.get("gene") is not None:
                same = all(a == b for a, b in zip(baseline_gene,
                                                  payload["gene"]))
                if not same:
                    m.gene_changes += 1
        elif kind == "death":
            population -= 1
            m.population_steps.append((step, population))
            m.death_steps.append(step)
        elif kind == "coin_spawn":
            m.coins_spawned += payload["count"]
        elif kind == "pickup" and payload.get("kind") == "coin":
            m.coins_collected += 1
            m.pickup_steps.append(step)
        elif kind == "theta_change":
            m.theta_updates += 1
        elif kind == "param_update":
            m.param_updates += 1
        elif kind == "collapse":
            m.survived = False
            m.collapse_time = payload["time"]
        elif kind == "run_end":
            saw_end = True
            m.end_time = payload.get("time")
    m.partial = not saw_end
    return m


def population_series(metrics: RunMetrics, total_steps: int) -> np.ndarray:
    """Dense per-step population curve recomputed from the log."""
    out = np.zeros(total_steps + 1, dtype=int)
    level = metrics.initial_population
    pointer = 0
    changes = metrics.population_steps
    for step in range(total_steps + 1):
        while pointer < len(changes) and changes[pointer][0] <= step:
            level = changes[pointer][1]
            pointer += 1
        out[step] = level
    return out


def write_run_artifacts(out_dir, world, samples, births, manifest) -> None:
    """Standard per-run files: events, CSVs, manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_events(out / "events.jsonl", world.events)
    write_csv(out / "population.csv", POPULATION_COLUMNS, samples)
    rows = []
    for b in births:
        rows.append((b["t"], b["ent_id"], b["mother"], b["father"],
                     b["mother_age"], *[repr(x) for x in b["theta"]],
                     *[repr(x) for x in b["gene"]]))
    write_csv(out / "births.csv", BIRTH_COLUMNS + GENE_COLUMNS, rows)
    manifest = dict(manifest)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["csv_schemas"] = {k: list(v) for k, v in CSV_SCHEMAS.items()}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
