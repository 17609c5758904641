"""Comma-separated metrics log with a fixed per-run schema.

Reals are written with 17 significant digits so reading them back gives the
exact same float64. An empty cell means "not measured in this row".
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

from ..errors import SchemaError

TRAIN_KEYS = ("value_loss", "critic_grad_norm", "average_step_rewards", "train_episode_reward")
EVAL_KEYS = ("eval_average_episode_rewards", "eval_max_episode_rewards")


def metric_keys(algo: str, learners: list[int]) -> list[str]:
    """Column order: timestep, per-agent actor stats, shared stats, eval, alpha."""
    per_agent = ["policy_loss", "dist_entropy", "actor_grad_norm"]
    if algo == "happo":
        per_agent.append("imp_weights_mean")
    keys = ["timestep"]
    for name in per_agent:
        keys += [f"{name}/agent{k}" for k in learners]
    keys += [*TRAIN_KEYS, *EVAL_KEYS]
    if algo == "hasac":
        keys.append("alpha")
    return keys


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "nan"
    return "%.17g" % value


def parse_value(text: str) -> Optional[float]:
    return None if text == "" else float(text)


class MetricsWriter:
    """Appends rows to a metrics file; every row must use the run's schema."""

    def __init__(self, path: str | Path, keys: list[str], resume_from: Optional[int] = None):
        self.path = Path(path)
        self.keys = list(keys)
        self.rows_written = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if resume_from is not None and self.path.exists():
            header, rows = read_metrics(self.path)
            if header != self.keys:
                raise SchemaError(f"metrics schema in {self.path} differs from this run")
            kept = [r for r in rows if r["timestep"] is not None and r["timestep"] <= resume_from]
            self._rewrite(kept)
        else:
            self._rewrite([])

    def _rewrite(self, rows: list[dict]) -> None:
        with self.path.open("w", newline="") as fh:
            fh.write(",".join(self.keys) + "\n")
            for row in rows:
                fh.write(self._line(row))

    def _line(self, row: dict) -> str:
        return ",".join(format_value(row.get(k)) for k in self.keys) + "\n"

    def write(self, row: dict) -> None:
        extra = set(row) - set(self.keys)
        if extra:
            raise SchemaError(f"metrics schema drift: unexpected keys {sorted(extra)}")
        if row.get("timestep") is None:
            raise SchemaError("metrics row needs a timestep")
        with self.path.open("a", newline="") as fh:
            fh.write(self._line(row))
        self.rows_written += 1


def read_metrics(path: str | Path) -> tuple[list[str], list[dict]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for line in reader:
            if len(line) != len(header):
                raise ValueError(f"row has {len(line)} cells, header has {len(header)}")
            row = {k: parse_value(v) for k, v in zip(header, line)}
            if row["timestep"] is not None:
                row["timestep"] = int(row["timestep"])
            rows.append(row)
    return header, rows
