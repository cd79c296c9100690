"""Benchmark report container: CSV and line-delimited JSON output.

Every metric row carries the parameters needed to reproduce it and, when it
aggregates repetitions, a 95% confidence interval over the repetition
values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sstats

__all__ = ["MetricRow", "BenchReport", "confidence_interval"]


def confidence_interval(values: list[float], level: float = 0.95) -> tuple[float, float]:
    """Two-sided t-interval for the mean of the repetition values."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return (float(arr[0]), float(arr[0])) if arr.size else (math.nan, math.nan)
    mean = float(arr.mean())
    sem = float(arr.std(ddof=1) / math.sqrt(arr.size))
    if sem == 0.0:
        return mean, mean
    half = float(sstats.t.ppf((1 + level) / 2, arr.size - 1)) * sem
    return mean - half, mean + half


@dataclass
class MetricRow:
    scenario: str
    metric: str
    value: float
    unit: str
    params: dict = field(default_factory=dict)
    ci_low: float = math.nan
    ci_high: float = math.nan
    repetitions: int = 1

    @classmethod
    def from_samples(cls, scenario: str, metric: str, unit: str, samples: list[float], params: dict) -> "MetricRow":
        low, high = confidence_interval(samples)
        return cls(
            scenario=scenario,
            metric=metric,
            value=float(np.median(samples)),
            unit=unit,
            params=params,
            ci_low=low,
            ci_high=high,
            repetitions=len(samples),
        )

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "metric": self.metric,
            "value": self.value,
            "unit": self.unit,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "repetitions": self.repetitions,
            "params": self.params,
        }


@dataclass
class BenchReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def extend(self, other: "BenchReport") -> None:
        self.rows.extend(other.rows)

    def value(self, scenario: str, metric: str, **params) -> float:
        """Look up a single metric value; raises when absent or ambiguous."""
        matches = [
            r
            for r in self.rows
            if r.scenario == scenario
            and r.metric == metric
            and all(r.params.get(k) == v for k, v in params.items())
        ]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} rows match {scenario}/{metric} {params}")
        return matches[0].value

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "metric", "value", "unit", "ci_low", "ci_high", "repetitions", "params"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.scenario,
                        row.metric,
                        f"{row.value:.6g}",
                        row.unit,
                        f"{row.ci_low:.6g}",
                        f"{row.ci_high:.6g}",
                        row.repetitions,
                        json.dumps(row.params, sort_keys=True),
                    ]
                )

    def to_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row.as_dict(), sort_keys=True) + "\n")

    def print_summary(self) -> None:
        for row in self.rows:
            params = " ".join(f"{k}={v}" for k, v in sorted(row.params.items()))
            print(f"{row.scenario:30s} {row.metric:28s} {row.value:>14.4g} {row.unit:12s} {params}")
