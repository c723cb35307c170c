"""Structured experiment reports (JSON plus a per-row CSV table)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .. import __version__
from ..kernels import PSI_PROFILE_ID

EXACT = "exact"
QUADRATURE = "quadrature"
MONTE_CARLO = "monte-carlo"
DERIVED = "derived"
CONFIG = "config"
ESTIMATORS = (EXACT, QUADRATURE, MONTE_CARLO, DERIVED, CONFIG)


def wilson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for k successes in n trials."""
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else ("inf" if math.isinf(v) else v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


@dataclass
class ExperimentReport:
    """Metric rows, each numeric column tagged with how it was obtained."""

    name: str
    config: dict
    estimators: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    indicators: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def declare(self, **columns: str) -> None:
        for col, kind in columns.items():
            if kind not in ESTIMATORS:
                raise ValueError(f"unknown estimator type {kind!r}")
            self.estimators[col] = kind

    def add_row(self, **values) -> None:
        for k, v in values.items():
            numeric = isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, (bool, np.bool_))
            if numeric and k not in self.estimators:
                raise ValueError(f"column {k!r} has no declared estimator type")
        self.rows.append(values)

    def flag(self, name: str, value: bool) -> None:
        self.flags[name] = bool(value)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def column(self, name: str, **where) -> np.ndarray:
        """Values of ``name`` from the rows that carry it and match ``where``."""
        sel = [r for r in self.rows if name in r and all(r.get(k) == v for k, v in where.items())]
        return np.array([r[name] for r in sel], dtype=float)

    def set_provenance(self, seed: int, family: dict | None = None, **extra) -> None:
        self.provenance = {"code_version": __version__, "kernel_profile": PSI_PROFILE_ID,
                           "master_seed": int(seed), "family": family, **extra}

    def to_dict(self) -> dict:
        return _clean({"name": self.name, "passed": self.passed, "flags": self.flags,
                       "indicators": self.indicators, "estimators": self.estimators,
                       "rows": self.rows, "notes": self.notes, "config": self.config,
                       "provenance": self.provenance})

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path: str | Path) -> None:
        cols = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for r in self.rows:
                out = []
                for c in cols:
                    v = _clean(r.get(c, ""))
                    out.append(repr(v) if isinstance(v, float) else ("" if v is None else v))
                wr.writerow(out)

    def write(self, outdir: str | Path) -> list[Path]:
        d = Path(outdir)
        d.mkdir(parents=True, exist_ok=True)
        j, c = d / f"{self.name}.json", d / f"{self.name}.csv"
        self.to_json(j)
        self.to_csv(c)
        return [j, c]
