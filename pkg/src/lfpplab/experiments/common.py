"""Helpers shared by the experiment runners."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..gff import GridField, GridSpec, deterministic_field, sample_gff
from ..scaling import replica_seeds
from .config import ConfigError, ExperimentConfig
from .report import ExperimentReport


class Normalizer:
    """Provides a_eps: from the scaling table if configured, else the power law eps^(1 - xi q).

    ``q`` is also the exponent used for coordinate changes: the fitted q_hat of the
    table when there is one, else the configured value.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.table = cfg.table()
        self.xi = cfg.params.xi
        self.q = cfg.params.q
        if self.table is not None and self.table.q_hat is not None:
            self.q = self.table.q_hat
        self.kind = "table" if self.table is not None else "power-law"

    def __call__(self, eps: float) -> float:
        if self.table is not None:
            try:
                return self.table.a(eps)
            except ValueError as exc:
                raise ConfigError(f"scaling.table: {exc}") from None
        return eps ** (1 - self.xi * self.q)

    def ratio(self, r: float, eps: float) -> float:
        """r a(eps / r) / (r^{xi q} a(eps)), the scaling-ratio factor."""
        if r == 1:
            return 1.0
        return r * self(eps / r) / (r ** (self.xi * self.q) * self(eps))


def base_field(cfg: ExperimentConfig, spec: GridSpec, seed: int) -> GridField:
    if cfg.field == "constant":
        return deterministic_field(spec, cfg.constant)
    return sample_gff(spec, cfg.torus_factor, seed)


def seeds(cfg: ExperimentConfig, n: int | None = None, stream: int = 0) -> list[int]:
    """Per-replica seeds; ``stream`` separates independent uses of one master seed."""
    master = int(np.random.SeedSequence([cfg.seed, stream]).generate_state(1)[0])
    return replica_seeds(master, n or cfg.replicas)


def run_jobs(fn, jobs: list, workers: int = 1) -> list:
    """Map ``fn`` over ``jobs``, preserving order."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def new_report(cfg: ExperimentConfig, name: str, family=None, **extra) -> ExperimentReport:
    rep = ExperimentReport(name, cfg.echo())
    rep.set_provenance(cfg.seed, family.describe() if family is not None else None, replicas=cfg.replicas, **extra)
    return rep


def nonincreasing(values, rtol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] * (1 + rtol) + 1e-300))


def nondecreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] >= v[:-1]))


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] < v[:-1]))


def loglog_slope(eps, values) -> float:
    """Least-squares slope of log(values) against log(eps)."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def disk_probes(z0: complex, radius: float, n_ring: int = 8) -> np.ndarray:
    """Center plus ``n_ring`` points on each of the circles of radius radius/2 and radius."""
    ang = np.exp(2j * np.pi * np.arange(n_ring) / n_ring)
    return np.concatenate([[z0], z0 + 0.5 * radius * ang, z0 + radius * ang])


def region_center(region) -> complex:
    x0, x1, y0, y1 = region.bbox()
    return complex((x0 + x1) / 2, (y0 + y1) / 2)
