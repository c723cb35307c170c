"""Monte Carlo estimates of the crossing medians a_eps and the exponent fit."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .gff import GridSpec, heat_mollify, heat_radius, localized_mollify, sample_gff
from .lfpp import build_graph, set_distance
from .regions import Rectangle

log = logging.getLogger(__name__)

UNIT_SQUARE = Rectangle(0.0, 1.0, 0.0, 1.0)
LEFT_EDGE = Rectangle(-1e-9, 1e-9, 0.0, 1.0)
RIGHT_EDGE = Rectangle(1 - 1e-9, 1 + 1e-9, 0.0, 1.0)
TABLE_COLUMNS = ("eps", "a_hat", "stderr", "n_samples", "spacing", "xi")


@dataclass(frozen=True)
class ScalingEntry:
    eps: float
    a_hat: float
    stderr: float
    n_samples: int
    spacing: float
    samples: tuple = field(default=(), repr=False, compare=False)


def replica_seeds(seed: int, n: int) -> list[int]:
    """Independent per-replica seeds derived from (master seed, replica index)."""
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def crossing_window(eps: float, spacing: float) -> GridSpec:
    m = heat_radius(eps)
    return GridSpec.covering(-m, 1 + m, -m, 1 + m, spacing)


def crossing_distance(eps: float, xi: float, spacing: float, seed: int, torus_factor: float = 2.0,
                      variance: float = 1.0, kernel: str = "heat", shift: float = 0.0) -> float:
    """Left-right crossing distance of [0,1]^2 for one GFF replica."""
    spec = crossing_window(eps, spacing)
    h = sample_gff(spec, torus_factor, seed, variance)
    m = heat_mollify(h, eps) if kernel == "heat" else localized_mollify(h, eps)
    if shift:
        from .gff import add_scalar
        m = add_scalar(m, shift)
    g = build_graph(m, UNIT_SQUARE, xi)
    return float(set_distance(g, LEFT_EDGE, RIGHT_EDGE).raw)


def _crossing_job(args):
    return crossing_distance(*args)


def bootstrap_median(samples, seed: int, n_resamples: int = 1000) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    med = float(np.median(x))
    if x.size < 2 or np.ptp(x) == 0:
        return med, 0.0
    res = stats.bootstrap((x,), np.median, n_resamples=n_resamples, method="percentile",
                          random_state=np.random.default_rng(seed), vectorized=True)
    return med, float(res.standard_error)


def estimate_a_eps(eps: float, xi: float, spacing: float, n_samples: int, seed: int,
                   torus_factor: float = 2.0, variance: float = 1.0, workers: int = 1,
                   kernel: str = "heat") -> ScalingEntry:
    """Median left-right crossing of the unit square over ``n_samples`` replicas."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if eps < 2 * spacing:
        raise ValueError(f"spacing {spacing} too coarse for eps={eps}")
    if spacing > eps / 4:
        log.warning("spacing %g exceeds eps/4 for eps=%g", spacing, eps)
    seeds = replica_seeds(seed, n_samples)
    jobs = [(eps, xi, spacing, s, torus_factor, variance, kernel) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            vals = list(ex.map(_crossing_job, jobs))
    else:
        vals = [_crossing_job(j) for j in jobs]
    med, se = bootstrap_median(vals, seed)
    return ScalingEntry(eps, med, se, n_samples, spacing, tuple(vals))


@dataclass(frozen=True)
class ScalingTable:
    xi: float
    entries: tuple
    q_hat: float | None = None

    def __post_init__(self):
        ents = tuple(sorted(self.entries, key=lambda e: -e.eps))
        eps = [e.eps for e in ents]
        if len(set(eps)) != len(eps):
            raise ValueError("duplicate eps in scaling table")
        for e in ents:
            if not (e.eps > 0 and e.a_hat > 0 and e.n_samples >= 1):
                raise ValueError(f"invalid table entry {e}")
        object.__setattr__(self, "entries", ents)

    @classmethod
    def power_law(cls, xi: float, q: float, eps_values, c: float = 1.0) -> "ScalingTable":
        ents = [ScalingEntry(e, c * e ** (1 - xi * q), 0.0, 1, 0.0) for e in eps_values]
        return cls(xi, tuple(ents), q)

    @property
    def eps(self) -> np.ndarray:
        return np.array([e.eps for e in self.entries])

    @property
    def a_hat(self) -> np.ndarray:
        return np.array([e.a_hat for e in self.entries])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])

    def with_fit(self) -> "ScalingTable":
        return replace(self, q_hat=fit_exponent(self).q_hat)

    def _interp(self, eps: float, values: np.ndarray) -> float:
        e = self.eps[::-1]
        v = values[::-1]
        le = math.log(eps)
        lo, hi = math.log(e[0]), math.log(e[-1])
        tol = 1e-12 * max(1.0, abs(le))
        if le < lo - tol or le > hi + tol:
            raise ValueError(f"eps={eps} outside table range [{e[0]}, {e[-1]}]; extrapolation refused")
        k = np.flatnonzero(np.isclose(e, eps, rtol=1e-12, atol=0))
        if k.size:
            return float(v[k[0]])
        return float(np.interp(le, np.log(e), v))

    def a(self, eps: float) -> float:
        """a_hat at eps, log-linear interpolation in log eps."""
        return math.exp(self._interp(eps, np.log(self.a_hat)))

    def rel_stderr(self, eps: float) -> float:
        return self._interp(eps, self.stderr / self.a_hat)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TABLE_COLUMNS)
            for e in self.entries:
                wr.writerow([repr(e.eps), repr(e.a_hat), repr(e.stderr), e.n_samples, repr(e.spacing), repr(self.xi)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScalingTable":
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            missing = set(TABLE_COLUMNS) - set(rd.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: scaling table missing columns {sorted(missing)}")
            rows = list(rd)
        if not rows:
            raise ValueError(f"{path}: empty scaling table")
        xis = {float(r["xi"]) for r in rows}
        if len(xis) != 1:
            raise ValueError(f"{path}: mixed xi values")
        ents = [ScalingEntry(float(r["eps"]), float(r["a_hat"]), float(r["stderr"]), int(r["n_samples"]),
                             float(r["spacing"])) for r in rows]
        return cls(xis.pop(), tuple(ents))


def build_table(eps_values, xi: float, spacing_fn, n_samples: int, seed: int, **kw) -> ScalingTable:
    """One entry per eps; replica seeds differ across eps via the eps index."""
    ss = np.random.SeedSequence(seed).spawn(len(eps_values))
    ents = []
    for e, child in zip(eps_values, ss):
        sub = int(child.generate_state(1, dtype=np.uint64)[0])
        ents.append(estimate_a_eps(e, xi, spacing_fn(e), n_samples, sub, **kw))
        log.info("eps=%g a_hat=%g +- %g", e, ents[-1].a_hat, ents[-1].stderr)
    return ScalingTable(xi, tuple(ents)).with_fit()


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    q_hat: float
    residuals: np.ndarray
    ci: tuple[float, float] | None = None


def fit_exponent(table: ScalingTable) -> ExponentFit:
    """Least-squares slope of log a_hat against log eps; q_hat = (1 - slope) / xi."""
    e = table.eps
    if e.size < 3:
        raise ValueError("need at least 3 table entries")
    if e.max() / e.min() < 4 * (1 - 1e-12):
        raise ValueError("eps values must span at least two dyadic octaves")
    x, y = np.log(e), np.log(table.a_hat)
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    return ExponentFit(float(slope), float(intercept), float((1 - slope) / table.xi), res)


def fit_exponent_ci(table: ScalingTable, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> ExponentFit:
    """Fit plus a parametric bootstrap interval for q_hat, resampling each log a_hat
    with its Monte Carlo standard error."""
    fit = fit_exponent(table)
    rng = np.random.default_rng(seed)
    x = np.log(table.eps)
    sig = table.stderr / table.a_hat
    ys = np.log(table.a_hat)[None, :] + rng.standard_normal((n_boot, x.size)) * sig[None, :]
    slopes = np.polyfit(x, ys.T, 1)[0]
    qs = (1 - slopes) / table.xi
    lo, hi = np.quantile(qs, [(1 - level) / 2, (1 + level) / 2])
    return replace(fit, ci=(float(lo), float(hi)))


def _q(table: ScalingTable, q: float | None) -> float:
    if q is not None:
        return q
    if table.q_hat is not None:
        return table.q_hat
    return fit_exponent(table).q_hat


def scaling_ratio(table: ScalingTable, r: float, eps: float, t: float, q: float | None = None) -> float:
    """r a(eps t / r) / (r^{xi q} a(eps t))."""
    if r == 1:
        table.a(eps * t)
        return 1.0
    qq = _q(table, q)
    return r * table.a(eps * t / r) / (r ** (table.xi * qq) * table.a(eps * t))


@dataclass(frozen=True)
class VariationRow:
    eps: float
    deviation: float
    stderr: float

    @property
    def within(self) -> bool:
        return self.deviation <= 2 * self.stderr


@dataclass(frozen=True)
class VariationReport:
    C: float
    q_hat: float
    rows: tuple
    trend: str

    @property
    def all_within(self) -> bool:
        return all(r.within for r in self.rows)


def regular_variation_check(table: ScalingTable, C: float, q: float | None = None,
                            only_table_points: bool = True) -> VariationReport:
    """|log(a(C eps)/a(eps)) - (1 - xi q) log C| at table points eps with C eps in range."""
    qq = _q(table, q)
    rows = []
    for e in table.entries:
        try:
            a_c = table.a(C * e.eps)
        except ValueError:
            continue
        if only_table_points and not np.any(np.isclose(table.eps, C * e.eps, rtol=1e-12)):
            continue
        dev = abs(math.log(a_c / e.a_hat) - (1 - table.xi * qq) * math.log(C))
        se = math.hypot(table.rel_stderr(C * e.eps), e.stderr / e.a_hat) if C != 1 else 0.0
        rows.append(VariationRow(e.eps, 0.0 if C == 1 else dev, se))
    if len(rows) < 1:
        raise ValueError("C*eps falls inside the table for no entry")
    devs = np.array([r.deviation for r in rows])
    tol = 1e-12 + 1e-9 * devs.max(initial=0.0)
    d = np.diff(devs)
    if np.all(np.abs(d) <= tol):
        trend = "flat"
    elif np.all(d <= tol):
        trend = "decreasing"
    elif np.all(d >= -tol):
        trend = "increasing"
    else:
        trend = "mixed"
    return VariationReport(C, qq, tuple(rows), trend)
