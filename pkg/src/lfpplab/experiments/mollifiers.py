"""Comparisons between mollifications of one field at nearby scales or kernels."""

from __future__ import annotations

import math

import numpy as np

from ..gff import GridField, GridSpec, heat_mollify, heat_radius, localized_mollify_at
from ..kernels import support_radius
from ..regions import Disk
from .common import base_field, new_report, region_center, run_jobs, seeds, strictly_decreasing
from .config import ExperimentConfig, PreconditionError
from .report import CONFIG, DERIVED, MONTE_CARLO


def subsample(field: GridField, k: int) -> GridField:
    """Every k-th node of ``field``; the coarse lattice shares the fine origin."""
    if k == 1:
        return field
    v = field.values[::k, ::k]
    spec = GridSpec(v.shape[0], v.shape[1], field.spec.spacing * k, field.spec.origin)
    return GridField(spec, v, field.kind, field.param, field.history + (f"subsample({k})",))


def admissible_pairs(eps: float, C: float, zeta: float, tau: float, t_values) -> list[tuple[float, float]]:
    """(t, s) with s = t (1 +- C eps^{1-zeta}) clipped to [1/tau, tau]."""
    eta = C * eps ** (1 - zeta)
    out = []
    for t in t_values:
        for s in (t * (1 + eta), t * (1 - eta)):
            s = min(max(s, 1 / tau), tau)
            if s != t:
                out.append((t, s))
    return out


def _drift_job(job):
    cfg, K, seed, t_values, C, base = job
    eps_all = cfg.eps
    emin = min(eps_all)
    s_fine = emin / (base * cfg.tau)
    reach = max(support_radius(e * t * (1 + C * e ** (1 - cfg.zeta))) for e in eps_all for t in t_values)
    x0, x1, y0, y1 = K.bbox()
    m = reach + 2 * s_fine * max(e / emin for e in eps_all)
    spec = GridSpec.covering(x0 - m, x1 + m, y0 - m, y1 + m, s_fine)
    h = base_field(cfg, spec, seed)
    sups = []
    for eps in eps_all:
        k = int(round(eps / emin))
        hk = subsample(h, k) if math.isclose(k * emin, eps, rel_tol=1e-9) else h
        sel = K.mask(hk.spec)
        cache = {}

        def moll(scale):
            if scale not in cache:
                cache[scale] = localized_mollify_at(hk, scale, sel).values[sel]
            return cache[scale]

        worst = 0.0
        for t, s in admissible_pairs(eps, C, cfg.zeta, cfg.tau, t_values):
            a, b = moll(eps * t), moll(eps * s)
            if np.isnan(a).any() or np.isnan(b).any():
                raise PreconditionError("probe set too close to the field window edge")
            worst = max(worst, float(np.max(np.abs(a - b))))
        sups.append(worst)
    return sups


def mollifier_drift(cfg: ExperimentConfig):
    """sup over K and admissible (t, s) of |h_hat_{eps t} - h_hat_{eps s}| per eps.

    One field per replica serves all levels: coarser levels use a subsampled lattice
    with spacing proportional to eps.
    """
    z0 = cfg.option("z0", region_center(cfg.W), complex)
    K = Disk(z0, cfg.option("k_radius", 0.05, float))
    t_values = cfg.option("t_values", (1 / cfg.tau, 1.0, cfg.tau), tuple)
    C = cfg.option("drift_C", cfg.C, float)
    base = cfg.option("points_per_scale", 4.0, float)
    if any(not (1 / cfg.tau - 1e-12 <= t <= cfg.tau + 1e-12) for t in t_values):
        raise PreconditionError("options.t_values: t must lie in [1/tau, tau]")
    rep = new_report(cfg, "mollifier_drift")
    rep.declare(eps=CONFIG, replica=CONFIG, sup_drift=MONTE_CARLO, mean_sup=MONTE_CARLO, stderr=MONTE_CARLO,
                fraction_decreasing=DERIVED)
    res = np.array(run_jobs(_drift_job, [(cfg, K, sd, t_values, C, base) for sd in seeds(cfg)], cfg.workers))
    for r, row in enumerate(res):
        for eps, v in zip(cfg.eps, row):
            rep.add_row(eps=eps, replica=r, sup_drift=v)
    mean = res.mean(axis=0)
    se = res.std(axis=0, ddof=1) / math.sqrt(len(res)) if len(res) > 1 else np.zeros_like(mean)
    frac = float(np.mean([strictly_decreasing(r) for r in res]))
    rep.indicators = {"mean_sup": mean.tolist(), "stderr": se.tolist(), "fraction_decreasing": frac}
    rep.flag("mean_sup_strictly_decreasing", strictly_decreasing(mean))
    return rep


# ---------------------------------------------------------------- heat vs localized


def _compare_job(job):
    cfg, K, seed, eps_list, spacing = job
    x0, x1, y0, y1 = K.bbox()
    m = max(heat_radius(e) for e in eps_list) + 2 * spacing
    spec = GridSpec.covering(x0 - m, x1 + m, y0 - m, y1 + m, spacing)
    h = base_field(cfg, spec, seed)
    sel = K.mask(spec)
    out = []
    for eps in eps_list:
        a = heat_mollify(h, eps).values[sel]
        b = localized_mollify_at(h, eps, sel).values[sel]
        if np.isnan(a).any() or np.isnan(b).any():
            raise PreconditionError("probe region too close to the field window edge")
        out.append(float(np.max(np.abs(a - b))))
    return out


def mollifier_comparison(cfg: ExperimentConfig):
    """sup over K of |h*_eps - h_hat*_eps| (heat against localized kernel) per replica."""
    eps_list = cfg.option("compare_eps", (0.1, 0.05, 0.025), tuple)
    spacing = cfg.option("spacing", 1 / 256, float)
    K = cfg.W
    rep = new_report(cfg, "mollifier_comparison")
    rep.declare(eps=CONFIG, replica=CONFIG, sup_difference=MONTE_CARLO, fraction_decreasing=DERIVED)
    res = np.array(run_jobs(_compare_job, [(cfg, K, sd, eps_list, spacing) for sd in seeds(cfg)], cfg.workers))
    for r, row in enumerate(res):
        for eps, v in zip(eps_list, row):
            rep.add_row(eps=eps, replica=r, sup_difference=v)
    per = [strictly_decreasing(r) for r in res]
    rep.indicators = {"mean_sup": res.mean(axis=0).tolist(), "fraction_decreasing": float(np.mean(per)),
                      "eps": list(eps_list)}
    rep.flag("strictly_decreasing_every_replica", all(per))
    return rep
