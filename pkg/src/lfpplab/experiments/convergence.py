"""Dyadic-eps convergence diagnostic for coordinate-changed localized LFPP."""

from __future__ import annotations

import math

import numpy as np

from ..conformal import coordinate_change_field
from ..gff import GridSpec, localized_mollify_at
from ..kernels import support_radius
from ..lfpp import build_graph, distances_from, pullback_field
from .common import Normalizer, base_field, new_report, nonincreasing, run_jobs, seeds
from .config import ConfigError, ExperimentConfig, PreconditionError
from .mollifiers import subsample
from .report import CONFIG, MONTE_CARLO


def check_schedule(eps) -> tuple[float, ...]:
    eps = tuple(sorted((float(e) for e in eps), reverse=True))
    if len(eps) < 3:
        raise ConfigError(f"schedule.eps: need at least 3 dyadic levels, got {len(eps)}")
    for a, b in zip(eps[:-1], eps[1:]):
        if not math.isclose(a / b, 2.0, rel_tol=1e-9):
            raise ConfigError(f"schedule.eps: levels {a:g} and {b:g} are not dyadic")
    return eps


def query_pairs(cfg: ExperimentConfig, spacing: float, n_sources: int,
                per_source: int) -> list[tuple[complex, complex]]:
    """Pairs of lattice nodes of W at distance at most rho, fixed by the master seed."""
    x0, x1, y0, y1 = cfg.W.bbox()
    spec = GridSpec.covering(x0, x1, y0, y1, spacing)
    nodes = spec.nodes().ravel()
    nodes = nodes[cfg.W.contains(nodes)]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
    out = []
    for z in rng.choice(nodes, size=min(n_sources, nodes.size), replace=False):
        near = nodes[(np.abs(nodes - z) <= cfg.rho) & (nodes != z)]
        if near.size == 0:
            continue
        for w in rng.choice(near, size=min(per_source, near.size), replace=False):
            out.append((complex(z), complex(w)))
    if not out:
        raise PreconditionError("no query pairs in Delta_rho(W); lower the lattice pitch or raise rho")
    return out


def level_distances(cfg: ExperimentConfig, h, eps: float, pairs, q: float, a_eps: float) -> dict:
    """Normalized D_eps of h^phi between phi(z), phi(w) inside phi(V), per map.

    Computed on the source lattice via the pulled-back field, which keeps query
    points on nodes for every map.
    """
    xi, tau, V = cfg.params.xi, cfg.tau, cfg.V
    s = h.spec.spacing
    R = support_radius(eps)
    out = {}
    for m in cfg.family():
        ring = V.boundary_points(720)
        img = m(ring)
        pad = R + 3 * s
        ispec = GridSpec.covering(img.real.min() - pad, img.real.max() + pad,
                                  img.imag.min() - pad, img.imag.max() + pad, s)
        pre = m.inverse(ispec.nodes())
        ok = np.isfinite(pre)
        sel = np.zeros(ispec.shape, dtype=bool)
        sel[ok] = V.dilate(3 * s * tau).contains(pre[ok])
        moll = localized_mollify_at(coordinate_change_field(h, m, q, ispec), eps, sel)
        pb = pullback_field(moll, m, h.spec, xi)
        try:
            G = build_graph(pb, V, xi)
        except ValueError as exc:
            raise PreconditionError(f"eps={eps:g}, map {m.name}: kernel support leaves the field window "
                                    f"or the map domain ({exc})") from None
        allowed = V.mask(h.spec)
        vals = []
        cache = {}
        for z, w in pairs:
            if z not in cache:
                cache[z] = distances_from(G, z, allowed).ravel()
            vals.append(cache[z][h.spec.node_id(w)] / a_eps)
        out[m.name] = np.array(vals)
    return out


def _job(job):
    cfg, seed, eps, pairs, ppe = job
    norm = Normalizer(cfg)
    tau = cfg.tau
    s_coarse, s_fine = eps[0] / ppe, eps[-1] / ppe
    reach = max(tau * (support_radius(e) + 3 * e / ppe) + 3 * e / ppe for e in eps)
    x0, x1, y0, y1 = cfg.V.bbox()
    coarse = GridSpec.covering(x0 - reach, x1 + reach, y0 - reach, y1 + reach, s_coarse)
    k_all = int(round(s_coarse / s_fine))
    fine = GridSpec((coarse.nx - 1) * k_all + 1, (coarse.ny - 1) * k_all + 1, s_fine, coarse.origin)
    h = base_field(cfg, fine, seed)
    levels = []
    for e in eps:
        hl = subsample(h, int(round(e / ppe / s_fine)))
        levels.append(level_distances(cfg, hl, e, pairs, norm.q, norm(e)))
    return levels


def _spread(level: dict, relative: bool = False) -> float:
    v = np.array(list(level.values()))
    d = v.max(axis=0) - v.min(axis=0)
    if relative:
        d = d / v.mean(axis=0)
    return float(np.max(d))


def convergence_diagnostic(cfg: ExperimentConfig):
    """Level-to-level differences and cross-map spread of normalized distances.

    For every map phi the distance between phi(z) and phi(w) inside phi(V) is taken
    with the coordinate-changed field h^phi; pairs (z, w) lie in Delta_rho(W).
    """
    # the z^2+2 member needs eps log(1/eps) well inside its domain, hence the small default levels
    eps = check_schedule(cfg.option("convergence_eps", (0.01, 0.005, 0.0025), tuple))
    ppe = cfg.option("convergence_points_per_eps", 2.0, float)
    if not math.isclose(eps[0] / ppe / (eps[-1] / ppe), round(eps[0] / eps[-1])):
        raise ConfigError("schedule.eps: levels must share one lattice")
    fam = cfg.family()
    pairs = query_pairs(cfg, eps[0] / ppe, cfg.option("sources", 6, int), cfg.option("targets_per_source", 2, int))
    rep = new_report(cfg, "convergence_diagnostic", fam, n_pairs=len(pairs),
                     metric_label="normalized localized LFPP of the coordinate-changed field")
    rep.declare(replica=CONFIG, eps=CONFIG, eps_next=CONFIG, spread=MONTE_CARLO, relative_spread=MONTE_CARLO,
                level_difference=MONTE_CARLO, median_spread=MONTE_CARLO)
    res = run_jobs(_job, [(cfg, sd, eps, pairs, ppe) for sd in seeds(cfg)], cfg.workers)
    spreads, rel = [], []
    for r, levels in enumerate(res):
        sp = [_spread(lv) for lv in levels]
        rs = [_spread(lv, relative=True) for lv in levels]
        spreads.append(sp)
        rel.append(rs)
        for e, v, w in zip(eps, sp, rs):
            rep.add_row(replica=r, eps=e, spread=v, relative_spread=w)
        for l in range(len(eps) - 1):
            for m in fam:
                d = float(np.max(np.abs(levels[l][m.name] - levels[l + 1][m.name])))
                rep.add_row(replica=r, eps=eps[l], eps_next=eps[l + 1], map=m.name, level_difference=d)
    spreads = np.array(spreads)
    per = [nonincreasing(s) for s in spreads]
    frac = float(np.mean(per))
    for e, col in zip(eps, spreads.T):
        rep.add_row(eps=e, median_spread=float(np.median(col)))
    rel = np.array(rel)
    rep.indicators = {"fraction_spread_nonincreasing": frac,
                      "fraction_relative_spread_nonincreasing": float(np.mean([nonincreasing(s) for s in rel])),
                      "median_relative_spread": np.median(rel, axis=0).tolist(),
                      "median_spread": np.median(spreads, axis=0).tolist(),
                      "max_spread": spreads.max(axis=0).tolist(), "normalizer": Normalizer(cfg).kind,
                      "q": Normalizer(cfg).q}
    rep.flag("spread_nonincreasing_fraction_ge_0.7", frac >= 0.7)
    rep.notes.append("relative_spread divides by the mean over maps, so it does not depend on the normalizer")
    return rep
