"""Annulus regularity events comparing coordinate-changed LFPP with a reference metric.

The reference metric is localized LFPP at the finest configured scale, normalized
by its median constant ("reference proxy"). All metric evaluations for one event
read the field only inside the annulus A_{r/2, 2r}(x) when the kernel supports
fit in the r/4 margins; :func:`dependence_radius` measures that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..conformal import coordinate_change_field
from ..gff import GridField, GridSpec, circle_average, localized_mollify, localized_mollify_at, splice
from ..kernels import support_radius
from ..lfpp import (build_graph, distance_around_annulus, distances_from, internal_distance, pullback_field,
                    set_distance)
from ..regions import Annulus, Rectangle
from .common import Normalizer, base_field, new_report, nondecreasing, run_jobs, seeds
from .config import ExperimentConfig, PreconditionError
from .report import CONFIG, EXACT, MONTE_CARLO, wilson

PROXY = "reference"


# ------------------------------------------------------------------ geometry


def crop(field: GridField, spec: GridSpec) -> GridField:
    """Restrict ``field`` to a sub-window on the same lattice."""
    if not field.spec.same_lattice(spec):
        raise ValueError("crop window is not on the field lattice")
    d = (spec.origin - field.spec.origin) / field.spec.spacing
    i0, j0 = int(round(d.real)), int(round(d.imag))
    if i0 < 0 or j0 < 0 or i0 + spec.nx > field.spec.nx or j0 + spec.ny > field.spec.ny:
        raise ValueError("crop window exits the field window")
    v = field.values[i0:i0 + spec.nx, j0:j0 + spec.ny]
    return GridField(spec, v, field.kind, field.param, field.history + ("crop",))


def dependence_radius(fam, x: complex, radii, eps: float, eps_ref: float, s: float, n: int = 64) -> float:
    """How far (in source coordinates) the event metrics look beyond their annulus.

    For each map, image points of the annulus boundary are surrounded by circles of
    radius R(eps) + 3s (kernel support plus interpolation stencils) and pulled back.
    """
    dep = support_radius(eps_ref) + s
    ang = np.exp(2j * np.pi * np.arange(n) / n)
    for m in fam:
        for rad in radii:
            w = x + rad * ang
            img = m(w)
            for k in range(w.size):
                pre = m.inverse(img[k] + (support_radius(eps) + 3 * s) * ang)
                if np.isnan(pre).any():
                    return math.inf
                dep = max(dep, float(np.max(np.abs(pre - w[k]))) + 2 * s)
    return dep


@dataclass(frozen=True)
class EventGeometry:
    x: complex
    r: float
    eps: float
    eps_ref: float
    spacing: float
    r_in: float
    r_out: float
    dependence: float
    tau: float = 2.0

    @property
    def local(self) -> bool:
        """Whether every metric depends on the field only inside A_{r/2, 2r}(x)."""
        gap = min(self.r_in - 2 * self.spacing - self.r / 2, 2 * self.r - self.r_out - 2 * self.spacing)
        return self.dependence < gap

    @property
    def region(self) -> Annulus:
        return Annulus(self.x, self.r_in - 2 * self.spacing, self.r_out + 2 * self.spacing)

    def window(self) -> GridSpec:
        """Window for sampling: contains the pinning circle of radius 4r."""
        m = 4 * self.r + 3 * self.spacing
        return GridSpec.covering(self.x.real - m, self.x.real + m, self.x.imag - m, self.x.imag + m, self.spacing)

    def work_window(self) -> GridSpec:
        reach = max(min(self.dependence, self.r), support_radius(self.tau * self.eps) + self.spacing)
        m = self.r_out + 2 * self.spacing + reach + 3 * self.spacing
        return GridSpec.covering(self.x.real - m, self.x.real + m, self.x.imag - m, self.x.imag + m, self.spacing)


def geometry(cfg: ExperimentConfig, x: complex, r: float, eps: float, r_in: float, r_out: float) -> EventGeometry:
    fam = cfg.family()
    eps_ref = min(cfg.eps_ref, eps)
    circle = x + r_out * np.exp(2j * np.pi * np.arange(256) / 256)
    s = eps / cfg.option("event_points_per_eps", 2.0, float)
    if (r_out - r_in) / s < 3:
        raise PreconditionError("annulus too thin for the lattice spacing")
    ring = x + 2 * r * np.exp(2j * np.pi * np.arange(256) / 256)
    if not np.all(cfg.V.boundary_distance(circle) > 0):
        raise PreconditionError(f"annulus of outer radius {r_out:g} about {x} is not inside V")
    if not np.all(cfg.U.boundary_distance(ring) > 0):
        raise PreconditionError(f"B_2r({x}) is not inside U")
    dep = dependence_radius(fam, x, (r_in - 2 * s, r_out + 2 * s), eps, eps_ref, s)
    return EventGeometry(complex(x), r, eps, eps_ref, s, r_in, r_out, dep, cfg.tau)


def pinned_field(cfg: ExperimentConfig, geo: EventGeometry, seed: int) -> GridField:
    h = base_field(cfg, geo.window(), seed)
    c = circle_average(h, geo.x, 4 * geo.r)
    return GridField(h.spec, h.values - c, h.kind, h.param, h.history + ("pin",))


def ratio_sups(norm: Normalizer, r: float, eps: float, tau: float, n: int = 9) -> tuple[float, float]:
    ts = np.geomspace(1 / tau, tau, n)
    rs = np.array([norm.ratio(r, eps * t) for t in ts])
    return float(rs.max()), float((1 / rs).max())


def metric_graphs(cfg: ExperimentConfig, geo: EventGeometry, g: GridField, eps_list=None) -> dict:
    """Reference-proxy graph plus one pullback graph per family map, all on the
    source lattice restricted to the event annulus."""
    fam = cfg.family()
    xi, q = cfg.params.xi, Normalizer(cfg).q
    work = crop(g, geo.work_window())
    region = geo.region
    sel = region.mask(work.spec)
    out = {PROXY: build_graph(localized_mollify_at(work, geo.eps_ref, sel), region, xi)}
    for e in eps_list or ():
        out[(PROXY, e)] = build_graph(localized_mollify_at(work, e, sel), region, xi)
    pad = support_radius(geo.eps) + 3 * geo.spacing
    ring = geo.x + (geo.r_out + 2 * geo.spacing) * np.exp(2j * np.pi * np.arange(256) / 256)
    for m in fam:
        img = m(ring)
        ispec = GridSpec.covering(img.real.min() - pad, img.real.max() + pad,
                                  img.imag.min() - pad, img.imag.max() + pad, geo.spacing)
        changed = coordinate_change_field(work, m, q, ispec)
        pb = pullback_field(localized_mollify(changed, geo.eps), m, work.spec, xi)
        try:
            out[m.name] = build_graph(pb, region, xi)
        except ValueError as exc:
            raise PreconditionError(f"pullback metric for {m.name} undefined on the annulus: {exc}") from None
    return out


def _inner(x, rad, s):
    return Annulus(x, rad - s, rad + 1e-12)


def _outer(x, rad, s):
    return Annulus(x, rad - 1e-12, rad + s)


def _closed(x, a, b, s):
    return Annulus(x, a - s, b + s)


# ------------------------------------------------------------------ initial event


def initial_metrics(cfg: ExperimentConfig, geo: EventGeometry, g: GridField) -> dict:
    """Normalized around/across values entering the initial Lipschitz event."""
    norm = Normalizer(cfg)
    graphs = metric_graphs(cfg, geo, g)
    x, r, s = geo.x, geo.r, geo.spacing
    vals = {}
    for name, G in graphs.items():
        a = norm(geo.eps_ref) if name == PROXY else norm(geo.eps)
        around = distance_around_annulus(G, x, 3 * r / 4, 7 * r / 4)
        across = set_distance(G, _inner(x, 3 * r / 4, s), _outer(x, r, s), within=_closed(x, 3 * r / 4, r, s))
        vals[name] = {"around": float(around) / a, "across": float(across) / a}
    sup_ratio, sup_inv = ratio_sups(norm, r, geo.eps, cfg.tau)
    vals["_ratio"] = {"sup_ratio": sup_ratio, "sup_inv": sup_inv}
    return vals


def initial_slacks(vals: dict) -> tuple[float, float]:
    """Log slacks (without C) of the two inequalities; E holds iff both + log C >= 0."""
    maps = [k for k in vals if k not in (PROXY, "_ratio")]
    rat = vals["_ratio"]
    s1 = math.log(rat["sup_ratio"] * vals[PROXY]["across"]) - math.log(max(vals[m]["around"] for m in maps))
    s2 = math.log(rat["sup_inv"] * min(vals[m]["across"] for m in maps)) - math.log(vals[PROXY]["around"])
    return s1, s2


def initial_indicator(vals: dict, C: float) -> bool:
    s1, s2 = initial_slacks(vals)
    return bool(s1 + math.log(C) >= 0 and s2 + math.log(C) >= 0)


def _initial_job(job):
    cfg, geo, seed = job
    return initial_metrics(cfg, geo, pinned_field(cfg, geo, seed))


def _default_xr(cfg, x, r, eps, r_default=0.1):
    x = complex(cfg.option("x", 0.75, complex) if x is None else x)
    r = float(cfg.option("r", r_default, float) if r is None else r)
    eps = float(cfg.option("event_eps", 0.0025, float) if eps is None else eps)
    return x, r, eps


def event_initial(cfg: ExperimentConfig, x: complex | None = None, r: float | None = None,
                  eps: float | None = None, C: float | None = None):
    x, r, eps = _default_xr(cfg, x, r, eps)
    C = cfg.C if C is None else C
    c_grid = sorted(set(cfg.option("C_values", (C, 10 * C, 100 * C), tuple)) | {C})
    if support_radius(eps) >= r / 4:
        raise PreconditionError("eps log(1/eps) must be below r/4")
    geo = geometry(cfg, x, r, eps, 3 * r / 4, 7 * r / 4)
    fam = cfg.family()
    rep = new_report(cfg, "event_initial", fam, x=[x.real, x.imag], r=r, eps=eps, eps_ref=geo.eps_ref,
                     metric_label="reference proxy: normalized localized LFPP at eps_ref")
    rep.declare(replica=CONFIG, slack_sup=EXACT, slack_inf=EXACT, frequency=MONTE_CARLO, ci_low=MONTE_CARLO,
                ci_high=MONTE_CARLO, C=CONFIG)
    res = run_jobs(_initial_job, [(cfg, geo, sd) for sd in seeds(cfg)], cfg.workers)
    freq = []
    for k, vals in enumerate(res):
        s1, s2 = initial_slacks(vals)
        rep.add_row(replica=k, slack_sup=s1, slack_inf=s2, indicator=initial_indicator(vals, C))
    for c in c_grid:
        hits = sum(initial_indicator(v, c) for v in res)
        lo, hi = wilson(hits, len(res))
        freq.append(hits / len(res))
        rep.add_row(C=c, frequency=hits / len(res), ci_low=lo, ci_high=hi)
    rep.indicators = {"indicator": initial_indicator(res[0], C), "frequency": dict(zip(map(str, c_grid), freq)),
                      "local": geo.local, "dependence_radius": geo.dependence}
    rep.flag("monotone_in_C", nondecreasing(freq))
    return rep


# ------------------------------------------------------------------ locality


def resampled_field(cfg: ExperimentConfig, geo: EventGeometry, seed: int, fresh_seed: int,
                    where: str = "outside") -> tuple[GridField, GridField]:
    """(pinned field, pinned field with a fresh sample spliced in).

    ``where="outside"`` replaces everything outside A_{r/2, 2r}(x); ``"corner"``
    replaces only a small square in a corner of the sampling window.
    """
    g = pinned_field(cfg, geo, seed)
    g2 = pinned_field(cfg, geo, fresh_seed)
    if where == "outside":
        spliced = splice(g, g2, Annulus(geo.x, geo.r / 2, 2 * geo.r))
    elif where == "corner":
        x0, x1, y0, y1 = g.spec.extent
        side = 0.1 * (x1 - x0)
        corner = Rectangle(x0, x0 + side, y0, y0 + side)
        spliced = splice(g2, g, corner)
    else:
        raise ValueError(f"unknown resampling mode {where!r}")
    c = circle_average(spliced, geo.x, 4 * geo.r)
    return g, GridField(spliced.spec, spliced.values - c, spliced.kind, spliced.param, spliced.history + ("pin",))


def _locality_job(job):
    cfg, geo, seed, fresh, where = job
    g, g2 = resampled_field(cfg, geo, seed, fresh, where)
    return initial_metrics(cfg, geo, g), initial_metrics(cfg, geo, g2)


def event_locality_test(cfg: ExperimentConfig, x: complex | None = None, r: float | None = None,
                        eps: float | None = None, where: str | None = None):
    x, r, eps = _default_xr(cfg, x, r, eps)
    where = where or cfg.option("resample", "outside", str)
    C = cfg.C
    geo = geometry(cfg, x, r, eps, 3 * r / 4, 7 * r / 4)
    rep = new_report(cfg, "event_locality_test", cfg.family(), x=[x.real, x.imag], r=r, eps=eps, resample=where)
    rep.declare(replica=CONFIG, max_relative_change=EXACT, matches=MONTE_CARLO, n_replicas=CONFIG)
    jobs = [(cfg, geo, a, b, where) for a, b in zip(seeds(cfg, stream=0), seeds(cfg, stream=1))]
    res = run_jobs(_locality_job, jobs, cfg.workers)
    matches = 0
    for k, (v1, v2) in enumerate(res):
        i1, i2 = initial_indicator(v1, C), initial_indicator(v2, C)
        change = max(abs(v2[n][q] / v1[n][q] - 1) for n in v1 if n != "_ratio" for q in ("around", "across"))
        matches += i1 == i2
        rep.add_row(replica=k, indicator=i1, indicator_resampled=i2, max_relative_change=change)
    rep.add_row(matches=matches, n_replicas=len(res))
    rep.indicators = {"matches": matches, "replicas": len(res), "precondition_ok": geo.local,
                      "dependence_radius": geo.dependence, "margin": r / 4}
    rep.flag("precondition_ok", geo.local)
    rep.flag("indicator_invariant", matches == len(res))
    return rep


# ------------------------------------------------------------------ improving event


def _boundary_nodes(spec: GridSpec, x: complex, rad: float, n: int) -> np.ndarray:
    pts = x + rad * np.exp(2j * np.pi * (np.arange(n) + 0.5) / n)
    return np.unique(spec.node(*spec.nearest_index(pts)))


def improving_metrics(cfg: ExperimentConfig, geo: EventGeometry, g: GridField, n_boundary: int = 8,
                      n_small: int = 8) -> dict:
    """Log slacks of the four conditions, with delta and A factored out.

    Condition 1 holds iff ``c1 + log(1 + delta) >= 0``; condition 3 iff
    ``c3 + log A >= 0``; condition 4 iff ``c4 + log delta >= 0``; condition 2 is a
    plain boolean. Suprema over boundary points and small balls use finite node samples.
    """
    norm = Normalizer(cfg)
    x, r, s, al = geo.x, geo.r, geo.spacing, cfg.alpha
    # scales below two lattice spacings alias; raise event_points_per_eps to reach t = 1/tau
    ts = np.array([max(1 / cfg.tau, 2 * s / geo.eps), 1.0, cfg.tau])
    graphs = metric_graphs(cfg, geo, g, eps_list=tuple(geo.eps * ts))
    maps = [k for k in graphs if k != PROXY and not isinstance(k, tuple)]
    spec = graphs[PROXY].spec
    sup_ratio, sup_inv = ratio_sups(norm, r, geo.eps, cfg.tau)
    a_of = {k: (norm(geo.eps_ref) if k == PROXY else norm(geo.eps)) for k in [PROXY, *maps]}
    big = Annulus(x, 3 * r / 4, 5 * r / 4)
    small = _closed(x, al * r, r, s)
    us = _boundary_nodes(spec, x, al * r, n_boundary)
    vs = _boundary_nodes(spec, x, r, n_boundary)
    big_mask = big.mask(spec)
    small_mask = small.mask(spec)

    # condition 1 and 2
    c1 = math.inf
    cond2 = True
    for u in us:
        for v in vs:
            d_big, d_small, geo_in = {}, {}, {}
            for k in [PROXY, *maps]:
                G = graphs[k]
                rb = internal_distance(G, u, v, big)
                rs = internal_distance(G, u, v, small)
                d_big[k], d_small[k] = float(rb) / a_of[k], float(rs) / a_of[k]
                geo_in[k] = rb.connected and bool(np.all(small.contains(rb.points)))
            for m in maps:
                if geo_in[PROXY]:
                    c1 = min(c1, math.log(sup_ratio * d_small[PROXY] / d_big[m]))
                if geo_in[m]:
                    c1 = min(c1, math.log(sup_inv * d_small[m] / d_big[PROXY]))
            # condition 2: equal restricted distances force the unrestricted geodesic to stay inside
            bd = big_mask & ~Annulus(x, 3 * r / 4 + s, 5 * r / 4 - s).mask(spec)
            if math.isclose(d_small[PROXY], d_big[PROXY], rel_tol=1e-12):
                ring = _closed(x, 3 * r / 4, 5 * r / 4, s).mask(spec)
                for t in ts:
                    dist = distances_from(graphs[(PROXY, geo.eps * t)], u, ring)
                    if not dist.ravel()[spec.node_id(v)] < dist[bd].min():
                        cond2 = False
            if any(math.isclose(d_small[m], d_big[m], rel_tol=1e-12) for m in maps):
                dist = distances_from(graphs[PROXY], u, _closed(x, 3 * r / 4, 5 * r / 4, s).mask(spec))
                if not dist.ravel()[spec.node_id(v)] < dist[bd].min():
                    cond2 = False

    # condition 3
    c3 = math.inf
    across = {}
    for k in [PROXY, *maps]:
        G = graphs[k]
        around = float(distance_around_annulus(G, x, al * r, r))
        acr = float(set_distance(G, _inner(x, al * r, s), _outer(x, r, s), within=small))
        across[k] = acr / a_of[k]
        c3 = min(c3, math.log(acr / around))

    # condition 4
    rad = 4 * geo.eps ** (1 - cfg.zeta)
    starts = np.concatenate([_boundary_nodes(spec, x, rr, n_small) for rr in (al * r, (al + 1) * r / 2, r)])
    nodes = spec.nodes()
    c4 = math.inf
    for u in starts:
        near = (np.abs(nodes - u) <= rad) & graphs[PROXY].mask
        for k in [PROXY, *maps]:
            dist = distances_from(graphs[k], u, big_mask)
            far = float(dist[near].max()) / a_of[k]
            if k == PROXY:
                c4 = min(c4, math.log(sup_inv * min(across[m] for m in maps) / far))
            else:
                c4 = min(c4, math.log(sup_ratio * across[PROXY] / far))
    return {"c1": c1, "cond2": cond2, "c3": c3, "c4": c4, "t_min": float(ts[0])}


def improving_indicators(vals: dict, delta: float, A: float) -> dict:
    e = {"1": vals["c1"] + math.log(1 + delta) >= 0, "2": bool(vals["cond2"]),
         "3": vals["c3"] + math.log(A) >= 0, "4": vals["c4"] + math.log(delta) >= 0}
    e["all"] = all(e.values())
    return e


def _improving_job(job):
    cfg, geo, seed, nb, ns = job
    return improving_metrics(cfg, geo, pinned_field(cfg, geo, seed), nb, ns)


def event_improving(cfg: ExperimentConfig, x: complex | None = None, r: float | None = None,
                    eps: float | None = None, alpha: float | None = None, delta: float | None = None,
                    A: float | None = None):
    x, r, eps = _default_xr(cfg, x, r, eps, r_default=0.12)
    if alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    delta = cfg.delta if delta is None else delta
    A = cfg.A if A is None else A
    if not 7 / 8 < cfg.alpha < 1:
        raise PreconditionError("thresholds.alpha: must lie in (7/8, 1)")
    if not r > 4 * eps ** (1 - cfg.zeta) / (cfg.alpha - 0.75):
        raise PreconditionError("r must exceed 4 eps^(1-zeta) / (alpha - 3/4)")
    geo = geometry(cfg, x, r, eps, 3 * r / 4, 5 * r / 4)
    if r * (1 - cfg.alpha) / geo.spacing < 3:
        raise PreconditionError("A_{alpha r, r} is thinner than three lattice spacings")
    nb = cfg.option("boundary_points", 8, int)
    ns = cfg.option("small_ball_centers", 8, int)
    rep = new_report(cfg, "event_improving", cfg.family(), x=[x.real, x.imag], r=r, eps=eps, alpha=cfg.alpha,
                     metric_label="reference proxy: normalized localized LFPP at eps_ref")
    rep.declare(replica=CONFIG, c1=EXACT, c3=EXACT, c4=EXACT, frequency=MONTE_CARLO, ci_low=MONTE_CARLO,
                ci_high=MONTE_CARLO, A=CONFIG, delta=CONFIG)
    res = run_jobs(_improving_job, [(cfg, geo, sd, nb, ns) for sd in seeds(cfg)], cfg.workers)
    for k, v in enumerate(res):
        ind = improving_indicators(v, delta, A)
        rep.add_row(replica=k, c1=v["c1"], c3=v["c3"], c4=v["c4"], cond2=v["cond2"],
                    **{f"E{n}": b for n, b in ind.items()})
    a_grid = sorted(set(cfg.option("A_values", (A, 10 * A, 100 * A), tuple)) | {A})
    d_grid = sorted(set(cfg.option("delta_values", (delta / 2, delta, 0.99), tuple)) | {delta})
    f3 = [np.mean([improving_indicators(v, delta, a)["3"] for v in res]) for a in a_grid]
    f1 = [np.mean([improving_indicators(v, d, A)["1"] for v in res]) for d in d_grid]
    for a, f in zip(a_grid, f3):
        rep.add_row(A=a, frequency=float(f))
    for d, f in zip(d_grid, f1):
        rep.add_row(delta=d, frequency=float(f))
    first = improving_indicators(res[0], delta, A)
    rep.indicators = {"indicators": first, "frequency_all": float(np.mean([improving_indicators(v, delta, A)["all"]
                                                                          for v in res]))}
    rep.flag("condition3_monotone_in_A", nondecreasing(f3))
    rep.flag("condition1_monotone_in_delta", nondecreasing(f1))
    rep.notes.append("suprema over boundary points and small balls are taken over finite node samples")
    return rep
