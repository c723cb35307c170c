"""Small-scale comparison of phi-image path lengths with rescaled source lengths."""

from __future__ import annotations

import math

import numpy as np

from ..conformal import coordinate_change_field
from ..gff import GridSpec, localized_mollify
from ..kernels import support_radius
from ..lfpp import build_graph, distance, path_length
from ..regions import Disk
from .common import Normalizer, base_field, new_report, nondecreasing, region_center, run_jobs, seeds
from .config import ExperimentConfig, PreconditionError
from .report import CONFIG, DERIVED, MONTE_CARLO, wilson


def _subdivide(points: np.ndarray, step: float) -> np.ndarray:
    out = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(math.ceil(abs(b - a) / step)))
        out.append(a + (b - a) * np.arange(1, n + 1) / n)
    return np.concatenate(out)


def _random_points(rng, center, radius, n):
    r = radius * np.sqrt(rng.random(n))
    return center + r * np.exp(2j * np.pi * rng.random(n))


def sandwich_ratios(cfg: ExperimentConfig, eps: float, z0: complex, seed: int,
                    n_segments: int = 4, n_geodesics: int = 4) -> dict:
    """Normalized length ratios Len(phi o P; eps, h^phi) / Len(P; eps/|phi'(z0)|, h) per map."""
    fam = cfg.family()
    norm = Normalizer(cfg)
    xi, q, ppe = cfg.params.xi, norm.q, cfg.points_per_eps
    rho = 2 * eps ** (1 - cfg.zeta)
    ball = Disk(z0, rho)
    d0 = {m.name: abs(complex(m.deriv(z0))) for m in fam}
    for name, d in d0.items():
        if not 0 < eps / d < math.exp(-1):
            raise PreconditionError(f"eps/|phi'(z0)| = {eps / d:g} outside the mollifiable range ({name})")
    s = min(min(eps / d for d in d0.values()), eps) / ppe
    s_img = eps / ppe
    R = support_radius(eps)
    ring = z0 + rho * np.exp(2j * np.pi * np.arange(64) / 64)
    margin = 0.0
    for m in fam:
        dmin = float(np.min(np.abs(m.deriv(ring))))
        margin = max(margin, support_radius(eps / d0[m.name]), (R + 3 * s_img) / dmin * 1.5)
    half = rho + margin + 3 * s
    spec = GridSpec.covering(z0.real - half, z0.real + half, z0.imag - half, z0.imag + half, s)
    h = base_field(cfg, spec, seed)
    rng = np.random.default_rng(seed)
    seg_a = _random_points(rng, z0, rho, n_segments)
    seg_b = _random_points(rng, z0, rho, n_segments)
    paths_base = [np.array([a, b]) for a, b in zip(seg_a, seg_b)]
    geo_pts = _random_points(rng, z0, rho * 0.95, 2 * n_geodesics)
    out = {}
    for m in fam:
        e2 = eps / d0[m.name]
        right_field = localized_mollify(h, e2)
        paths = list(paths_base)
        if n_geodesics:
            g = build_graph(right_field, ball, xi)
            nodes = spec.node(*spec.nearest_index(geo_pts))
            for a, b in zip(nodes[::2], nodes[1::2]):
                if a != b and ball.contains(np.array([a, b])).all():
                    paths.append(distance(g, complex(a), complex(b)).points)
        img = m(ring)
        pad = R + 3 * s_img
        ispec = GridSpec.covering(img.real.min() - pad, img.real.max() + pad,
                                  img.imag.min() - pad, img.imag.max() + pad, s_img)
        left_field = localized_mollify(coordinate_change_field(h, m, q, ispec), eps)
        ratios = []
        for P in paths:
            fine = _subdivide(np.asarray(P, dtype=complex), min(s, s_img) / 2)
            try:
                right = path_length(right_field, fine, xi)
                left = path_length(left_field, m(fine), xi)
            except ValueError as exc:
                raise PreconditionError(f"field window too small for the test paths: {exc}") from None
            ratios.append((left / norm(eps)) / (right / norm(e2)))
        out[m.name] = ratios
    return out


def _job(job):
    cfg, eps, z0, seed, n_seg, n_geo = job
    return sandwich_ratios(cfg, eps, z0, seed, n_seg, n_geo)


def small_scale_sandwich(cfg: ExperimentConfig, z0: complex | None = None):
    fam = cfg.family()
    z0 = complex(cfg.option("z0", region_center(cfg.W), complex) if z0 is None else z0)
    n_seg = cfg.option("segments", 4, int)
    n_geo = cfg.option("geodesics", 4, int)
    lo_b, hi_b = 1 / (1 + cfg.delta), 1 + cfg.delta
    rep = new_report(cfg, "small_scale_sandwich", fam, z0=[z0.real, z0.imag])
    rep.declare(eps=CONFIG, replica=CONFIG, worst_deviation=MONTE_CARLO, min_ratio=MONTE_CARLO,
                max_ratio=MONTE_CARLO, success_fraction=MONTE_CARLO, ci_low=MONTE_CARLO, ci_high=MONTE_CARLO,
                n_replicas=CONFIG)
    fractions = []
    for k, eps in enumerate(cfg.eps):
        rho = 2 * eps ** (1 - cfg.zeta)
        ring = z0 + rho * np.exp(2j * np.pi * np.arange(256) / 256)
        if not np.all(cfg.W.boundary_distance(ring) > 0):
            raise PreconditionError(f"B(z0, 2 eps^(1-zeta)) not inside W at eps={eps:g}")
        jobs = [(cfg, eps, z0, sd, n_seg, n_geo) for sd in seeds(cfg, stream=k)]
        results = run_jobs(_job, jobs, cfg.workers)
        ok = 0
        worst = 0.0
        for r, res in enumerate(results):
            allr = np.concatenate([np.asarray(v) for v in res.values()])
            good = bool(np.all((allr >= lo_b) & (allr <= hi_b)))
            ok += good
            dev = float(np.max(np.abs(allr - 1)))
            worst = max(worst, dev)
            rep.add_row(eps=eps, replica=r, worst_deviation=dev, min_ratio=float(allr.min()),
                        max_ratio=float(allr.max()), inside=good)
        frac = ok / len(results)
        lo, hi = wilson(ok, len(results))
        fractions.append(frac)
        rep.indicators[f"eps={eps:g}"] = {"success_fraction": frac, "wilson_95": [lo, hi], "worst_deviation": worst}
        rep.add_row(eps=eps, success_fraction=frac, ci_low=lo, ci_high=hi, n_replicas=len(results))
    rep.flag("success_nondecreasing", nondecreasing(fractions))
    rep.flag("success_at_finest_ge_0.8", fractions[-1] >= 0.8)
    return rep
