"""Acceptance criteria 1 to 14. Each test records PASS or FAIL for its criterion;
the terminal summary prints one line per criterion."""

import math

import numpy as np
import pytest
from scipy import integrate

from lfpplab.conformal import default_family
from lfpplab.experiments import ExperimentConfig, run_experiment
from lfpplab.experiments.config import Params
from lfpplab.gff import (HEAT, GridField, GridSpec, add_scalar, heat_mollify, localized_mollify, sample_gff, splice,
                         translate)
from lfpplab.kernels import DistortedKernel, one_minus_z_eps, pair, psi, support_radius
from lfpplab.lfpp import build_graph, distance, enumerate_distance, internal_distance
from lfpplab.regions import Disk
from lfpplab.scaling import regular_variation_check

XI = 0.2


def _zero_graph(nx, ny, s):
    spec = GridSpec(nx, ny, s)
    return build_graph(GridField(spec, np.zeros(spec.shape), HEAT, 0.1), None, XI), spec


def test_c01_zero_field_king_metric(criterion):
    s = 1 / 16
    g, spec = _zero_graph(40, 30, s)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        i0, i1 = rng.integers(0, 40, 2)
        j0, j1 = rng.integers(0, 30, 2)
        dx, dy = abs(int(i1 - i0)), abs(int(j1 - j0))
        expect = (max(dx, dy) - min(dx, dy) + math.sqrt(2) * min(dx, dy)) * s
        got = distance(g, complex(spec.node(i0, j0)), complex(spec.node(i1, j1))).raw
        worst = max(worst, abs(got - expect))
    criterion(1, worst <= 1e-9, f"max |D - closed form| = {worst:.2e} over 50 pairs")


def test_c02_weyl_scaling(criterion):
    spec = GridSpec.covering(-0.6, 0.6, -0.6, 0.6, 1 / 64)
    h = sample_gff(spec, 2, 3)
    eps = 0.05
    g0 = build_graph(heat_mollify(h, eps), None, XI)
    rng = np.random.default_rng(2)
    nodes = g0.spec.nodes()[g0.mask]
    pairs = [tuple(rng.choice(nodes, 2, replace=False)) for _ in range(20)]
    worst, same = 0.0, True
    for c in (-1.5, -0.4, 0.3, 0.9, 2.0):
        g1 = build_graph(heat_mollify(add_scalar(h, c), eps), None, XI)
        for z, w in pairs:
            r0, r1 = distance(g0, z, w), distance(g1, z, w)
            worst = max(worst, abs(r1.raw / (math.exp(XI * c) * r0.raw) - 1))
            same &= np.array_equal(r0.nodes, r1.nodes)
    criterion(2, worst <= 1e-12 and same,
              f"max relative error {worst:.2e}, geodesics identical: {same} (20 pairs x 5 shifts)")


def test_c03_bruteforce_oracle(criterion):
    mismatches = 0
    for seed in range(100):
        spec = GridSpec(4, 4, 1.0)
        vals = np.random.default_rng(seed).normal(size=spec.shape)
        g = build_graph(GridField(spec, vals, HEAT, 0.1), None, XI)
        rng = np.random.default_rng(1000 + seed)
        z, w = (complex(*rng.integers(0, 4, 2)) for _ in range(2))
        mismatches += distance(g, z, w).raw != enumerate_distance(g, z, w)
    criterion(3, mismatches == 0, f"{100 - mismatches}/100 instances equal to enumeration")


def test_c04_z_eps_bound(criterion):
    ok, parts = True, []
    for eps in (0.3, 0.1, 0.03):
        R = support_radius(eps)
        # independent quadrature of the full radial integral
        z, err = integrate.quad(lambda r: 2 * r * float(psi(r / R)) * math.exp(-r * r / eps**2) / eps**2,
                                0, R, points=[R / 2], epsabs=1e-13, epsrel=1e-13, limit=400)
        gap = one_minus_z_eps(eps)
        bound = math.exp(-math.log(1 / eps) ** 2 / 4)
        agree = abs((1 - z) - gap) <= 1e-10 and err <= 1e-10
        ok &= agree and 0 <= gap <= bound
        parts.append(f"eps={eps}: 1-Z={gap:.3e} <= {bound:.3e}")
    criterion(4, ok, "; ".join(parts))


def test_c05_kernel_identities(criterion):
    fam = default_family()
    c = 0.6 + 0j
    centers = [c, c + 0.1, c + 0.08j, c - 0.06 - 0.06j]
    mass_err, support_ok, grad_err = 0.0, True, 0.0
    rng = np.random.default_rng(5)
    for eps in (0.01, 0.005):
        R = support_radius(eps)
        for m in fam:
            for z in centers:
                k = DistortedKernel(m, z, eps, fam.tau)
                mass_err = max(mass_err, abs(pair(1.0, k) - 1))
                rad = k.claimed_radius()
                ang = np.exp(2j * np.pi * np.arange(96) / 96)
                out = z + np.concatenate([r * ang for r in np.linspace(rad, rad + 0.3, 6)])
                out = out[fam.U.contains(out)]
                support_ok &= bool(np.all(k(out) == 0))
                h = eps / 1e3
                n = 0
                while n < 4:
                    w = z + R * complex(*rng.uniform(-1, 1, 2))
                    if not 0.1 * R < abs(m(w) - m(z)) < 0.95 * R:
                        continue
                    n += 1

                    def central(w, h):
                        return complex((k(w + h) - k(w - h)) / (2 * h), (k(w + 1j * h) - k(w - 1j * h)) / (2 * h))

                    fd = (4 * central(w, h / 2) - central(w, h)) / 3
                    g = complex(k.gradient(w))
                    grad_err = max(grad_err, abs(g - fd) / abs(g))
    ok = mass_err <= 1e-6 and support_ok and grad_err <= 1e-5
    criterion(5, ok, f"max mass error {mass_err:.1e}, zero outside claimed support: {support_ok}, "
                     f"max relative gradient error {grad_err:.1e}")


def test_c06_localized_locality(criterion):
    spec = GridSpec.covering(-0.8, 0.8, -0.8, 0.8, 1 / 64)
    eps = 0.05
    R = eps * math.log(1 / eps)
    Y = Disk(0j, 0.2)
    region = Disk(0j, 0.45)
    nodes = spec.nodes()[Y.mask(spec)]
    equal = 0
    for rep in range(50):
        h = sample_gff(spec, 2, 2 * rep)
        other = sample_gff(spec, 2, 2 * rep + 1)
        masked = splice(h, other, Disk(0j, 0.2 + R + 1e-9))
        ga = build_graph(localized_mollify(h, eps), region, XI)
        gb = build_graph(localized_mollify(masked, eps), region, XI)
        rng = np.random.default_rng(rep)
        same = True
        for _ in range(3):
            z, w = rng.choice(nodes, 2, replace=False)
            same &= internal_distance(ga, z, w, Y).raw == internal_distance(gb, z, w, Y).raw
        equal += same
    criterion(6, equal == 50, f"{equal}/50 replicas with identical internal distances (3 pairs each)")


def test_c07_translation_equivariance(criterion):
    s, eps = 1 / 64, 0.05
    spec = GridSpec(80, 80, s)
    equal = 0
    for rep in range(50):
        rng = np.random.default_rng(100 + rep)
        h = sample_gff(spec, 2, rep)
        b = complex(*rng.integers(-4, 5, 2)) * s
        gh = build_graph(heat_mollify(h, eps), None, XI)
        gH = build_graph(heat_mollify(translate(h, b), eps), None, XI)
        same = True
        for _ in range(3):
            i = rng.integers(28, 52, 4)
            z, w = complex(gH.spec.node(i[0], i[1])), complex(gH.spec.node(i[2], i[3]))
            if z == w:
                continue
            same &= distance(gH, z, w).raw == distance(gh, z + b, w + b).raw
        equal += same
    criterion(7, equal == 50, f"{equal}/50 replicas with exactly equal translated distances")


def test_c08_affine_identity(criterion):
    const = run_experiment("affine_identity", ExperimentConfig(field="constant", constant=0.6))
    sampled = run_experiment("affine_identity", ExperimentConfig())
    ind = sampled.indicators
    meds = [v["median_discrepancy"] for v in ind.values() if isinstance(v, dict) and "median_discrepancy" in v]
    ok = const.passed and sampled.passed
    criterion(8, ok, f"constant field max discrepancy "
                     f"{max(v['max_discrepancy'] for v in const.indicators.values() if isinstance(v, dict)):.1e}; "
                     f"sampled medians {', '.join(f'{m:.4f}' for m in meds)}; flags {sampled.flags}")


def test_c09_mollifier_comparison(criterion):
    rep = run_experiment("mollifier_comparison", ExperimentConfig(replicas=20))
    criterion(9, rep.passed, f"flags {rep.flags}")


def test_c10_log_mollification(criterion):
    rep = run_experiment("log_mollification", ExperimentConfig())
    criterion(10, rep.passed, f"flags {rep.flags}; z^2+2 {rep.indicators.get('z^2+2')}")


def test_c11_small_scale_sandwich(criterion):
    rep = run_experiment("small_scale_sandwich", ExperimentConfig(replicas=100))
    criterion(11, rep.passed, f"flags {rep.flags}; indicators {rep.indicators}")


def test_c12_event_locality(criterion):
    rep = run_experiment("event_locality_test", ExperimentConfig(replicas=100))
    criterion(12, rep.passed, f"{rep.indicators['matches']}/{rep.indicators['replicas']} invariant; "
                              f"precondition_ok {rep.indicators['precondition_ok']}")


def test_c13_scaling_self_consistency(criterion, real_table):
    rv = regular_variation_check(real_table, 0.5)
    detail = ", ".join(f"eps={r.eps:g}: {r.deviation:.4f} vs 2se {2 * r.stderr:.4f}" for r in rv.rows)
    criterion(13, rv.all_within, f"q_hat={real_table.q_hat:.3f}; {detail}")


def test_c14_coordinate_change_trend(criterion, real_table):
    # the table stops at eps = 0.0125, so the levels are normalized by the power law
    # with the fitted exponent rather than by table lookup
    cfg = ExperimentConfig(replicas=50, params=Params(real_table.xi, real_table.q_hat))
    rep = run_experiment("convergence_diagnostic", cfg)
    ind = rep.indicators
    criterion(14, rep.passed, f"fraction nonincreasing {ind['fraction_spread_nonincreasing']:.2f} (need 0.70); "
                              f"median spread {', '.join(f'{v:.4f}' for v in ind['median_spread'])}; "
                              f"median relative spread {', '.join(f'{v:.4f}' for v in ind['median_relative_spread'])}")
