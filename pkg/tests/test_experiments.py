import json
import math
from dataclasses import replace

import numpy as np
import pytest

from lfpplab.conformal import Affine, MapFamily, default_family, identity, save_family
from lfpplab.experiments import (ConfigError, ExperimentConfig, PreconditionError, parse_config, run_experiment)
from lfpplab.experiments.affine import affine_identity
from lfpplab.experiments.common import Normalizer
from lfpplab.experiments.convergence import check_schedule, convergence_diagnostic
from lfpplab.experiments.events import (PROXY, _closed, _inner, _outer, event_improving, event_initial,
                                        event_locality_test, geometry, initial_indicator, initial_slacks,
                                        improving_indicators, metric_graphs, pinned_field)
from lfpplab.experiments.report import ExperimentReport, wilson
from lfpplab.lfpp import distance_around_annulus, set_distance


def _family_file(tmp_path, maps, name="fam"):
    fam = default_family()
    p = tmp_path / f"{name}.ini"
    save_family(MapFamily(tuple(maps), fam.tau, fam.V, fam.U, name), p)
    return str(p)


# ---------------------------------------------------------------- affine identity

FAST_AFFINE = dict(spacings=(1 / 64, 1 / 128), half_width=0.125, pairs=4)


def test_affine_constant_field_exact():
    cfg = ExperimentConfig(field="constant", constant=0.7).with_options(**FAST_AFFINE)
    rep = affine_identity(cfg)
    assert rep.flags["exact_identity"]
    assert max(rep.column("discrepancy")) <= 1e-12


def test_affine_trivial_map_exact_on_gff():
    cfg = ExperimentConfig(replicas=2).with_options(a=1.0, b=0.0, **FAST_AFFINE)
    rep = affine_identity(cfg)
    assert rep.flags["exact_identity"]


def test_affine_rejects_non_nesting_map():
    with pytest.raises(ConfigError, match="options.a"):
        affine_identity(ExperimentConfig().with_options(a=1.5, **FAST_AFFINE))
    with pytest.raises(ConfigError, match="options.b"):
        affine_identity(ExperimentConfig().with_options(b=0.001, **FAST_AFFINE))


# ---------------------------------------------------------------- convergence

FAST_CONV = dict(convergence_eps=(0.04, 0.02, 0.01), convergence_points_per_eps=2, sources=2, targets_per_source=1)


def test_schedule_checks():
    assert check_schedule((0.01, 0.04, 0.02)) == (0.04, 0.02, 0.01)
    with pytest.raises(ConfigError):
        check_schedule((0.04, 0.02))
    with pytest.raises(ConfigError):
        check_schedule((0.04, 0.02, 0.015))


def test_convergence_single_map_has_zero_spread(tmp_path):
    fam = default_family()
    cfg = replace(ExperimentConfig(replicas=1), family_file=_family_file(tmp_path, [identity(fam.U)]))
    rep = convergence_diagnostic(cfg.with_options(**FAST_CONV))
    sp = rep.column("spread")
    assert sp.size == 3 and np.all(sp == 0)


def test_convergence_rotation_symmetric_family(tmp_path):
    # the rotation by pi about the centre of V maps V onto itself and has |phi'| = 1,
    # so with q log|phi'| = 0 both members see a rotated copy of one field and the
    # distances between rotated points coincide up to lattice symmetry
    fam = default_family()
    c = ExperimentConfig().V.center
    rot = Affine(-1.0, 2 * c, fam.U, "rot")
    cfg = replace(ExperimentConfig(replicas=1), family_file=_family_file(tmp_path, [identity(fam.U), rot]))
    rep = convergence_diagnostic(cfg.with_options(**FAST_CONV))
    assert max(v for v in rep.column("spread")) <= 1e-9


def test_convergence_default_family_needs_small_eps():
    with pytest.raises(PreconditionError, match="z\\^2\\+2"):
        convergence_diagnostic(ExperimentConfig(replicas=1).with_options(**FAST_CONV))


# ---------------------------------------------------------------- events


def test_event_initial_monotone_in_C():
    rep = event_initial(ExperimentConfig(replicas=3))
    assert rep.flags["monotone_in_C"]
    freq = rep.column("frequency")
    assert freq.size == 3 and np.all(np.diff(freq) >= 0)
    # the indicator is exactly the sign of the slack plus log C
    for s1, s2, ind in zip(rep.column("slack_sup"), rep.column("slack_inf"),
                           [r["indicator"] for r in rep.rows if "indicator" in r]):
        assert ind == (min(s1, s2) + math.log(ExperimentConfig().C) >= 0)


def test_initial_indicator_threshold():
    vals = {PROXY: {"around": 2.0, "across": 1.0}, "m": {"around": 2.0, "across": 1.0},
            "_ratio": {"sup_ratio": 1.0, "sup_inv": 1.0}}
    s1, s2 = initial_slacks(vals)
    assert s1 == pytest.approx(-math.log(2)) and s2 == pytest.approx(-math.log(2))
    assert initial_indicator(vals, 2.0) and not initial_indicator(vals, 1.99)


def test_event_initial_rejects_large_eps():
    with pytest.raises(PreconditionError):
        event_initial(ExperimentConfig(replicas=1), eps=0.02)


@pytest.mark.parametrize("where", ["outside", "corner"])
def test_locality_invariant(where):
    rep = event_locality_test(ExperimentConfig(replicas=2).with_options(resample=where))
    assert rep.flags["precondition_ok"] and rep.flags["indicator_invariant"]
    assert np.all(rep.column("max_relative_change") == 0)


def test_improving_indicators_thresholds():
    v = {"c1": -math.log(1.25), "cond2": True, "c3": -math.log(10), "c4": math.log(4)}
    e = improving_indicators(v, 0.25, 10.0)
    assert e["all"]
    assert not improving_indicators(v, 0.24, 10.0)["1"]
    assert not improving_indicators(v, 0.25, 9.9)["3"]
    assert not improving_indicators({**v, "c4": -1.0}, 0.25, 10.0)["4"]


def test_improving_condition3_recomputed(tmp_path):
    # identity-only family on a constant field: condition 3 is the ratio of the
    # across and around distances of the reference metric, which a direct
    # computation on the same graph must reproduce
    fam = default_family()
    cfg = replace(ExperimentConfig(replicas=1, field="constant", constant=0.3),
                  family_file=_family_file(tmp_path, [identity(fam.U)]))
    rep = event_improving(cfg)
    c3 = rep.column("c3")[0]
    x, r, eps, al = 0.75 + 0j, 0.12, 0.0025, cfg.alpha
    geo = geometry(cfg, x, r, eps, 3 * r / 4, 5 * r / 4)
    graphs = metric_graphs(cfg, geo, pinned_field(cfg, geo, 0))
    s = geo.spacing
    expect = math.inf
    for k, G in graphs.items():
        if isinstance(k, tuple):
            continue
        around = float(distance_around_annulus(G, x, al * r, r))
        across = float(set_distance(G, _inner(x, al * r, s), _outer(x, r, s), within=_closed(x, al * r, r, s)))
        expect = min(expect, math.log(across / around))
    assert c3 == pytest.approx(expect, rel=1e-12)
    # a thin annulus is much cheaper to cross than to go around
    assert c3 < 0


def test_improving_precondition():
    with pytest.raises(PreconditionError, match="alpha"):
        event_improving(ExperimentConfig(replicas=1), alpha=0.8)
    with pytest.raises(PreconditionError):
        event_improving(ExperimentConfig(replicas=1), r=0.05)


# ---------------------------------------------------------------- config and reports


def test_config_errors_carry_line_numbers():
    text = "[experiment]\nname = event_initial\n\n[thresholds]\nalpha = 2.5\n"
    with pytest.raises(ConfigError, match=r"thresholds.alpha \(line 5\)"):
        parse_config(text)
    with pytest.raises(ConfigError, match=r"grid.bogus \(line 2\)"):
        parse_config("[grid]\nbogus = 1\n")
    with pytest.raises(ConfigError, match=r"experiment.replicas \(line 3\)"):
        parse_config("[experiment]\nname = x\nreplicas = many\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[nope]\na = 1\n")


def test_config_missing_table(tmp_path):
    with pytest.raises(ConfigError, match=r"scaling.table \(line 2\): file not found"):
        parse_config("[scaling]\ntable = missing.csv\n", base_dir=tmp_path)


def test_config_seed_override_and_options():
    cfg = parse_config("[experiment]\nseed = 4\n[options]\npairs = 3\n", seed_override=11)
    assert cfg.seed == 11 and cfg.option("pairs", 16, int) == 3


def test_unknown_experiment():
    with pytest.raises(ConfigError, match="unknown experiment"):
        run_experiment("nope", ExperimentConfig())


def test_report_deterministic(tmp_path):
    cfg = ExperimentConfig(replicas=2).with_options(**FAST_AFFINE)
    a, b = run_experiment("affine_identity", cfg), run_experiment("affine_identity", cfg)
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for ext in ("json", "csv"):
        assert (tmp_path / "a" / f"affine_identity.{ext}").read_bytes() == \
               (tmp_path / "b" / f"affine_identity.{ext}").read_bytes()
    data = json.loads((tmp_path / "a" / "affine_identity.json").read_text())
    assert data["provenance"]["master_seed"] == 0 and data["passed"] == a.passed


def test_report_undeclared_column():
    rep = ExperimentReport("x", {})
    with pytest.raises(ValueError):
        rep.add_row(v=1.0)
    rep.declare(v="exact")
    rep.add_row(v=1.0, label="a")
    rep.add_row(w_flag=True)
    assert list(rep.column("v")) == [1.0]


def test_wilson_interval():
    lo, hi = wilson(0, 10)
    assert lo == 0 and 0 < hi < 0.35
    lo, hi = wilson(5, 10)
    assert lo < 0.5 < hi and lo == pytest.approx(1 - hi, abs=1e-12)


# ---------------------------------------------------------------- log mollification


def test_log_mollification_affine_family(tmp_path):
    fam = default_family()
    maps = [identity(fam.U), Affine(2.0, 0.0, fam.U, "2z")]
    cfg = replace(ExperimentConfig(), family_file=_family_file(tmp_path, maps))
    rep = run_experiment("log_mollification", cfg.with_options(pitch=0.2, log_eps=(0.02, 0.01, 0.005)))
    assert rep.flags == {"affine_error_le_1e-8": True}
    assert max(rep.column("error")) <= 1e-8
    # log|phi'| is constant for affine maps, so there is nothing to oscillate
    assert max(rep.column("oscillation")) <= 1e-12


def test_log_mollification_support_precondition():
    cfg = ExperimentConfig().with_options(pitch=0.2, log_eps=(0.04, 0.02, 0.01))
    with pytest.raises(PreconditionError, match="kernel support exits U"):
        run_experiment("log_mollification", cfg)
