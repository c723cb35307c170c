"""Command-line entry point: ``lfpp <command> ...``.

Exit codes: 0 success (for experiments: every pass flag true), 1 experiment
failed a flag, 2 usage, configuration or precondition error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .gff import (DETERMINISTIC, HEAT, LOCAL, RAW, GridField, GridSpec, circle_average, deterministic_field,
                  load_snapshot, mollify, sample_gff, save_snapshot)
from .lfpp import build_graph, distance, distance_around_annulus, enumerate_distance, graph_from_factors
from .scaling import ScalingTable, build_table, fit_exponent_ci, regular_variation_check

log = logging.getLogger("lfpplab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or inputs; exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance for one CLI run, written next to the outputs before the run
    starts and rewritten when it ends."""

    command: str
    path: Path
    config_path: str | None = None
    master_seed: int | None = None
    code_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    outputs: list[str] = field(default_factory=list)

    def embedded(self) -> dict:
        """The reproducibility-relevant part, without timestamps."""
        return {"command": self.command, "config_path": self.config_path, "master_seed": self.master_seed,
                "code_version": self.code_version}

    def write(self) -> None:
        d = {**self.embedded(), "started": self.started, "finished": self.finished, "status": self.status,
             "outputs": self.outputs}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    def add(self, *paths) -> None:
        self.outputs.extend(str(p) for p in paths)

    def finalize(self, status: str) -> None:
        self.status = status
        self.finished = _now()
        self.write()


def _cleanup(paths) -> None:
    for p in paths:
        try:
            Path(p).unlink()
        except FileNotFoundError:
            pass


# ------------------------------------------------------------------ helpers


def _complex(text: str) -> complex:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected 'x,y', got {text!r}") from None
    if len(parts) != 2:
        raise UsageError(f"expected 'x,y', got {text!r}")
    return complex(*parts)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _load_field(path: str) -> GridField:
    try:
        return load_snapshot(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _mollified(args) -> GridField:
    f = _load_field(args.snapshot)
    if f.kind in (HEAT, LOCAL) or args.kernel == "none":
        return f
    if args.eps is None:
        raise UsageError("--eps is required for an unmollified snapshot")
    try:
        return mollify(f, args.eps, args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_pairs(args) -> list[tuple[complex, complex]]:
    rows = [p for p in (args.pair or [])]
    if args.pairs:
        with open(args.pairs) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append(line)
    out = []
    for r in rows:
        v = _floats(r.replace(" ", ",").replace("\t", ","))
        if len(v) != 4:
            raise UsageError(f"query pair needs four numbers 'zx,zy,wx,wy', got {r!r}")
        out.append((complex(v[0], v[1]), complex(v[2], v[3])))
    if not out:
        raise UsageError("no query pairs given (use --pair or --pairs)")
    return out


def _fmt(v: float | None) -> str:
    return "inf" if v is None or math.isinf(v) else repr(float(v))


# ------------------------------------------------------------------ commands


def cmd_sample(args, manifest: RunManifest) -> int:
    if args.nx < 2 or args.ny < 2:
        raise UsageError("--nx and --ny must be at least 2")
    if not args.spacing > 0:
        raise UsageError("--spacing must be positive")
    spec = GridSpec(args.nx, args.ny, args.spacing, _complex(args.origin))
    if args.constant is not None:
        f = deterministic_field(spec, args.constant)
    else:
        try:
            f = sample_gff(spec, args.torus_factor, _seed(args.seed))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    manifest.master_seed = _seed(args.seed)
    manifest.add(args.out)
    save_snapshot(f, args.out)
    v = f.values
    print(f"nx={spec.nx} ny={spec.ny} spacing={spec.spacing:g} kind={f.kind}")
    print(f"min={v.min():.6g} max={v.max():.6g} mean={v.mean():.6g}")
    if f.kind == RAW:
        try:
            print(f"normalization check: radius-1 circle average about the window center = "
                  f"{circle_average(f, spec.center, 1.0):.3g}")
        except ValueError:
            print("normalization check skipped: the radius-1 circle does not fit in the window")
    return EXIT_OK


def cmd_mollify(args, manifest: RunManifest) -> int:
    f = _load_field(args.snapshot)
    if f.kind not in (RAW, DETERMINISTIC):
        raise UsageError(f"snapshot holds a field of kind {f.kind!r}; expected a raw field")
    try:
        m = mollify(f, args.eps, args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest.add(args.out)
    save_snapshot(m, args.out)
    ok = m.valid
    print(f"kernel={args.kernel} eps={args.eps:g} valid nodes={int(ok.sum())}/{ok.size}")
    return EXIT_OK


def _graph(args, moll: GridField):
    """Metric graph of a mollified snapshot; ``--kernel none`` uses the snapshot values
    directly as the field in the weights (for tiny test grids)."""
    try:
        if args.kernel == "none" and moll.kind not in (HEAT, LOCAL):
            if not np.all(np.isfinite(moll.values)):
                raise ValueError("snapshot has non-finite values")
            mask = np.ones(moll.spec.shape, dtype=bool)
            return graph_from_factors(moll.spec, mask, np.exp(args.xi * moll.values), args.xi)
        return build_graph(moll, None, args.xi)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_dist(args, manifest: RunManifest) -> int:
    moll = _mollified(args)
    pairs = _read_pairs(args)
    g = _graph(args, moll)
    a_eps = None
    if args.scaling_table:
        try:
            if not moll.param:
                raise ValueError("snapshot carries no mollification scale")
            a_eps = ScalingTable.from_csv(args.scaling_table).a(moll.param)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"--scaling-table: {exc}") from None
    header = ["zx", "zy", "wx", "wy", "raw"] + (["normalized"] if a_eps else []) + (
        ["oracle"] if args.oracle == "enumerate" else [])
    rows = []
    geo_dir = Path(args.geodesics) if args.geodesics else None
    for k, (z, w) in enumerate(pairs):
        try:
            res = distance(g, z, w)
        except ValueError as exc:
            raise UsageError(f"pair {k}: {exc}") from None
        if not res.connected and not args.allow_inf:
            raise UsageError(f"pair {k} ({z} -> {w}) is disconnected; pass --allow-inf to record inf")
        raw = float(res)
        row = [repr(z.real), repr(z.imag), repr(w.real), repr(w.imag), _fmt(raw)]
        if a_eps:
            row.append(_fmt(raw / a_eps))
        if args.oracle == "enumerate":
            if g.n_nodes > 36:
                raise UsageError("--oracle enumerate is limited to graphs with at most 36 nodes")
            row.append(_fmt(enumerate_distance(g, z, w)))
        rows.append(row)
        if geo_dir is not None and res.connected:
            geo_dir.mkdir(parents=True, exist_ok=True)
            p = geo_dir / f"geodesic_{k:04d}.csv"
            manifest.add(p)
            np.savetxt(p, np.column_stack([res.points.real, res.points.imag]), delimiter=",",
                       header="x,y", comments="", fmt="%.17g")
    manifest.add(args.out)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
    print(f"wrote {len(rows)} distances to {args.out}")
    return EXIT_OK


def cmd_around(args, manifest: RunManifest) -> int:
    moll = _mollified(args)
    x = _complex(args.center)
    g = _graph(args, moll)
    try:
        res = distance_around_annulus(g, x, args.r1, args.r2)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(_fmt(float(res)))
    if args.out:
        manifest.add(args.out)
        np.savetxt(args.out, np.column_stack([res.points.real, res.points.imag]), delimiter=",",
                   header="x,y", comments="", fmt="%.17g")
    return EXIT_OK


def cmd_aeps(args, manifest: RunManifest) -> int:
    eps = _floats(args.eps)
    if not eps or any(not 0 < e < math.exp(-1) for e in eps):
        raise UsageError("--eps values must lie in (0, 1/e)")
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    seed = _seed(args.seed)
    manifest.master_seed = seed
    try:
        table = build_table(eps, args.xi, lambda e: e / args.points_per_eps, args.samples, seed,
                            workers=args.threads, kernel=args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest.add(args.out)
    table.to_csv(args.out)
    for e in table.entries:
        print(f"eps={e.eps:g} a_hat={e.a_hat:.6g} stderr={e.stderr:.3g} n={e.n_samples}")
    if table.q_hat is not None:
        print(f"q_hat={table.q_hat:.6g}")
    return EXIT_OK


def cmd_fit_q(args, manifest: RunManifest) -> int:
    try:
        table = ScalingTable.from_csv(args.table)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"{args.table}: {exc}") from None
    if len(table.entries) < 2:
        raise UsageError("need at least two table entries to fit an exponent")
    fit = fit_exponent_ci(table, n_boot=args.bootstrap, seed=_seed(args.seed))
    print(f"slope={fit.slope:.6g} q_hat={fit.q_hat:.6g} ci95=[{fit.ci[0]:.6g}, {fit.ci[1]:.6g}]")
    if len(table.entries) >= 2:
        try:
            rv = regular_variation_check(replace(table, q_hat=fit.q_hat), 0.5)
            for row in rv.rows:
                print(f"eps={row.eps:g} deviation={row.deviation:.3g} stderr={row.stderr:.3g}")
        except ValueError:
            pass
    if args.out:
        manifest.add(args.out)
        replace(table, q_hat=fit.q_hat).to_csv(args.out)
    return EXIT_OK


def cmd_experiment(args, manifest: RunManifest) -> int:
    from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, run_experiment

    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(sorted(EXPERIMENTS))}")
    try:
        if args.config:
            cfg = load_config(args.config, args.seed)
        else:
            cfg = ExperimentConfig(name=args.name, seed=_seed(args.seed))
        if args.constant_field:
            cfg = replace(cfg, field="constant")
        if args.threads:
            cfg = replace(cfg, workers=max(1, min(cfg.workers, args.threads)))
        manifest.config_path = args.config
        manifest.master_seed = cfg.seed
        rep = run_experiment(args.name, cfg)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    rep.provenance["run"] = manifest.embedded()
    out = Path(args.out)
    manifest.add(out / f"{rep.name}.json", out / f"{rep.name}.csv")
    rep.write(out)
    for k, v in rep.flags.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    print(f"{rep.name}: {'passed' if rep.passed else 'failed'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _seed(given: int | None) -> int:
    if given is not None:
        return given
    env = os.environ.get("LFPP_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError("LFPP_SEED: not an integer") from None
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lfpp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lfpplab {__version__}")
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample a pinned GFF (or a constant field) into a snapshot")
    s.add_argument("--nx", type=int, required=True)
    s.add_argument("--ny", type=int, required=True)
    s.add_argument("--spacing", type=float, required=True)
    s.add_argument("--origin", default="0,0")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--torus-factor", type=float, default=2.0)
    s.add_argument("--constant", type=float, default=None, help="write a constant field instead of a GFF")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("mollify", help="mollify a raw snapshot")
    m.add_argument("snapshot")
    m.add_argument("--eps", type=float, required=True)
    m.add_argument("--kernel", choices=["heat", "localized"], default="heat")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mollify)

    def metric_args(q):
        q.add_argument("snapshot")
        q.add_argument("--eps", type=float, default=None, help="mollification scale for raw snapshots")
        q.add_argument("--kernel", choices=["heat", "localized", "none"], default="heat",
                       help="'none' uses raw snapshot values directly")
        q.add_argument("--xi", type=float, required=True)

    d = sub.add_parser("dist", help="LFPP distances between query pairs")
    metric_args(d)
    d.add_argument("--pair", action="append", help="zx,zy,wx,wy (repeatable)")
    d.add_argument("--pairs", help="file with one 'zx zy wx wy' per line")
    d.add_argument("--scaling-table", help="add a column normalized by a_eps from this table")
    d.add_argument("--allow-inf", action="store_true", help="record disconnected pairs as inf")
    d.add_argument("--oracle", choices=["none", "enumerate"], default="none",
                   help="also compute each distance by exhaustive path enumeration (tiny grids)")
    d.add_argument("--geodesics", help="directory for geodesic polylines")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dist)

    a = sub.add_parser("around", help="distance around an annulus")
    metric_args(a)
    a.add_argument("--center", required=True)
    a.add_argument("--r1", type=float, required=True)
    a.add_argument("--r2", type=float, required=True)
    a.add_argument("--out", help="write the separating loop as a polyline")
    a.set_defaults(func=cmd_around)

    e = sub.add_parser("aeps", help="estimate the median crossing constants a_eps")
    e.add_argument("--eps", required=True, help="comma-separated scales")
    e.add_argument("--xi", type=float, required=True)
    e.add_argument("--samples", type=int, default=32)
    e.add_argument("--points-per-eps", type=float, default=4.0)
    e.add_argument("--kernel", choices=["heat", "localized"], default="heat")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_aeps)

    f = sub.add_parser("fit-q", help="fit q_hat to a scaling table")
    f.add_argument("table")
    f.add_argument("--bootstrap", type=int, default=1000)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", help="write the table with the fitted q_hat")
    f.set_defaults(func=cmd_fit_q)

    x = sub.add_parser("experiment", help="run a named experiment")
    x.add_argument("name")
    x.add_argument("--config")
    x.add_argument("--seed", type=int, default=None, help="override the config seed")
    x.add_argument("--constant-field", action="store_true", help="replace the GFF by the constant field")
    x.add_argument("--out", default="results")
    x.set_defaults(func=cmd_experiment)
    return p


def _manifest_path(args) -> Path:
    if args.command == "experiment":
        return Path(args.out) / f"{args.name}.manifest.json"
    if getattr(args, "out", None):
        return Path(args.out + ".manifest.json")
    return Path(f"lfpp-{args.command}.manifest.json")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lfpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help, --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("lfpp: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    argv_used = sys.argv[1:] if argv is None else list(argv)
    manifest = RunManifest(" ".join(["lfpp", *argv_used]), _manifest_path(args))
    manifest.write()
    try:
        code = args.func(args, manifest)
    except UsageError as exc:
        _cleanup(manifest.outputs)
        manifest.outputs.clear()
        manifest.finalize("error")
        print(f"lfpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BaseException:
        _cleanup(manifest.outputs)
        manifest.outputs.clear()
        manifest.finalize("error")
        raise
    manifest.finalize("passed" if code == EXIT_OK else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
