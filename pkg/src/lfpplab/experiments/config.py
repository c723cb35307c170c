"""Sectioned key-value experiment configuration.

Example::

    [experiment]
    name = affine_identity
    seed = 7
    replicas = 4

    [params]
    xi = 0.2
    q = 2.0

    [schedule]
    eps = 0.04, 0.02, 0.01

Unknown sections or keys and malformed values raise :class:`ConfigError`, whose
message names the offending key and its line in the file.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field as dc_field, fields, replace
from pathlib import Path

from ..conformal import MapFamily, default_family, load_family
from ..gff import Params
from ..regions import Disk, Region, compactly_contains, format_region, parse_region
from ..scaling import ScalingTable


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class PreconditionError(ConfigError):
    """The configured geometry or schedule violates an experiment precondition."""


SCHEMA = {
    "experiment": {"name", "seed", "replicas", "workers"},
    "params": {"xi", "q", "gamma"},
    "grid": {"points_per_eps", "torus_factor", "field", "constant"},
    "regions": {"U", "V", "W_tilde", "W"},
    "family": {"file", "tau"},
    "schedule": {"eps", "eps_ref"},
    "thresholds": {"zeta", "delta", "alpha", "A", "C", "rho"},
    "scaling": {"table"},
    "options": None,  # free-form, experiment specific
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "affine_identity"
    seed: int = 0
    replicas: int = 8
    workers: int = 1
    params: Params = dc_field(default_factory=lambda: Params(0.2, 2.0))
    points_per_eps: float = 8.0
    torus_factor: float = 2.0
    field: str = "gff"
    constant: float = 0.0
    U: Region = Disk(0.6 + 0j, 0.55)
    V: Region = Disk(0.6 + 0j, 0.35)
    W_tilde: Region = Disk(0.6 + 0j, 0.3)
    W: Region = Disk(0.6 + 0j, 0.25)
    family_file: str | None = None
    tau: float = 2.0
    eps: tuple = (0.04, 0.02, 0.01)
    eps_ref: float | None = None
    zeta: float = 0.1
    delta: float = 0.25
    alpha: float = 0.95
    A: float = 10.0
    C: float = 4.0
    rho: float = 0.1
    table_path: str | None = None
    options: dict = dc_field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if self.eps_ref is None:
            object.__setattr__(self, "eps_ref", min(eps))
        self.validate()

    # ------------------------------------------------------------ checks
    def validate(self) -> None:
        if self.replicas < 1:
            raise ConfigError("experiment.replicas: must be >= 1")
        if self.workers < 1:
            raise ConfigError("experiment.workers: must be >= 1")
        if not self.eps:
            raise ConfigError("schedule.eps: empty schedule")
        if any(not 0 < e < math.exp(-1) for e in self.eps):
            raise ConfigError("schedule.eps: values must lie in (0, 1/e)")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError("schedule.eps: must be strictly decreasing")
        if self.eps_ref > min(self.eps) * (1 + 1e-12):
            raise ConfigError("schedule.eps_ref: must not exceed min(schedule.eps)")
        if self.field not in ("gff", "constant"):
            raise ConfigError("grid.field: expected 'gff' or 'constant'")
        if self.points_per_eps < 2:
            raise ConfigError("grid.points_per_eps: must be >= 2")
        if self.torus_factor < 2:
            raise ConfigError("grid.torus_factor: must be >= 2")
        if not self.tau > 1:
            raise ConfigError("family.tau: must exceed 1")
        if not 0 < self.zeta < 1:
            raise ConfigError("thresholds.zeta: must lie in (0, 1)")
        if not self.delta > 0:
            raise ConfigError("thresholds.delta: must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("thresholds.alpha: must lie in (0, 1)")
        for key in ("A", "C", "rho"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"thresholds.{key}: must be positive")
        chain = [("W", self.W), ("W_tilde", self.W_tilde), ("V", self.V), ("U", self.U)]
        for (ni, inner), (no, outer) in zip(chain, chain[1:]):
            if not compactly_contains(outer, inner):
                raise ConfigError(f"regions.{ni}: not compactly contained in regions.{no}")
        if self.table_path is not None and not Path(self.table_path).is_file():
            raise ConfigError(f"scaling.table: file not found: {self.table_path}")
        if self.family_file is not None and not Path(self.family_file).is_file():
            raise ConfigError(f"family.file: file not found: {self.family_file}")

    # ------------------------------------------------------------ derived
    def family(self) -> MapFamily:
        try:
            if self.family_file:
                fam = load_family(self.family_file)
                return fam if fam.tau == self.tau else replace(fam, tau=self.tau)
            return default_family(self.U, self.V, self.tau)
        except ValueError as exc:
            raise ConfigError(f"family.file: {exc}") from None

    def table(self) -> ScalingTable | None:
        if self.table_path is None:
            return None
        try:
            t = ScalingTable.from_csv(self.table_path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"scaling.table: {exc}") from None
        if not math.isclose(t.xi, self.params.xi, rel_tol=1e-12):
            raise ConfigError(f"scaling.table: table xi={t.xi} differs from params.xi={self.params.xi}")
        return t

    def option(self, key: str, default, kind=None):
        if key not in self.options:
            return default
        raw = self.options[key]
        kind = kind or type(default)
        if not isinstance(raw, str):
            return tuple(float(v) for v in raw) if kind in (tuple, list) else kind(raw)
        try:
            if kind is bool:
                return str(raw).strip().lower() in ("1", "true", "yes", "on")
            if kind in (tuple, list):
                return tuple(float(v) for v in str(raw).split(",") if v.strip())
            if kind is complex:
                return complex(str(raw).replace(" ", ""))
            return kind(raw)
        except ValueError:
            raise ConfigError(f"options.{key}: cannot parse {raw!r}") from None

    def with_options(self, **kw) -> "ExperimentConfig":
        opts = dict(self.options)
        opts.update({k: v for k, v in kw.items()})
        return replace(self, options=opts)

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Region):
                v = format_region(v)
            elif isinstance(v, Params):
                v = {"xi": v.xi, "q": v.q, "gamma": v.gamma}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


# ---------------------------------------------------------------- parsing


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line number in the source text."""
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = n
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).strip())] = n
    return where


def parse_config(text: str, source: str | None = None, base_dir: Path | None = None,
                 seed_override: int | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    lines = _line_numbers(text)

    def where(sec, key=None):
        n = lines.get((sec, key))
        label = f"{sec}.{key}" if key else f"[{sec}]"
        return f"{label} (line {n})" if n else label

    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{where(sec)}: unknown section")
        allowed = SCHEMA[sec]
        if allowed is None:
            continue
        for key in cp[sec]:
            if key not in allowed:
                raise ConfigError(f"{where(sec, key)}: unknown key")

    kw: dict = {}

    def get(sec, key, conv, dest=None):
        if not cp.has_option(sec, key):
            return
        raw = cp.get(sec, key)
        try:
            kw[dest or key] = conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where(sec, key)}: invalid value {raw!r} ({exc})") from None

    def path(raw):
        p = Path(raw.strip())
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        return str(p)

    def floats(raw):
        vals = tuple(float(v) for v in raw.split(",") if v.strip())
        if not vals:
            raise ValueError("empty list")
        return vals

    get("experiment", "name", str.strip)
    get("experiment", "seed", int)
    get("experiment", "replicas", int)
    get("experiment", "workers", int)
    get("grid", "points_per_eps", float)
    get("grid", "torus_factor", float)
    get("grid", "field", str.strip)
    get("grid", "constant", float)
    for key in ("U", "V", "W_tilde", "W"):
        get("regions", key, parse_region)
    get("family", "file", path, "family_file")
    get("family", "tau", float)
    get("schedule", "eps", floats)
    get("schedule", "eps_ref", float)
    for key in ("zeta", "delta", "alpha", "A", "C", "rho"):
        get("thresholds", key, float)
    get("scaling", "table", path, "table_path")
    if cp.has_section("params"):
        sec = cp["params"]
        try:
            xi = float(sec.get("xi", 0.2))
            q = float(sec.get("q", 2.0))
            gamma = sec.get("gamma")
            kw["params"] = Params(xi, q, None if gamma is None else float(gamma))
        except ValueError as exc:
            raise ConfigError(f"{where('params')}: {exc}") from None
    if cp.has_section("options"):
        kw["options"] = dict(cp["options"])
    if seed_override is not None:
        kw["seed"] = seed_override
    kw["source"] = source

    try:
        cfg = ExperimentConfig(**kw)
    except ConfigError as exc:
        msg = str(exc)
        key = msg.split(":", 1)[0]
        if "." in key:
            sec, k = key.split(".", 1)
            n = lines.get((sec, k))
            if n:
                msg = f"{key} (line {n}):{msg.split(':', 1)[1]}"
        raise ConfigError(msg) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    if seed_override is None and os.environ.get("LFPP_SEED"):
        try:
            seed_override = int(os.environ["LFPP_SEED"])
        except ValueError:
            raise ConfigError("LFPP_SEED: not an integer") from None
    return parse_config(p.read_text(), str(p), p.parent, seed_override)
