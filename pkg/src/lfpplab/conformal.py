"""Conformal maps with derivatives, membership checks and distortion estimates."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.spatial import cKDTree
from shapely.geometry import LinearRing

from .gff import CHANGED, GridField, GridSpec, bilinear
from .regions import Disk, Region, compactly_contains, format_region, parse_region


class ConformalMap:
    """Holomorphic map with phi, phi', phi'' and an inverse on a declared domain."""

    domain: Region | None = None
    name: str = "map"

    def __call__(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def deriv2(self, z):
        raise NotImplementedError

    def inverse(self, w):
        """phi^{-1}(w); NaN where w is not the image of a domain point."""
        raise NotImplementedError

    def _mask_domain(self, z):
        if self.domain is None:
            return z
        z = np.asarray(z, dtype=complex)
        ok = np.zeros(z.shape, dtype=bool)
        fin = np.isfinite(z)
        ok[fin] = self.domain.contains(z[fin]) | (np.abs(self.domain.boundary_distance(z[fin])) < 1e-12)
        return np.where(ok, z, np.nan + 0j)

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Affine(ConformalMap):
    a: complex = 1.0
    b: complex = 0.0
    domain: Region | None = None
    name: str = "affine"

    def __post_init__(self):
        if self.a == 0:
            raise ValueError("affine map needs a != 0")
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))

    def __call__(self, z):
        return self.a * np.asarray(z) + self.b

    def deriv(self, z):
        return np.full(np.shape(z), self.a, dtype=complex) if np.ndim(z) else self.a

    def deriv2(self, z):
        return np.zeros(np.shape(z), dtype=complex) if np.ndim(z) else 0j

    def inverse(self, w):
        return self._mask_domain((np.asarray(w) - self.b) / self.a)

    def describe(self):
        return {"kind": "affine", "a": str(self.a), "b": str(self.b)}


def identity(domain: Region | None = None) -> Affine:
    return Affine(1.0, 0.0, domain, "identity")


@dataclass(frozen=True)
class Moebius(ConformalMap):
    a: complex = 1.0
    b: complex = 0.0
    c: complex = 0.0
    d: complex = 1.0
    domain: Region | None = None
    name: str = "moebius"

    def __post_init__(self):
        for k in "abcd":
            object.__setattr__(self, k, complex(getattr(self, k)))
        if abs(self.a * self.d - self.b * self.c) == 0:
            raise ValueError("moebius map needs ad - bc != 0")
        if self.domain is not None and self.c != 0:
            pole = -self.d / self.c
            if self.domain.contains(np.array([pole]))[0]:
                raise ValueError("pole inside the declared domain")

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    def __call__(self, z):
        z = np.asarray(z)
        return (self.a * z + self.b) / (self.c * z + self.d)

    def deriv(self, z):
        return self.det / (self.c * np.asarray(z) + self.d) ** 2

    def deriv2(self, z):
        return -2 * self.c * self.det / (self.c * np.asarray(z) + self.d) ** 3

    def inverse(self, w):
        w = np.asarray(w)
        return self._mask_domain((self.d * w - self.b) / (-self.c * w + self.a))

    def describe(self):
        return {"kind": "moebius", **{k: str(getattr(self, k)) for k in "abcd"}}


@dataclass(frozen=True, eq=False)
class PowerSeries(ConformalMap):
    """phi(z) = sum_n coeffs[n] (z - center)^n on the declared domain.

    Injectivity on the domain is certified at construction (unless disabled) by
    the winding of phi' along the boundary and a simplicity test of the image of
    the boundary curve. This is a numerical certificate, not a proof.
    """

    coeffs: tuple = (0.0, 1.0)
    center: complex = 0.0
    domain: Region | None = None
    name: str = "power-series"
    certify: bool = True
    _tree: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.coeffs, dtype=complex), "b")
        if c.size < 2:
            raise ValueError("power series must be nonconstant")
        object.__setattr__(self, "coeffs", tuple(c))
        object.__setattr__(self, "center", complex(self.center))
        if self.domain is None:
            raise ValueError("power series needs a declared domain")
        if self.certify:
            certify_injective(self)

    @property
    def _c(self):
        return np.asarray(self.coeffs)

    def __call__(self, z):
        return P.polyval(np.asarray(z) - self.center, self._c)

    def deriv(self, z):
        return P.polyval(np.asarray(z) - self.center, P.polyder(self._c))

    def deriv2(self, z):
        d2 = P.polyder(self._c, 2) if len(self.coeffs) > 2 else np.zeros(1)
        return P.polyval(np.asarray(z) - self.center, d2)

    def _seed_tree(self):
        if self._tree is None:
            x0, x1, y0, y1 = self.domain.bbox()
            h = max(x1 - x0, y1 - y0) / 200
            spec = GridSpec.covering(x0, x1, y0, y1, h)
            pts = spec.nodes().ravel()
            pts = np.concatenate([pts[self.domain.contains(pts)], self.domain.boundary_points(720)])
            img = self(pts)
            tree = cKDTree(np.column_stack([img.real, img.imag]))
            object.__setattr__(self, "_tree", (tree, pts))
        return self._tree

    def inverse(self, w, tol: float = 1e-12, max_iter: int = 60):
        w = np.asarray(w, dtype=complex)
        shape = w.shape
        w = w.ravel()
        tree, pts = self._seed_tree()
        fin = np.isfinite(w)
        z = np.full(w.shape, np.nan + 0j)
        _, idx = tree.query(np.column_stack([w[fin].real, w[fin].imag]))
        z[fin] = pts[idx]
        scale = max(1.0, float(np.max(np.abs(self._c))))
        for _ in range(max_iter):
            res = self(z) - w
            if np.all(~fin | (np.abs(res) <= tol * scale)):
                break
            step = res / self.deriv(z)
            lam = np.ones(w.shape)
            for _ in range(30):
                trial = z - lam * step
                worse = fin & (np.abs(self(trial) - w) > np.abs(res))
                if not worse.any():
                    break
                lam = np.where(worse, lam / 2, lam)
            z = np.where(fin, z - lam * step, z)
        res = np.abs(self(z) - w)
        z = np.where(res <= 1e-10 * scale, z, np.nan + 0j)
        return self._mask_domain(z).reshape(shape)

    def describe(self):
        return {"kind": "polynomial", "center": str(self.center), "coeffs": [str(c) for c in self.coeffs]}


@dataclass(frozen=True)
class Composition(ConformalMap):
    """outer o inner."""

    outer: ConformalMap
    inner: ConformalMap
    name: str = "composition"

    @property
    def domain(self):
        return self.inner.domain

    def __call__(self, z):
        return self.outer(self.inner(z))

    def deriv(self, z):
        return self.outer.deriv(self.inner(z)) * self.inner.deriv(z)

    def deriv2(self, z):
        u = self.inner(z)
        d1 = self.inner.deriv(z)
        return self.outer.deriv2(u) * d1**2 + self.outer.deriv(u) * self.inner.deriv2(z)

    def inverse(self, w):
        return self.inner.inverse(self.outer.inverse(w))

    def describe(self):
        return {"kind": "composition", "outer": self.outer.describe(), "inner": self.inner.describe()}


def winding_number(values: np.ndarray) -> int:
    """Winding of a closed sampled curve about 0."""
    ang = np.angle(np.append(values, values[0]))
    d = np.diff(np.unwrap(ang))
    return int(round(d.sum() / (2 * np.pi)))


def certify_injective(m: ConformalMap, n: int = 2048) -> None:
    dom = m.domain
    bpts = dom.boundary_points(n)
    dv = m.deriv(bpts)
    if np.min(np.abs(dv)) == 0 or winding_number(dv) != 0:
        raise ValueError(f"{m.name}: derivative vanishes inside the domain (winding test)")
    img = m(bpts)
    if not LinearRing(np.column_stack([img.real, img.imag])).is_simple:
        raise ValueError(f"{m.name}: boundary image self-intersects; map not injective")


# ------------------------------------------------------------ Lambda_tau


def probe_grid(V: Region, pitch: float) -> np.ndarray:
    x0, x1, y0, y1 = V.bbox()
    spec = GridSpec.covering(x0, x1, y0, y1, pitch)
    pts = spec.nodes().ravel()
    inside = pts[V.boundary_distance(pts) >= 0]
    return np.concatenate([inside, V.boundary_points(max(720, int(2 * np.pi * (x1 - x0) / pitch)))])


def in_lambda_tau(m: ConformalMap, V: Region, U: Region, tau: float, pitch: float = 1 / 256,
                  tolerance: float = 0.01) -> bool:
    """|phi'| within [1/tau, tau] on a probe grid of the closure of V.

    ``tolerance`` widens both bounds by that relative amount, so a derivative
    sitting exactly on a bound counts as inside.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not compactly_contains(U, V):
        raise ValueError("V is not compactly contained in U")
    if m.domain is not None:
        ub = U.boundary_points()
        if np.any(m.domain.boundary_distance(ub) < -1e-12):
            raise ValueError("map domain does not contain U")
    d = np.abs(m.deriv(probe_grid(V, pitch)))
    return bool(d.min() >= (1 - tolerance) / tau and d.max() <= tau * (1 + tolerance))


@dataclass(frozen=True)
class MapFamily:
    """Finite stand-in for Lambda_tau(V, U)."""

    maps: tuple
    tau: float
    V: Region
    U: Region
    name: str = "family"

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        for m in self.maps:
            if not in_lambda_tau(m, self.V, self.U, self.tau):
                raise ValueError(f"map {m.name} fails the Lambda_tau check (tau={self.tau})")

    def __iter__(self):
        return iter(self.maps)

    def __len__(self):
        return len(self.maps)

    def describe(self) -> dict:
        return {"name": self.name, "tau": self.tau, "V": format_region(self.V), "U": format_region(self.U),
                "maps": [{"name": m.name, **m.describe()} for m in self.maps]}


def default_family(U: Region | None = None, V: Region | None = None, tau: float = 2.0) -> MapFamily:
    """{identity, 2z, z^2 + 2} on disks in the right half-plane."""
    U = U or Disk(0.6 + 0j, 0.55)
    V = V or Disk(0.6 + 0j, 0.35)
    maps = (identity(U), Affine(2.0, 0.0, U, "2z"), PowerSeries((2.0, 0.0, 1.0), 0.0, U, "z^2+2"))
    return MapFamily(maps, tau, V, U, "default")


# ---------------------------------------------------------- field transfer


def coordinate_change_field(h: GridField, m: ConformalMap, q: float, target: GridSpec) -> GridField:
    """h^phi(w) = h(phi^{-1}(w)) - q log|phi'(phi^{-1}(w))| on ``target``.

    Nodes outside phi(domain), or whose preimage is not interpolable in h, are NaN.
    """
    w = target.nodes()
    z = m.inverse(w)
    vals = np.full(target.shape, np.nan)
    ok = np.isfinite(z)
    if not ok.any():
        raise ValueError("target window does not meet the image of the map domain")
    zi = z[ok]
    interp = bilinear(h, zi, strict=False)
    vals[ok] = interp - q * np.log(np.abs(m.deriv(zi)))
    if not np.isfinite(vals).any():
        raise ValueError("target window exits the image of the field window")
    out = GridField(target, vals, CHANGED, q, h.history + (f"phi[{m.name}],q={q:g}",))
    return out


def koebe_containment(m: ConformalMap, z: complex, r: float, n: int = 720) -> Disk:
    """Disk B_{r|phi'(z)|/4}(phi(z)), checked against the sampled image of the circle."""
    if m.domain is not None and not compactly_contains(m.domain, Disk(z, r), margin=-1e-12):
        raise ValueError("B_r(z) is not inside the map domain")
    c = complex(m(z))
    rho = r * abs(complex(m.deriv(z))) / 4
    img = m(z + r * np.exp(2j * np.pi * np.arange(n) / n))
    if np.min(np.abs(img - c)) < rho * (1 - 1e-12):
        raise ValueError("image boundary enters the Koebe disk; map not injective on B_r(z)")
    return Disk(c, rho)


@dataclass(frozen=True)
class DeBrangesReport:
    coefficients: np.ndarray
    max_ratio: float
    holds: bool


def debranges_check(m: ConformalMap, z: complex, r: float, n_max: int = 16, n_samples: int | None = None
                    ) -> DeBrangesReport:
    """Taylor coefficients a_n of w -> (phi(z + r w) - phi(z)) / (r phi'(z)) by FFT."""
    if m.domain is not None and not compactly_contains(m.domain, Disk(z, r), margin=-1e-12):
        raise ValueError("B_r(z) is not inside the map domain")
    M = n_samples or max(256, 8 * n_max)
    w = np.exp(2j * np.pi * np.arange(M) / M)
    g = (m(z + r * w) - m(z)) / (r * m.deriv(z))
    a = np.fft.fft(g) / M
    coef = a[: n_max + 1]
    tail = np.abs(a[n_max + 1: M // 2])
    # coefficients that refuse to decay mean the circle reaches past the radius of convergence
    if tail.size and tail.max() > 1e-6 * max(1.0, np.abs(coef).max()) and tail.max() > (n_max + 1):
        raise ValueError("series divergence: Taylor coefficients grow beyond n_max")
    n = np.arange(1, n_max + 1)
    ratio = float(np.max(np.abs(coef[1:]) / n))
    return DeBrangesReport(coef, ratio, ratio <= 1 + 1e-8)


def distortion_interval(s: float) -> tuple[float, float]:
    """Bounds for |phi'(w)/phi'(z0)| when |w - z0| <= s dist(z0, boundary)."""
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    return ((1 - s) / (1 + s) ** 3, (1 + s) / (1 - s) ** 3)


# ----------------------------------------------------------- family files


def _complex(text: str) -> complex:
    return complex(text.strip().replace(" ", "").replace("i", "j"))


def parse_map(section: configparser.SectionProxy, domain: Region | None) -> ConformalMap:
    kind = section.get("kind", "").strip().lower()
    name = section.name.split(":", 1)[-1].strip()
    if "domain" in section:
        domain = parse_region(section["domain"])
    if kind == "identity":
        return identity(domain)
    if kind == "affine":
        return Affine(_complex(section.get("a", "1")), _complex(section.get("b", "0")), domain, name)
    if kind == "moebius":
        return Moebius(*(_complex(section[k]) for k in "abcd"), domain=domain, name=name)
    if kind in ("polynomial", "power-series"):
        coeffs = tuple(_complex(c) for c in section["coeffs"].split(","))
        return PowerSeries(coeffs, _complex(section.get("center", "0")), domain, name,
                           section.getboolean("certify", True))
    raise ValueError(f"[{section.name}] unknown map kind {kind!r}")


def load_family(path: str | Path) -> MapFamily:
    """Read a map family: a [family] section (tau, V, U, name) plus [map:NAME] sections."""
    cp = configparser.ConfigParser()
    text = Path(path).read_text()
    cp.read_string(text, source=str(path))
    if "family" not in cp:
        raise ValueError(f"{path}: missing [family] section")
    fam = cp["family"]
    U = parse_region(fam["U"])
    V = parse_region(fam["V"])
    maps = [parse_map(cp[s], U) for s in cp.sections() if s.startswith("map:")]
    if not maps:
        raise ValueError(f"{path}: no [map:...] sections")
    return MapFamily(tuple(maps), fam.getfloat("tau"), V, U, fam.get("name", Path(path).stem))


def save_family(family: MapFamily, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    cp["family"] = {"name": family.name, "tau": repr(family.tau), "U": format_region(family.U),
                    "V": format_region(family.V)}
    for m in family.maps:
        d = m.describe()
        if m.name == "identity":
            rec = {"kind": "identity"}
        elif d["kind"] == "polynomial":
            rec = {"kind": "polynomial", "center": d["center"], "coeffs": ", ".join(d["coeffs"])}
        elif d["kind"] == "composition":
            raise ValueError("compositions cannot be written to family files")
        else:
            rec = {k: v for k, v in d.items()}
        cp[f"map:{m.name}"] = rec
    with open(path, "w") as fh:
        cp.write(fh)
