"""Planar regions: disks, annuli, rectangles, unions and explicit grid masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .gff import GridSpec


class Region:
    """Base class. Subclasses implement ``contains`` and ``boundary_points``."""

    def contains(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_points(self, n: int = 720) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance(self, z: np.ndarray) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        raise NotImplementedError

    def bbox(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax)."""
        raise NotImplementedError

    def mask(self, spec: "GridSpec") -> np.ndarray:
        return self.contains(spec.nodes())

    def dilate(self, r: float) -> "Region":
        raise NotImplementedError(f"dilation not available for {type(self).__name__}")

    def __or__(self, other: "Region") -> "Union":
        return Union((self, other))


@dataclass(frozen=True)
class Disk(Region):
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    def contains(self, z):
        return np.abs(np.asarray(z) - self.center) < self.radius

    def boundary_points(self, n=720):
        t = 2 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * t)

    def boundary_distance(self, z):
        return self.radius - np.abs(np.asarray(z) - self.center)

    def bbox(self):
        c, r = self.center, self.radius
        return (c.real - r, c.real + r, c.imag - r, c.imag + r)

    def dilate(self, r):
        return Disk(self.center, self.radius + r)


@dataclass(frozen=True)
class Annulus(Region):
    """Open annulus ``r1 < |z - center| < r2``."""

    center: complex
    r1: float
    r2: float

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise ValueError("annulus radii must satisfy 0 < r1 < r2")

    def contains(self, z):
        d = np.abs(np.asarray(z) - self.center)
        return (d > self.r1) & (d < self.r2)

    def boundary_points(self, n=720):
        t = 2 * np.pi * np.arange(n) / n
        e = np.exp(1j * t)
        return np.concatenate([self.center + self.r1 * e, self.center + self.r2 * e])

    def boundary_distance(self, z):
        d = np.abs(np.asarray(z) - self.center)
        return np.minimum(d - self.r1, self.r2 - d)

    def bbox(self):
        c, r = self.center, self.r2
        return (c.real - r, c.real + r, c.imag - r, c.imag + r)

    def dilate(self, r):
        if r >= self.r1:
            return Disk(self.center, self.r2 + r)
        return Annulus(self.center, self.r1 - r, self.r2 + r)


@dataclass(frozen=True)
class Rectangle(Region):
    """Closed axis-aligned rectangle."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("degenerate rectangle")

    def contains(self, z):
        z = np.asarray(z)
        tol = 1e-12 * max(1.0, abs(self.xmax - self.xmin), abs(self.ymax - self.ymin))
        return (
            (z.real >= self.xmin - tol)
            & (z.real <= self.xmax + tol)
            & (z.imag >= self.ymin - tol)
            & (z.imag <= self.ymax + tol)
        )

    def boundary_points(self, n=720):
        k = max(n // 4, 2)
        s = np.linspace(0.0, 1.0, k, endpoint=False)
        a, b, c, d = self.xmin, self.xmax, self.ymin, self.ymax
        return np.concatenate(
            [
                (a + (b - a) * s) + 1j * c,
                b + 1j * (c + (d - c) * s),
                (b - (b - a) * s) + 1j * d,
                a + 1j * (d - (d - c) * s),
            ]
        )

    def boundary_distance(self, z):
        z = np.asarray(z)
        dx = np.minimum(z.real - self.xmin, self.xmax - z.real)
        dy = np.minimum(z.imag - self.ymin, self.ymax - z.imag)
        return np.minimum(dx, dy)

    def bbox(self):
        return (self.xmin, self.xmax, self.ymin, self.ymax)

    def dilate(self, r):
        return Rectangle(self.xmin - r, self.xmax + r, self.ymin - r, self.ymax + r)


@dataclass(frozen=True)
class Union(Region):
    parts: tuple[Region, ...]

    def contains(self, z):
        out = np.zeros(np.shape(z), dtype=bool)
        for p in self.parts:
            out |= p.contains(z)
        return out

    def boundary_points(self, n=720):
        pts = np.concatenate([p.boundary_points(n) for p in self.parts])
        # only keep points not interior to another part
        keep = np.ones(pts.shape, dtype=bool)
        for p in self.parts:
            keep &= ~(p.contains(pts) & (p.boundary_distance(pts) > 1e-12))
        return pts[keep]

    def boundary_distance(self, z):
        return np.max([p.boundary_distance(z) for p in self.parts], axis=0)

    def bbox(self):
        boxes = np.array([p.bbox() for p in self.parts])
        return (boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max())

    def dilate(self, r):
        return Union(tuple(p.dilate(r) for p in self.parts))


@dataclass(frozen=True, eq=False)
class GridMask(Region):
    """A set of lattice nodes. Membership is by nearest node."""

    spec: "GridSpec"
    selected: np.ndarray

    def __post_init__(self):
        if self.selected.shape != (self.spec.nx, self.spec.ny):
            raise ValueError("mask shape does not match grid")

    def contains(self, z):
        z = np.asarray(z)
        i, j = self.spec.nearest_index(z)
        inside = (i >= 0) & (i < self.spec.nx) & (j >= 0) & (j < self.spec.ny)
        out = np.zeros(z.shape, dtype=bool)
        out[inside] = self.selected[i[inside], j[inside]]
        on_node = np.abs(self.spec.node(i, j) - z) < 1e-9 * self.spec.spacing
        return out & on_node

    def mask(self, spec):
        if spec == self.spec:
            return self.selected.copy()
        return self.contains(spec.nodes())

    def boundary_points(self, n=720):
        nodes = self.spec.nodes()[self.selected]
        return nodes

    def boundary_distance(self, z):
        raise NotImplementedError("grid masks have no continuous boundary")

    def bbox(self):
        pts = self.spec.nodes()[self.selected]
        return (pts.real.min(), pts.real.max(), pts.imag.min(), pts.imag.max())


def compactly_contains(outer: Region, inner: Region, margin: float = 0.0, n: int = 720) -> bool:
    """True when the closure of ``inner`` sits inside ``outer`` with clearance ``margin``."""
    pts = inner.boundary_points(n)
    if pts.size == 0:
        return False
    return bool(np.all(outer.boundary_distance(pts) > margin))


def shift_region(region: Region, b: complex) -> Region:
    """Translate a continuous region by ``b``."""
    if isinstance(region, Disk):
        return Disk(region.center + b, region.radius)
    if isinstance(region, Annulus):
        return Annulus(region.center + b, region.r1, region.r2)
    if isinstance(region, Rectangle):
        return Rectangle(region.xmin + b.real, region.xmax + b.real, region.ymin + b.imag, region.ymax + b.imag)
    if isinstance(region, Union):
        return Union(tuple(shift_region(p, b) for p in region.parts))
    raise TypeError(f"cannot shift {type(region).__name__}")


def parse_region(text: str) -> Region:
    """Parse ``disk(cx, cy, r)``, ``annulus(cx, cy, r1, r2)`` or
    ``rect(xmin, xmax, ymin, ymax)``; ``|`` joins several into a union."""
    parts = [p.strip() for p in text.split("|") if p.strip()]
    if len(parts) > 1:
        return Union(tuple(parse_region(p) for p in parts))
    if not parts:
        raise ValueError("empty region description")
    s = parts[0]
    name, _, rest = s.partition("(")
    if not rest.endswith(")"):
        raise ValueError(f"malformed region {s!r}")
    try:
        args = [float(a) for a in rest[:-1].split(",")]
    except ValueError:
        raise ValueError(f"non-numeric region parameter in {s!r}") from None
    name = name.strip().lower()
    shapes = {"disk": (3, lambda a: Disk(complex(a[0], a[1]), a[2])),
              "annulus": (4, lambda a: Annulus(complex(a[0], a[1]), a[2], a[3])),
              "rect": (4, lambda a: Rectangle(*a))}
    if name not in shapes:
        raise ValueError(f"unknown region kind {name!r}")
    n, make = shapes[name]
    if len(args) != n:
        raise ValueError(f"{name} takes {n} parameters, got {len(args)}")
    return make(args)


def format_region(region: Region) -> str:
    if isinstance(region, Disk):
        return f"disk({region.center.real:g}, {region.center.imag:g}, {region.radius:g})"
    if isinstance(region, Annulus):
        c = region.center
        return f"annulus({c.real:g}, {c.imag:g}, {region.r1:g}, {region.r2:g})"
    if isinstance(region, Rectangle):
        return f"rect({region.xmin:g}, {region.xmax:g}, {region.ymin:g}, {region.ymax:g})"
    if isinstance(region, Union):
        return " | ".join(format_region(p) for p in region.parts)
    return type(region).__name__
