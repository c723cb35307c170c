"""Whole-plane GFF samples on lattice windows and field-level transforms."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy import fft as sfft
from scipy import ndimage

from .regions import Region

log = logging.getLogger(__name__)

XI_CRIT = 0.41

RAW = "raw-gff"
HEAT = "heat-mollified"
LOCAL = "localized-mollified"
CHANGED = "coordinate-changed"
DETERMINISTIC = "deterministic"
PULLBACK = "coordinate-changed-mollified"

KIND_TAGS = {RAW: 0, HEAT: 1, LOCAL: 2, CHANGED: 3, DETERMINISTIC: 4, PULLBACK: 5}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
MOLLIFIED_KINDS = (HEAT, LOCAL, PULLBACK)

SNAPSHOT_MAGIC = b"LFP1"
_HEADER = struct.Struct("<4sIIdddBd")


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice window; node (i, j) sits at ``origin + spacing*(i + 1j*j)``."""

    nx: int
    ny: int
    spacing: float
    origin: complex = 0j

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2 (got {self.nx}, {self.ny})")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "origin", complex(self.origin))

    @classmethod
    def covering(cls, xmin: float, xmax: float, ymin: float, ymax: float, spacing: float) -> "GridSpec":
        """Smallest window on the global lattice ``spacing * Z^2`` containing the box."""
        i0 = math.floor(xmin / spacing + 1e-9)
        i1 = math.ceil(xmax / spacing - 1e-9)
        j0 = math.floor(ymin / spacing + 1e-9)
        j1 = math.ceil(ymax / spacing - 1e-9)
        return cls(max(i1 - i0 + 1, 2), max(j1 - j0 + 1, 2), spacing, complex(i0 * spacing, j0 * spacing))

    @classmethod
    def around(cls, region: Region, spacing: float, margin: float = 0.0) -> "GridSpec":
        x0, x1, y0, y1 = region.bbox()
        return cls.covering(x0 - margin, x1 + margin, y0 - margin, y1 + margin, spacing)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float, float, float]:
        o, s = self.origin, self.spacing
        return (o.real, o.real + (self.nx - 1) * s, o.imag, o.imag + (self.ny - 1) * s)

    @property
    def center(self) -> complex:
        x0, x1, y0, y1 = self.extent
        return complex((x0 + x1) / 2, (y0 + y1) / 2)

    @property
    def diameter(self) -> float:
        return self.spacing * math.hypot(self.nx - 1, self.ny - 1)

    def node(self, i, j):
        return self.origin + self.spacing * (np.asarray(i) + 1j * np.asarray(j))

    def nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        return self.node(i, j)

    def nearest_index(self, z):
        w = (np.asarray(z) - self.origin) / self.spacing
        return np.rint(w.real).astype(np.int64), np.rint(w.imag).astype(np.int64)

    def node_id(self, z) -> int:
        """Flat index of the node at ``z``; raises if ``z`` is not a node of the window."""
        i, j = self.nearest_index(z)
        i, j = int(i), int(j)
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise ValueError(f"point {z} lies outside the window")
        if abs(complex(self.node(i, j)) - z) > 1e-6 * self.spacing:
            raise ValueError(f"point {z} is not a lattice node (spacing {self.spacing})")
        return i * self.ny + j

    def flat_to_point(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return self.node(ids // self.ny, ids % self.ny)

    def shifted(self, b: complex) -> "GridSpec":
        return replace(self, origin=self.origin + b)

    def same_lattice(self, other: "GridSpec") -> bool:
        if not math.isclose(self.spacing, other.spacing, rel_tol=1e-12):
            return False
        d = (other.origin - self.origin) / self.spacing
        return abs(d.real - round(d.real)) < 1e-9 and abs(d.imag - round(d.imag)) < 1e-9


@dataclass(frozen=True, eq=False)
class GridField:
    """Field samples on a window. NaN marks nodes invalidated by a margin rule."""

    spec: GridSpec
    values: np.ndarray
    kind: str = DETERMINISTIC
    param: float = 0.0
    history: tuple[str, ...] = dc_field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.spec.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.spec.shape}")
        if np.isinf(v).any():
            raise ValueError("field values must be finite (NaN marks invalid nodes)")
        if self.kind not in KIND_TAGS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not self.history:
            object.__setattr__(self, "history", (self._label(),))

    def _label(self) -> str:
        return self.kind if self.kind in (RAW, DETERMINISTIC) else f"{self.kind}({self.param:g})"

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def derived(self, values: np.ndarray, kind: str, param: float = 0.0) -> "GridField":
        f = GridField(self.spec, values, kind, param)
        return GridField(self.spec, f.values, kind, param, self.history + (f._label(),))

    def at(self, z) -> np.ndarray:
        return bilinear(self, z)


@dataclass(frozen=True)
class Params:
    xi: float
    q: float
    gamma: float | None = None
    xi_crit_ref: float = XI_CRIT

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not self.q > 0:
            raise ValueError("q must be positive")
        if self.gamma is not None and not 0 < self.gamma < 2:
            raise ValueError("gamma must lie in (0, 2)")
        if self.xi >= self.xi_crit_ref:
            log.warning("xi=%g is not subcritical (xi_crit ~ %g)", self.xi, self.xi_crit_ref)


def deterministic_field(spec: GridSpec, fn_or_value) -> GridField:
    if callable(fn_or_value):
        vals = np.asarray(fn_or_value(spec.nodes()), dtype=float)
        vals = np.broadcast_to(vals, spec.shape).copy()
    else:
        vals = np.full(spec.shape, float(fn_or_value))
    return GridField(spec, vals, DETERMINISTIC)


# ---------------------------------------------------------------- sampling


def torus_size(spec: GridSpec, torus_factor: float) -> int:
    if torus_factor < 2:
        raise ValueError("torus_factor must be >= 2")
    # the unit circle about the window center must fit inside one period
    side = max(torus_factor * spec.diameter, 2.5)
    n = int(math.ceil(side / spec.spacing))
    n = max(n, spec.nx, spec.ny)
    n = sfft.next_fast_len(n + (n % 2), real=True)
    if n % 2:
        n += 1
    return n


def synthesize_torus(spec: GridSpec, torus_factor: float, seed: int, variance: float = 1.0) -> GridField:
    """Spectral GFF sample on the periodic torus whose node (0, 0) is ``spec.origin``.

    Covariance is ``log(1/|x - y|)`` up to the lattice cutoff; zero mode dropped.
    """
    if spec.nx * spec.ny == 0:
        raise ValueError("empty window")
    n = torus_size(spec, torus_factor)
    if n < spec.nx or n < spec.ny:
        raise ValueError("window larger than torus")
    s = spec.spacing
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((n, n))
    kx = 2 * np.pi * sfft.fftfreq(n, d=s)
    ky = 2 * np.pi * sfft.rfftfreq(n, d=s)
    k = np.hypot(kx[:, None], ky[None, :])
    k[0, 0] = 1.0
    mult = math.sqrt(2 * np.pi * variance) / (k * s)
    mult[0, 0] = 0.0
    vals = sfft.irfft2(sfft.rfft2(white) * mult, s=(n, n))
    tspec = GridSpec(n, n, s, spec.origin)
    return GridField(tspec, vals, RAW)


def sample_gff(spec: GridSpec, torus_factor: float = 2.0, seed: int = 0, variance: float = 1.0) -> GridField:
    """Whole-plane GFF approximation on ``spec``, pinned so the radius-1 circle
    average about the window center vanishes."""
    torus = synthesize_torus(spec, torus_factor, seed, variance)
    c = circle_average(torus, spec.center, 1.0, periodic=True)
    vals = torus.values[: spec.nx, : spec.ny] - c
    return GridField(spec, vals, RAW)


# ------------------------------------------------------------ interpolation


def bilinear(field: GridField, z, periodic: bool = False, strict: bool = True) -> np.ndarray:
    """Bilinear interpolation. With ``strict`` a stencil leaving the window or
    touching a NaN node raises; otherwise such points come back as NaN."""
    spec = field.spec
    z = np.asarray(z, dtype=complex)
    w = (z - spec.origin) / spec.spacing
    x, y = w.real, w.imag
    i0 = np.floor(x).astype(np.int64)
    j0 = np.floor(y).astype(np.int64)
    fx = x - i0
    fy = y - j0
    # snap stencils of points sitting on a node's upper edge
    on_x = np.abs(fx - 1.0) < 1e-12
    on_y = np.abs(fy - 1.0) < 1e-12
    i0 = np.where(on_x, i0 + 1, i0)
    fx = np.where(on_x, 0.0, fx)
    j0 = np.where(on_y, j0 + 1, j0)
    fy = np.where(on_y, 0.0, fy)
    v = field.values
    if periodic:
        i0 %= spec.nx
        j0 %= spec.ny
        i1 = (i0 + 1) % spec.nx
        j1 = (j0 + 1) % spec.ny
    else:
        i1 = np.minimum(i0 + 1, spec.nx - 1)
        j1 = np.minimum(j0 + 1, spec.ny - 1)
        bad = (i0 < 0) | (j0 < 0) | (i0 > spec.nx - 1) | (j0 > spec.ny - 1)
        bad |= ((i0 == spec.nx - 1) & (fx > 1e-12)) | ((j0 == spec.ny - 1) & (fy > 1e-12))
        bad |= ~np.isfinite(x) | ~np.isfinite(y)
        if np.any(bad):
            if strict:
                raise ValueError("interpolation point outside the field window")
            i0 = np.where(bad, 0, i0)
            j0 = np.where(bad, 0, j0)
            i1 = np.where(bad, 0, i1)
            j1 = np.where(bad, 0, j1)
            fx = np.where(bad, 0.0, fx)
            fy = np.where(bad, 0.0, fy)
    out = (
        (1 - fx) * (1 - fy) * v[i0, j0]
        + fx * (1 - fy) * v[i1, j0]
        + (1 - fx) * fy * v[i0, j1]
        + fx * fy * v[i1, j1]
    )
    # exact node hits must not pick up NaN neighbours with zero weight
    exact = (fx == 0) & (fy == 0)
    if np.any(exact):
        out = np.where(exact, v[i0, j0], out)
    if not periodic and np.any(bad):
        out = np.where(bad, np.nan, out)
    if strict and np.isnan(out).any():
        raise ValueError("interpolation touched invalid (margin) nodes")
    return out


def circle_average(field: GridField, z: complex, r: float, periodic: bool = False) -> float:
    """Mean of the bilinear interpolant over equally spaced points on the circle."""
    if r < 2 * field.spec.spacing:
        raise ValueError("radius below two lattice spacings")
    n = max(256, 32 * int(math.ceil(2 * np.pi * r / field.spec.spacing)))
    pts = z + r * np.exp(2j * np.pi * np.arange(n) / n)
    return float(np.mean(bilinear(field, pts, periodic=periodic)))


# -------------------------------------------------------------- mollifiers


def heat_radius(eps: float) -> float:
    lg = math.log(1 / eps) if eps < 1 else 0.0
    return max(eps * lg, 6 * eps)


def _check_eps(field: GridField, eps: float, allowed: tuple[str, ...]):
    if field.kind not in allowed:
        raise ValueError(f"cannot mollify a field of kind {field.kind!r}")
    if eps < 2 * field.spec.spacing * (1 - 1e-12):
        raise ValueError(f"eps={eps} below two lattice spacings ({field.spec.spacing}); aliasing")


def heat_taps(eps: float, spacing: float) -> np.ndarray:
    """1-D factor of the truncated heat kernel p_{eps^2/2}, unit discrete mass."""
    m = int(math.floor(heat_radius(eps) / spacing + 1e-9))
    x = spacing * np.arange(-m, m + 1)
    g = np.exp(-(x**2) / eps**2)
    return g / g.sum()


def heat_mollify(field: GridField, eps: float) -> GridField:
    """Convolve with the heat kernel p_{eps^2/2}, truncated to the square of
    half-width max(eps log 1/eps, 6 eps) and renormalized. Nodes whose kernel
    support leaves the window become NaN."""
    _check_eps(field, eps, (RAW, DETERMINISTIC, CHANGED))
    g = heat_taps(eps, field.spec.spacing)
    m = (g.size - 1) // 2
    if 2 * m + 1 > min(field.spec.nx, field.spec.ny):
        raise ValueError("window too small for the heat kernel margin")
    out = ndimage.correlate1d(field.values, g, axis=0, mode="constant", cval=np.nan)
    out = ndimage.correlate1d(out, g, axis=1, mode="constant", cval=np.nan)
    out[:m, :] = np.nan
    out[-m:, :] = np.nan
    out[:, :m] = np.nan
    out[:, -m:] = np.nan
    return field.derived(out, HEAT, eps)


def localized_taps(eps: float, spacing: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets and weights of Z^-1 psi_eps p_{eps^2/2}; exactly zero beyond eps log 1/eps."""
    from .kernels import heat_kernel, psi

    if not 0 < eps < math.exp(-1):
        raise ValueError("localized mollifier needs eps in (0, 1/e)")
    R = eps * math.log(1 / eps)
    m = int(math.ceil(R / spacing))
    a = np.arange(-m, m + 1)
    di, dj = np.meshgrid(a, a, indexing="ij")
    r = spacing * np.hypot(di, dj)
    w = psi(r / R) * heat_kernel(r, eps**2 / 2)
    keep = w > 0
    di, dj, w = di[keep], dj[keep], w[keep]
    return di.astype(np.int64), dj.astype(np.int64), w / w.sum()


@njit(cache=True)
def _correlate_taps(x, di, dj, w):
    nx, ny = x.shape
    out = np.full((nx, ny), np.nan)
    lo_i, hi_i = -di.min(), nx - di.max()
    lo_j, hi_j = -dj.min(), ny - dj.max()
    if lo_i >= hi_i or lo_j >= hi_j:
        return out
    acc = np.zeros((hi_i - lo_i, hi_j - lo_j))
    for k in range(w.size):
        a = di[k]
        b = dj[k]
        wk = w[k]
        for i in range(lo_i, hi_i):
            for j in range(lo_j, hi_j):
                acc[i - lo_i, j - lo_j] += wk * x[i + a, j + b]
    out[lo_i:hi_i, lo_j:hi_j] = acc
    return out


def correlate_taps(values: np.ndarray, di, dj, w) -> np.ndarray:
    """Direct correlation over an explicit tap list. Each output depends only on
    inputs at its own tap offsets, in a fixed order."""
    return _correlate_taps(np.ascontiguousarray(values, dtype=np.float64), di, dj, w)


@njit(cache=True)
def _correlate_at(x, di, dj, w, ii, jj):
    nx, ny = x.shape
    out = np.full(ii.size, np.nan)
    lo_i, hi_i = -di.min(), nx - di.max()
    lo_j, hi_j = -dj.min(), ny - dj.max()
    for n in range(ii.size):
        i = ii[n]
        j = jj[n]
        if i < lo_i or i >= hi_i or j < lo_j or j >= hi_j:
            continue
        acc = 0.0
        for k in range(w.size):
            acc += w[k] * x[i + di[k], j + dj[k]]
        out[n] = acc
    return out


def localized_mollify_at(field: GridField, eps: float, select: np.ndarray) -> GridField:
    """Localized mollification evaluated only on the selected nodes (NaN elsewhere).

    Selected values are bit-identical to those of :func:`localized_mollify`.
    """
    _check_eps(field, eps, (RAW, DETERMINISTIC, CHANGED))
    di, dj, w = localized_taps(eps, field.spec.spacing)
    ii, jj = np.nonzero(select)
    vals = _correlate_at(np.ascontiguousarray(field.values, dtype=np.float64), di, dj, w,
                         ii.astype(np.int64), jj.astype(np.int64))
    out = np.full(field.spec.shape, np.nan)
    out[ii, jj] = vals
    return field.derived(out, LOCAL, eps)


def localized_mollify(field: GridField, eps: float) -> GridField:
    """Convolve with Z_eps^-1 psi_eps p_{eps^2/2} (support radius eps log 1/eps)."""
    _check_eps(field, eps, (RAW, DETERMINISTIC, CHANGED))
    di, dj, w = localized_taps(eps, field.spec.spacing)
    return field.derived(correlate_taps(field.values, di, dj, w), LOCAL, eps)


def mollify(field: GridField, eps: float, kernel: str) -> GridField:
    if kernel in ("heat", HEAT):
        return heat_mollify(field, eps)
    if kernel in ("localized", LOCAL):
        return localized_mollify(field, eps)
    raise ValueError(f"unknown kernel {kernel!r}")


# --------------------------------------------------------- field algebra


def add_scalar(field: GridField, c: float) -> GridField:
    return GridField(field.spec, field.values + c, field.kind, field.param, field.history + (f"+{c:g}",))


def add_field(field: GridField, other: GridField) -> GridField:
    if field.spec != other.spec:
        raise ValueError("grid specs differ")
    return GridField(field.spec, field.values + other.values, field.kind, field.param, field.history + ("+field",))


def translate(field: GridField, b: complex) -> GridField:
    """H(z) = h(z + b) for a lattice vector b, by relabelling nodes."""
    s = field.spec.spacing
    w = complex(b) / s
    if abs(w.real - round(w.real)) > 1e-9 or abs(w.imag - round(w.imag)) > 1e-9:
        raise ValueError("translation must be a lattice vector")
    bb = complex(round(w.real) * s, round(w.imag) * s)
    return GridField(field.spec.shifted(-bb), field.values, field.kind, field.param, field.history + (f"shift({b})",))


def splice(inside: GridField, outside: GridField, region: Region) -> GridField:
    """Field equal to ``inside`` on the region's nodes and ``outside`` elsewhere."""
    if inside.spec != outside.spec:
        raise ValueError("grid specs differ")
    m = region.mask(inside.spec)
    return GridField(inside.spec, np.where(m, inside.values, outside.values), inside.kind, inside.param,
                     inside.history + ("spliced",))


def gmc_mass(field: GridField, eps: float, gamma: float, region: Region) -> float:
    """eps^{gamma^2/2} * sum over region nodes of exp(gamma h*_eps) * spacing^2."""
    if field.kind not in (RAW, DETERMINISTIC):
        raise ValueError("gmc_mass expects a raw field")
    m = heat_mollify(field, eps)
    sel = region.mask(field.spec)
    vals = m.values[sel]
    if np.isnan(vals).any():
        raise ValueError("region exits the margin-safe node set")
    s = field.spec.spacing
    return float(eps ** (gamma**2 / 2) * np.sum(np.exp(gamma * vals)) * s * s)


# ------------------------------------------------------------------ norms


def h1_norm(field: GridField, region: Region | None = None) -> float:
    """(||f||_2^2 + ||grad f||_2^2)^{1/2} over interior nodes, central differences."""
    v = field.values
    s = field.spec.spacing
    core = v[1:-1, 1:-1]
    gx = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * s)
    gy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * s)
    sel = np.isfinite(core) & np.isfinite(gx) & np.isfinite(gy)
    if region is not None:
        sel &= region.mask(field.spec)[1:-1, 1:-1]
    if not sel.any():
        raise ValueError("empty region")
    total = np.sum(core[sel] ** 2) + np.sum(gx[sel] ** 2 + gy[sel] ** 2)
    return float(math.sqrt(total * s * s))


def spectral_hminus1_norm(field: GridField) -> float:
    """||(-Delta)^{-1/2} f||_2 for a field on a full periodic torus (zero mode dropped)."""
    v = field.values
    if np.isnan(v).any():
        raise ValueError("torus field has invalid nodes")
    nx, ny = v.shape
    s = field.spec.spacing
    F = np.fft.fft2(v) / (nx * ny)
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=s)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=s)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2
    k2[0, 0] = np.inf
    area = nx * ny * s * s
    return float(math.sqrt(area * np.sum(np.abs(F) ** 2 / k2)))


# --------------------------------------------------------------- snapshot


def save_snapshot(field: GridField, path: str | Path) -> None:
    """Binary snapshot: LFP1 header then nx*ny little-endian f64, i-major (j fastest)."""
    spec = field.spec
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, spec.nx, spec.ny, spec.spacing, spec.origin.real, spec.origin.imag,
        KIND_TAGS[field.kind], float(field.param),
    )
    Path(path).write_bytes(header + np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_snapshot(path: str | Path) -> GridField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an LFP1 snapshot")
    magic, nx, ny, s, ox, oy, tag, param = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != 8 * nx * ny:
        raise ValueError(f"{path}: truncated snapshot")
    vals = np.frombuffer(body, dtype="<f8").reshape(nx, ny).astype(np.float64)
    if tag not in TAG_KINDS:
        raise ValueError(f"{path}: unknown kind tag {tag}")
    return GridField(GridSpec(nx, ny, s, complex(ox, oy)), vals, TAG_KINDS[tag], param)
