"""Heat kernel, the localizing bump, its normalizer, and distorted kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

PSI_PROFILE_ID = "smoothstep-exp-v1"


def heat_kernel(z, t: float):
    """p_t(z) = exp(-|z|^2 / 2t) / (2 pi t); ``z`` may be complex or a radius."""
    if not t > 0:
        raise ValueError("heat kernel time must be positive")
    r2 = np.abs(np.asarray(z)) ** 2
    return np.exp(-r2 / (2 * t)) / (2 * np.pi * t)


def _f(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _fprime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def psi(t):
    """Radial bump: 1 on [0, 1/2], 0 on [1, inf), smooth and decreasing between.

    On (1/2, 1) with u = 2t - 1 it is f(1-u) / (f(1-u) + f(u)), f(x) = exp(-1/x).
    """
    t = np.asarray(t, dtype=float)
    u = np.clip(2 * t - 1, 0.0, 1.0)
    a, b = _f(1 - u), _f(u)
    mid = a / np.where(a + b > 0, a + b, 1.0)
    out = np.where(t <= 0.5, 1.0, np.where(t >= 1.0, 0.0, mid))
    return out if out.ndim else float(out)


def psi_prime(t):
    t = np.asarray(t, dtype=float)
    u = np.clip(2 * t - 1, 0.0, 1.0)
    a, b = _f(1 - u), _f(u)
    da, db = -_fprime(1 - u), _fprime(u)
    s = a + b
    s = np.where(s > 0, s, 1.0)
    d = 2 * (da * b - a * db) / s**2
    out = np.where((t <= 0.5) | (t >= 1.0), 0.0, d)
    return out if out.ndim else float(out)


def support_radius(eps: float) -> float:
    """R(eps) = eps log(1/eps)."""
    if not 0 < eps < math.exp(-1):
        raise ValueError("eps must lie in (0, 1/e)")
    return eps * math.log(1 / eps)


def psi_eps(z, eps: float):
    return psi(np.abs(np.asarray(z)) / support_radius(eps))


@lru_cache(maxsize=256)
def z_eps(eps: float) -> float:
    """Z_eps = integral of psi_eps * p_{eps^2/2} over the plane.

    The plateau part integrates in closed form; the transition annulus is done
    by adaptive radial quadrature.
    """
    return 1.0 - one_minus_z_eps(eps)


@lru_cache(maxsize=256)
def one_minus_z_eps(eps: float) -> float:
    R = support_radius(eps)
    L = math.log(1 / eps)
    plateau_tail = math.exp(-(L**2) / 4)

    def integrand(r):
        return r * psi(r / R) * math.exp(-(r * r) / eps**2)

    val, _ = integrate.quad(integrand, R / 2, R, epsabs=0.0, epsrel=1e-13, limit=200)
    return plateau_tail - 2 * val / eps**2


def localized_kernel(z, eps: float):
    """Z^-1 psi_eps p_{eps^2/2} evaluated at offset ``z``."""
    return psi_eps(z, eps) * heat_kernel(z, eps**2 / 2) / z_eps(eps)


def _radial_profile(r, eps):
    R = support_radius(eps)
    Z = z_eps(eps)
    p = np.exp(-(r**2) / eps**2) / (np.pi * eps**2)
    g = psi(r / R) * p / Z
    dg = (psi_prime(r / R) / R * p - psi(r / R) * 2 * r / eps**2 * p) / Z
    return g, dg


@dataclass(frozen=True)
class DistortedKernel:
    """w -> |phi'(w)|^2 Z^-1 psi_eps(phi(w) - phi(z)) p_{eps^2/2}(phi(w) - phi(z))."""

    map: object
    z: complex
    eps: float
    tau: float | None = None
    _image_center: complex = field(init=False, repr=False)

    def __post_init__(self):
        support_radius(self.eps)
        z = complex(self.z)
        object.__setattr__(self, "z", z)
        dom = getattr(self.map, "domain", None)
        if dom is not None and not bool(dom.contains(np.array([z]))[0]):
            raise ValueError(f"kernel center {z} outside map domain")
        object.__setattr__(self, "_image_center", complex(self.map(z)))

    @property
    def R(self) -> float:
        return support_radius(self.eps)

    def _check_domain(self, w):
        dom = getattr(self.map, "domain", None)
        if dom is not None and not np.all(dom.contains(w)):
            raise ValueError("kernel evaluated outside the map domain")

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        self._check_domain(w)
        u = self.map(w) - self._image_center
        g, _ = _radial_profile(np.abs(u), self.eps)
        return np.abs(self.map.deriv(w)) ** 2 * g

    value = __call__

    def gradient(self, w):
        """Gradient in w = x + iy, returned as the complex number d/dx + i d/dy."""
        w = np.asarray(w, dtype=complex)
        self._check_domain(w)
        F = self.map.deriv(w)
        F1 = self.map.deriv2(w)
        u = self.map(w) - self._image_center
        r = np.abs(u)
        g, dg = _radial_profile(r, self.eps)
        grad_jac = 2 * F * np.conj(F1)
        rs = np.where(r > 0, r, 1.0)
        grad_r = np.where(r > 0, u * np.conj(F) / rs, 0.0)
        return grad_jac * g + np.abs(F) ** 2 * dg * grad_r

    def support_bound(self, n: int = 256) -> float:
        """Radius about z containing the support: inverse image of the circle of radius R."""
        pts = self._image_center + self.R * np.exp(2j * np.pi * np.arange(n) / n)
        pre = self.map.inverse(pts)
        if np.isnan(pre).any():
            raise ValueError("support boundary leaves the map domain")
        # pad by the largest gap between consecutive samples
        gap = np.max(np.abs(np.diff(np.append(pre, pre[0]))))
        return float(np.max(np.abs(pre - self.z)) + gap)

    def claimed_radius(self) -> float:
        if self.tau is None:
            raise ValueError("kernel has no tau attached")
        return 4 * self.tau * self.R


def distorted_kernel(map, z: complex, eps: float, tau: float | None = None) -> DistortedKernel:
    return DistortedKernel(map, z, eps, tau)


def quadrature_points(kernel: DistortedKernel, step: float | None = None, lattice=None):
    """Tensor grid covering the kernel support.

    With ``lattice`` (a GridSpec) the grid is a refinement of that lattice so that
    field nodes are quadrature nodes; otherwise it is centered on z.
    """
    rad = kernel.support_bound()
    dfz = abs(complex(kernel.map.deriv(kernel.z)))
    h_max = kernel.eps / (8 * max(1.0, 2 * dfz))
    if step is not None:
        h_max = min(h_max, step)
    if lattice is not None:
        k = max(1, int(math.ceil(lattice.spacing / h_max - 1e-9)))
        h = lattice.spacing / k
        base = lattice.origin
    else:
        h = h_max
        base = kernel.z
    d = (kernel.z - base) / h
    i0 = math.floor(d.real - rad / h) - 1
    i1 = math.ceil(d.real + rad / h) + 1
    j0 = math.floor(d.imag - rad / h) - 1
    j1 = math.ceil(d.imag + rad / h) + 1
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    pts = base + h * (ii + 1j * jj)
    keep = np.abs(pts - kernel.z) <= rad
    return pts[keep], h


def pair(f, kernel: DistortedKernel, step: float | None = None) -> float:
    """Discrete pairing sum f(w) Psi(w) h^2 on a tensor grid with h <= eps/8.

    ``f`` is a GridField (bilinear interpolation, nodes aligned with its lattice),
    a callable of complex points, or a constant.
    """
    from .gff import GridField, bilinear

    lattice = f.spec if isinstance(f, GridField) else None
    pts, h = quadrature_points(kernel, step, lattice)
    w = kernel(pts)
    nz = w > 0
    pts, w = pts[nz], w[nz]
    if isinstance(f, GridField):
        try:
            vals = bilinear(f, pts)
        except ValueError as exc:
            raise ValueError(f"kernel support exits the field window: {exc}") from None
    elif callable(f):
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.full(pts.shape, float(f))
    return float(np.sum(vals * w) * h * h)
