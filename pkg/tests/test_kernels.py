import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lfpplab.conformal import Affine, PowerSeries, identity
from lfpplab.gff import GridSpec, deterministic_field, localized_mollify, sample_gff
from lfpplab.kernels import (DistortedKernel, heat_kernel, localized_kernel, one_minus_z_eps, pair, psi, psi_eps,
                             psi_prime, support_radius, z_eps)
from lfpplab.regions import Annulus, Disk


def test_heat_kernel_values():
    assert heat_kernel(0, 0.5) == pytest.approx(1 / math.pi, rel=1e-15)
    with pytest.raises(ValueError):
        heat_kernel(0, 0.0)


@pytest.mark.parametrize("t", [0.01, 0.5, 2.0])
def test_heat_kernel_mass(t):
    R = 8 * math.sqrt(t)
    val, _ = integrate.quad(lambda r: 2 * math.pi * r * heat_kernel(r, t), 0, R, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert abs(val - 1) < 1e-10


def test_heat_kernel_rotation():
    ang = np.exp(2j * np.pi * np.arange(16) / 16)
    v = heat_kernel(0.37 * ang, 0.2)
    assert np.all(v == heat_kernel(0.37, 0.2))


def test_psi_profile():
    assert psi(0.3) == 1.0
    assert psi(1.2) == 0.0
    assert 0 < psi(0.75) < 1
    t = np.linspace(0.5, 1.0, 102)[1:-1]
    assert np.all(np.diff(psi(t)) <= 0)
    mid = np.linspace(0.6, 0.9, 100)
    assert np.all(np.diff(psi(mid)) < 0)
    assert np.all(psi_prime(t) <= 0)


def test_psi_eps_rejects_large_eps():
    with pytest.raises(ValueError):
        psi_eps(0.1, 0.5)


def test_psi_prime_matches_difference():
    t = np.linspace(0.52, 0.98, 40)
    h = 1e-6
    fd = (psi(t + h) - psi(t - h)) / (2 * h)
    assert np.allclose(psi_prime(t), fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("eps", [0.3, 0.1, 0.03])
def test_z_eps_bound(eps):
    gap = one_minus_z_eps(eps)
    assert 0 <= gap <= math.exp(-math.log(1 / eps) ** 2 / 4)
    assert z_eps(eps) <= 1


def test_z_eps_cartesian_oracle():
    eps = 0.1
    R = support_radius(eps)

    def f(y, x):
        r = math.hypot(x, y)
        return float(psi(r / R)) * math.exp(-r * r / eps**2) / (math.pi * eps**2)

    # integrate one quadrant on a Cartesian grid of subregions, split at the plateau edge
    val, _ = integrate.dblquad(f, 0, R, 0, lambda x: math.sqrt(max(R * R - x * x, 0.0)),
                               epsabs=1e-13, epsrel=1e-12)
    assert abs(4 * val - z_eps(eps)) < 1e-8


def test_identity_kernel_reduction():
    eps, z = 0.05, 0.3 + 0.1j
    k = DistortedKernel(identity(), z, eps)
    rng = np.random.default_rng(1)
    w = z + support_radius(eps) * 1.1 * (rng.random(200) - 0.5 + 1j * (rng.random(200) - 0.5)) * 2
    assert np.allclose(k(w), localized_kernel(w - z, eps), rtol=1e-12, atol=1e-12)


def _square():
    U = Annulus(0j, 0.6, 1.6)
    return PowerSeries((2.0, 0.0, 1.0), 0.0, Disk(1.1 + 0j, 0.45), "z^2+2"), U


def test_unit_mass_square_map():
    # a disk inside the annulus 0.6 < |z| < 1.6 keeps z^2 + 2 injective
    m, _ = _square()
    k = DistortedKernel(m, 1.1 + 0.05j, 0.04)
    assert pair(1.0, k) == pytest.approx(1.0, abs=1e-6)


def test_unit_mass_on_annulus_domain():
    # the upper half of an annulus around 0; z^2 + 2 is injective there
    dom = Annulus(0j, 0.6, 1.6)
    m = PowerSeries((2.0, 0.0, 1.0), 0.0, Disk(0.0 + 1.1j, 0.45), "z^2+2")
    assert dom.contains(np.array([1.1j]))[0]
    k = DistortedKernel(m, 1.1j, 0.04)
    assert pair(1.0, k) == pytest.approx(1.0, abs=1e-6)


def test_gradient_finite_difference():
    m, _ = _square()
    eps = 0.04
    z = 1.1 + 0.05j
    k = DistortedKernel(m, z, eps)
    rng = np.random.default_rng(4)
    R = support_radius(eps)
    pts = []
    while len(pts) < 10:
        w = z + R * 0.9 * complex(*rng.uniform(-1, 1, 2))
        if 0.1 * R < abs(m(w) - m(z)) < 0.95 * R:
            pts.append(w)
    h = eps / 1e3

    def central(w, h):
        return complex((k(w + h) - k(w - h)) / (2 * h), (k(w + 1j * h) - k(w - 1j * h)) / (2 * h))

    for w in pts:
        g = complex(k.gradient(w))
        # one Richardson step removes the h^2 truncation term, which in the steep
        # transition band of psi is itself of order 1e-5 at this step
        fd = (4 * central(w, h / 2) - central(w, h)) / 3
        assert abs(g - fd) <= 1e-5 * abs(g)


def test_support_claim():
    m, _ = _square()
    eps, tau = 0.04, 2.5
    z = 1.1 + 0.05j
    k = DistortedKernel(m, z, eps, tau)
    rad = k.claimed_radius()
    ang = np.exp(2j * np.pi * np.arange(64) / 64)
    out = z + np.concatenate([r * ang for r in np.linspace(rad, 0.44, 5)])
    out = out[Disk(1.1 + 0j, 0.45).contains(out)]
    assert np.all(k(out) == 0)
    assert k.support_bound() <= rad


def test_pair_constant_and_affine():
    a = 1.7 - 0.4j
    m = Affine(a, 0.2, Disk(0j, 2), "aff")
    k = DistortedKernel(m, 0.1 + 0.1j, 0.05)
    assert pair(3.5, k) == pytest.approx(3.5, abs=1e-6)
    val = pair(lambda w: -np.log(np.abs(m.deriv(w))), k)
    assert abs(val - (-math.log(abs(a)))) < 1e-8


def test_pair_dual_path():
    # <h, Psi^{phi,z}> against h o phi^{-1} mollified at phi(z), both by quadrature
    g = GridSpec.covering(0.3, 1.9, -0.8, 0.8, 1 / 128)
    h = sample_gff(g, 2, 3)
    m, _ = _square()
    eps, z = 0.04, 1.1 + 0.05j
    k = DistortedKernel(m, z, eps)
    lhs = pair(h, k)
    iden = DistortedKernel(identity(), complex(m(z)), eps)
    rhs = pair(lambda w: h.at(m.inverse(w)), iden, step=eps / 32)
    # bilinear interpolation error of a rough field at this pitch: bound by the
    # spread of the field over one cell times the kernel mass
    cell = np.max(np.abs(np.diff(h.values, axis=0)))
    assert abs(lhs - rhs) <= 2 * cell


def test_localized_mollify_matches_pair_for_identity():
    g = GridSpec.covering(-0.5, 0.5, -0.5, 0.5, 1 / 128)
    h = deterministic_field(g, lambda z: np.sin(3 * z.real) * np.cos(2 * z.imag))
    eps = 0.05
    m = localized_mollify(h, eps)
    z = 0j
    i, j = g.nearest_index(z)
    assert abs(m.values[i, j] - pair(h, DistortedKernel(identity(), z, eps))) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.floats(0.005, 0.3))
def test_z_eps_in_unit_interval(eps):
    z = z_eps(eps)
    assert 0 < z <= 1
