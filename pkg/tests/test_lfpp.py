import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfpplab.gff import (HEAT, GridField, GridSpec, deterministic_field, heat_mollify, localized_mollify, sample_gff,
                         splice, translate)
from lfpplab.lfpp import (_crossings, _dijkstra, build_graph, distance, distance_around_annulus, distances_from,
                          enumerate_distance, geodesic_in_region, graph_from_factors, internal_distance, path_weight,
                          set_distance, weyl_scale, write_distance_matrix)
from lfpplab.regions import Annulus, Disk, Rectangle

XI = 0.3


def mollified(spec, values):
    return GridField(spec, np.broadcast_to(values, spec.shape).copy(), HEAT, 0.1)


def rand_graph(n, seed, spacing=1.0):
    spec = GridSpec(n, n, spacing)
    vals = np.random.default_rng(seed).normal(size=spec.shape)
    return build_graph(mollified(spec, vals), None, XI)


# ---------------------------------------------------------------- weights


def test_zero_field_weights():
    g = build_graph(mollified(GridSpec(5, 5, 0.5), 0.0), None, 0.7)
    w = np.unique(np.round(g.weights, 15))
    assert np.allclose(sorted(w), [0.5, 0.5 * math.sqrt(2)], rtol=1e-15)


def test_three_by_three_hand_formula():
    spec = GridSpec(3, 3, 0.25)
    vals = np.random.default_rng(0).normal(size=(3, 3))
    g = build_graph(mollified(spec, vals), None, XI)
    assert g.n_edges == 20
    seen = 0
    for i in range(3):
        for j in range(3):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    a, b = i + di, j + dj
                    if (di, dj) == (0, 0) or not (0 <= a < 3 and 0 <= b < 3):
                        continue
                    length = 0.25 * math.hypot(di, dj)
                    expect = length * (math.exp(XI * vals[i, j]) + math.exp(XI * vals[a, b])) / 2
                    assert g.edge_weight(i * 3 + j, a * 3 + b) == pytest.approx(expect, rel=1e-15)
                    seen += 1
    assert seen == 40


def test_build_graph_rejects():
    spec = GridSpec(4, 4, 1.0)
    with pytest.raises(ValueError):
        build_graph(sample_gff(spec, 2, 0), None, XI)
    vals = np.zeros(spec.shape)
    vals[0, 0] = np.nan
    with pytest.raises(ValueError):
        build_graph(mollified(spec, vals), Rectangle(-1, 5, -1, 5), XI)
    with pytest.raises(ValueError):
        build_graph(mollified(spec, 0.0), Disk(100j, 1), XI)


# ---------------------------------------------------------------- distances


def test_king_move_closed_form():
    g = build_graph(mollified(GridSpec(6, 6, 1.0), 0.0), None, XI)
    r = distance(g, 0j, 3 + 4j)
    assert r.raw == pytest.approx(1 + 3 * math.sqrt(2), rel=1e-15)
    assert r.points[0] == 0 and r.points[-1] == 3 + 4j
    assert abs(path_weight(g, r.nodes) - r.raw) < 1e-12


def test_weyl_constant_exact():
    spec = GridSpec(12, 12, 0.1)
    vals = np.random.default_rng(1).normal(size=spec.shape)
    c = 0.77
    g0 = build_graph(mollified(spec, vals), None, XI)
    g1 = build_graph(mollified(spec, vals + c), None, XI)
    a, b = 0.1 + 0.2j, 1.0 + 0.9j
    r0, r1 = distance(g0, a, b), distance(g1, a, b)
    assert r1.raw / r0.raw == pytest.approx(math.exp(XI * c), rel=1e-12)
    assert np.array_equal(r0.nodes, r1.nodes)


@pytest.mark.parametrize("seed", range(100))
def test_bruteforce_4x4(seed):
    g = rand_graph(4, seed)
    rng = np.random.default_rng(1000 + seed)
    z, w = (complex(*rng.integers(0, 4, 2)) for _ in range(2))
    assert distance(g, z, w).raw == pytest.approx(enumerate_distance(g, z, w), rel=1e-12, abs=0)


def test_disconnected_marker():
    spec = GridSpec(7, 7, 1.0)
    g = build_graph(mollified(spec, 0.0), None, XI)
    wall = Rectangle(-1, 2.5, -1, 7) | Rectangle(3.5, 7, -1, 7)
    r = internal_distance(g, 0j, 6 + 6j, wall)
    assert not r.connected and r.nodes.size == 0 and float(r) == math.inf


def test_internal_full_region_equals_distance():
    g = rand_graph(10, 3)
    full = Rectangle(-1, 10, -1, 10)
    assert internal_distance(g, 1 + 1j, 8 + 5j, full).raw == distance(g, 1 + 1j, 8 + 5j).raw


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(2.0, 4.0), st.floats(4.0, 7.0))
def test_internal_monotone(seed, r_small, r_big):
    g = rand_graph(12, seed % 1000)
    c = 5.5 + 5.5j
    z, w = 4 + 5j, 7 + 6j
    small = internal_distance(g, z, w, Disk(c, r_small))
    big = internal_distance(g, z, w, Disk(c, r_big))
    assert float(big) <= float(small)


def test_metric_axioms():
    g = rand_graph(9, 5, 0.5)
    rng = np.random.default_rng(5)
    pts = [complex(*rng.integers(0, 9, 2)) * 0.5 for _ in range(12)]
    D = np.array([distances_from(g, p).ravel()[[g.spec.node_id(q) for q in pts]] for p in pts])
    assert np.allclose(D, D.T, rtol=1e-12)
    assert np.all(np.diag(D) == 0)
    off = ~np.eye(len(pts), dtype=bool)
    same = np.array([[a == b for b in pts] for a in pts])
    assert np.all(D[off & ~same] > 0)
    for i in range(len(pts)):
        assert np.all(D[i][:, None] <= D[i][None, :] + D + 1e-9)


def test_set_distance():
    g = build_graph(mollified(GridSpec(10, 10, 1.0), 0.0), None, XI)
    r = set_distance(g, Rectangle(-0.5, 1.5, -0.5, 9.5), Rectangle(6.5, 9.5, -0.5, 9.5))
    # nearest nodes: x = 1 and x = 7
    assert r.raw == pytest.approx(6.0)


def test_geodesic_in_region():
    g = rand_graph(8, 2)
    r = distance(g, 0j, 7 + 3j)
    assert geodesic_in_region(r, Rectangle(-1, 8, -1, 8))
    ends = Disk(0j, 0.1) | Disk(7 + 3j, 0.1)
    assert not geodesic_in_region(r, ends)
    for Y in (Disk(3 + 2j, 3.0), Rectangle(-0.5, 7.5, -0.5, 2.5)):
        expect = all(Y.contains(np.array([p]))[0] for p in r.points)
        assert geodesic_in_region(r, Y) == expect


# ---------------------------------------------------------------- Weyl scaling


def test_weyl_scale():
    spec = GridSpec(16, 16, 1 / 16)
    vals = np.random.default_rng(8).normal(size=spec.shape)
    g = build_graph(mollified(spec, vals), None, XI)
    zero = deterministic_field(spec, 0.0)
    assert np.array_equal(weyl_scale(g, zero).weights, g.weights)
    c = -0.4
    r0 = distance(g, 0j, 0.875 + 0.5j)
    assert distance(weyl_scale(g, deterministic_field(spec, c)), 0j, 0.875 + 0.5j).raw / r0.raw == pytest.approx(
        math.exp(XI * c), rel=1e-12)
    bump = deterministic_field(spec, lambda z: np.exp(-np.abs(z - 0.5 - 0.5j) ** 2 / 0.05))
    rebuilt = build_graph(mollified(spec, vals + bump.values), None, XI)
    a = distance(weyl_scale(g, bump), 0j, 0.875 + 0.5j).raw
    assert abs(a - distance(rebuilt, 0j, 0.875 + 0.5j).raw) < 1e-9


# ---------------------------------------------------------------- invariances


def test_translation_equivariance():
    spec = GridSpec(80, 80, 1 / 64)
    h = sample_gff(spec, 2, 4)
    b = complex(3, -2) / 64
    eps = 0.05
    H = translate(h, b)
    gh = build_graph(heat_mollify(h, eps), None, XI)
    gH = build_graph(heat_mollify(H, eps), None, XI)
    z, w = complex(gH.spec.node(30, 34)), complex(gH.spec.node(45, 50))
    assert distance(gH, z, w).raw == distance(gh, z + b, w + b).raw


def test_localized_locality():
    spec = GridSpec.covering(-0.8, 0.8, -0.8, 0.8, 1 / 64)
    h = sample_gff(spec, 2, 1)
    other = sample_gff(spec, 2, 2)
    eps = 0.05
    R = eps * math.log(1 / eps)
    Y = Disk(0j, 0.2)
    masked = splice(h, other, Disk(0j, 0.2 + R + 1e-9))
    region = Disk(0j, 0.45)
    z, w = -0.125 + 0j, 0.125 + 0.0625j
    a = internal_distance(build_graph(localized_mollify(h, eps), region, XI), z, w, Y)
    b = internal_distance(build_graph(localized_mollify(masked, eps), region, XI), z, w, Y)
    assert a.raw == b.raw
    # the heat mollifier has no such property
    c = internal_distance(build_graph(heat_mollify(h, eps), region, XI), z, w, Y)
    d = internal_distance(build_graph(heat_mollify(masked, eps), region, XI), z, w, Y)
    assert c.raw != d.raw


def test_heat_vs_localized_ratio():
    spec = GridSpec.covering(-0.8, 0.8, -0.8, 0.8, 1 / 64)
    h = sample_gff(spec, 2, 6)
    eps = 0.05
    region = Disk(0j, 0.4)
    H, L = heat_mollify(h, eps), localized_mollify(h, eps)
    sel = region.mask(spec)
    delta = float(np.max(np.abs(H.values[sel] - L.values[sel])))
    gH, gL = build_graph(H, region, XI), build_graph(L, region, XI)
    rng = np.random.default_rng(0)
    nodes = spec.nodes()[sel]
    for _ in range(10):
        z, w = rng.choice(nodes, 2, replace=False)
        ratio = distance(gL, z, w).raw / distance(gH, z, w).raw
        assert math.exp(-XI * delta) - 1e-12 <= ratio <= math.exp(XI * delta) + 1e-12


# ---------------------------------------------------------------- around annulus


def _all_starts(graph, x, r1, r2):
    """Reference: one layered Dijkstra per slit node, no pruning."""
    N = graph.spec.size
    allowed = np.ascontiguousarray(Annulus(x, r1, r2).mask(graph.spec).ravel())
    shift = _crossings(graph, x)
    src = np.repeat(np.arange(N), np.diff(graph.indptr))
    usable = allowed[src] & allowed[graph.indices]
    best = math.inf
    for v in np.unique(graph.indices[(shift == 1) & usable]):
        tgt = np.zeros(4 * N, dtype=np.bool_)
        tgt[2 * N + v] = True
        dist, _, found = _dijkstra(graph.indptr, graph.indices, graph.weights, shift, 4, allowed,
                                   np.array([N + v], dtype=np.int64), tgt, math.inf)
        if found >= 0:
            best = min(best, float(dist[found]))
    return best


@pytest.mark.parametrize("seed", range(8))
def test_around_matches_all_starts(seed):
    spec = GridSpec.covering(-1.1, 1.1, -1.1, 1.1, 1 / 16)
    vals = 1.5 * np.random.default_rng(seed).normal(size=spec.shape)
    g = build_graph(mollified(spec, vals), None, 0.8)
    r = distance_around_annulus(g, 0j, 0.4, 1.0)
    assert r.raw == pytest.approx(_all_starts(g, 0j, 0.4, 1.0), rel=1e-12)
    assert abs(path_weight(g, r.nodes) - r.raw) < 1e-12
    assert r.nodes[0] == r.nodes[-1]


def _winding(points, x):
    ang = np.unwrap(np.angle(np.asarray(points) - x))
    return round((ang[-1] - ang[0]) / (2 * np.pi))


def test_around_zero_field_hugs_inner_boundary():
    s = 1 / 32
    spec = GridSpec.covering(-2.1, 2.1, -2.1, 2.1, s)
    g = build_graph(mollified(spec, 0.0), None, XI)
    r = distance_around_annulus(g, 0j, 1.0, 2.0)
    target = 2 * math.pi * (1 + s)
    assert abs(r.raw / target - 1) <= 0.05
    assert abs(_winding(r.points, 0j)) == 1
    assert np.all(np.abs(r.points) > 1.0)
    c = 0.6
    gc = build_graph(mollified(spec, c), None, XI)
    assert distance_around_annulus(gc, 0j, 1.0, 2.0).raw / r.raw == pytest.approx(math.exp(XI * c), rel=1e-12)


def test_around_follows_cheap_ring():
    s = 1 / 32
    spec = GridSpec.covering(-2.1, 2.1, -2.1, 2.1, s)
    rad = np.abs(spec.nodes())
    # a ring of half-width two spacings so the cheap set is a connected lattice band
    vals = np.where(np.abs(rad - 1.5) <= 2 * s, -10.0, 0.0)
    g = build_graph(mollified(spec, vals), None, XI)
    r = distance_around_annulus(g, 0j, 1.0, 2.0)
    assert r.raw <= math.exp(-10 * XI) * 2 * math.pi * 1.5 * 1.05
    assert np.all(np.abs(np.abs(r.points) - 1.5) <= 2 * s + 1e-12)


def test_around_too_thin():
    g = build_graph(mollified(GridSpec.covering(-2, 2, -2, 2, 0.25), 0.0), None, XI)
    with pytest.raises(ValueError):
        distance_around_annulus(g, 0j, 1.0, 1.5)


# ---------------------------------------------------------------- output


def test_distance_matrix_csv(tmp_path):
    p = tmp_path / "d.csv"
    write_distance_matrix(p, ["a", "b"], [[0.0, 1.5], [1.5, None]], {"xi": XI})
    assert p.read_text() == "label,a,b\na,0.0,1.5\nb,1.5,inf\n"
    assert '"xi": 0.3' in (tmp_path / "d.csv.json").read_text()


def test_graph_from_factors_rejects_nonpositive():
    spec = GridSpec(3, 3, 1.0)
    with pytest.raises(ValueError):
        graph_from_factors(spec, np.ones((3, 3), bool), np.zeros((3, 3)), XI)
