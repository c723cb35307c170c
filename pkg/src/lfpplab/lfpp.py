"""LFPP distances on 8-connected lattice graphs weighted by exp(xi * field)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .gff import HEAT, LOCAL, MOLLIFIED_KINDS, PULLBACK, GridField, GridSpec, bilinear
from .regions import Annulus, Region

OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True, eq=False)
class MetricGraph:
    """Node (i, j) has flat id ``i*ny + j``; edges join king-move neighbours that
    both lie in ``mask``. Edge weight is |u - v| (E_u + E_v) / 2 with E = exp(xi f)."""

    spec: GridSpec
    mask: np.ndarray
    xi: float
    factors: np.ndarray
    eps: float | None = None
    kernel: str | None = None
    indptr: np.ndarray = field(default=None, repr=False)
    indices: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.mask.any():
            raise ValueError("graph region contains no nodes")
        e = self.factors[self.mask]
        if not np.all(np.isfinite(e) & (e > 0)):
            raise ValueError("node factors must be positive and finite on the region")
        if self.indptr is None:
            indptr, indices, weights = _build_csr(self.spec, self.mask, self.factors)
            object.__setattr__(self, "indptr", indptr)
            object.__setattr__(self, "indices", indices)
            object.__setattr__(self, "weights", weights)

    @property
    def n_nodes(self) -> int:
        return int(self.mask.sum())

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    def edge_weight(self, u: int, v: int) -> float:
        row = slice(self.indptr[u], self.indptr[u + 1])
        hit = np.nonzero(self.indices[row] == v)[0]
        if hit.size == 0:
            raise KeyError(f"no edge {u}-{v}")
        return float(self.weights[row][hit[0]])

    def node_id(self, z) -> int:
        k = self.spec.node_id(z)
        if not self.mask.ravel()[k]:
            raise ValueError(f"point {z} is not a node of the graph region")
        return k


def _build_csr(spec: GridSpec, mask: np.ndarray, E: np.ndarray):
    nx, ny, s = spec.nx, spec.ny, spec.spacing
    ids = np.arange(nx * ny).reshape(nx, ny)
    src, dst, w = [], [], []
    for di, dj in OFFSETS:
        a = (slice(max(0, -di), nx - max(0, di)), slice(max(0, -dj), ny - max(0, dj)))
        b = (slice(max(0, di), nx - max(0, -di)), slice(max(0, dj), ny - max(0, -dj)))
        ok = mask[a] & mask[b]
        length = s * math.sqrt(2.0) if di and dj else s
        src.append(ids[a][ok])
        dst.append(ids[b][ok])
        w.append(length * (E[a][ok] + E[b][ok]) / 2)
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    w = np.concatenate(w)
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(nx * ny + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=nx * ny), out=indptr[1:])
    return indptr, dst[order].astype(np.int64), w[order].astype(np.float64)


def graph_from_factors(spec, mask, factors, xi, eps=None, kernel=None) -> MetricGraph:
    return MetricGraph(spec, np.asarray(mask, dtype=bool), float(xi), np.asarray(factors, dtype=float), eps, kernel)


def build_graph(mollified: GridField, region: Region | None, xi: float) -> MetricGraph:
    if mollified.kind not in MOLLIFIED_KINDS:
        raise ValueError(f"build_graph needs a mollified field, got kind {mollified.kind!r}")
    if not xi > 0:
        raise ValueError("xi must be positive")
    spec = mollified.spec
    mask = mollified.valid.copy() if region is None else region.mask(spec)
    if not mask.any():
        raise ValueError("empty region")
    if np.isnan(mollified.values[mask]).any():
        raise ValueError("region contains invalid (margin) nodes")
    factors = np.ones(spec.shape)
    factors[mask] = np.exp(xi * mollified.values[mask])
    return graph_from_factors(spec, mask, factors, xi, mollified.param, mollified.kind)


def weyl_scale(graph: MetricGraph, f: GridField) -> MetricGraph:
    """Reweight as if ``f`` had been added to the field under the exponential."""
    if f.spec != graph.spec:
        raise ValueError("grid specs differ")
    add = f.values[graph.mask]
    if np.isnan(add).any():
        raise ValueError("Weyl factor undefined on graph nodes")
    factors = graph.factors.copy()
    factors[graph.mask] = graph.factors[graph.mask] * np.exp(graph.xi * add)
    return graph_from_factors(graph.spec, graph.mask, factors, graph.xi, graph.eps, graph.kernel)


# ---------------------------------------------------------------- Dijkstra


@njit(cache=True)
def _heap_push(hd, hn, size, d, n):
    i = size
    hd[i] = d
    hn[i] = n
    while i > 0:
        p = (i - 1) >> 1
        if hd[p] < hd[i] or (hd[p] == hd[i] and hn[p] <= hn[i]):
            break
        hd[p], hd[i] = hd[i], hd[p]
        hn[p], hn[i] = hn[i], hn[p]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hn, size):
    d = hd[0]
    n = hn[0]
    size -= 1
    hd[0] = hd[size]
    hn[0] = hn[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        r = l + 1
        if r < size and (hd[r] < hd[l] or (hd[r] == hd[l] and hn[r] < hn[l])):
            c = r
        if hd[i] < hd[c] or (hd[i] == hd[c] and hn[i] <= hn[c]):
            break
        hd[c], hd[i] = hd[i], hd[c]
        hn[c], hn[i] = hn[i], hn[c]
        i = c
    return d, n, size


@njit(cache=True)
def _dijkstra(indptr, indices, weights, shift, n_layers, allowed, sources, is_target, bound):
    """Dijkstra on ``n_layers`` stacked copies of the base graph. Edge e from
    layer l leads to layer l + shift[e]. Cover node id = layer * N + base id.
    Stops at the first target popped or when the frontier reaches ``bound``."""
    N = indptr.size - 1
    M = N * n_layers
    dist = np.full(M, np.inf)
    pred = np.full(M, -1, dtype=np.int64)
    done = np.zeros(M, dtype=np.bool_)
    cap = sources.size + indices.size * n_layers + 1
    hd = np.empty(cap)
    hn = np.empty(cap, dtype=np.int64)
    size = 0
    for k in range(sources.size):
        s = sources[k]
        if dist[s] > 0.0:
            dist[s] = 0.0
            size = _heap_push(hd, hn, size, 0.0, s)
    found = -1
    while size > 0:
        d, u, size = _heap_pop(hd, hn, size)
        if done[u]:
            continue
        if d >= bound:
            break
        done[u] = True
        if is_target[u]:
            found = u
            break
        layer = u // N
        b = u - layer * N
        for e in range(indptr[b], indptr[b + 1]):
            vb = indices[e]
            if not allowed[vb]:
                continue
            lv = layer + shift[e]
            if lv < 0 or lv >= n_layers:
                continue
            v = lv * N + vb
            if done[v]:
                continue
            nd = d + weights[e]
            if nd < dist[v] or (nd == dist[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                size = _heap_push(hd, hn, size, nd, v)
    return dist, pred, found


def _trace(pred: np.ndarray, end: int) -> np.ndarray:
    out = [end]
    while pred[out[-1]] >= 0:
        out.append(int(pred[out[-1]]))
    return np.array(out[::-1], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PathResult:
    """A shortest path. ``raw is None`` encodes an infinite distance."""

    raw: float | None
    nodes: np.ndarray
    points: np.ndarray
    eps: float | None = None
    kernel: str | None = None
    normalized: float | None = None

    @property
    def connected(self) -> bool:
        return self.raw is not None

    @property
    def geodesic(self) -> np.ndarray:
        return self.points

    def normalize(self, a_eps: float) -> "PathResult":
        norm = None if self.raw is None else self.raw / a_eps
        return PathResult(self.raw, self.nodes, self.points, self.eps, self.kernel, norm)

    def __float__(self):
        return math.inf if self.raw is None else float(self.raw)


def _result(graph: MetricGraph, dist, pred, found, N=None) -> PathResult:
    if found < 0:
        return PathResult(None, np.empty(0, np.int64), np.empty(0, complex), graph.eps, graph.kernel)
    path = _trace(pred, found)
    base = path % (N or graph.spec.size)
    return PathResult(float(dist[found]), base, graph.spec.flat_to_point(base), graph.eps, graph.kernel)




def _zeros_shift(graph: MetricGraph) -> np.ndarray:
    return np.zeros(graph.indices.size, dtype=np.int64)


def _run(graph, sources, targets, allowed=None, bound=math.inf):
    allowed = graph.mask.ravel() if allowed is None else allowed.ravel()
    is_target = np.zeros(graph.spec.size, dtype=np.bool_)
    is_target[targets] = True
    is_target &= allowed
    src = np.asarray(sources, dtype=np.int64)
    src = src[allowed[src]]
    if src.size == 0 or not is_target.any():
        raise ValueError("empty source or target set")
    return _dijkstra(graph.indptr, graph.indices, graph.weights, _zeros_shift(graph), 1,
                     np.ascontiguousarray(allowed), src, is_target, bound)


def distance(graph: MetricGraph, z: complex, w: complex) -> PathResult:
    a, b = graph.node_id(z), graph.node_id(w)
    return _result(graph, *_run(graph, [a], [b]))


def _region_nodes(graph: MetricGraph, region: Region) -> np.ndarray:
    ids = np.flatnonzero(region.mask(graph.spec).ravel() & graph.mask.ravel())
    if ids.size == 0:
        raise ValueError("region contains no graph nodes")
    return ids


def set_distance(graph: MetricGraph, A: Region, B: Region, within: Region | None = None) -> PathResult:
    allowed = None
    if within is not None:
        allowed = within.mask(graph.spec) & graph.mask
    return _result(graph, *_run(graph, _region_nodes(graph, A), _region_nodes(graph, B), allowed))


def internal_distance(graph: MetricGraph, z: complex, w: complex, Y: Region) -> PathResult:
    allowed = Y.mask(graph.spec) & graph.mask
    a, b = graph.node_id(z), graph.node_id(w)
    if not (allowed.ravel()[a] and allowed.ravel()[b]):
        raise ValueError("query endpoints must lie in Y")
    return _result(graph, *_run(graph, [a], [b], allowed))


def distances_from(graph: MetricGraph, z: complex, allowed: np.ndarray | None = None) -> np.ndarray:
    """Distances from z to every node (inf where unreachable), shape (nx, ny)."""
    a = graph.node_id(z)
    allowed = graph.mask if allowed is None else allowed & graph.mask
    none = np.zeros(graph.spec.size, dtype=np.bool_)
    dist, _, _ = _dijkstra(graph.indptr, graph.indices, graph.weights, _zeros_shift(graph), 1,
                           np.ascontiguousarray(allowed.ravel()), np.array([a], dtype=np.int64), none, math.inf)
    return dist.reshape(graph.spec.shape)


def path_weight(graph: MetricGraph, nodes) -> float:
    return float(sum(graph.edge_weight(int(u), int(v)) for u, v in zip(nodes[:-1], nodes[1:])))


def geodesic_in_region(result: PathResult, Y: Region) -> bool:
    if not result.connected:
        raise ValueError("result has no geodesic")
    return bool(np.all(Y.contains(result.points)))


# ---------------------------------------------------------- around annulus


def _crossings(graph: MetricGraph, x: complex) -> np.ndarray:
    """Signed crossings of the ray {x + t : t > 0} by each directed edge."""
    pts = graph.spec.nodes().ravel() - x
    theta = np.mod(np.angle(pts), 2 * np.pi)
    src = np.repeat(np.arange(graph.spec.size), np.diff(graph.indptr))
    d = theta[graph.indices] - theta[src]
    shift = np.zeros(d.shape, dtype=np.int64)
    shift[d > np.pi] = -1
    shift[d < -np.pi] = 1
    return shift


def distance_around_annulus(graph: MetricGraph, x: complex, r1: float, r2: float) -> PathResult:
    """Shortest lattice loop in the open annulus A_{r1,r2}(x) separating its boundaries.

    The annulus is cut along the horizontal ray from x; crossing the cut moves
    between stacked copies of the graph, and the answer is the shortest walk
    from a node in one copy to the same node in the next copy.
    """
    s = graph.spec.spacing
    if (r2 - r1) / s < 3:
        raise ValueError("annulus too thin to contain a separating lattice cycle")
    ann = Annulus(complex(x), r1, r2)
    amask = ann.mask(graph.spec)
    x0, x1, y0, y1 = graph.spec.extent
    if r2 > min(x.real - x0, x1 - x.real, x.imag - y0, y1 - x.imag) + 1e-12 or not np.all(graph.mask[amask]):
        raise ValueError("annulus not contained in the graph region")
    allowed = np.ascontiguousarray(amask.ravel())
    shift = _crossings(graph, complex(x))
    N = graph.spec.size
    src = np.repeat(np.arange(N), np.diff(graph.indptr))
    usable = allowed[src] & allowed[graph.indices]
    starts = np.unique(graph.indices[(shift == 1) & usable])
    if starts.size == 0:
        raise ValueError("annulus too thin to contain a separating lattice cycle")
    # One multi-source run on a taller cover bounds every start from below:
    # d(v@1 -> v@2) >= min_u d(u@3 -> v@4) and >= min_u d(u@3 -> v@2).
    none = np.zeros(6 * N, dtype=np.bool_)
    lb_dist, _, _ = _dijkstra(graph.indptr, graph.indices, graph.weights, shift, 6, allowed,
                              3 * N + starts, none, math.inf)
    lower = np.maximum(lb_dist[4 * N + starts], lb_dist[2 * N + starts])
    order = np.lexsort((starts, lower))
    best, best_run = math.inf, None
    for k in order:
        if lower[k] >= best:
            break
        v = starts[k]
        is_target = np.zeros(4 * N, dtype=np.bool_)
        is_target[2 * N + v] = True
        dist, pred, found = _dijkstra(graph.indptr, graph.indices, graph.weights, shift, 4, allowed,
                                      np.array([N + v], dtype=np.int64), is_target, best)
        if found >= 0 and dist[found] < best:
            best, best_run = float(dist[found]), (dist, pred, found)
    if best_run is None:
        return PathResult(None, np.empty(0, np.int64), np.empty(0, complex), graph.eps, graph.kernel)
    return _result(graph, *best_run, N=N)


# ------------------------------------------------------- continuous paths


def path_length(mollified: GridField, points, xi: float, max_step: float | None = None) -> float:
    """Integral of exp(xi f) along the polyline through ``points`` (trapezoid rule,
    bilinear field values, segments subdivided to at most ``max_step``)."""
    pts = np.asarray(points, dtype=complex)
    if pts.size < 2:
        return 0.0
    step = max_step or mollified.spec.spacing / 2
    seg = np.abs(np.diff(pts))
    k = np.maximum(1, np.ceil(seg / step).astype(int))
    fine = [pts[:1]]
    for a, b, n in zip(pts[:-1], pts[1:], k):
        fine.append(a + (b - a) * np.arange(1, n + 1) / n)
    fine = np.concatenate(fine)
    e = np.exp(xi * bilinear(mollified, fine))
    return float(np.sum(np.abs(np.diff(fine)) * (e[1:] + e[:-1]) / 2))


def pullback_field(image_mollified: GridField, m, source: GridSpec, xi: float) -> GridField:
    """Field on the source lattice whose LFPP weights are exp(xi m(phi(w))) |phi'(w)|.

    Lattice lengths on the source grid then approximate lengths of phi-images of
    paths measured with the mollified coordinate-changed field.
    """
    if image_mollified.kind not in (LOCAL, HEAT):
        raise ValueError("pullback expects a mollified field on the image grid")
    w = source.nodes()
    with np.errstate(divide="ignore"):
        logd = np.log(np.abs(m.deriv(w)))
    # critical points of the map are not in any valid domain
    logd[np.isneginf(logd)] = np.nan
    vals = bilinear(image_mollified, m(w), strict=False) + logd / xi
    return GridField(source, vals, PULLBACK, image_mollified.param,
                     image_mollified.history + (f"pullback[{getattr(m, 'name', 'map')}]",))


# ------------------------------------------------------------ enumeration


def enumerate_distance(graph: MetricGraph, z: complex, w: complex, limit: int = 64) -> float:
    """Exhaustive search over simple paths (with branch-and-bound). Tiny graphs only."""
    if graph.n_nodes > limit:
        raise ValueError(f"enumeration limited to {limit} nodes")
    a, b = graph.node_id(z), graph.node_id(w)
    best = math.inf
    on_path = np.zeros(graph.spec.size, dtype=bool)

    def dfs(u, acc):
        nonlocal best
        if acc >= best:
            return
        if u == b:
            best = acc
            return
        on_path[u] = True
        for e in range(graph.indptr[u], graph.indptr[u + 1]):
            v = graph.indices[e]
            if not on_path[v]:
                dfs(v, acc + graph.weights[e])
        on_path[u] = False

    dfs(a, 0.0)
    return best


# -------------------------------------------------------------- persistence


def write_distance_matrix(path: str | Path, labels: list[str], rows: list[list[float | None]], meta: dict) -> None:
    """CSV with a header row of labels and a JSON sidecar ``<path>.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label", *labels])
        for lab, row in zip(labels, rows):
            wr.writerow([lab, *("inf" if v is None else repr(float(v)) for v in row)])
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
