"""Graphs, induced-cycle enumeration and 2-dimensional regular cell complexes.

Cells carry a single global integer id.  Ids are laid out by dimension:
vertices first (``0 .. n0-1``, equal to the node ids of the source graph),
then edges in canonical edge order, then rings in canonical cycle order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import (
    DuplicateEdge,
    FeatureShapeMismatch,
    IndexOutOfRange,
    SelfLoop,
    UnknownCell,
)

MAX_DIM = 2


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with optional node and edge feature matrices.

    Build instances through :func:`build_graph`, which canonicalises the edge
    list (``u < v``, sorted) and permutes ``edge_features`` to match.
    """

    num_nodes: int
    edges: tuple
    node_features: Optional[np.ndarray] = None
    edge_features: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list:
        adj = [set() for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and _arr_eq(self.node_features, other.node_features)
            and _arr_eq(self.edge_features, other.edge_features)
            and _arr_eq(self.target, other.target)
        )

    __hash__ = None


def _arr_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)


def _as_matrix(values, rows: int, what: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1 and rows == 0 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2 or arr.shape[0] != rows:
        raise FeatureShapeMismatch(
            f"{what} has shape {arr.shape}, expected ({rows}, d)"
        )
    if not np.all(np.isfinite(arr)):
        raise FeatureShapeMismatch(f"{what} contains non-finite values")
    return arr


def build_graph(
    num_nodes: int,
    edge_list: Iterable[Sequence[int]],
    node_features=None,
    edge_features=None,
    target=None,
) -> Graph:
    """Validate an edge list and return a canonical :class:`Graph`.

    Edges are stored as ``(min, max)`` pairs sorted lexicographically.
    Self-loops and repeated edges (in either orientation) are rejected.
    """
    num_nodes = int(num_nodes)
    if num_nodes < 0:
        raise IndexOutOfRange(f"negative node count {num_nodes}")
    pairs = []
    seen = {}
    for i, e in enumerate(edge_list):
        if len(e) != 2:
            raise IndexOutOfRange(f"edge {i} does not have two endpoints: {e!r}")
        u, v = int(e[0]), int(e[1])
        for w in (u, v):
            if not 0 <= w < num_nodes:
                raise IndexOutOfRange(f"edge {i} endpoint {w} not in [0, {num_nodes})")
        if u == v:
            raise SelfLoop(f"edge {i} is a self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"edge {i} {e!r} duplicates edge {seen[key]}")
        seen[key] = i
        pairs.append(key)

    order = sorted(range(len(pairs)), key=pairs.__getitem__)
    edges = tuple(pairs[i] for i in order)
    nf = _as_matrix(node_features, num_nodes, "node_features")
    ef = _as_matrix(edge_features, len(pairs), "edge_features")
    if ef is not None:
        ef = ef[order]
    tgt = None if target is None else np.atleast_1d(np.asarray(target, dtype=np.float64))
    return Graph(num_nodes, edges, nf, ef, tgt)


def enumerate_induced_cycles(graph: Graph, max_size: int) -> list:
    """Return every chordless cycle of length ``3..max_size``.

    Each cycle is a vertex list rotated to start at its smallest vertex and
    oriented so that the second vertex is smaller than the last one.  The
    result is sorted lexicographically.

    The search grows simple paths from a start vertex ``s`` through vertices
    larger than ``s`` and prunes any extension that would create a chord, so
    every surviving path induces a path subgraph.
    """
    if max_size < 3:
        raise ValueError(f"max_size must be >= 3, got {max_size}")
    adj = graph.neighbors()
    found = []

    def grow(path, on_path):
        s, last = path[0], path[-1]
        for w in sorted(adj[last]):
            if w <= s or w in on_path:
                continue
            # w may only touch the path at `last` (and at s when closing)
            if any(w in adj[u] for u in path[1:-1]):
                continue
            if s in adj[w]:
                if path[1] < w:
                    found.append(path + [w])
                continue
            if len(path) + 1 < max_size:
                on_path.add(w)
                path.append(w)
                grow(path, on_path)
                path.pop()
                on_path.discard(w)

    for s in range(graph.num_nodes):
        for v in sorted(adj[s]):
            if v > s:
                grow([s, v], {s, v})
    found.sort()
    return found


@dataclass(frozen=True)
class Cell:
    id: int
    dim: int
    boundary: tuple


@dataclass(frozen=True, eq=False)
class CellComplex:
    """Face poset of a 2-complex with precomputed neighbourhood tables.

    ``upper[c]`` lists ``(tau, delta)`` pairs with ``delta`` a shared
    co-boundary cell; ``lower[c]`` lists pairs with ``delta`` a shared
    boundary cell.  A pair appears once per distinct witness.
    """

    cells: tuple
    boundary_table: tuple
    coboundary_table: tuple
    upper_table: tuple
    lower_table: tuple
    source_graph: Optional[Graph] = field(default=None, repr=False)
    max_ring_size: int = 0

    @classmethod
    def from_cells(cls, cells: Sequence[Cell], source_graph=None, max_ring_size=0):
        cells = tuple(cells)
        n = len(cells)
        boundary = tuple(tuple(c.boundary) for c in cells)
        cob = [[] for _ in range(n)]
        for c in cells:
            for b in c.boundary:
                if 0 <= b < n:
                    cob[b].append(c.id)
        coboundary = tuple(tuple(sorted(set(x))) for x in cob)
        upper = []
        lower = []
        for c in cells:
            up = []
            for d in coboundary[c.id]:
                for t in boundary[d]:
                    if t != c.id:
                        up.append((t, d))
            upper.append(tuple(sorted(set(up))))
            lo = []
            for d in set(boundary[c.id]):
                if not 0 <= d < n:
                    continue
                for t in coboundary[d]:
                    if t != c.id:
                        lo.append((t, d))
            lower.append(tuple(sorted(set(lo))))
        return cls(cells, boundary, coboundary, tuple(upper), tuple(lower),
                   source_graph, max_ring_size)

    # -- basic queries -------------------------------------------------------

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def dims(self) -> np.ndarray:
        return np.array([c.dim for c in self.cells], dtype=np.int64)

    @cached_property
    def counts(self) -> tuple:
        """Number of cells per dimension ``(n0, n1, n2)``."""
        return tuple(int(np.sum(self.dims == k)) for k in range(MAX_DIM + 1))

    @cached_property
    def offsets(self) -> tuple:
        """Global id of the first cell of each dimension."""
        n0, n1, _ = self.counts
        return (0, n0, n0 + n1)

    def cells_of_dim(self, k: int) -> list:
        return [c.id for c in self.cells if c.dim == k]

    def local(self, cell_id: int) -> int:
        return cell_id - self.offsets[self.cells[cell_id].dim]

    def _check(self, cell_id) -> int:
        if not isinstance(cell_id, (int, np.integer)) or not 0 <= cell_id < len(self.cells):
            raise UnknownCell(f"no cell with id {cell_id!r}")
        return int(cell_id)

    def dim(self, cell_id) -> int:
        return self.cells[self._check(cell_id)].dim

    def boundary(self, cell_id) -> list:
        return list(self.boundary_table[self._check(cell_id)])

    def coboundary(self, cell_id) -> list:
        return list(self.coboundary_table[self._check(cell_id)])

    def upper_neighbors(self, cell_id) -> list:
        return list(self.upper_table[self._check(cell_id)])

    def lower_neighbors(self, cell_id) -> list:
        return list(self.lower_table[self._check(cell_id)])

    def ring_vertices(self, cell_id) -> list:
        """Vertex cycle of a ring, recovered from its ordered edge boundary."""
        edges = self.boundary(cell_id)
        verts = []
        for i, e in enumerate(edges):
            a, b = self.boundary_table[e]
            nxt = self.boundary_table[edges[(i + 1) % len(edges)]]
            verts.append(a if a not in nxt else b)
        return verts

    # -- index arrays for vectorised message passing ------------------------

    @cached_property
    def index_arrays(self) -> dict:
        """Local-index incidence arrays keyed by ``(kind, dim)``.

        ``("boundary", k)`` -> ``(sigma, tau)`` with tau of dim k-1;
        ``("upper", k)`` / ``("lower", k)`` -> ``(sigma, tau, delta)``.
        Rows are in ascending ``(sigma, tau, delta)`` order.
        """
        off = self.offsets
        out = {}
        for k in range(MAX_DIM + 1):
            ids = range(off[k], off[k] + self.counts[k])
            bs, bt = [], []
            us, ut, ud = [], [], []
            ls, lt, ld = [], [], []
            for c in ids:
                sl = c - off[k]
                for t in sorted(self.boundary_table[c]):
                    bs.append(sl)
                    bt.append(t - off[k - 1])
                for t, d in self.upper_table[c]:
                    us.append(sl)
                    ut.append(t - off[k])
                    ud.append(d - off[k + 1])
                for t, d in self.lower_table[c]:
                    ls.append(sl)
                    lt.append(t - off[k])
                    ld.append(d - off[k - 1])
            a = lambda x: np.asarray(x, dtype=np.int64)
            out[("boundary", k)] = (a(bs), a(bt))
            out[("upper", k)] = (a(us), a(ut), a(ud))
            out[("lower", k)] = (a(ls), a(lt), a(ld))
        return out

    # -- relabelling ---------------------------------------------------------

    def permute(self, perms: Sequence[Sequence[int]]) -> "CellComplex":
        """Relabel cells within each dimension.

        ``perms[k][i]`` is the new local index of the old dim-k cell ``i``.
        The source graph is dropped since node ids no longer match it.
        """
        off = self.offsets
        new_id = np.empty(self.num_cells, dtype=np.int64)
        for k in range(MAX_DIM + 1):
            p = np.asarray(perms[k], dtype=np.int64)
            if sorted(p.tolist()) != list(range(self.counts[k])):
                raise ValueError(f"perms[{k}] is not a permutation of {self.counts[k]} cells")
            new_id[off[k]:off[k] + self.counts[k]] = off[k] + p
        new_cells = [None] * self.num_cells
        for c in self.cells:
            nid = int(new_id[c.id])
            new_cells[nid] = Cell(nid, c.dim, tuple(int(new_id[b]) for b in c.boundary))
        return CellComplex.from_cells(new_cells, None, self.max_ring_size)


def lift(graph: Graph, max_ring_size: int) -> CellComplex:
    """Attach a 2-cell to every induced cycle of length <= ``max_ring_size``."""
    if max_ring_size < 3:
        raise ValueError(f"max_ring_size must be >= 3, got {max_ring_size}")
    n = graph.num_nodes
    cells = [Cell(v, 0, ()) for v in range(n)]
    edge_id = {}
    for i, (u, v) in enumerate(graph.edges):
        edge_id[(u, v)] = n + i
        cells.append(Cell(n + i, 1, (u, v)))
    base = n + graph.num_edges
    for j, cyc in enumerate(enumerate_induced_cycles(graph, max_ring_size)):
        bnd = []
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            bnd.append(edge_id[(min(a, b), max(a, b))])
        cells.append(Cell(base + j, 2, tuple(bnd)))
    return CellComplex.from_cells(cells, graph, max_ring_size)


def disjoint_union(complexes: Sequence[CellComplex]) -> tuple:
    """Disjoint union of complexes.

    Returns ``(union, owner)`` where ``owner[c]`` is the index of the input
    complex that union cell ``c`` came from.  Cells stay grouped by dimension.
    """
    new_cells = []
    owner = []
    maps = [dict() for _ in complexes]
    nid = 0
    for k in range(MAX_DIM + 1):
        for ci, cx in enumerate(complexes):
            for c in cx.cells:
                if c.dim == k:
                    maps[ci][c.id] = nid
                    new_cells.append((ci, c))
                    owner.append(ci)
                    nid += 1
    cells = [
        Cell(maps[ci][c.id], c.dim, tuple(maps[ci][b] for b in c.boundary))
        for ci, c in new_cells
    ]
    mrs = max((c.max_ring_size for c in complexes), default=0)
    return CellComplex.from_cells(cells, None, mrs), np.asarray(owner, dtype=np.int64)


def validate(cx: CellComplex) -> list:
    """Check the structural invariants of a complex; return violation messages."""
    errs = []
    n = cx.num_cells
    cells = cx.cells
    for i, c in enumerate(cells):
        if c.id != i:
            errs.append(f"ids: cell at position {i} has id {c.id}")
        if c.dim not in (0, 1, 2):
            errs.append(f"grading: cell {i} has dimension {c.dim}")
    if errs:
        return errs
    dims = [c.dim for c in cells]
    if dims != sorted(dims):
        errs.append("ids: cells are not grouped by dimension")

    for c in cells:
        for b in c.boundary:
            if not 0 <= b < n:
                errs.append(f"boundary: cell {c.id} references unknown cell {b}")
            elif cells[b].dim != c.dim - 1:
                errs.append(f"grading: cell {c.id} (dim {c.dim}) has boundary cell {b} of dim {cells[b].dim}")
        if c.dim == 0 and c.boundary:
            errs.append(f"boundary: vertex {c.id} has a non-empty boundary")
        if c.dim == 1 and (len(c.boundary) != 2 or len(set(c.boundary)) != 2):
            errs.append(f"boundary: edge {c.id} must have two distinct endpoints")
        if c.dim == 2:
            errs.extend(_ring_regularity(cx, c))

    for c in cells:
        for t in cx.boundary_table[c.id]:
            if 0 <= t < n and c.id not in cx.coboundary_table[t]:
                errs.append(f"duality: {t} in B({c.id}) but {c.id} not in Co({t})")
        for t in cx.coboundary_table[c.id]:
            if not 0 <= t < n or c.id not in cx.boundary_table[t]:
                errs.append(f"duality: {t} in Co({c.id}) but {c.id} not in B({t})")

    for name, table, witness_ok in (
        ("upper", cx.upper_table, lambda s, t, d: d in cx.coboundary_table[s] and d in cx.coboundary_table[t]),
        ("lower", cx.lower_table, lambda s, t, d: d in cx.boundary_table[s] and d in cx.boundary_table[t]),
    ):
        for c in cells:
            for t, d in table[c.id]:
                if not (0 <= t < n and 0 <= d < n):
                    errs.append(f"{name}: cell {c.id} lists unknown pair ({t}, {d})")
                    continue
                if t == c.id or cells[t].dim != c.dim:
                    errs.append(f"{name}: cell {c.id} lists invalid neighbour {t}")
                if not witness_ok(c.id, t, d):
                    errs.append(f"{name}: witness {d} invalid for pair ({c.id}, {t})")
                if (c.id, d) not in table[t]:
                    errs.append(f"{name}: ({t}, {d}) in N({c.id}) but ({c.id}, {d}) not in N({t})")
    reference = CellComplex.from_cells(cells)
    if reference.upper_table != cx.upper_table:
        errs.append("upper: table differs from the one implied by the boundary relation")
    if reference.lower_table != cx.lower_table:
        errs.append("lower: table differs from the one implied by the boundary relation")

    for c in cells:
        if c.dim == 0 and cx.lower_table[c.id]:
            errs.append(f"truncation: vertex {c.id} has lower neighbours")
        if c.dim == 2 and (cx.coboundary_table[c.id] or cx.upper_table[c.id]):
            errs.append(f"truncation: ring {c.id} has co-boundary or upper neighbours")
    return errs


def _ring_regularity(cx: CellComplex, ring: Cell) -> list:
    edges = ring.boundary
    n = cx.num_cells
    if len(edges) < 3 or len(set(edges)) != len(edges):
        return [f"regularity: ring {ring.id} needs >= 3 distinct boundary edges"]
    if any(not 0 <= e < n or cx.cells[e].dim != 1 for e in edges):
        return []  # already reported as a grading/boundary violation
    degree = {}
    for e in edges:
        for v in cx.cells[e].boundary:
            degree[v] = degree.get(v, 0) + 1
    if any(d != 2 for d in degree.values()) or len(degree) != len(edges):
        return [f"regularity: boundary of ring {ring.id} is not a simple closed cycle"]
    # consecutive edges must share a vertex and the walk must close
    for a, b in zip(edges, edges[1:] + edges[:1]):
        if not set(cx.cells[a].boundary) & set(cx.cells[b].boundary):
            return [f"regularity: boundary of ring {ring.id} is not listed in cycle order"]
    return []
