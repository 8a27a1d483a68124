"""Cellular Weisfeiler-Lehman colour refinement.

Two schemes are supported: ``CIN`` (boundary and upper neighbourhoods) and
``CINPP`` which additionally folds the lower neighbourhood into every cell
signature.  Signatures are interned exactly into dense integer ids, so two
cells share a colour if and only if their signatures are equal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .complex import MAX_DIM, CellComplex, disjoint_union
from .exceptions import DomainMismatch, MissingFeatures, NotConverged


class RefinementScheme(enum.Enum):
    CIN = "cin"
    CINPP = "cinpp"

    @classmethod
    def parse(cls, value) -> "RefinementScheme":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower().replace("+", "p"))


class InternTable:
    """Injective map from hashable signatures to contiguous integer ids."""

    def __init__(self):
        self._ids = {}

    def __call__(self, signature) -> int:
        cid = self._ids.get(signature)
        if cid is None:
            cid = self._ids[signature] = len(self._ids)
        return cid

    def __len__(self):
        return len(self._ids)

    def __contains__(self, signature):
        return signature in self._ids


@dataclass
class Coloring:
    """A colour per cell id plus the table the colours were interned with."""

    colors: np.ndarray
    intern_table: InternTable = field(default_factory=InternTable, repr=False)

    def __len__(self):
        return len(self.colors)

    def partition(self) -> np.ndarray:
        """Colours renumbered by first occurrence; equal arrays <=> equal partitions."""
        _, first, inverse = np.unique(self.colors, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return rank[inverse.ravel()]

    def num_classes(self) -> int:
        return len(np.unique(self.colors))

    def histogram(self, dims: np.ndarray, k: int) -> dict:
        vals, counts = np.unique(self.colors[dims == k], return_counts=True)
        return dict(zip(vals.tolist(), counts.tolist()))


def initial_coloring(
    cx: CellComplex,
    mode: str = "uniform",
    features: Optional[Sequence[np.ndarray]] = None,
    table: Optional[InternTable] = None,
) -> Coloring:
    """Starting colours for refinement.

    ``uniform`` gives every cell of a dimension the same colour.
    ``features`` interns the exact feature row of each cell together with
    its dimension; ``features[k]`` is the ``(n_k, d_k)`` matrix for dim ``k``.
    """
    table = InternTable() if table is None else table
    colors = np.empty(cx.num_cells, dtype=np.int64)
    if mode == "uniform":
        for c in cx.cells:
            colors[c.id] = table(("init", c.dim))
    elif mode in ("features", "from-features"):
        if features is None:
            raise MissingFeatures("feature initialisation requires per-dimension features")
        for k in range(MAX_DIM + 1):
            rows = np.asarray(features[k], dtype=np.float64)
            if rows.shape[0] != cx.counts[k]:
                raise MissingFeatures(
                    f"dim {k}: {rows.shape[0]} feature rows for {cx.counts[k]} cells"
                )
            off = cx.offsets[k]
            for i in range(cx.counts[k]):
                colors[off + i] = table(("init", k, rows[i].tobytes()))
    else:
        raise ValueError(f"unknown initialisation mode {mode!r}")
    return Coloring(colors, table)


def signature(cx: CellComplex, colors, cell: int, scheme: RefinementScheme) -> tuple:
    c = colors
    b = tuple(sorted(int(c[t]) for t in cx.boundary_table[cell]))
    up = tuple(sorted((int(c[t]), int(c[d])) for t, d in cx.upper_table[cell]))
    sig = (int(c[cell]), b, up)
    if scheme is RefinementScheme.CINPP:
        lo = tuple(sorted((int(c[t]), int(c[d])) for t, d in cx.lower_table[cell]))
        sig = sig + (lo,)
    return sig


def refine_step(cx: CellComplex, coloring: Coloring, scheme="cinpp") -> Coloring:
    """One refinement round.  The returned colouring reuses the input's table."""
    scheme = RefinementScheme.parse(scheme)
    if len(coloring) != cx.num_cells:
        raise DomainMismatch(f"colouring covers {len(coloring)} cells, complex has {cx.num_cells}")
    table = coloring.intern_table
    old = coloring.colors
    new = np.fromiter(
        (table(signature(cx, old, c, scheme)) for c in range(cx.num_cells)),
        dtype=np.int64,
        count=cx.num_cells,
    )
    return Coloring(new, table)


@dataclass
class RefinementResult:
    coloring: Coloring
    iterations: int
    dim_stable_at: tuple
    history: list = field(repr=False, default_factory=list)


def _dim_partitions(coloring: Coloring, dims: np.ndarray) -> list:
    out = []
    for k in range(MAX_DIM + 1):
        sub = Coloring(coloring.colors[dims == k])
        out.append(sub.partition())
    return out


def refine_to_stable(
    cx: CellComplex,
    initial: Optional[Coloring] = None,
    scheme="cinpp",
    max_iters: Optional[int] = None,
) -> RefinementResult:
    """Refine until the partition stops changing.

    ``iterations`` is the number of rounds that changed the partition, so the
    returned colouring is ``c^iterations``.  ``dim_stable_at[k]`` is the first
    round after which the partition of the dim-``k`` cells is already final.
    """
    scheme = RefinementScheme.parse(scheme)
    coloring = initial_coloring(cx) if initial is None else initial
    if max_iters is None:
        max_iters = cx.num_cells + 1
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    history = [coloring]
    part = coloring.partition()
    for _ in range(max_iters):
        nxt = refine_step(cx, coloring, scheme)
        npart = nxt.partition()
        if np.array_equal(part, npart):
            break
        coloring, part = nxt, npart
        history.append(coloring)
    else:
        raise NotConverged(f"partition still changing after {max_iters} rounds")

    dims = cx.dims
    final = _dim_partitions(history[-1], dims)
    stable_at = []
    for k in range(MAX_DIM + 1):
        t = len(history) - 1
        while t > 0 and np.array_equal(_dim_partitions(history[t - 1], dims)[k], final[k]):
            t -= 1
        stable_at.append(t)
    return RefinementResult(history[-1], len(history) - 1, tuple(stable_at), history)


def distinguishable(
    a: CellComplex,
    b: CellComplex,
    scheme="cinpp",
    init: str = "uniform",
    features_a=None,
    features_b=None,
) -> bool:
    """One-sided CWL test: ``True`` proves the complexes non-isomorphic.

    Both complexes are refined jointly (as one disjoint union, hence one
    intern table) and the per-dimension colour histograms are compared.
    """
    union, owner = disjoint_union([a, b])
    if init == "uniform":
        start = initial_coloring(union)
    else:
        if features_a is None or features_b is None:
            raise MissingFeatures("feature initialisation requires features for both complexes")
        feats = [np.vstack([np.asarray(features_a[k]).reshape(a.counts[k], -1),
                            np.asarray(features_b[k]).reshape(b.counts[k], -1)])
                 if a.counts[k] + b.counts[k] else np.zeros((0, 1))
                 for k in range(MAX_DIM + 1)]
        start = initial_coloring(union, "features", feats)
    res = refine_to_stable(union, start, scheme)
    colors = res.coloring.colors
    dims = union.dims
    for k in range(MAX_DIM + 1):
        ha = np.unique(colors[(dims == k) & (owner == 0)], return_counts=True)
        hb = np.unique(colors[(dims == k) & (owner == 1)], return_counts=True)
        if not (np.array_equal(ha[0], hb[0]) and np.array_equal(ha[1], hb[1])):
            return True
    return False


def refines(a: Coloring, b: Coloring) -> bool:
    """``True`` iff equal colours under ``a`` imply equal colours under ``b``."""
    ca, cb = np.asarray(getattr(a, "colors", a)), np.asarray(getattr(b, "colors", b))
    if ca.shape != cb.shape:
        raise DomainMismatch(f"colourings cover {ca.shape} and {cb.shape} cells")
    seen = {}
    for x, y in zip(ca.tolist(), cb.tolist()):
        if seen.setdefault(x, y) != y:
            return False
    return True


def coloring_equivalent(a: Coloring, b: Coloring) -> bool:
    return refines(a, b) and refines(b, a)
