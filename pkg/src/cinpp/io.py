"""Graph datasets (JSON-Lines), synthetic generators, complex JSON and checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .complex import Cell, CellComplex, Graph, build_graph, enumerate_induced_cycles, lift
from .exceptions import (
    BadParams,
    CorruptBlob,
    EmptyDataset,
    FeatureShapeMismatch,
    GraphError,
    Malformed,
    VersionMismatch,
)
from .model import CinModel, ModelConfig
from .train import TrainState


@dataclass
class Dataset:
    graphs: list
    targets: Optional[np.ndarray]
    task: str = "regression"
    output_dim: int = 1
    path: Optional[str] = None
    sha256: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.graphs)

    def lift(self, max_ring_size: int) -> list:
        return [lift(g, max_ring_size) for g in self.graphs]


def graph_from_json(obj) -> Graph:
    if not isinstance(obj, dict):
        raise Malformed("graph record must be a JSON object")
    if "num_nodes" not in obj or "edges" not in obj:
        raise Malformed("graph record needs 'num_nodes' and 'edges'")
    if not isinstance(obj["num_nodes"], int) or not isinstance(obj["edges"], list):
        raise Malformed("'num_nodes' must be an int and 'edges' a list")
    return build_graph(
        obj["num_nodes"],
        obj["edges"],
        obj.get("node_features"),
        obj.get("edge_features"),
        obj.get("target"),
    )


def graph_to_json(g: Graph) -> dict:
    out = {"num_nodes": g.num_nodes, "edges": [list(e) for e in g.edges]}
    if g.node_features is not None:
        out["node_features"] = g.node_features.tolist()
    if g.edge_features is not None:
        out["edge_features"] = g.edge_features.tolist()
    if g.target is not None:
        out["target"] = g.target.tolist() if g.target.size > 1 else float(g.target[0])
    return out


def parse_graph_jsonl(path, task: str = "regression") -> Dataset:
    """Read one graph per non-blank line; every error names its 1-based line."""
    path = Path(path)
    raw = path.read_bytes()
    graphs = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise Malformed(f"invalid JSON ({exc.msg})", lineno) from None
        try:
            graphs.append(graph_from_json(obj))
        except Malformed as exc:
            raise Malformed(str(exc), lineno) from None
        except GraphError as exc:
            err = type(exc)(f"line {lineno}: {exc}")
            err.line = lineno
            raise err from None
    if not graphs:
        raise EmptyDataset(f"{path} contains no graphs")
    targets = None
    with_target = [g.target is not None for g in graphs]
    if any(with_target):
        if not all(with_target):
            first = with_target.index(False) + 1
            raise Malformed("target missing while other records have one", first)
        shapes = {g.target.shape for g in graphs}
        if len(shapes) != 1:
            raise FeatureShapeMismatch(f"targets have mixed shapes {sorted(shapes)}")
        targets = np.vstack([g.target for g in graphs])
    return Dataset(
        graphs,
        targets,
        task=task,
        output_dim=1 if targets is None else targets.shape[1],
        path=str(path),
        sha256=hashlib.sha256(raw).hexdigest(),
    )


def write_graph_jsonl(graphs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_json(g)) + "\n")


# -- synthetic families ---------------------------------------------------------

def fused_chain(n: int) -> Graph:
    """Linear chain of ``n`` hexagons, each sharing one edge with the next.

    Rung edges ``a_i - b_i`` are the shared edges; ring ``i`` is
    ``a_i, t_i, a_{i+1}, b_{i+1}, u_i, b_i``.
    """
    if n < 1:
        raise BadParams("fused chain needs at least one ring")
    a = lambda i: i
    b = lambda i: n + 1 + i
    t = lambda i: 2 * (n + 1) + i
    u = lambda i: 3 * n + 2 + i
    edges = [(a(i), b(i)) for i in range(n + 1)]
    for i in range(n):
        edges += [(a(i), t(i)), (t(i), a(i + 1)), (b(i), u(i)), (u(i), b(i + 1))]
    return build_graph(4 * n + 2, edges, target=[float(n)])


def cycle_graph(n: int, offset: int = 0) -> list:
    return [(offset + i, offset + (i + 1) % n) for i in range(n)]


def _ring_count_graph(rng: np.random.Generator, ring_size: int, max_rings: int) -> tuple:
    edges = []
    n = 0
    rings = []

    def add_ring(size):
        nonlocal n
        verts = list(range(n, n + size))
        n += size
        edges.extend((verts[i], verts[(i + 1) % size]) for i in range(size))
        return verts

    def attach(verts):
        # bridge from a fresh component to something that already exists
        if n - len(verts) > 0:
            edges.append((int(rng.integers(0, n - len(verts))), int(rng.choice(verts))))

    pieces = ["target"] * int(rng.integers(0, max_rings + 1))
    others = [s for s in (3, 4, 5, 7, 8) if s != ring_size]
    pieces += ["other"] * int(rng.integers(0, 2))
    rng.shuffle(pieces)
    for kind in pieces:
        size = ring_size if kind == "target" else int(rng.choice(others))
        if rings and rng.random() < 0.25:
            # fuse: share one edge of an existing ring
            host = rings[int(rng.integers(0, len(rings)))]
            j = int(rng.integers(0, len(host)))
            x, y = host[j], host[(j + 1) % len(host)]
            new = list(range(n, n + size - 2))
            n += size - 2
            path = [y] + new + [x]
            edges.extend((path[i], path[i + 1]) for i in range(len(path) - 1))
            rings.append([x] + path[:-1])
        else:
            verts = add_ring(size)
            attach(verts)
            rings.append(verts)
    for _ in range(int(rng.integers(1, 4))):
        n += 1
        if n > 1:
            edges.append((int(rng.integers(0, n - 1)), n - 1))
    perm = rng.permutation(n)
    edges = [(int(perm[u]), int(perm[v])) for u, v in edges]
    g = build_graph(n, edges)
    return n, g.edges, count_rings(g, ring_size)


def count_rings(g: Graph, ring_size: int = 6) -> int:
    """Number of induced cycles of exactly ``ring_size`` vertices."""
    return sum(1 for c in enumerate_induced_cycles(g, ring_size) if len(c) == ring_size)


def degree_one_hot(num_nodes: int, edges, max_degree: int = 4) -> np.ndarray:
    """One-hot vertex degree with the last column collecting ``>= max_degree``."""
    deg = np.zeros(num_nodes, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    out = np.zeros((num_nodes, max_degree + 1))
    out[np.arange(num_nodes), np.minimum(deg, max_degree)] = 1.0
    return out


def generate_synthetic(family: str, params: Optional[dict] = None, seed: int = 0) -> Dataset:
    """Desk-scale datasets.

    ``ring-count``: random graphs built from rings, bridges, edge-fused rings
    and pendant trees, with one-hot vertex degrees as node features; the
    target is the number of induced ``ring_size``-cycles (params:
    ``n_graphs``, ``ring_size``, ``max_rings``).
    ``fused-chain``: hexagon chains of lengths ``lengths``; target = length.
    ``cycle-pair``: for each ``k`` in ``ks`` the pair ``C_2k`` (target 1) and
    ``C_k + C_k`` (target 0).
    """
    params = dict(params or {})
    if family == "ring-count":
        n_graphs = int(params.pop("n_graphs", 2000))
        ring_size = int(params.pop("ring_size", 6))
        max_rings = int(params.pop("max_rings", 4))
        if params:
            raise BadParams(f"unknown ring-count params {sorted(params)}")
        if n_graphs < 1 or ring_size < 3 or max_rings < 0:
            raise BadParams("need n_graphs >= 1, ring_size >= 3, max_rings >= 0")
        graphs = []
        for i in range(n_graphs):
            n, edges, count = _ring_count_graph(T.make_rng(seed, "ring-count", i), ring_size, max_rings)
            graphs.append(build_graph(n, edges, degree_one_hot(n, edges), target=[float(count)]))
        meta = {"ring_size": ring_size, "max_rings": max_rings}
    elif family == "fused-chain":
        lengths = params.pop("lengths", list(range(1, 7)))
        if params:
            raise BadParams(f"unknown fused-chain params {sorted(params)}")
        if not lengths or any(int(k) < 1 for k in lengths):
            raise BadParams("lengths must be positive")
        graphs = [fused_chain(int(k)) for k in lengths]
        meta = {"lengths": [int(k) for k in lengths]}
    elif family == "cycle-pair":
        ks = params.pop("ks", [3, 4, 5])
        if params:
            raise BadParams(f"unknown cycle-pair params {sorted(params)}")
        if not ks or any(int(k) < 3 for k in ks):
            raise BadParams("cycle sizes must be >= 3")
        graphs = []
        for k in map(int, ks):
            graphs.append(build_graph(2 * k, cycle_graph(2 * k), target=[1.0]))
            graphs.append(build_graph(2 * k, cycle_graph(k) + cycle_graph(k, k), target=[0.0]))
        meta = {"ks": [int(k) for k in ks]}
    else:
        raise BadParams(f"unknown synthetic family {family!r}")
    targets = np.vstack([g.target for g in graphs])
    task = "binary" if family == "cycle-pair" else "regression"
    return Dataset(graphs, targets, task=task, output_dim=1,
                   meta={"family": family, "seed": seed, **meta})


# -- complexes ----------------------------------------------------------------------

def serialize_complex(cx: CellComplex) -> dict:
    out = {
        "format": "cinpp-complex",
        "version": 1,
        "max_ring_size": cx.max_ring_size,
        "counts": list(cx.counts),
        "cells": [
            [list(c.boundary) for c in cx.cells if c.dim == k] for k in range(3)
        ],
        "boundary": [list(b) for b in cx.boundary_table],
        "coboundary": [list(b) for b in cx.coboundary_table],
        "upper": [[list(p) for p in u] for u in cx.upper_table],
        "lower": [[list(p) for p in l] for l in cx.lower_table],
    }
    if cx.source_graph is not None:
        out["graph"] = graph_to_json(cx.source_graph)
    return out


def deserialize_complex(obj: dict) -> CellComplex:
    if obj.get("format") != "cinpp-complex":
        raise Malformed("not a serialized complex")
    if int(obj.get("version", 0)) > 1:
        raise VersionMismatch(f"complex format version {obj['version']} is newer than 1")
    cells = []
    for k, group in enumerate(obj["cells"]):
        for bnd in group:
            cells.append(Cell(len(cells), k, tuple(int(b) for b in bnd)))
    graph = graph_from_json(obj["graph"]) if "graph" in obj else None
    return CellComplex(
        tuple(cells),
        tuple(tuple(b) for b in obj["boundary"]),
        tuple(tuple(b) for b in obj["coboundary"]),
        tuple(tuple(tuple(p) for p in u) for u in obj["upper"]),
        tuple(tuple(tuple(p) for p in l) for l in obj["lower"]),
        graph,
        int(obj["max_ring_size"]),
    )


# -- checkpoints ----------------------------------------------------------------------

MAGIC = b"CINPPCKP"
FORMAT_VERSION = (1, 0)


def save_checkpoint(model: CinModel, state: Optional[TrainState], path, extra: Optional[dict] = None):
    """JSON header plus a little-endian float64 blob indexed by name/offset/shape."""
    entries, chunks, offset = [], [], 0

    def put(name, kind, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "kind": kind, "offset": offset, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes

    for name, p in model.parameters().items():
        put(name, "param", p.data)
    for name, b in model.buffers().items():
        put(name, "buffer", b)
    train_state = None
    if state is not None:
        for name in sorted(state.m):
            put(name, "adam_m", state.m[name])
            put(name, "adam_v", state.v[name])
        train_state = {
            "lr": state.lr, "step": state.step,
            "best_metric": state.best_metric, "best_epoch": state.best_epoch,
            "plateau_best": state.plateau_best if np.isfinite(state.plateau_best) else None,
            "plateau_bad": state.plateau_bad,
        }
    blob = b"".join(chunks)
    header = {
        "format": "cinpp-checkpoint",
        "version": list(FORMAT_VERSION),
        "model_config": model.config.to_dict(),
        "train_state": train_state,
        "tensors": entries,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint_header(path) -> tuple:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CorruptBlob(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + hlen > len(data):
        raise CorruptBlob(f"{path}: truncated header")
    try:
        header = json.loads(data[start: start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBlob(f"{path}: unreadable header") from exc
    major = int(header.get("version", [0])[0])
    if major != FORMAT_VERSION[0]:
        raise VersionMismatch(f"{path}: format version {major}.x, this reader handles {FORMAT_VERSION[0]}.x")
    blob = data[start + hlen:]
    if len(blob) != header["blob_bytes"]:
        raise CorruptBlob(f"{path}: blob has {len(blob)} bytes, header says {header['blob_bytes']}")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise CorruptBlob(f"{path}: blob checksum mismatch")
    return header, blob


def load_checkpoint(path) -> tuple:
    """Return ``(model, train_state_or_None, extra)``."""
    header, blob = read_checkpoint_header(path)
    model = CinModel(ModelConfig(**header["model_config"]))
    params, buffers = model.parameters(), model.buffers()
    m, v = {}, {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        kind, name = e["kind"], e["name"]
        if kind == "param":
            params[name].data[...] = arr
        elif kind == "buffer":
            buffers[name][...] = arr
        elif kind == "adam_m":
            m[name] = arr.astype(np.float64)
        elif kind == "adam_v":
            v[name] = arr.astype(np.float64)
    state = None
    ts = header.get("train_state")
    if ts is not None:
        state = TrainState(
            lr=ts["lr"], step=ts["step"], m=m, v=v,
            best_metric=ts["best_metric"], best_epoch=ts["best_epoch"],
            plateau_best=np.inf if ts["plateau_best"] is None else ts["plateau_best"],
            plateau_bad=ts["plateau_bad"],
        )
    return model, state, header.get("extra", {})
