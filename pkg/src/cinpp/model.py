"""CIN++ message passing network over lifted cell complexes.

Each layer holds, for every cell dimension, three message branches
(boundary, upper, lower) and an update.  A branch computes

    MLP((1 + eps) * h_sigma + sum over neighbours of msg)

where ``msg`` is the neighbour feature for the boundary branch and
``relu(W [h_tau || h_delta] + b)`` for the upper and lower branches.  The
update is ``relu(W [h || m_B || m_up || m_down] + b)``.  Branches that do
not exist for a dimension (boundary and lower at dim 0, upper at dim 2)
contribute zero blocks, so every dimension keeps one update signature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .complex import MAX_DIM, CellComplex
from .cwl import Coloring, InternTable, RefinementScheme
from .exceptions import EmptyComplex, FeatureShapeMismatch, ShapeMismatch

BRANCHES = ("boundary", "upper", "lower")


@dataclass
class ModelConfig:
    node_dim: int = 1
    edge_dim: int = 1
    hidden: int = 64
    layers: int = 3
    out_dim: int = 1
    readout: str = "sum"
    dropout: float = 0.0
    use_lower: bool = True
    ring_init: str = "sum"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    message_nonlinearity: str = "relu"
    mlp_batchnorm: str = "after-each-dense"
    dropout_position: str = "before-head"
    weight_init: str = "glorot-uniform"
    bias_init: str = "zeros"
    eps_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.readout not in ("sum", "mean"):
            raise ValueError(f"readout must be 'sum' or 'mean', got {self.readout!r}")
        if self.ring_init not in ("zeros", "sum", "mean"):
            raise ValueError(f"ring_init must be zeros|sum|mean, got {self.ring_init!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# -- building blocks -------------------------------------------------------------

class Module:
    """Minimal container that walks its attributes for parameters and buffers."""

    def modules(self):
        yield self
        for val in vars(self).values():
            items = val if isinstance(val, (list, tuple)) else (val,)
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def named_parameters(self):
        for mod in self.modules():
            for val in vars(mod).values():
                if isinstance(val, T.Parameter):
                    yield val.name, val

    def named_buffers(self):
        for mod in self.modules():
            if isinstance(mod, BatchNorm):
                yield f"{mod.name}.running_mean", mod.running_mean
                yield f"{mod.name}.running_var", mod.running_var


class Dense(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        self.weight = T.Parameter(T.glorot_uniform(rng, fan_in, fan_out), f"{name}.weight")
        self.bias = T.Parameter(np.zeros(fan_out), f"{name}.bias")

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, width: int, name: str, eps: float, momentum: float):
        self.name = name
        self.gamma = T.Parameter(np.ones(width), f"{name}.gamma")
        self.beta = T.Parameter(np.zeros(width), f"{name}.beta")
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: T.Tensor, training: bool) -> T.Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, training, self.eps, self.momentum)


class MLP(Module):
    """Two dense layers, each followed by batch norm and relu."""

    def __init__(self, width, rng, name, eps, momentum):
        self.dense1 = Dense(width, width, rng, f"{name}.dense1")
        self.bn1 = BatchNorm(width, f"{name}.bn1", eps, momentum)
        self.dense2 = Dense(width, width, rng, f"{name}.dense2")
        self.bn2 = BatchNorm(width, f"{name}.bn2", eps, momentum)

    def __call__(self, x, training):
        x = T.relu(self.bn1(self.dense1(x), training))
        return T.relu(self.bn2(self.dense2(x), training))


class Branch(Module):
    def __init__(self, kind, width, rng, name, cfg: ModelConfig):
        self.kind = kind
        self.eps = T.Parameter(np.full(1, cfg.eps_init), f"{name}.eps")
        self.inner = None if kind == "boundary" else Dense(2 * width, width, rng, f"{name}.inner")
        self.mlp = MLP(width, rng, f"{name}.mlp", cfg.bn_eps, cfg.bn_momentum)


class CinLayer(Module):
    def __init__(self, width, rng, name, cfg: ModelConfig):
        self.dims = [_DimBlock(width, rng, f"{name}.dim{k}", cfg) for k in range(MAX_DIM + 1)]


class _DimBlock(Module):
    def __init__(self, width, rng, name, cfg):
        self.boundary = Branch("boundary", width, rng, f"{name}.boundary", cfg)
        self.upper = Branch("upper", width, rng, f"{name}.upper", cfg)
        self.lower = Branch("lower", width, rng, f"{name}.lower", cfg)
        self.update = Dense(4 * width, width, rng, f"{name}.update")


# -- batching --------------------------------------------------------------------

class ComplexBatch:
    """Disjoint union of complexes as concatenated local index arrays."""

    def __init__(self, complexes: Sequence[CellComplex]):
        self.complexes = list(complexes)
        if not self.complexes:
            raise EmptyComplex("empty batch")
        for i, cx in enumerate(self.complexes):
            if cx.num_cells == 0:
                raise EmptyComplex(f"complex {i} has no cells")
        self.size = len(self.complexes)
        counts = np.array([cx.counts for cx in self.complexes], dtype=np.int64)
        self.counts = tuple(int(c) for c in counts.sum(axis=0))
        offs = np.vstack([np.zeros((1, 3), dtype=np.int64), np.cumsum(counts, axis=0)[:-1]])
        self.owner = [
            np.repeat(np.arange(self.size), counts[:, k]) for k in range(MAX_DIM + 1)
        ]
        self.cells_per_complex = counts
        self.index = {}
        for kind in BRANCHES:
            for k in range(MAX_DIM + 1):
                parts = []
                for i, cx in enumerate(self.complexes):
                    arrs = cx.index_arrays[(kind, k)]
                    if kind == "boundary":
                        parts.append((arrs[0] + offs[i, k], arrs[1] + offs[i, k - 1]))
                    elif kind == "upper":
                        parts.append((arrs[0] + offs[i, k], arrs[1] + offs[i, k],
                                      arrs[2] + offs[i, min(k + 1, MAX_DIM)]))
                    else:
                        parts.append((arrs[0] + offs[i, k], arrs[1] + offs[i, k],
                                      arrs[2] + offs[i, k - 1]))
                self.index[(kind, k)] = tuple(
                    np.concatenate([p[j] for p in parts]) for j in range(len(parts[0]))
                )
        self._segments = {}

    def segments(self, kind, k):
        """Cached sparse sum matrix scattering neighbour rows onto dim-k cells."""
        key = (kind, k)
        if key not in self._segments:
            self._segments[key] = T.segment_matrix(self.index[key][0], self.counts[k])
        return self._segments[key]

    def gather_matrix(self, kind, k, column, source_dim):
        """Cached sparse matrix for the backward pass of gathering ``index[kind, k][column]``."""
        key = ("gather", kind, k, column)
        if key not in self._segments:
            self._segments[key] = T.segment_matrix(self.index[(kind, k)][column],
                                                   self.counts[source_dim])
        return self._segments[key]

    def readout_matrix(self, k):
        key = ("readout", k)
        if key not in self._segments:
            self._segments[key] = T.segment_matrix(self.owner[k], self.size)
        return self._segments[key]


def as_batch(x) -> ComplexBatch:
    if isinstance(x, ComplexBatch):
        return x
    if isinstance(x, CellComplex):
        return ComplexBatch([x])
    return ComplexBatch(list(x))


# -- featurisation ----------------------------------------------------------------

def input_features(cx: CellComplex, node_dim: int = 1, edge_dim: int = 1,
                   ring_init: str = "sum") -> list:
    """Per-dimension input matrices for one complex.

    Vertices take the node features of the source graph (a ones column when
    absent), edges the edge features (zeros when absent) and rings the
    zeros/sum/mean of their boundary edge features.
    """
    n0, n1, n2 = cx.counts
    g = cx.source_graph
    nf = None if g is None else g.node_features
    ef = None if g is None else g.edge_features
    if nf is None:
        if node_dim != 1:
            raise FeatureShapeMismatch(f"graph has no node features but node_dim={node_dim}")
        x0 = np.ones((n0, 1))
    else:
        x0 = np.asarray(nf, dtype=np.float64)
        if x0.shape != (n0, node_dim):
            raise FeatureShapeMismatch(f"node features {x0.shape}, expected {(n0, node_dim)}")
    if ef is None:
        x1 = np.zeros((n1, edge_dim))
    else:
        x1 = np.asarray(ef, dtype=np.float64)
        if x1.shape != (n1, edge_dim):
            raise FeatureShapeMismatch(f"edge features {x1.shape}, expected {(n1, edge_dim)}")
    x2 = np.zeros((n2, edge_dim))
    if ring_init != "zeros" and n2:
        sigma, tau = cx.index_arrays[("boundary", 2)]
        np.add.at(x2, sigma, x1[tau])
        if ring_init == "mean":
            x2 /= np.bincount(sigma, minlength=n2).reshape(-1, 1)
    return [x0, x1, x2]


# -- the model ---------------------------------------------------------------------

class CinModel(Module):
    """Embedding, ``layers`` CIN++ layers and the two-stage readout."""

    def __init__(self, config: Optional[ModelConfig] = None, **kwargs):
        self.config = config if config is not None else ModelConfig(**kwargs)
        cfg = self.config
        rng = T.make_rng(cfg.seed, "init")
        d = cfg.hidden
        in_dims = (cfg.node_dim, cfg.edge_dim, cfg.edge_dim)
        self.embed = [Dense(in_dims[k], d, rng, f"embed.dim{k}") for k in range(MAX_DIM + 1)]
        self.layers = [CinLayer(d, rng, f"layers.{l}", cfg) for l in range(cfg.layers)]
        self.readout_mlps = [Dense(d, d, rng, f"readout.dim{k}") for k in range(MAX_DIM + 1)]
        self.head = Dense(d, cfg.out_dim, rng, "head")
        self.training = False
        self._dropout_calls = 0

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def parameters(self) -> dict:
        return {name: p for name, p in self.named_parameters()}

    def buffers(self) -> dict:
        return {name: b for name, b in self.named_buffers()}

    # -- forward pieces ----------------------------------------------------------

    def featurize(self, batch: ComplexBatch) -> list:
        cfg = self.config
        per = [input_features(cx, cfg.node_dim, cfg.edge_dim, cfg.ring_init)
               for cx in batch.complexes]
        return [np.vstack([p[k] for p in per]) for k in range(MAX_DIM + 1)]

    def embed_inputs(self, batch: ComplexBatch, inputs=None) -> list:
        inputs = self.featurize(batch) if inputs is None else inputs
        return [self.embed[k](T.Tensor(inputs[k])) for k in range(MAX_DIM + 1)]

    def encode(self, batch, inputs=None) -> list:
        """Cell features after all message passing layers (pre-readout)."""
        batch = as_batch(batch)
        h = self.embed_inputs(batch, inputs)
        for layer in self.layers:
            h = update(layer, batch, h, self.training, self.config.use_lower)
        return h

    def readout(self, batch, h) -> T.Tensor:
        return readout(self, as_batch(batch), h)

    def forward(self, batch, inputs=None, rng: Optional[np.random.Generator] = None) -> T.Tensor:
        batch = as_batch(batch)
        h = self.encode(batch, inputs)
        return readout(self, batch, h, rng)

    __call__ = forward

    def predict(self, complexes) -> np.ndarray:
        prev = self.training
        self.eval()
        try:
            with T.no_grad():
                return self.forward(complexes).data.copy()
        finally:
            self.training = prev


def _zeros(n: int, d: int) -> T.Tensor:
    return T.Tensor(np.zeros((n, d)))


def _branch_input(branch: Branch, h_sigma: T.Tensor, agg: T.Tensor) -> T.Tensor:
    return T.scale_add(h_sigma, branch.eps, agg)


def boundary_message(layer: CinLayer, batch, h, k: int, training: bool = False) -> T.Tensor:
    """``MLP_B((1 + eps_B) h_sigma + sum_{tau in B(sigma)} h_tau)``; zeros at dim 0."""
    batch = as_batch(batch)
    n, d = batch.counts[k], h[k].shape[1]
    if k == 0:
        return _zeros(n, d)
    branch = layer.dims[k].boundary
    sigma, tau = batch.index[("boundary", k)]
    if h[k - 1].shape[1] != d:
        raise ShapeMismatch(f"boundary: dim {k-1} width {h[k-1].shape[1]} != {d}")
    gathered = T.gather(h[k - 1], tau, batch.gather_matrix("boundary", k, 1, k - 1))
    agg = T.scatter_sum(gathered, sigma, n, batch.segments("boundary", k))
    return branch.mlp(_branch_input(branch, h[k], agg), training)


def _adjacent_message(kind, layer, batch, h, k, training, wk):
    batch = as_batch(batch)
    n, d = batch.counts[k], h[k].shape[1]
    branch = getattr(layer.dims[k], kind)
    sigma, tau, delta = batch.index[(kind, k)]
    if h[wk].shape[1] != d:
        raise ShapeMismatch(f"{kind}: witness width {h[wk].shape[1]} != {d}")
    # inner(h_tau || h_delta) = W_top h_tau + W_bottom h_delta + b, with each
    # block applied per cell before gathering to the (tau, delta) pairs
    w, b = branch.inner.weight, branch.inner.bias
    from_tau = T.linear(h[k], w, None, slice(0, d))
    from_delta = T.linear(h[wk], w, b, slice(d, 2 * d))
    msg = T.relu(T.add(T.gather(from_tau, tau, batch.gather_matrix(kind, k, 1, k)),
                       T.gather(from_delta, delta, batch.gather_matrix(kind, k, 2, wk))))
    agg = T.scatter_sum(msg, sigma, n, batch.segments(kind, k))
    return branch.mlp(_branch_input(branch, h[k], agg), training)


def upper_message(layer: CinLayer, batch, h, k: int, training: bool = False) -> T.Tensor:
    """Messages from upper neighbours through shared co-boundary cells; zeros at dim 2."""
    if k == MAX_DIM:
        return _zeros(as_batch(batch).counts[k], h[k].shape[1])
    return _adjacent_message("upper", layer, batch, h, k, training, k + 1)


def lower_message(layer: CinLayer, batch, h, k: int, training: bool = False) -> T.Tensor:
    """Messages from lower neighbours through shared boundary cells; zeros at dim 0."""
    if k == 0:
        return _zeros(as_batch(batch).counts[k], h[k].shape[1])
    return _adjacent_message("lower", layer, batch, h, k, training, k - 1)


def update(layer: CinLayer, batch, h, training: bool = False, use_lower: bool = True) -> list:
    """One layer: all branch messages from ``h``, then the per-dimension update."""
    batch = as_batch(batch)
    out = []
    for k in range(MAX_DIM + 1):
        if batch.counts[k] == 0:
            out.append(_zeros(0, layer.dims[k].update.weight.shape[1]))
            continue
        # U(h || m_B || m_U || m_L) evaluated block by block; structurally empty
        # branches contribute zero blocks, which are skipped
        blocks = [h[k]]
        blocks.append(boundary_message(layer, batch, h, k, training) if k > 0 else None)
        blocks.append(upper_message(layer, batch, h, k, training) if k < MAX_DIM else None)
        blocks.append(lower_message(layer, batch, h, k, training) if use_lower and k > 0 else None)
        dense = layer.dims[k].update
        d = h[k].shape[1]
        z = None
        for i, block in enumerate(blocks):
            if block is None:
                continue
            if block.shape[1] != d:
                raise ShapeMismatch(f"update: block {i} width {block.shape[1]} != {d}")
            part = T.linear(block, dense.weight, dense.bias if z is None else None,
                            slice(i * d, (i + 1) * d))
            z = part if z is None else T.add(z, part)
        out.append(T.relu(z))
    return out


def readout(model: CinModel, batch: ComplexBatch, h, rng=None) -> T.Tensor:
    """Per-dimension sum/mean pooling, summed per-dimension MLPs, final dense head.

    A complex without cells of some dimension pools to the zero vector there.
    """
    cfg = model.config
    h_c = None
    for k in range(MAX_DIM + 1):
        pooled = T.scatter_sum(h[k], batch.owner[k], batch.size, batch.readout_matrix(k))
        if cfg.readout == "mean":
            cnt = batch.cells_per_complex[:, k].astype(np.float64)
            pooled = T.scale_rows(pooled, np.divide(1.0, cnt, out=np.zeros_like(cnt), where=cnt > 0))
        term = T.relu(model.readout_mlps[k](pooled))
        h_c = term if h_c is None else T.add(h_c, term)
    if model.training and cfg.dropout > 0:
        if rng is None:
            rng = T.make_rng(cfg.seed, "dropout", model._dropout_calls)
            model._dropout_calls += 1
        h_c = T.dropout(h_c, cfg.dropout, True, rng)
    return model.head(h_c)


# -- expressivity: injective idealisation ------------------------------------------

class InjectiveStubs:
    """The network's computation with every learned map replaced by exact interning.

    Each branch and update interns its full input tuple, which is the
    injective limit in which the network colouring matches colour refinement.
    """

    def __init__(self, scheme="cinpp"):
        self.scheme = RefinementScheme.parse(scheme)
        self.table = InternTable()

    def _layer(self, cx: CellComplex, h: np.ndarray) -> np.ndarray:
        intern = self.table
        lower_on = self.scheme is RefinementScheme.CINPP
        none = intern(("empty",))
        new = np.empty_like(h)
        for c in cx.cells:
            s, k = c.id, c.dim
            hs = int(h[s])
            if k == 0:
                mb = none
            else:
                mb = intern(("B", k, hs, tuple(sorted(int(h[t]) for t in cx.boundary_table[s]))))
            if k == MAX_DIM:
                mu = none
            else:
                msgs = sorted(intern(("Mup", int(h[t]), int(h[d]))) for t, d in cx.upper_table[s])
                mu = intern(("U", k, hs, tuple(msgs)))
            if k == 0 or not lower_on:
                ml = none
            else:
                msgs = sorted(intern(("Mdown", int(h[t]), int(h[d]))) for t, d in cx.lower_table[s])
                ml = intern(("L", k, hs, tuple(msgs)))
            new[s] = intern(("update", k, hs, mb, mu, ml))
        return new

    def footprints(self, cx: CellComplex, layers: int, features=None) -> list:
        """Colourings ``[h^0, ..., h^layers]``.

        ``h^0`` interns the exact input row of each cell with its dimension;
        without ``features`` every cell of a dimension starts equal.
        """
        h = np.empty(cx.num_cells, dtype=np.int64)
        for c in cx.cells:
            if features is None:
                h[c.id] = self.table(("input", c.dim))
            else:
                row = np.asarray(features[c.dim][cx.local(c.id)], dtype=np.float64)
                h[c.id] = self.table(("input", c.dim, row.tobytes()))
        out = [Coloring(h.copy(), self.table)]
        for _ in range(layers):
            h = self._layer(cx, h)
            out.append(Coloring(h.copy(), self.table))
        return out


def footprint_coloring(stubs: InjectiveStubs, cx: CellComplex, layer: int, features=None) -> Coloring:
    return stubs.footprints(cx, layer, features)[layer]


# -- complexity ----------------------------------------------------------------------

def count_messages(cx: CellComplex) -> dict:
    """Messages exchanged per layer; pairs are counted once per witness."""
    return {
        "boundary": sum(len(b) for b in cx.boundary_table),
        "upper": sum(len(u) for u in cx.upper_table),
        "lower": sum(len(l) for l in cx.lower_table),
    }
