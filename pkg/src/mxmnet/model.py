"""The two-layer multiplex message-passing model.

One block (repeated ``n_layers`` times) runs, in the default order:

1. global-layer message passing: two identical passes over the global
   edges with a residual stack between them;
2. a cross-layer map carrying node state from the global to the local
   layer (a row-wise two-layer MLP whose output replaces the destination
   embeddings);
3. local-layer message passing: a three-step scheme that folds in two-hop
   angles, then one-hop angles, then aggregates per node;
4. an output head reading the local state into one scalar per node;
5. the reverse cross-layer map back to the global layer.

The prediction is the sum of the per-node head outputs over every block.
All state flows through :mod:`mxmnet.autodiff` tensors so one backward
call yields exact parameter gradients.

Parameter tensors live in a :class:`ParamStore` under stable slash-path
names, in creation order; checkpoints serialize that order verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import elements
from .autodiff import (
    Tensor,
    add,
    add_bias,
    concat,
    gather,
    matmul,
    mul,
    segment_sum,
    sum_all,
    swish,
)
from .basis import N_RBF, N_SHBF, N_SRBF, GeometricFeatures, featurize
from .data import Molecule
from .graph import MultiplexGraph, build_multiplex

__all__ = [
    "ModelConfig",
    "ParamStore",
    "MessageTally",
    "init_params",
    "global_mp",
    "local_mp",
    "cross_layer_map",
    "residual_update",
    "output_head",
    "forward",
    "build_graph",
    "prepare_inputs",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = "MXMCKPT"
_CKPT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture and graph-construction settings.

    Basis sizes are pinned to the embedding module's constants; dimensions
    must be positive.  ``local_first`` flips the within-block order so the
    local layer updates before the global one (needs one extra init map).
    ``global_excludes_local`` drops local pairs from the global layer.
    """

    hidden_dim: int = 128
    n_layers: int = 6
    n_residuals: int = 2
    n_rbf: int = N_RBF
    n_shbf: int = N_SHBF
    n_srbf: int = N_SRBF
    local_rule: str = "bonds"
    local_cutoff: float = 2.0
    global_cutoff: float = 5.0
    local_first: bool = False
    global_excludes_local: bool = False
    max_z: int = elements.MAX_Z

    def __post_init__(self):
        for name in ("hidden_dim", "n_layers", "n_residuals", "max_z"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if (self.n_rbf, self.n_shbf, self.n_srbf) != (N_RBF, N_SHBF, N_SRBF):
            raise ValueError(
                f"basis sizes are fixed at ({N_RBF}, {N_SHBF}, {N_SRBF}), "
                f"got ({self.n_rbf}, {self.n_shbf}, {self.n_srbf})"
            )
        if self.local_rule not in ("bonds", "cutoff"):
            raise ValueError(f"unknown local rule {self.local_rule!r}")
        if self.global_cutoff <= 0 or self.local_cutoff <= 0:
            raise ValueError("cutoffs must be positive")
        if self.local_rule == "cutoff" and self.local_cutoff >= self.global_cutoff:
            raise ValueError("local cutoff must be below the global cutoff")
        if self.max_z > elements.MAX_Z:
            raise ValueError(f"max_z cannot exceed {elements.MAX_Z}")


class ParamStore:
    """Named parameter tensors in a stable insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        if " " in name or "\n" in name:
            raise ValueError(f"parameter name may not contain whitespace: {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())


def _add_mlp(store, rng, prefix, d_in, d_hidden, d_out):
    _add_weight(store, rng, f"{prefix}/w1", d_in, d_hidden)
    _add_bias(store, rng, f"{prefix}/b1", d_in, d_hidden)
    _add_weight(store, rng, f"{prefix}/w2", d_hidden, d_out)
    _add_bias(store, rng, f"{prefix}/b2", d_hidden, d_out)


def _add_weight(store, rng, name, fan_in, fan_out):
    s = 1.0 / math.sqrt(fan_in)
    store.add(name, rng.uniform(-s, s, size=(fan_in, fan_out)))


def _add_bias(store, rng, name, fan_in, size):
    s = 1.0 / math.sqrt(fan_in)
    store.add(name, rng.uniform(-s, s, size=size))


def _add_residuals(store, rng, prefix, dim, n_res):
    for r in range(n_res):
        _add_mlp(store, rng, f"{prefix}/res{r}", dim, dim, dim)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters: embedding rows uniform in (-sqrt(3), sqrt(3)),
    weights and biases uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Creation order is fixed, so a seed pins every value.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    f = cfg.hidden_dim
    r3 = math.sqrt(3.0)
    store.add("embed/table", rng.uniform(-r3, r3, size=(cfg.max_z, f)))
    if cfg.local_first:
        _add_mlp(store, rng, "cross_init", f, f, f)
    cat = 2 * f + N_RBF
    sbf_dim = N_SHBF * N_SRBF
    for t in range(cfg.n_layers):
        p = f"layer{t}"
        for mp in ("mp1", "mp2"):
            _add_mlp(store, rng, f"{p}/global/{mp}/mlp", cat, f, f)
            _add_weight(store, rng, f"{p}/global/{mp}/edge_w", N_RBF, f)
        _add_residuals(store, rng, f"{p}/global/fu", f, cfg.n_residuals)
        _add_mlp(store, rng, f"{p}/local/mlp_kj", cat, f, f)
        _add_weight(store, rng, f"{p}/local/edge_w1", N_RBF, f)
        _add_mlp(store, rng, f"{p}/local/gate1", sbf_dim, f, f)
        _add_mlp(store, rng, f"{p}/local/mlp_ji", cat, f, f)
        _add_mlp(store, rng, f"{p}/local/mlp_m", f, f, f)
        _add_weight(store, rng, f"{p}/local/edge_w2", N_RBF, f)
        _add_mlp(store, rng, f"{p}/local/gate2", sbf_dim, f, f)
        _add_mlp(store, rng, f"{p}/local/mlp_m2", f, f, f)
        _add_weight(store, rng, f"{p}/local/edge_w3", N_RBF, f)
        _add_residuals(store, rng, f"{p}/local/fu", f, cfg.n_residuals)
        _add_mlp(store, rng, f"{p}/cross_gl", f, f, f)
        _add_mlp(store, rng, f"{p}/cross_lg", f, f, f)
        _add_mlp(store, rng, f"{p}/out", f, f, f)
        _add_weight(store, rng, f"{p}/out/w3", f, 1)
    return store


@dataclass
class MessageTally:
    """Messages actually materialized during one forward pass.

    Incremented from runtime array row counts, independently of the
    closed-form predictions in :func:`mxmnet.graph.count_messages`.
    ``cross_init`` counts the extra init map rows of local-first mode.
    """

    global_mp: int = 0
    local_step1: int = 0
    local_step2: int = 0
    local_step3: int = 0
    cross_layer: int = 0
    cross_init: int = 0

    def as_tuple(self):
        return (
            self.global_mp,
            self.local_step1,
            self.local_step2,
            self.local_step3,
            self.cross_layer,
        )


def _linear(x, params, w_name, b_name):
    return add_bias(matmul(x, params[w_name]), params[b_name])


def _mlp2(x, params, prefix):
    # Two linear layers, swish after each.
    h = swish(_linear(x, params, f"{prefix}/w1", f"{prefix}/b1"))
    return swish(_linear(h, params, f"{prefix}/w2", f"{prefix}/b2"))


def residual_update(h, params, prefix, n_res):
    """Residual stack: n_res times h <- h + W2 swish(W1 h + b1) + b2."""
    for r in range(n_res):
        p = f"{prefix}/res{r}"
        inner = swish(_linear(h, params, f"{p}/w1", f"{p}/b1"))
        h = add(h, _linear(inner, params, f"{p}/w2", f"{p}/b2"))
    return h


def _global_pass(h, rbf, src, dst, n, params, prefix, tally):
    hj = gather(h, src)
    hi = gather(h, dst)
    msg = _mlp2(concat([hj, hi, rbf]), params, f"{prefix}/mlp")
    msg = mul(msg, matmul(rbf, params[f"{prefix}/edge_w"]))
    if tally is not None:
        tally.global_mp += int(msg.data.shape[0])
    return add(h, segment_sum(msg, dst, n))


def global_mp(h, feats_g, params, prefix, n_res, tally=None):
    """Two message passes over the global edges, residual stack between.

    ``feats_g`` is a (rbf tensor, src, dst, n_nodes) tuple.  Each pass owns
    its parameters; messages are gated elementwise by a linear image of the
    edge embedding and summed into the receiving node.
    """
    rbf, src, dst, n = feats_g
    h = _global_pass(h, rbf, src, dst, n, params, f"{prefix}/mp1", tally)
    h = residual_update(h, params, f"{prefix}/fu", n_res)
    return _global_pass(h, rbf, src, dst, n, params, f"{prefix}/mp2", tally)


def local_mp(h, feats, params, prefix, n_res, tally=None):
    """Three-step local update folding in both angle families.

    Step 1 sends, for every two-hop triple (k, j, i), the edge message of
    (k -> j) gated by the angle embedding at j, and adds the plain edge
    message of (j -> i).  Step 2 repeats the pattern with one-hop triples
    (j', i, j) gating projected step-1 messages.  Step 3 gates once more
    with the edge embedding and aggregates into the receiving nodes; the
    result passes through the residual stack with no skip around it.
    """
    rbf = Tensor(feats.rbf_local)
    sbf2 = Tensor(feats.sbf_two)
    sbf1 = Tensor(feats.sbf_one)
    src, dst, n = feats.local_src, feats.local_dst, feats.n_nodes
    e_l = int(src.shape[0])

    hj = gather(h, src)
    hi = gather(h, dst)
    pair = concat([hj, hi, rbf])

    edge_part = mul(
        _mlp2(pair, params, f"{prefix}/mlp_kj"),
        matmul(rbf, params[f"{prefix}/edge_w1"]),
    )
    tri_gate = _mlp2(sbf2, params, f"{prefix}/gate1")
    tri_msg = mul(gather(edge_part, feats.two_hop_edge), tri_gate)
    edge_msg = _mlp2(pair, params, f"{prefix}/mlp_ji")
    if tally is not None:
        tally.local_step1 += int(tri_msg.data.shape[0]) + int(edge_msg.data.shape[0])
    m1 = add(edge_msg, segment_sum(tri_msg, feats.two_hop_target, e_l))

    part2 = mul(
        _mlp2(m1, params, f"{prefix}/mlp_m"),
        matmul(rbf, params[f"{prefix}/edge_w2"]),
    )
    tri2 = mul(gather(part2, feats.one_hop_edge), _mlp2(sbf1, params, f"{prefix}/gate2"))
    m2_edge = _mlp2(m1, params, f"{prefix}/mlp_m2")
    if tally is not None:
        tally.local_step2 += int(tri2.data.shape[0]) + int(m2_edge.data.shape[0])
    m2 = add(m2_edge, segment_sum(tri2, feats.one_hop_target, e_l))

    final = mul(m2, matmul(rbf, params[f"{prefix}/edge_w3"]))
    if tally is not None:
        tally.local_step3 += int(final.data.shape[0])
    agg = segment_sum(final, dst, n)
    return residual_update(agg, params, f"{prefix}/fu", n_res)


def cross_layer_map(h, params, prefix, tally=None, init=False):
    """Row-wise two-layer MLP; the result replaces the destination layer."""
    out = _mlp2(h, params, prefix)
    if tally is not None:
        if init:
            tally.cross_init += int(out.data.shape[0])
        else:
            tally.cross_layer += int(out.data.shape[0])
    return out


def output_head(h, params, prefix):
    """Per-node scalar: two (linear + swish) layers then a biasless F -> 1."""
    x = swish(_linear(h, params, f"{prefix}/w1", f"{prefix}/b1"))
    x = swish(_linear(x, params, f"{prefix}/w2", f"{prefix}/b2"))
    return matmul(x, params[f"{prefix}/w3"])


def build_graph(m: Molecule, cfg: ModelConfig) -> MultiplexGraph:
    return build_multiplex(
        m,
        local_rule=cfg.local_rule,
        local_cutoff=cfg.local_cutoff,
        global_cutoff=cfg.global_cutoff,
        global_excludes_local=cfg.global_excludes_local,
    )


def prepare_inputs(m: Molecule, cfg: ModelConfig):
    """Graph plus geometric features for one molecule (cache-friendly)."""
    g = build_graph(m, cfg)
    feats = featurize(m, g, cfg.local_cutoff, cfg.global_cutoff)
    return g, feats


def forward(
    m: Molecule,
    params: ParamStore,
    cfg: ModelConfig,
    feats: GeometricFeatures | None = None,
    tally: MessageTally | None = None,
) -> Tensor:
    """Predict one scalar for one molecule.

    Runs every block and sums the per-node head outputs across blocks.
    Record onto a :class:`mxmnet.autodiff.Tape` to differentiate.
    """
    if feats is None:
        _, feats = prepare_inputs(m, cfg)
    z = m.atomic_numbers
    if z.min() < 1 or z.max() > cfg.max_z:
        bad = int(z[(z < 1) | (z > cfg.max_z)][0])
        raise ValueError(f"atomic number {bad} outside the embedding range")

    rbf_g = Tensor(feats.rbf_global)
    feats_g = (rbf_g, feats.global_src, feats.global_dst, feats.n_nodes)

    h_g = gather(params["embed/table"], z - 1)
    h_l = None
    contributions = []
    for t in range(cfg.n_layers):
        p = f"layer{t}"
        if cfg.local_first:
            if t == 0:
                h_l = cross_layer_map(h_g, params, "cross_init", tally, init=True)
            h_l = local_mp(h_l, feats, params, f"{p}/local", cfg.n_residuals, tally)
            contributions.append(output_head(h_l, params, f"{p}/out"))
            h_g = cross_layer_map(h_l, params, f"{p}/cross_lg", tally)
            h_g = global_mp(h_g, feats_g, params, f"{p}/global", cfg.n_residuals, tally)
            if t + 1 < cfg.n_layers:
                h_l = cross_layer_map(h_g, params, f"{p}/cross_gl", tally)
        else:
            h_g = global_mp(h_g, feats_g, params, f"{p}/global", cfg.n_residuals, tally)
            h_l = cross_layer_map(h_g, params, f"{p}/cross_gl", tally)
            h_l = local_mp(h_l, feats, params, f"{p}/local", cfg.n_residuals, tally)
            contributions.append(output_head(h_l, params, f"{p}/out"))
            h_g = cross_layer_map(h_l, params, f"{p}/cross_lg", tally)
    total = contributions[0]
    for c in contributions[1:]:
        total = add(total, c)
    return sum_all(total)


def save_checkpoint(store: ParamStore, path):
    """Write parameters: versioned text header, then per-parameter records
    of a name/shape line followed by raw little-endian float64 bytes."""
    with open(path, "wb") as fh:
        fh.write(f"{_CKPT_MAGIC} {_CKPT_VERSION}\n".encode())
        fh.write(f"{len(store)}\n".encode())
        for name, t in store.items():
            dims = " ".join(str(d) for d in t.data.shape)
            head = f"{name} {t.data.ndim}" + (f" {dims}" if dims else "") + "\n"
            fh.write(head.encode())
            fh.write(np.ascontiguousarray(t.data).astype("<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    """Read a checkpoint back; byte-exact inverse of :func:`save_checkpoint`."""
    store = ParamStore()
    with open(path, "rb") as fh:
        magic = fh.readline().decode().split()
        if len(magic) != 2 or magic[0] != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if int(magic[1]) != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {magic[1]}")
        count = int(fh.readline())
        for _ in range(count):
            head = fh.readline().decode().split()
            if not head:
                raise ValueError(f"{path}: truncated checkpoint")
            name = head[0]
            ndim = int(head[1])
            shape = tuple(int(x) for x in head[2 : 2 + ndim])
            if len(shape) != ndim:
                raise ValueError(f"{path}: malformed record for {name!r}")
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated data for {name!r}")
            arr = np.frombuffer(raw, dtype="<f8", count=n).reshape(shape)
            store.add(name, arr.astype(np.float64))
    return store
