"""Model definitions assembled from autodiff primitives.

A gated propagation block mixes two signals: the *propagated* path (the block
input is linearly transformed, pushed through the graph filter k times and
activated) and a *bypass* path carrying the node's own features around the
propagation.  A per-node, per-dimension sigmoid gate blends the two.  The
three variants differ only in where the bypass taps its signal:

  * inner  -- the transformed input (transform shared with the propagated path);
  * outer  -- the untransformed block input, projected only when the block
              changes width;
  * raw    -- the raw input features, always projected.

Multi-hop propagation uses the no-self-loop filter: a node's own features
travel through the bypass instead of a self-loop.  Baselines: a plain graph
convolution stack on the self-loop filter, its linearized variant with
propagation precomputed, and a graph-blind MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import ParamStore, Tape, VarId
from .sparse import CsrMatrix, k_hop_propagate, sym_normalize


class ConfigError(ValueError):
    """Model/architecture configuration is inconsistent."""


class VariantKind(Enum):
    INNER = "ghnet-i"
    OUTER = "ghnet-o"
    RAW = "ghnet-r"
    MLP = "mlp"
    GCN = "gcn"
    SGC = "sgc"


GHNET_VARIANTS = frozenset({VariantKind.INNER, VariantKind.OUTER, VariantKind.RAW})


@dataclass(frozen=True)
class BlockSpec:
    in_dim: int
    out_dim: int
    hops: int = 1
    activation: str = "relu"  # "relu" | "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("block dimensions must be positive")
        if self.hops < 1:
            raise ConfigError("hops must be >= 1")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelConfig:
    variant: VariantKind
    blocks: tuple[BlockSpec, ...]
    num_classes: int
    dropout: float = 0.5
    fixed_t: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ConfigError("model needs at least one block")
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(
                    f"block dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        if self.blocks[-1].out_dim != self.num_classes:
            raise ConfigError("last block must output num_classes logits")
        if self.blocks[-1].activation != "identity":
            raise ConfigError("final block activation must be identity (logits)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1): {self.dropout}")
        if self.fixed_t is not None:
            if self.variant not in GHNET_VARIANTS:
                raise ConfigError("fixed_t applies to gated variants only")
            if not 0.0 <= self.fixed_t <= 1.0:
                raise ConfigError(f"fixed_t must be in [0, 1]: {self.fixed_t}")


def standard_config(
    variant: VariantKind,
    in_dim: int,
    hidden: int,
    num_classes: int,
    hops=(1, 1),
    dropout: float = 0.5,
    fixed_t: float | None = None,
) -> ModelConfig:
    """Chain of blocks: in_dim -> hidden -> ... -> num_classes.

    ``hops`` gives one entry per block.  The linearized-convolution baseline
    takes a single block (its only hop count is the propagation depth); the
    plain convolution stack and the MLP require all hop counts to be 1.
    """
    hops = tuple(int(k) for k in hops)
    if variant is VariantKind.SGC:
        if len(hops) != 1:
            raise ConfigError("sgc is a single linear block; pass one hop count")
        blocks = (BlockSpec(in_dim, num_classes, hops[0], "identity"),)
    else:
        if variant not in GHNET_VARIANTS and any(k != 1 for k in hops):
            raise ConfigError(f"{variant.value} layers are single-hop; use hops of 1")
        dims = (in_dim,) + (hidden,) * (len(hops) - 1) + (num_classes,)
        blocks = tuple(
            BlockSpec(dims[i], dims[i + 1], hops[i], "relu" if i < len(hops) - 1 else "identity")
            for i in range(len(hops))
        )
    return ModelConfig(variant, blocks, num_classes, dropout, fixed_t)


def param_shapes(config: ModelConfig, feat_dim: int) -> dict[str, tuple[int, int]]:
    """Parameter name -> shape for a model; exactly the set each variant needs.

    Names ending in ``.b`` or ``.b_t`` are biases (zero-initialized elsewhere).
    """
    if config.blocks[0].in_dim != feat_dim:
        raise ConfigError(
            f"first block expects {config.blocks[0].in_dim} features, data has {feat_dim}"
        )
    shapes: dict[str, tuple[int, int]] = {}
    for i, block in enumerate(config.blocks):
        p = f"block{i}."
        if config.variant in GHNET_VARIANTS:
            shapes[p + "theta"] = (block.in_dim, block.out_dim)
            if config.fixed_t is None:
                shapes[p + "w_t"] = (block.in_dim, block.out_dim)
                shapes[p + "b_t"] = (1, block.out_dim)
            if config.variant is VariantKind.OUTER and block.in_dim != block.out_dim:
                shapes[p + "w_h"] = (block.in_dim, block.out_dim)
            if config.variant is VariantKind.RAW:
                shapes[p + "w_x"] = (feat_dim, block.out_dim)
        elif config.variant is VariantKind.GCN:
            shapes[p + "theta"] = (block.in_dim, block.out_dim)
        elif config.variant is VariantKind.SGC:
            shapes[p + "w"] = (block.in_dim, block.out_dim)
        else:  # MLP
            shapes[p + "w"] = (block.in_dim, block.out_dim)
            shapes[p + "b"] = (1, block.out_dim)
    return shapes


def first_block_param_names(config: ModelConfig, feat_dim: int) -> frozenset[str]:
    return frozenset(n for n in param_shapes(config, feat_dim) if n.startswith("block0."))


@dataclass
class PreparedGraph:
    """Per-dataset constants shared by every forward pass.

    ``s`` is the no-self-loop filter (multi-hop propagation), ``s_tilde`` the
    self-loop one (plain convolution).  Propagated raw features for the
    linearized baseline are computed once per hop count and cached.
    """

    x: np.ndarray
    s: CsrMatrix
    s_tilde: CsrMatrix
    _propagated: dict[int, np.ndarray] = field(default_factory=dict)

    def propagated_features(self, k: int) -> np.ndarray:
        if k not in self._propagated:
            self._propagated[k] = k_hop_propagate(self.s_tilde, self.x, k)
        return self._propagated[k]


def prepare_graph(features: np.ndarray, adjacency: CsrMatrix) -> PreparedGraph:
    return PreparedGraph(
        x=np.ascontiguousarray(features, dtype=np.float64),
        s=sym_normalize(adjacency, with_self_loop=False),
        s_tilde=sym_normalize(adjacency, with_self_loop=True),
    )


@dataclass
class ForwardTrace:
    """Intermediate handles collected during a forward pass."""

    block_outputs: list[VarId] = field(default_factory=list)
    gates: list[VarId] = field(default_factory=list)


def _activate(tape: Tape, h: VarId, activation: str) -> VarId:
    return tape.relu(h) if activation == "relu" else h


def ghnet_block_forward(
    tape: Tape,
    h: VarId,
    x_raw: VarId,
    s: CsrMatrix,
    store: ParamStore,
    prefix: str,
    block: BlockSpec,
    variant: VariantKind,
    fixed_t: float | None = None,
    trace: ForwardTrace | None = None,
) -> VarId:
    """One gated propagation block.

    The transform is applied once and the result propagated k times (equal to
    propagating first by associativity, cheaper when the block narrows).  The
    bypass is picked per variant; the gate is a sigmoid of an affine map of
    the block input unless overridden by a fixed scalar.
    """
    if h.shape[1] != block.in_dim:
        raise ConfigError(f"block input width {h.shape[1]} != {block.in_dim}")
    transformed = tape.matmul(h, tape.parameter(store, prefix + "theta"))
    prop = transformed
    for _ in range(block.hops):
        prop = tape.spmm_const(s, prop)
    propagated = _activate(tape, prop, block.activation)

    if variant is VariantKind.INNER:
        bypass = transformed
    elif variant is VariantKind.OUTER:
        if block.in_dim == block.out_dim:
            bypass = h
        else:
            if prefix + "w_h" not in store:
                raise ConfigError(
                    f"outer block {prefix}: width changes {block.in_dim}->{block.out_dim} "
                    "but no projection w_h is present"
                )
            bypass = tape.matmul(h, tape.parameter(store, prefix + "w_h"))
    elif variant is VariantKind.RAW:
        bypass = tape.matmul(x_raw, tape.parameter(store, prefix + "w_x"))
    else:
        raise ConfigError(f"{variant.value} is not a gated variant")

    if fixed_t is None:
        gate = tape.sigmoid(
            tape.add_bias(
                tape.matmul(h, tape.parameter(store, prefix + "w_t")),
                tape.parameter(store, prefix + "b_t"),
            )
        )
    else:
        gate = tape.constant(np.full((h.shape[0], block.out_dim), float(fixed_t)))

    out = tape.gate_combine(gate, propagated, bypass)
    if trace is not None:
        trace.gates.append(gate)
    return out


def gcn_layer_forward(
    tape: Tape,
    h: VarId,
    s_tilde: CsrMatrix,
    store: ParamStore,
    prefix: str,
    activation: str,
) -> VarId:
    """Plain convolution layer: activate(s_tilde @ h @ theta)."""
    out = tape.spmm_const(s_tilde, tape.matmul(h, tape.parameter(store, prefix + "theta")))
    return _activate(tape, out, activation)


def mlp_layer_forward(
    tape: Tape, h: VarId, store: ParamStore, prefix: str, activation: str
) -> VarId:
    out = tape.add_bias(
        tape.matmul(h, tape.parameter(store, prefix + "w")),
        tape.parameter(store, prefix + "b"),
    )
    return _activate(tape, out, activation)


def sgc_forward(tape: Tape, graph: PreparedGraph, k: int, store: ParamStore, name: str) -> VarId:
    """Linearized convolution: propagation is precomputed, training sees a
    single linear map of the cached features."""
    return tape.matmul(tape.constant(graph.propagated_features(k)), tape.parameter(store, name))


def model_forward(
    tape: Tape,
    config: ModelConfig,
    store: ParamStore,
    graph: PreparedGraph,
    training: bool,
    rng: np.random.Generator | None = None,
    trace: ForwardTrace | None = None,
) -> VarId:
    """Full forward pass; returns n x num_classes logits.

    Dropout is applied to every block's input in training mode.  Gated blocks
    all share the no-self-loop filter; the raw bypass sees the same dropped
    features the first block consumed.
    """
    if graph.x.shape[1] != config.blocks[0].in_dim:
        raise ConfigError(
            f"model expects {config.blocks[0].in_dim} input features, "
            f"graph has {graph.x.shape[1]}"
        )
    if training and config.dropout > 0.0 and rng is None:
        raise ConfigError("training with dropout requires an RNG")

    if config.variant is VariantKind.SGC:
        k = config.blocks[0].hops
        feats = tape.constant(graph.propagated_features(k))
        feats = tape.dropout(feats, config.dropout, training, rng)
        logits = tape.matmul(feats, tape.parameter(store, "block0.w"))
        if trace is not None:
            trace.block_outputs.append(logits)
        return logits

    h = tape.constant(graph.x)
    x_dropped = None
    for i, block in enumerate(config.blocks):
        h = tape.dropout(h, config.dropout, training, rng)
        if i == 0:
            x_dropped = h
        prefix = f"block{i}."
        if config.variant in GHNET_VARIANTS:
            h = ghnet_block_forward(
                tape, h, x_dropped, graph.s, store, prefix, block,
                config.variant, config.fixed_t, trace,
            )
        elif config.variant is VariantKind.GCN:
            h = gcn_layer_forward(tape, h, graph.s_tilde, store, prefix, block.activation)
        else:
            h = mlp_layer_forward(tape, h, store, prefix, block.activation)
        if trace is not None:
            trace.block_outputs.append(h)
    return h
