"""Training loop, evaluation and diagnostics.

One run draws everything (init, dropout) from a single seeded generator, so a
(seed, config, dataset) triple maps to bitwise-identical metrics.  Early
stopping watches validation loss with a patience window and restores the
parameters of the best epoch before the test evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, backward
from .data import GraphDataset, write_text_atomic
from .models import (
    ConfigError,
    ForwardTrace,
    GHNET_VARIANTS,
    ModelConfig,
    PreparedGraph,
    first_block_param_names,
    model_forward,
    param_shapes,
    prepare_graph,
)

# fixed stream for diagnostics that sample (embedding-distance pairs, gate
# histogram rows); keeps exports reproducible across runs
_DIAG_SEED = 0x5EED


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    max_epochs: int = 200
    patience: int = 10
    weight_decay: float = 5e-4
    decay_scope: str = "first"  # "none" | "first" | "all"
    dropout: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden: int = 16

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.decay_scope not in ("none", "first", "all"):
            raise ValueError(f"unknown decay scope {self.decay_scope!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, store: ParamStore) -> "AdamState":
        return cls(
            m={n: np.zeros_like(store.value(n)) for n in store.names()},
            v={n: np.zeros_like(store.value(n)) for n in store.names()},
        )


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    history: tuple[tuple[float, float, float], ...]  # (train_loss, val_loss, val_acc)
    test_acc: float
    best_epoch: int
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "history": [list(row) for row in self.history],
            "test_acc": self.test_acc,
            "best_epoch": self.best_epoch,
            "wall_ms": self.wall_ms,
        }


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-a, a] with a = sqrt(6 / (rows + cols))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def build_params(config: ModelConfig, feat_dim: int, rng: np.random.Generator) -> ParamStore:
    """Glorot-initialized weights, zero biases, in a fixed name order."""
    store = ParamStore()
    for name, (rows, cols) in param_shapes(config, feat_dim).items():
        if name.endswith((".b", ".b_t")):
            store.add(name, np.zeros((rows, cols)))
        else:
            store.add(name, glorot_init(rows, cols, rng))
    return store


def adam_step(
    store: ParamStore,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    decay_names: frozenset[str] = frozenset(),
) -> None:
    """Bias-corrected Adam update; L2 decay is added to the gradient of the
    selected parameters before the moment update."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name in store.names():
        g = store.grad(name)
        if weight_decay > 0.0 and name in decay_names:
            g = g + weight_decay * store.value(name)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        store.value(name)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def evaluate_accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked nodes whose argmax logit matches the label; argmax
    ties break toward the lowest class index."""
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def _decay_names(config: ModelConfig, feat_dim: int, scope: str) -> frozenset[str]:
    if scope == "none":
        return frozenset()
    if scope == "first":
        return first_block_param_names(config, feat_dim)
    return frozenset(param_shapes(config, feat_dim))


def _loss_and_logits(
    config: ModelConfig,
    store: ParamStore,
    graph: PreparedGraph,
    ds: GraphDataset,
    mask: np.ndarray,
    training: bool,
    rng: np.random.Generator | None,
):
    tape = Tape()
    logits = model_forward(tape, config, store, graph, training, rng)
    loss = tape.masked_softmax_cross_entropy(logits, ds.labels, mask)
    return tape, loss, tape.value(logits), float(tape.value(loss)[0, 0])


def train_model(
    config: ModelConfig,
    tc: TrainConfig,
    ds: GraphDataset,
    seed: int,
) -> tuple[ParamStore, RunMetrics]:
    """Full training run: Adam on the train-mask loss, early stop on val loss,
    best-epoch weights restored, test accuracy of the restored model."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    store = build_params(config, ds.num_features, rng)
    graph = prepare_graph(ds.x, ds.adjacency)
    state = AdamState.init(store)
    decay = _decay_names(config, ds.num_features, tc.decay_scope)

    history: list[tuple[float, float, float]] = []
    best_val = np.inf
    best_epoch = 0
    best_snap = store.snapshot()
    bad_streak = 0

    for epoch in range(1, tc.max_epochs + 1):
        tape, loss, _, train_loss = _loss_and_logits(
            config, store, graph, ds, ds.splits.train, True, rng
        )
        if not np.isfinite(train_loss):
            raise TrainingDiverged(
                f"non-finite training loss {train_loss} at epoch {epoch} (seed {seed})"
            )
        store.zero_grad()
        backward(tape, loss, store)
        adam_step(store, state, tc.lr, tc.weight_decay, decay)

        _, _, logits, val_loss = _loss_and_logits(
            config, store, graph, ds, ds.splits.val, False, None
        )
        val_acc = evaluate_accuracy(logits, ds.labels, ds.splits.val)
        history.append((train_loss, val_loss, val_acc))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snap = store.snapshot()
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= tc.patience:
                break

    store.restore(best_snap)
    _, _, logits, _ = _loss_and_logits(config, store, graph, ds, ds.splits.test, False, None)
    test_acc = evaluate_accuracy(logits, ds.labels, ds.splits.test)
    wall_ms = (time.perf_counter() - started) * 1000.0
    return store, RunMetrics(seed, tuple(history), test_acc, best_epoch, wall_ms)


def mad_metric(embeddings: np.ndarray, max_pairs: int = 500) -> float:
    """Mean pairwise cosine distance over a fixed sample of node pairs.

    All pairs are used when there are at most ``max_pairs`` of them; otherwise
    a fixed-seed sample (with replacement) keeps the diagnostic reproducible.
    Zero rows: two zero vectors count as distance 0, a zero against a nonzero
    as 1.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if n < 2:
        return 0.0
    if n * (n - 1) // 2 <= max_pairs:
        iu, ju = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(_DIAG_SEED)
        iu = np.empty(max_pairs, dtype=np.int64)
        ju = np.empty(max_pairs, dtype=np.int64)
        for p in range(max_pairs):
            i = j = 0
            while i == j:
                i, j = rng.integers(0, n, size=2)
            iu[p], ju[p] = i, j
    norms = np.linalg.norm(emb, axis=1)
    na, nb = norms[iu], norms[ju]
    both = (na > 0) & (nb > 0)
    dist = np.ones(len(iu))
    dist[(na == 0) & (nb == 0)] = 0.0
    dots = np.einsum("ij,ij->i", emb[iu], emb[ju])
    dist[both] = 1.0 - dots[both] / (na[both] * nb[both])
    return float(dist.mean())


def _eval_trace(config: ModelConfig, store: ParamStore, ds: GraphDataset) -> tuple[Tape, ForwardTrace]:
    trace = ForwardTrace()
    tape = Tape()
    graph = prepare_graph(ds.x, ds.adjacency)
    model_forward(tape, config, store, graph, training=False, rng=None, trace=trace)
    return tape, trace


def export_embeddings(
    config: ModelConfig, store: ParamStore, ds: GraphDataset, block: int, path: str
) -> None:
    """Dump a block's evaluation-mode output as TSV, one node per row, with the
    node's label as the final column."""
    tape, trace = _eval_trace(config, store, ds)
    emb = tape.value(trace.block_outputs[block])
    lines = [
        "\t".join(repr(v) for v in row) + f"\t{label}"
        for row, label in zip(emb.tolist(), ds.labels.tolist())
    ]
    write_text_atomic(path, "\n".join(lines) + "\n")


def export_gate_histogram(
    config: ModelConfig,
    store: ParamStore,
    ds: GraphDataset,
    block: int,
    sample: int,
    path: str,
) -> None:
    """Dump the gate values of ``sample`` randomly chosen nodes for one block
    (node id first, then the per-dimension gate outputs)."""
    if config.variant not in GHNET_VARIANTS:
        raise ConfigError(f"{config.variant.value} has no gates to export")
    tape, trace = _eval_trace(config, store, ds)
    gates = tape.value(trace.gates[block])
    rng = np.random.default_rng(_DIAG_SEED)
    chosen = np.sort(rng.choice(ds.num_nodes, size=min(sample, ds.num_nodes), replace=False))
    lines = [
        f"{i}\t" + "\t".join(repr(v) for v in gates[i].tolist()) for i in chosen
    ]
    write_text_atomic(path, "\n".join(lines) + "\n")


