"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D numpy array (scalars are 1x1).  Forward ops append a
node to the tape and return a :class:`VarId`; :func:`backward` walks the tape
in reverse, accumulating gradients into a :class:`ParamStore`.  Node ids are
assigned in creation order, so every input id is smaller than its output id
and a single reverse sweep visits the graph in valid topological order.

A tape is confined to a single training step; independent runs get their own
tape, parameter store and RNG.  Gradients accumulate with ``+=`` so a
parameter used on several paths (e.g. a transform shared between the
propagated and bypass paths of a gated block) collects all contributions;
call :meth:`ParamStore.zero_grad` between optimization steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .sparse import CsrMatrix, spmm


@dataclass(frozen=True)
class VarId:
    """Handle to a tape entry: its index and the (rows, cols) of its value."""

    id: int
    shape: tuple[int, int]


@dataclass(frozen=True)
class _Node:
    op: str
    inputs: tuple[int, ...]
    aux: Any = None


class ParamStore:
    """Named float64 parameters with matching gradient accumulators."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64, copy=True)
        if value.ndim != 2:
            raise ValueError(f"parameter {name!r} must be a 2-D matrix")
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def value(self, name: str) -> np.ndarray:
        return self._params[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in snap.items():
            np.copyto(self._params[name], p)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _masked_log_softmax(logits: np.ndarray, aux) -> tuple[np.ndarray, np.ndarray]:
    labels, mask = aux
    rows = logits[mask]
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - log_z, rows


# Forward rules keyed by op name.  Each is a pure function of the recorded
# input values and aux payload, which makes exact tape replay possible.
_FORWARD: dict[str, Callable] = {
    "matmul": lambda vals, aux: vals[0] @ vals[1],
    "spmm_const": lambda vals, aux: spmm(aux, vals[0]),
    "add_bias": lambda vals, aux: vals[0] + vals[1],
    "relu": lambda vals, aux: np.maximum(vals[0], 0.0),
    "sigmoid": lambda vals, aux: _stable_sigmoid(vals[0]),
    "hadamard": lambda vals, aux: vals[0] * vals[1],
    "gate_combine": lambda vals, aux: vals[0] * vals[1] + (1.0 - vals[0]) * vals[2],
    "dropout": lambda vals, aux: vals[0] * aux,
}


def _f_masked_ce(vals, aux):
    log_probs, _ = _masked_log_softmax(vals[0], aux)
    labels, mask = aux
    picked = log_probs[np.arange(len(mask)), labels[mask]]
    return np.array([[-picked.mean()]])


_FORWARD["masked_ce"] = _f_masked_ce


def _b_masked_ce(g, vals, out, aux):
    labels, mask = aux
    log_probs, _ = _masked_log_softmax(vals[0], aux)
    probs = np.exp(log_probs)
    probs[np.arange(len(mask)), labels[mask]] -= 1.0
    grad = np.zeros_like(vals[0])
    grad[mask] = probs * (g[0, 0] / len(mask))
    return (grad,)


# Backward rules: (upstream grad, input values, output value, aux) -> per-input
# gradients.  relu takes subgradient 0 at the kink.
_BACKWARD: dict[str, Callable] = {
    "matmul": lambda g, vals, out, aux: (g @ vals[1].T, vals[0].T @ g),
    "spmm_const": lambda g, vals, out, aux: (spmm(aux.transpose(), g),),
    "add_bias": lambda g, vals, out, aux: (g, g.sum(axis=0, keepdims=True)),
    "relu": lambda g, vals, out, aux: (g * (vals[0] > 0.0),),
    "sigmoid": lambda g, vals, out, aux: (g * out * (1.0 - out),),
    "hadamard": lambda g, vals, out, aux: (g * vals[1], g * vals[0]),
    "gate_combine": lambda g, vals, out, aux: (
        g * (vals[1] - vals[2]),
        g * vals[0],
        g * (1.0 - vals[0]),
    ),
    "dropout": lambda g, vals, out, aux: (g * aux,),
    "masked_ce": _b_masked_ce,
}


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._nodes: list[_Node | None] = []
        self._param_names: dict[int, str] = {}

    def __len__(self) -> int:
        return len(self._values)

    def value(self, var: VarId) -> np.ndarray:
        return self._values[var.id]

    def _push(self, value: np.ndarray, node: _Node | None) -> VarId:
        self._values.append(value)
        self._nodes.append(node)
        return VarId(len(self._values) - 1, value.shape)

    def constant(self, value: np.ndarray) -> VarId:
        """Leaf that receives no gradient; the array must not be mutated later."""
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError("tape values must be 2-D matrices")
        return self._push(value, None)

    def parameter(self, store: ParamStore, name: str) -> VarId:
        """Leaf bound to a store entry; backward accumulates into its gradient."""
        var = self._push(store.value(name).copy(), None)
        self._param_names[var.id] = name
        return var

    def _apply(self, op: str, inputs: tuple[VarId, ...], aux=None) -> VarId:
        vals = [self._values[v.id] for v in inputs]
        return self._push(_FORWARD[op](vals, aux), _Node(op, tuple(v.id for v in inputs), aux))

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: VarId, b: VarId) -> VarId:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return self._apply("matmul", (a, b))

    def spmm_const(self, s: CsrMatrix, h: VarId) -> VarId:
        """Propagate through a fixed filter; gradient flows through h only."""
        if s.num_cols != h.shape[0]:
            raise ValueError(f"spmm shape mismatch: {s.num_rows}x{s.num_cols} @ {h.shape}")
        return self._apply("spmm_const", (h,), aux=s)

    def add_bias(self, h: VarId, b: VarId) -> VarId:
        if b.shape != (1, h.shape[1]):
            raise ValueError(f"bias shape {b.shape} does not broadcast over {h.shape}")
        return self._apply("add_bias", (h, b))

    def relu(self, h: VarId) -> VarId:
        return self._apply("relu", (h,))

    def sigmoid(self, h: VarId) -> VarId:
        return self._apply("sigmoid", (h,))

    def hadamard(self, a: VarId, b: VarId) -> VarId:
        if a.shape != b.shape:
            raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
        return self._apply("hadamard", (a, b))

    def gate_combine(self, t: VarId, f_hom: VarId, f_het: VarId) -> VarId:
        """Gated sum t * f_hom + (1 - t) * f_het."""
        if not (t.shape == f_hom.shape == f_het.shape):
            raise ValueError(
                f"gate_combine shape mismatch: {t.shape}, {f_hom.shape}, {f_het.shape}"
            )
        return self._apply("gate_combine", (t, f_hom, f_het))

    def dropout(self, h: VarId, p: float, training: bool, rng: np.random.Generator) -> VarId:
        """Inverted dropout: zero entries with probability p and scale survivors
        by 1/(1-p) during training; identity in evaluation."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1): {p}")
        if not training or p == 0.0:
            return h
        mask = (rng.random(h.shape) >= p) / (1.0 - p)
        return self._apply("dropout", (h,), aux=mask)

    def masked_softmax_cross_entropy(
        self, logits: VarId, labels: np.ndarray, mask: np.ndarray
    ) -> VarId:
        """Mean over masked rows of -log softmax(logits)[label], row-max stabilized."""
        mask = np.asarray(mask, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if mask.size == 0:
            raise ValueError("empty mask: nothing to average the loss over")
        picked = labels[mask]
        if picked.min() < 0 or picked.max() >= logits.shape[1]:
            raise ValueError("masked node has a label outside [0, num_classes)")
        return self._apply("masked_ce", (logits,), aux=(labels, mask))

    # -- diagnostics ---------------------------------------------------------

    def replay_exact(self) -> bool:
        """Recompute every node from its recorded inputs; True iff all stored
        activations are reproduced bit for bit."""
        for i, node in enumerate(self._nodes):
            if node is None:
                continue
            vals = [self._values[j] for j in node.inputs]
            if not np.array_equal(_FORWARD[node.op](vals, node.aux), self._values[i]):
                return False
        return True


def backward(tape: Tape, loss: VarId, store: ParamStore) -> None:
    """Accumulate d(loss)/d(param) into the store for every reachable parameter.

    Unreachable parameters are left untouched (zero after ``zero_grad``).
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be a 1x1 scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
    for nid in range(loss.id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        name = tape._param_names.get(nid)
        if name is not None:
            store.accumulate_grad(name, g)
        node = tape._nodes[nid]
        if node is None:
            continue
        vals = [tape._values[i] for i in node.inputs]
        for iid, ig in zip(node.inputs, _BACKWARD[node.op](g, vals, tape._values[nid], node.aux)):
            prev = grads.get(iid)
            grads[iid] = ig if prev is None else prev + ig


def finite_diff_check(
    f: Callable[[], tuple[Tape, VarId]], store: ParamStore, h: float = 1e-6
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` rebuilds the forward graph against the live store and returns the
    tape with its scalar loss; it must be deterministic (dropout disabled).
    The relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    tape, loss = f()
    store.zero_grad()
    backward(tape, loss, store)
    analytic = {name: store.grad(name).copy() for name in store.names()}

    def loss_value() -> float:
        t, lv = f()
        return float(t.value(lv)[0, 0])

    worst = 0.0
    for name in store.names():
        p = store.value(name)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = loss_value()
            p[idx] = orig - h
            fm = loss_value()
            p[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = analytic[name][idx]
            denom = max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, abs(numeric - ana) / denom)
    return worst
