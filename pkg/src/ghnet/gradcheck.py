"""Finite-difference verification suite: every primitive, every model variant.

Each check builds a deterministic scalar loss over a small parameter store and
compares analytic gradients against central differences.  Inputs are bounded
in [-2, 2] and kept a safe margin away from the relu kink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, finite_diff_check
from .models import GHNET_VARIANTS, VariantKind, model_forward, prepare_graph, standard_config
from .sparse import build_csr, sym_normalize
from .train import build_params

DEFAULT_TOL = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    worst_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < self.tol


def _bounded(rng: np.random.Generator, shape, margin: float = 0.0) -> np.ndarray:
    """Uniform in [-2, 2]; with a margin, values are pushed that far from 0."""
    x = rng.uniform(-2.0, 2.0, size=shape)
    if margin:
        x = np.where(np.abs(x) < margin, margin * np.sign(x) + (x == 0) * margin, x)
    return x


def _scalarize(tape: Tape, var):
    """Mean of all entries as a 1x1 scalar, via a ones sandwich of matmuls."""
    left = tape.constant(np.full((1, var.shape[0]), 1.0 / var.shape[0]))
    right = tape.constant(np.full((var.shape[1], 1), 1.0 / var.shape[1]))
    return tape.matmul(tape.matmul(left, var), right)


def _primitive_checks(rng: np.random.Generator) -> list[tuple[str, ParamStore, object]]:
    checks = []
    s = sym_normalize(build_csr([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3), (1, 4)], 6), False)

    def make(name, param_shapes, build, margin=0.0):
        store = ParamStore()
        for pname, shape in param_shapes.items():
            store.add(pname, _bounded(rng, shape, margin))
        checks.append((name, store, lambda store=store, build=build: build(store)))

    def f_matmul(store):
        t = Tape()
        out = t.matmul(t.parameter(store, "a"), t.parameter(store, "b"))
        return t, _scalarize(t, t.sigmoid(out))

    make("matmul", {"a": (4, 3), "b": (3, 5)}, f_matmul)

    def f_spmm(store):
        t = Tape()
        out = t.spmm_const(s, t.parameter(store, "h"))
        return t, _scalarize(t, t.sigmoid(out))

    make("spmm_const", {"h": (6, 4)}, f_spmm)

    def f_add_bias(store):
        t = Tape()
        out = t.add_bias(t.parameter(store, "h"), t.parameter(store, "b"))
        return t, _scalarize(t, t.sigmoid(out))

    make("add_bias", {"h": (5, 4), "b": (1, 4)}, f_add_bias)

    def f_relu(store):
        t = Tape()
        return t, _scalarize(t, t.relu(t.parameter(store, "h")))

    make("relu", {"h": (5, 4)}, f_relu, margin=1e-3)

    def f_sigmoid(store):
        t = Tape()
        return t, _scalarize(t, t.sigmoid(t.parameter(store, "h")))

    make("sigmoid", {"h": (5, 4)}, f_sigmoid)

    def f_hadamard(store):
        t = Tape()
        return t, _scalarize(t, t.hadamard(t.parameter(store, "a"), t.parameter(store, "b")))

    make("hadamard", {"a": (4, 4), "b": (4, 4)}, f_hadamard)

    def f_gate(store):
        t = Tape()
        gate = t.sigmoid(t.parameter(store, "z"))
        out = t.gate_combine(gate, t.parameter(store, "a"), t.parameter(store, "b"))
        return t, _scalarize(t, out)

    make("gate_combine", {"z": (4, 3), "a": (4, 3), "b": (4, 3)}, f_gate)

    def f_dropout(store):
        # fresh generator per call: the mask is identical on every evaluation,
        # so central differences see a deterministic function
        t = Tape()
        out = t.dropout(t.parameter(store, "h"), 0.4, True, np.random.default_rng(7))
        return t, _scalarize(t, t.sigmoid(out))

    make("dropout", {"h": (5, 4)}, f_dropout)

    labels = np.array([0, 2, 1, 0, 1, 2])
    mask = np.array([0, 1, 3, 5])

    def f_ce(store):
        t = Tape()
        return t, t.masked_softmax_cross_entropy(t.parameter(store, "logits"), labels, mask)

    make("masked_softmax_cross_entropy", {"logits": (6, 3)}, f_ce)
    return checks


def _model_checks(rng: np.random.Generator) -> list[tuple[str, ParamStore, object]]:
    # 12-node random graph, loss over every node: small masks leave near-zero
    # gradients whose relative FD error is dominated by cancellation noise
    n, feat_dim, classes = 12, 6, 3
    graph_rng = np.random.default_rng(21)
    iu, ju = np.triu_indices(n, k=1)
    keep = graph_rng.random(len(iu)) < 0.3
    adj = build_csr(np.stack([iu[keep], ju[keep]], axis=1), n)
    x = _bounded(graph_rng, (n, feat_dim))
    labels = graph_rng.integers(0, classes, size=n)
    mask = np.arange(n)
    graph = prepare_graph(x, adj)

    checks = []
    for variant in VariantKind:
        if variant is VariantKind.SGC:
            hops = (2,)
        elif variant in GHNET_VARIANTS:
            hops = (2, 1)
        else:
            hops = (1, 1)
        config = standard_config(variant, feat_dim, 5, classes, hops=hops, dropout=0.0)
        store = build_params(config, feat_dim, np.random.default_rng(rng.integers(1 << 31)))

        def f(config=config, store=store):
            t = Tape()
            logits = model_forward(t, config, store, graph, training=False)
            return t, t.masked_softmax_cross_entropy(logits, labels, mask)

        checks.append((f"model:{variant.value}", store, f))
    return checks


def run_gradient_suite(tol: float = DEFAULT_TOL, seed: int = 0) -> list[GradCheckResult]:
    """Run every check; returns one result per primitive and per model variant."""
    rng = np.random.default_rng(seed)
    results = []
    for name, store, f in _primitive_checks(rng) + _model_checks(rng):
        results.append(GradCheckResult(name, finite_diff_check(f, store), tol))
    return results
