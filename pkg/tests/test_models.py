import numpy as np
import pytest

from ghnet.autodiff import ParamStore, Tape, finite_diff_check
from ghnet.gradcheck import run_gradient_suite
from ghnet.models import (
    BlockSpec,
    ConfigError,
    ForwardTrace,
    ModelConfig,
    VariantKind,
    ghnet_block_forward,
    model_forward,
    prepare_graph,
    standard_config,
)
from ghnet.sparse import build_csr, k_hop_propagate
from ghnet.train import build_params


@pytest.fixture
def small_graph():
    rng = np.random.default_rng(8)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4), (2, 5)]
    adj = build_csr(edges, 6)
    x = rng.uniform(-2, 2, (6, 4))
    return prepare_graph(x, adj)


def block_inputs(graph, in_dim=4, out_dim=3, seed=0):
    rng = np.random.default_rng(seed)
    tape = Tape()
    h = tape.constant(rng.uniform(-2, 2, (6, in_dim)))
    store = ParamStore()
    store.add("b0.theta", rng.uniform(-1, 1, (in_dim, out_dim)))
    store.add("b0.w_t", rng.uniform(-1, 1, (in_dim, out_dim)))
    store.add("b0.b_t", np.zeros((1, out_dim)))
    return tape, h, store


class TestGhnetBlock:
    def test_fixed_t_one_is_pure_propagation(self, small_graph):
        # gate pinned fully open: the block must equal act(S^k H theta),
        # checked against a dense matrix-power reference
        tape, h, store = block_inputs(small_graph)
        spec = BlockSpec(4, 3, hops=3, activation="relu")
        out = ghnet_block_forward(
            tape, h, h, small_graph.s, store, "b0.", spec, VariantKind.INNER, fixed_t=1.0
        )
        s_dense = small_graph.s.to_dense()
        reference = np.maximum(
            np.linalg.matrix_power(s_dense, 3) @ tape.value(h) @ store.value("b0.theta"), 0.0
        )
        assert np.abs(tape.value(out) - reference).max() <= 1e-12

    def test_fixed_t_zero_inner_identity_act_is_transform(self, small_graph):
        tape, h, store = block_inputs(small_graph)
        spec = BlockSpec(4, 3, hops=2, activation="identity")
        out = ghnet_block_forward(
            tape, h, h, small_graph.s, store, "b0.", spec, VariantKind.INNER, fixed_t=0.0
        )
        assert np.array_equal(tape.value(out), tape.value(h) @ store.value("b0.theta"))

    def test_fixed_t_zero_outer_equal_dims_is_bitwise_input(self, small_graph):
        tape, h, store = block_inputs(small_graph, in_dim=4, out_dim=4)
        spec = BlockSpec(4, 4, hops=2, activation="relu")
        out = ghnet_block_forward(
            tape, h, h, small_graph.s, store, "b0.", spec, VariantKind.OUTER, fixed_t=0.0
        )
        assert np.array_equal(tape.value(out), tape.value(h))

    def test_outer_equal_dims_has_no_projection(self):
        config = standard_config(VariantKind.OUTER, 4, 4, 4, hops=(1, 1))
        from ghnet.models import param_shapes

        names = param_shapes(config, 4)
        assert "block0.w_h" not in names and "block1.w_h" not in names

    def test_outer_missing_projection_is_config_error(self, small_graph):
        tape, h, store = block_inputs(small_graph)  # no w_h in store
        spec = BlockSpec(4, 3, hops=1, activation="relu")
        with pytest.raises(ConfigError, match="w_h"):
            ghnet_block_forward(
                tape, h, h, small_graph.s, store, "b0.", spec, VariantKind.OUTER
            )

    def test_gate_strictly_inside_unit_interval(self, small_graph):
        tape, h, store = block_inputs(small_graph, seed=3)
        spec = BlockSpec(4, 3, hops=1, activation="relu")
        trace = ForwardTrace()
        config_trace_out = ghnet_block_forward(
            tape, h, h, small_graph.s, store, "b0.", spec, VariantKind.INNER, trace=trace
        )
        gate = tape.value(trace.gates[0])
        assert np.all(gate > 0.0) and np.all(gate < 1.0)

    def test_transform_then_propagate_matches_other_association(self, small_graph):
        rng = np.random.default_rng(4)
        h = rng.uniform(-2, 2, (6, 4))
        theta = rng.uniform(-1, 1, (4, 3))
        a = k_hop_propagate(small_graph.s, h @ theta, 2)
        b = k_hop_propagate(small_graph.s, h, 2) @ theta
        assert np.abs(a - b).max() < 1e-12

    def test_inner_shares_transform_between_paths(self, small_graph):
        # the shared transform's gradient collects both path contributions and
        # still matches finite differences
        config = standard_config(VariantKind.INNER, 4, 3, 2, hops=(2, 1), dropout=0.0)
        store = build_params(config, 4, np.random.default_rng(5))
        labels = np.array([0, 1, 0, 1, 0, 1])

        def f():
            t = Tape()
            logits = model_forward(t, config, store, small_graph, training=False)
            return t, t.masked_softmax_cross_entropy(logits, labels, np.arange(6))

        assert finite_diff_check(f, store) < 1e-5


class TestBaselines:
    def test_gcn_layer_on_edgeless_graph_is_dense_layer(self):
        graph = prepare_graph(np.random.default_rng(0).uniform(-1, 1, (5, 3)), build_csr([], 5))
        # with no edges the self-loop filter is the identity
        assert np.array_equal(graph.s_tilde.to_dense(), np.eye(5))
        config = standard_config(VariantKind.GCN, 3, 4, 2, hops=(1, 1), dropout=0.0)
        store = build_params(config, 3, np.random.default_rng(1))
        tape = Tape()
        logits = model_forward(tape, config, store, graph, training=False)
        h = np.maximum(graph.x @ store.value("block0.theta"), 0.0)
        assert np.allclose(tape.value(logits), h @ store.value("block1.theta"), atol=1e-14)

    def test_gcn_single_node_graph(self):
        graph = prepare_graph(np.array([[1.0, 2.0]]), build_csr([], 1))
        assert np.array_equal(graph.s_tilde.to_dense(), [[1.0]])
        config = standard_config(VariantKind.GCN, 2, 3, 2, hops=(1, 1), dropout=0.0)
        store = build_params(config, 2, np.random.default_rng(2))
        tape = Tape()
        logits = model_forward(tape, config, store, graph, training=False)
        expected = np.maximum(graph.x @ store.value("block0.theta"), 0.0) @ store.value(
            "block1.theta"
        )
        assert np.allclose(tape.value(logits), expected, atol=1e-14)

    def test_sgc_precompute_equals_in_graph_propagation(self, small_graph):
        from ghnet.models import sgc_forward

        k = 3
        tape = Tape()
        h = tape.constant(small_graph.x)
        for _ in range(k):
            h = tape.spmm_const(small_graph.s_tilde, h)
        assert np.array_equal(small_graph.propagated_features(k), tape.value(h))
        # the linear head applied to the cache matches the in-graph route
        store = ParamStore()
        store.add("w", np.random.default_rng(3).uniform(-1, 1, (4, 3)))
        logits = sgc_forward(tape, small_graph, k, store, "w")
        assert np.array_equal(
            tape.value(logits), tape.value(tape.matmul(h, tape.parameter(store, "w")))
        )

    def test_sgc_identity_slice_returns_propagated_features(self, small_graph):
        config = standard_config(VariantKind.SGC, 4, 0, 3, hops=(2,), dropout=0.0)
        store = ParamStore()
        w = np.zeros((4, 3))
        w[:3, :3] = np.eye(3)
        store.add("block0.w", w)
        tape = Tape()
        logits = model_forward(tape, config, store, small_graph, training=False)
        assert np.array_equal(tape.value(logits), small_graph.propagated_features(2)[:, :3])

    def test_mlp_zero_weights_uniform_loss(self, small_graph):
        config = standard_config(VariantKind.MLP, 4, 8, 3, hops=(1, 1), dropout=0.0)
        store = ParamStore()
        for name, shape in (
            ("block0.w", (4, 8)),
            ("block0.b", (1, 8)),
            ("block1.w", (8, 3)),
            ("block1.b", (1, 3)),
        ):
            store.add(name, np.zeros(shape))
        tape = Tape()
        logits = model_forward(tape, config, store, small_graph, training=False)
        loss = tape.masked_softmax_cross_entropy(
            logits, np.zeros(6, dtype=int), np.arange(6)
        )
        assert abs(tape.value(loss)[0, 0] - np.log(3.0)) < 1e-12

    def test_mlp_is_graph_blind(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, (6, 4))
        sparse_graph = prepare_graph(x, build_csr([(0, 1)], 6))
        dense_graph = prepare_graph(x, build_csr([(i, j) for i in range(6) for j in range(i + 1, 6)], 6))
        config = standard_config(VariantKind.MLP, 4, 5, 3, hops=(1, 1), dropout=0.0)
        store = build_params(config, 4, np.random.default_rng(7))
        out_a = Tape()
        out_b = Tape()
        a = model_forward(out_a, config, store, sparse_graph, training=False)
        b = model_forward(out_b, config, store, dense_graph, training=False)
        assert np.array_equal(out_a.value(a), out_b.value(b))


class TestModelForward:
    def test_eval_mode_deterministic(self, small_graph):
        config = standard_config(VariantKind.RAW, 4, 5, 3, hops=(1, 2))
        store = build_params(config, 4, np.random.default_rng(9))
        t1, t2 = Tape(), Tape()
        a = model_forward(t1, config, store, small_graph, training=False)
        b = model_forward(t2, config, store, small_graph, training=False)
        assert np.array_equal(t1.value(a), t2.value(b))

    def test_feature_width_mismatch(self, small_graph):
        config = standard_config(VariantKind.INNER, 9, 5, 3, hops=(1, 1))
        store = ParamStore()
        with pytest.raises(ConfigError, match="features"):
            model_forward(Tape(), config, store, small_graph, training=False)

    def test_dim_chain_violation(self):
        with pytest.raises(ConfigError, match="chain"):
            ModelConfig(
                VariantKind.INNER,
                (BlockSpec(4, 5), BlockSpec(6, 3, activation="identity")),
                num_classes=3,
            )

    def test_final_activation_must_be_identity(self):
        with pytest.raises(ConfigError, match="identity"):
            ModelConfig(VariantKind.INNER, (BlockSpec(4, 3, activation="relu"),), 3)

    def test_fixed_t_rejected_for_baselines(self):
        with pytest.raises(ConfigError, match="fixed_t"):
            standard_config(VariantKind.GCN, 4, 5, 3, hops=(1, 1), fixed_t=0.5)

    def test_single_block_model(self, small_graph):
        config = standard_config(VariantKind.INNER, 4, 0, 3, hops=(2,), dropout=0.0)
        store = build_params(config, 4, np.random.default_rng(10))
        tape = Tape()
        logits = model_forward(tape, config, store, small_graph, training=False)
        assert logits.shape == (6, 3)

    def test_trace_collects_blocks_and_gates(self, small_graph):
        config = standard_config(VariantKind.INNER, 4, 5, 3, hops=(1, 1), dropout=0.0)
        store = build_params(config, 4, np.random.default_rng(11))
        trace = ForwardTrace()
        tape = Tape()
        model_forward(tape, config, store, small_graph, training=False, trace=trace)
        assert len(trace.block_outputs) == 2 and len(trace.gates) == 2
        assert trace.block_outputs[0].shape == (6, 5)

    def test_training_needs_rng_when_dropout_active(self, small_graph):
        config = standard_config(VariantKind.INNER, 4, 5, 3, hops=(1, 1), dropout=0.5)
        store = build_params(config, 4, np.random.default_rng(12))
        with pytest.raises(ConfigError, match="RNG"):
            model_forward(Tape(), config, store, small_graph, training=True)


class TestGradientSuite:
    def test_every_primitive_and_variant_passes(self):
        results = run_gradient_suite()
        failed = [r for r in results if not r.passed]
        assert not failed, f"failed checks: {[(r.name, r.worst_rel_err) for r in failed]}"
        assert len(results) == 15
