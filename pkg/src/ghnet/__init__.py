"""Gated multi-hop graph convolution networks on a self-contained numeric core.

Sparse filters, a reverse-mode autodiff tape, gated propagation blocks with
three bypass variants, plain-convolution/linearized/MLP baselines, a training
loop with early stopping, and dataset plumbing for the GraphDir on-disk
format.
"""

from .autodiff import ParamStore, Tape, VarId, backward, finite_diff_check
from .data import (
    GraphDataset,
    GraphDirError,
    SplitMasks,
    load_graphdir,
    save_graphdir,
    subsample_labels,
    synth_sbm,
)
from .gradcheck import GradCheckResult, run_gradient_suite
from .models import (
    BlockSpec,
    ConfigError,
    ForwardTrace,
    ModelConfig,
    PreparedGraph,
    VariantKind,
    ghnet_block_forward,
    model_forward,
    prepare_graph,
    standard_config,
)
from .sparse import CsrMatrix, build_csr, degrees, k_hop_propagate, spmm, sym_normalize
from .train import (
    AdamState,
    RunMetrics,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    build_params,
    evaluate_accuracy,
    export_embeddings,
    export_gate_histogram,
    glorot_init,
    mad_metric,
    train_model,
)

__version__ = "0.1.0"
