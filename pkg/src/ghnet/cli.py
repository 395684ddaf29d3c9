"""Experiment command line.

Subcommands: train, sweep-hops, ablate-gate, label-rate, gradcheck, synth.
Every run writes its resolved plan next to its outputs, summary tables are
TSV with a header row, and stdout carries a single human-readable line.
Identical invocations produce identical output files (wall time excluded).

Exit codes: 0 success, 1 runtime failure (divergence), 2 usage/config error.
Seeds may run in parallel; cap the worker count with GHNET_THREADS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import (
    GraphDataset,
    GraphDirError,
    load_graphdir,
    save_graphdir,
    subsample_labels,
    synth_sbm,
    write_text_atomic,
)
from .gradcheck import DEFAULT_TOL, run_gradient_suite
from .models import ConfigError, GHNET_VARIANTS, ModelConfig, VariantKind, standard_config
from .train import RunMetrics, TrainConfig, TrainingDiverged, train_model

_MODEL_CHOICES = [v.value for v in VariantKind]

_DEFAULTS = {
    "hidden": 16,
    "lr": 0.01,
    "dropout": 0.5,
    "weight_decay": 5e-4,
    "decay_scope": "first",
    "epochs": 200,
    "patience": 10,
    "seeds": (0, 1, 2, 3, 4),
    "fixed_t": None,
    "hops": None,  # per-model default resolved later
}


@dataclass
class ExperimentPlan:
    command: str
    data: str | None
    model: str
    out: str
    hops: tuple[int, ...]
    hidden: int
    lr: float
    dropout: float
    weight_decay: float
    decay_scope: str
    epochs: int
    patience: int
    seeds: tuple[int, ...]
    fixed_t: float | None
    k_range: tuple[int, ...] = ()
    t_values: tuple[float, ...] = ()
    fractions: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="GraphDir dataset directory")
    p.add_argument("--model", choices=_MODEL_CHOICES)
    p.add_argument("--hops", type=_int_list, help="comma list, one hop count per block")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--decay-scope", choices=["none", "first", "all"], dest="decay_scope")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--fixed-t", type=float, dest="fixed_t")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plan", help="JSON file supplying defaults for any flag")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, extra in (
        ("train", ()),
        ("sweep-hops", (("--k-range", _int_list, "k values for the swept block"),)),
        ("ablate-gate", (("--t-values", _float_list, "fixed gate values to compare"),)),
        ("label-rate", (("--fractions", _float_list, "train-label fractions"),)),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        for flag, typ, help_ in extra:
            p.add_argument(flag, type=typ, help=help_)

    g = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    g.add_argument("--tol", type=float, default=DEFAULT_TOL)

    s = sub.add_parser("synth", help="generate a planted-community GraphDir")
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--nodes-per-block", type=int, default=100, dest="nodes_per_block")
    s.add_argument("--p-in", type=float, default=0.05, dest="p_in")
    s.add_argument("--p-out", type=float, default=0.005, dest="p_out")
    s.add_argument("--feat-dim", type=int, default=16, dest="feat_dim")
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return parser


def _default_hops(model: str) -> tuple[int, ...]:
    return (2,) if model == "sgc" else (1, 1)


def _resolve_plan(args: argparse.Namespace) -> ExperimentPlan:
    """Merge explicit flags over --plan file values over built-in defaults."""
    plan_file: dict = {}
    if getattr(args, "plan", None):
        with open(args.plan) as f:
            plan_file = json.load(f)

    def pick(key, fallback):
        explicit = getattr(args, key, None)
        if explicit is not None:
            return explicit
        if key in plan_file:
            value = plan_file[key]
            return tuple(value) if isinstance(value, list) else value
        return fallback

    data = pick("data", None)
    model = pick("model", None)
    out = pick("out", None)
    if data is None:
        raise ConfigError("--data is required (GraphDir directory)")
    if model is None:
        raise ConfigError("--model is required")
    if out is None:
        raise ConfigError("--out is required")
    hops = pick("hops", None) or _default_hops(model)
    return ExperimentPlan(
        command=args.command,
        data=data,
        model=model,
        out=out,
        hops=tuple(hops),
        hidden=pick("hidden", _DEFAULTS["hidden"]),
        lr=pick("lr", _DEFAULTS["lr"]),
        dropout=pick("dropout", _DEFAULTS["dropout"]),
        weight_decay=pick("weight_decay", _DEFAULTS["weight_decay"]),
        decay_scope=pick("decay_scope", _DEFAULTS["decay_scope"]),
        epochs=pick("epochs", _DEFAULTS["epochs"]),
        patience=pick("patience", _DEFAULTS["patience"]),
        seeds=tuple(pick("seeds", _DEFAULTS["seeds"])),
        fixed_t=pick("fixed_t", None),
        k_range=tuple(pick("k_range", ())),
        t_values=tuple(pick("t_values", ())),
        fractions=tuple(pick("fractions", ())),
    )


def _train_config(plan: ExperimentPlan) -> TrainConfig:
    return TrainConfig(
        lr=plan.lr,
        max_epochs=plan.epochs,
        patience=plan.patience,
        weight_decay=plan.weight_decay,
        decay_scope=plan.decay_scope,
        dropout=plan.dropout,
        seeds=plan.seeds,
        hidden=plan.hidden,
    )


def _model_config(plan: ExperimentPlan, ds: GraphDataset, **overrides) -> ModelConfig:
    kwargs = dict(
        variant=VariantKind(plan.model),
        in_dim=ds.num_features,
        hidden=plan.hidden,
        num_classes=ds.num_classes,
        hops=plan.hops,
        dropout=plan.dropout,
        fixed_t=plan.fixed_t,
    )
    kwargs.update(overrides)
    return standard_config(**kwargs)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GHNET_THREADS", "1")))
    except ValueError:
        return 1


def _run_seeds(config: ModelConfig, tc: TrainConfig, ds: GraphDataset) -> list[RunMetrics]:
    """One isolated run per seed, results ordered by seed position."""
    workers = _worker_count()
    if workers == 1:
        return [train_model(config, tc, ds, seed)[1] for seed in tc.seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(train_model, config, tc, ds, seed) for seed in tc.seeds]
        return [f.result()[1] for f in futures]


def _config_echo(config: ModelConfig, tc: TrainConfig) -> dict:
    return {
        "variant": config.variant.value,
        "blocks": [
            {"in_dim": b.in_dim, "out_dim": b.out_dim, "hops": b.hops, "activation": b.activation}
            for b in config.blocks
        ],
        "num_classes": config.num_classes,
        "dropout": config.dropout,
        "fixed_t": config.fixed_t,
        "train": {
            "lr": tc.lr,
            "max_epochs": tc.max_epochs,
            "patience": tc.patience,
            "weight_decay": tc.weight_decay,
            "decay_scope": tc.decay_scope,
            "hidden": tc.hidden,
        },
    }


def _write_json(path: str, payload: dict) -> None:
    write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_table(path: str, header: list[str], rows: list[list]) -> None:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(v) for v in row) for row in rows]
    write_text_atomic(path, "\n".join(lines) + "\n")


def _echo_plan(plan: ExperimentPlan) -> None:
    os.makedirs(plan.out, exist_ok=True)
    _write_json(os.path.join(plan.out, "plan.json"), plan.to_dict())


def _mean_std(metrics: list[RunMetrics]) -> tuple[float, float]:
    accs = np.array([m.test_acc for m in metrics])
    return float(accs.mean()), float(accs.std())


def cmd_train(plan: ExperimentPlan) -> int:
    ds = load_graphdir(plan.data)
    config = _model_config(plan, ds)
    tc = _train_config(plan)
    _echo_plan(plan)
    metrics = _run_seeds(config, tc, ds)
    echo = _config_echo(config, tc)
    for m in metrics:
        _write_json(
            os.path.join(plan.out, f"run_seed{m.seed}.json"),
            {"config": echo, **m.to_dict()},
        )
    mean, std = _mean_std(metrics)
    _write_json(
        os.path.join(plan.out, "summary.json"),
        {
            "command": "train",
            "dataset": ds.name,
            "model": plan.model,
            "seeds": list(plan.seeds),
            "test_accs": [m.test_acc for m in metrics],
            "mean": mean,
            "stddev": std,
        },
    )
    print(
        f"train {plan.model} on {ds.name}: test acc {mean:.4f} ± {std:.4f} "
        f"over {len(plan.seeds)} seeds -> {plan.out}"
    )
    return 0


def cmd_sweep_hops(plan: ExperimentPlan) -> int:
    """First block fixed at one hop, the second block's hop count swept."""
    if VariantKind(plan.model) not in GHNET_VARIANTS:
        raise ConfigError("sweep-hops applies to the gated variants only")
    ds = load_graphdir(plan.data)
    tc = _train_config(plan)
    k_range = plan.k_range or (1, 2, 3, 4, 5)
    plan.k_range = tuple(k_range)
    _echo_plan(plan)
    rows = []
    for k in k_range:
        config = _model_config(plan, ds, hops=(1, k))
        mean, std = _mean_std(_run_seeds(config, tc, ds))
        rows.append([k, f"{mean:.6f}", f"{std:.6f}"])
    _write_table(os.path.join(plan.out, "sweep_hops.tsv"), ["k", "mean_acc", "std_acc"], rows)
    best = max(rows, key=lambda r: float(r[1]))
    print(
        f"sweep-hops {plan.model} on {ds.name}: best k={best[0]} "
        f"acc {best[1]} -> {plan.out}/sweep_hops.tsv"
    )
    return 0


def cmd_ablate_gate(plan: ExperimentPlan) -> int:
    """Fixed gate constants versus the learned gate, same architecture."""
    if VariantKind(plan.model) not in GHNET_VARIANTS:
        raise ConfigError("ablate-gate applies to the gated variants only")
    ds = load_graphdir(plan.data)
    tc = _train_config(plan)
    t_values = plan.t_values or (0.1, 0.3, 0.5, 0.7, 0.9)
    plan.t_values = tuple(t_values)
    _echo_plan(plan)
    rows = []
    for t in t_values:
        config = _model_config(plan, ds, fixed_t=t)
        mean, std = _mean_std(_run_seeds(config, tc, ds))
        rows.append([t, f"{mean:.6f}", f"{std:.6f}"])
    config = _model_config(plan, ds, fixed_t=None)
    mean, std = _mean_std(_run_seeds(config, tc, ds))
    rows.append(["gate", f"{mean:.6f}", f"{std:.6f}"])
    _write_table(os.path.join(plan.out, "ablate_gate.tsv"), ["t", "mean_acc", "std_acc"], rows)
    print(
        f"ablate-gate {plan.model} on {ds.name}: learned gate {mean:.4f} "
        f"-> {plan.out}/ablate_gate.tsv"
    )
    return 0


def cmd_label_rate(plan: ExperimentPlan) -> int:
    """Label-starved comparison of the chosen gated variant against the plain
    convolution baseline, per training-label fraction."""
    ds = load_graphdir(plan.data)
    tc = _train_config(plan)
    fractions = plan.fractions or (0.1, 0.2, 0.3, 0.4, 0.5)
    plan.fractions = tuple(fractions)
    _echo_plan(plan)
    rows = []
    for frac in fractions:
        accs = {"gcn": [], "model": []}
        train_size = None
        for seed in plan.seeds:
            sub = subsample_labels(ds, frac, np.random.default_rng([seed, 17]))
            train_size = len(sub.splits.train)
            for key, model_name in (("gcn", "gcn"), ("model", plan.model)):
                config = _model_config(
                    plan, ds, variant=VariantKind(model_name),
                    hops=plan.hops if model_name != "gcn" else (1, 1),
                    fixed_t=None if model_name == "gcn" else plan.fixed_t,
                )
                _, m = train_model(config, tc, sub, seed)
                accs[key].append(m.test_acc)
        gcn_mean = float(np.mean(accs["gcn"]))
        model_mean = float(np.mean(accs["model"]))
        rel = (model_mean - gcn_mean) / gcn_mean if gcn_mean > 0 else float("nan")
        rows.append(
            [
                frac,
                train_size,
                f"{gcn_mean:.6f}",
                f"{model_mean:.6f}",
                f"{model_mean - gcn_mean:.6f}",
                f"{rel:.6f}",
            ]
        )
    _write_table(
        os.path.join(plan.out, "label_rate.tsv"),
        ["fraction", "train_size", "gcn_acc", f"{plan.model}_acc", "delta", "rel_improvement"],
        rows,
    )
    print(f"label-rate {plan.model} vs gcn on {ds.name} -> {plan.out}/label_rate.tsv")
    return 0


def cmd_gradcheck(tol: float) -> int:
    results = run_gradient_suite(tol)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:40s} worst rel err {r.worst_rel_err:.3e}")
    failed = [r for r in results if not r.passed]
    print(
        f"gradcheck: {len(results) - len(failed)}/{len(results)} checks passed "
        f"at tolerance {tol:g}"
    )
    return 1 if failed else 0


def cmd_synth(args: argparse.Namespace) -> int:
    ds = synth_sbm(
        args.blocks,
        args.nodes_per_block,
        args.p_in,
        args.p_out,
        args.feat_dim,
        args.noise,
        np.random.default_rng(args.seed),
    )
    save_graphdir(ds, args.out)
    print(
        f"synth {ds.name}: {ds.num_nodes} nodes, {ds.adjacency.nnz // 2} edges, "
        f"{ds.num_classes} classes -> {args.out}"
    )
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.tol)
        if args.command == "synth":
            return cmd_synth(args)
        plan = _resolve_plan(args)
        if args.command == "train":
            return cmd_train(plan)
        if args.command == "sweep-hops":
            return cmd_sweep_hops(plan)
        if args.command == "ablate-gate":
            return cmd_ablate_gate(plan)
        return cmd_label_rate(plan)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, GraphDirError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
