"""Datasets: the on-disk GraphDir layout, a planted-community generator for
desk-scale experiments, and the label-rate subsampler.

A GraphDir is a plain-text directory:

    meta.json     {"name", "num_nodes", "num_features", "num_classes"}
    edges.tsv     one "src<TAB>dst" per line, 0-based, each undirected edge
                  once (duplicates/self-loops tolerated and cleaned)
    features.tsv  num_nodes lines of num_features tab-separated reals
    labels.tsv    num_nodes lines, one integer each (-1 = unlabeled)
    split.json    {"train": [ids], "val": [ids], "test": [ids]}

Floats are written with shortest round-trip formatting, so a save/load cycle
reproduces the arrays exactly and re-saving yields byte-identical files.
Datasets are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .sparse import CsrMatrix, build_csr

UNLABELED = -1

_GRAPHDIR_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.json")


class GraphDirError(ValueError):
    """A GraphDir failed validation; the message names the offending file."""


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for part in ("train", "val", "test"):
            ids = np.unique(np.asarray(getattr(self, part), dtype=np.int64))
            object.__setattr__(self, part, ids)
            if ids.size == 0:
                raise ValueError(f"{part} split is empty")
        if len(np.union1d(np.union1d(self.train, self.val), self.test)) != (
            len(self.train) + len(self.val) + len(self.test)
        ):
            raise ValueError("overlapping splits")


@dataclass(frozen=True)
class GraphDataset:
    name: str
    x: np.ndarray
    labels: np.ndarray
    adjacency: CsrMatrix
    splits: SplitMasks
    num_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels)
        n = x.shape[0]
        if labels.shape != (n,):
            raise ValueError("labels must have one entry per node")
        if self.adjacency.num_rows != n or self.adjacency.num_cols != n:
            raise ValueError("adjacency must be n x n")
        for part in ("train", "val", "test"):
            ids = getattr(self.splits, part)
            if ids.max() >= n or ids.min() < 0:
                raise ValueError(f"{part} split references nodes outside the graph")
            part_labels = labels[ids]
            if part_labels.min() < 0 or part_labels.max() >= self.num_classes:
                raise ValueError(f"{part} split contains a label out of range")
        x.flags.writeable = False
        labels.flags.writeable = False

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_features(self) -> int:
        return self.x.shape[1]


def _fail(directory: str, fname: str, why: str) -> GraphDirError:
    return GraphDirError(f"{os.path.join(directory, fname)}: {why}")


def load_graphdir(path: str) -> GraphDataset:
    """Load and validate a GraphDir; raises GraphDirError naming the file."""
    for fname in _GRAPHDIR_FILES:
        if not os.path.isfile(os.path.join(path, fname)):
            raise _fail(path, fname, "missing file")

    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)
    for key in ("name", "num_nodes", "num_features", "num_classes"):
        if key not in meta:
            raise _fail(path, "meta.json", f"missing key {key!r}")
    n, d, c = int(meta["num_nodes"]), int(meta["num_features"]), int(meta["num_classes"])

    def read_tsv(fname: str, dtype) -> np.ndarray:
        try:
            return pd.read_csv(
                os.path.join(path, fname),
                sep="\t",
                header=None,
                dtype=dtype,
                float_precision="round_trip",
            ).to_numpy()
        except ValueError as e:
            raise _fail(path, fname, f"unparseable: {e}") from e

    feats = read_tsv("features.tsv", np.float64)
    if feats.shape != (n, d):
        raise _fail(path, "features.tsv", f"expected {n}x{d}, got {feats.shape[0]}x{feats.shape[1]}")
    if not np.isfinite(feats).all():
        raise _fail(path, "features.tsv", "non-finite feature value")

    labels = read_tsv("labels.tsv", np.int64).ravel()
    if labels.shape != (n,):
        raise _fail(path, "labels.tsv", f"expected {n} labels, got {labels.shape[0]}")
    if labels.max() >= c or labels.min() < UNLABELED:
        raise _fail(path, "labels.tsv", "label out of range")

    if os.path.getsize(os.path.join(path, "edges.tsv")) == 0:
        edges = np.zeros((0, 2), dtype=np.int64)
    else:
        edges = read_tsv("edges.tsv", np.int64)
        if edges.shape[1] != 2:
            raise _fail(path, "edges.tsv", "each line must be src<TAB>dst")
    try:
        adj = build_csr(edges, n)
    except ValueError as e:
        raise _fail(path, "edges.tsv", str(e)) from e

    with open(os.path.join(path, "split.json")) as f:
        split = json.load(f)
    for key in ("train", "val", "test"):
        if key not in split:
            raise _fail(path, "split.json", f"missing key {key!r}")
    try:
        masks = SplitMasks(
            np.asarray(split["train"]), np.asarray(split["val"]), np.asarray(split["test"])
        )
        return GraphDataset(str(meta["name"]), feats, labels, adj, masks, c)
    except ValueError as e:
        raise _fail(path, "split.json", str(e)) from e


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial output."""
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def save_graphdir(ds: GraphDataset, path: str) -> None:
    """Write a dataset as a GraphDir (deterministic bytes for a given dataset)."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "name": ds.name,
        "num_nodes": ds.num_nodes,
        "num_features": ds.num_features,
        "num_classes": ds.num_classes,
    }
    write_text_atomic(os.path.join(path, "meta.json"), json.dumps(meta, sort_keys=True, indent=2) + "\n")

    rows = []
    adj = ds.adjacency
    node = np.repeat(np.arange(adj.num_rows), np.diff(adj.row_offsets))
    upper = node < adj.col_indices
    for i, j in zip(node[upper], adj.col_indices[upper]):
        rows.append(f"{i}\t{j}")
    write_text_atomic(os.path.join(path, "edges.tsv"), "\n".join(rows) + ("\n" if rows else ""))

    lines = ["\t".join(repr(v) for v in row) for row in ds.x.tolist()]
    write_text_atomic(os.path.join(path, "features.tsv"), "\n".join(lines) + "\n")
    write_text_atomic(
        os.path.join(path, "labels.tsv"), "\n".join(str(v) for v in ds.labels.tolist()) + "\n"
    )
    split = {
        "train": ds.splits.train.tolist(),
        "val": ds.splits.val.tolist(),
        "test": ds.splits.test.tolist(),
    }
    write_text_atomic(os.path.join(path, "split.json"), json.dumps(split, sort_keys=True) + "\n")


def synth_sbm(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_noise: float,
    rng: np.random.Generator,
) -> GraphDataset:
    """Planted-community graph with noisy one-hot centroid features.

    Edges appear independently with probability ``p_in`` inside a community
    and ``p_out`` across; features are the community's one-hot centroid plus
    Gaussian noise.  Split is 10% train / 20% val / 70% test, stratified per
    community.  ``p_out`` may be 0 (no cross-community edges).
    """
    if not 0.0 < p_in < 1.0:
        raise ValueError(f"p_in must be in (0, 1): {p_in}")
    if not 0.0 <= p_out < 1.0 or p_out >= p_in:
        raise ValueError(f"p_out must satisfy 0 <= p_out < p_in: {p_out}")
    if blocks < 2:
        raise ValueError("need at least 2 communities")
    if nodes_per_block < 10:
        raise ValueError("need at least 10 nodes per community for a 10/20/70 split")
    if feat_dim < blocks:
        raise ValueError("feat_dim must be >= number of communities (one-hot centroids)")
    if feat_noise < 0.0:
        raise ValueError("feat_noise must be >= 0")

    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    centroids = np.eye(feat_dim)[labels % feat_dim]
    x = centroids + feat_noise * rng.standard_normal((n, feat_dim))

    train, val, test = [], [], []
    n_train = nodes_per_block // 10
    n_val = nodes_per_block // 5
    for b in range(blocks):
        perm = b * nodes_per_block + rng.permutation(nodes_per_block)
        train.extend(perm[:n_train])
        val.extend(perm[n_train : n_train + n_val])
        test.extend(perm[n_train + n_val :])

    return GraphDataset(
        name=f"sbm-{blocks}x{nodes_per_block}",
        x=x,
        labels=labels,
        adjacency=build_csr(edges, n),
        splits=SplitMasks(np.array(train), np.array(val), np.array(test)),
        num_classes=blocks,
    )


def subsample_labels(
    ds: GraphDataset, fraction: float, rng: np.random.Generator
) -> GraphDataset:
    """Shrink the train mask to a uniform random subset of floor(fraction*|train|).

    Validation and test masks are untouched.  fraction = 1.0 returns the
    dataset unchanged.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1]: {fraction}")
    if fraction == 1.0:
        return ds
    size = int(fraction * len(ds.splits.train))
    if size < 1:
        raise ValueError(
            f"fraction {fraction} of {len(ds.splits.train)} train nodes leaves no labels"
        )
    chosen = np.sort(rng.choice(ds.splits.train, size=size, replace=False))
    return replace(ds, splits=SplitMasks(chosen, ds.splits.val, ds.splits.test))
