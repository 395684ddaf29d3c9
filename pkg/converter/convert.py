#!/usr/bin/env python3
"""Convert a Planetoid citation-network bundle into a GraphDir dataset.

Reads the eight distribution files (ind.<name>.x / .tx / .allx / .y / .ty /
.ally / .graph / .test.index), reassembles the full node ordering the way the
reference preprocessing does (sorted test indices splice back into file
order), zero-fills the isolated test nodes that citeseer leaves out of its
test-index range, row-normalizes features, and writes the plain-text GraphDir
layout:

    meta.json, edges.tsv, features.tsv, labels.tsv, split.json

Splits follow the upstream convention: the first |y| nodes train, the next
500 validate (tunable via --val-count for small fixtures), and the sorted
test index list is the test set.  Re-running produces byte-identical output.

Usage:  convert.py --in <planetoid-dir> --name {cora,citeseer,pubmed} --out <dir>
"""

from __future__ import annotations

import argparse
import json
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp

# published statistics (nodes, edges, classes) for the three citation sets;
# a mismatch is reported as a warning, not an error
KNOWN_STATS = {
    "cora": (2708, 5429, 7),
    "citeseer": (3327, 4732, 6),
    "pubmed": (19717, 44338, 3),
}

PICKLE_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


class ConvertError(Exception):
    pass


def load_bundle(input_dir: str, name: str) -> dict:
    bundle = {}
    for part in PICKLE_PARTS:
        path = os.path.join(input_dir, f"ind.{name}.{part}")
        if not os.path.isfile(path):
            raise ConvertError(f"missing file: {path}")
        with open(path, "rb") as f:
            bundle[part] = pickle.load(f, encoding="latin1")
    index_path = os.path.join(input_dir, f"ind.{name}.test.index")
    if not os.path.isfile(index_path):
        raise ConvertError(f"missing file: {index_path}")
    with open(index_path) as f:
        bundle["test_index"] = np.array([int(line) for line in f if line.strip()], dtype=np.int64)
    return bundle


def assemble(bundle: dict, val_count: int = 500) -> dict:
    """Rebuild the full feature/label matrices and splits in node order."""
    test_reorder = bundle["test_index"]
    test_sorted = np.sort(test_reorder)
    tx, ty = bundle["tx"], bundle["ty"]

    lo, hi = int(test_sorted.min()), int(test_sorted.max())
    if hi - lo + 1 != len(test_sorted):
        # citeseer: some indices in the test range are absent from test.index;
        # give them zero feature rows (they stay unlabeled and out of every split)
        full = hi - lo + 1
        tx_ext = sp.lil_matrix((full, tx.shape[1]))
        tx_ext[test_sorted - lo, :] = tx
        ty_ext = np.zeros((full, ty.shape[1]))
        ty_ext[test_sorted - lo, :] = ty
        tx, ty = tx_ext.tocsr(), ty_ext

    features = sp.vstack((bundle["allx"], sp.csr_matrix(tx))).toarray().astype(np.float64)
    onehot = np.vstack((bundle["ally"], ty)).astype(np.float64)
    # splice the file-ordered test rows back onto their sorted node ids
    features[test_reorder, :] = features[test_sorted, :]
    onehot[test_reorder, :] = onehot[test_sorted, :]

    row_sums = features.sum(axis=1)
    nonzero = row_sums != 0
    features[nonzero] /= row_sums[nonzero, None]

    labels = np.full(len(onehot), -1, dtype=np.int64)
    labeled = onehot.sum(axis=1) > 0
    labels[labeled] = onehot[labeled].argmax(axis=1)

    n_train = bundle["y"].shape[0]
    edges = sorted(
        {
            (min(i, j), max(i, j))
            for i, neighbors in bundle["graph"].items()
            for j in neighbors
            if i != j and i < len(onehot) and j < len(onehot)
        }
    )
    return {
        "features": features,
        "labels": labels,
        "edges": edges,
        "num_classes": onehot.shape[1],
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + val_count)),
        "test": test_sorted.tolist(),
    }


def write_graphdir(out_dir: str, name: str, parts: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    features, labels = parts["features"], parts["labels"]
    meta = {
        "name": name,
        "num_nodes": int(features.shape[0]),
        "num_features": int(features.shape[1]),
        "num_classes": int(parts["num_classes"]),
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(out_dir, "edges.tsv"), "w") as f:
        for i, j in parts["edges"]:
            f.write(f"{i}\t{j}\n")
    with open(os.path.join(out_dir, "features.tsv"), "w") as f:
        for row in features.tolist():
            f.write("\t".join(repr(v) for v in row) + "\n")
    with open(os.path.join(out_dir, "labels.tsv"), "w") as f:
        f.write("\n".join(str(v) for v in labels.tolist()) + "\n")
    with open(os.path.join(out_dir, "split.json"), "w") as f:
        json.dump(
            {"train": parts["train"], "val": parts["val"], "test": parts["test"]},
            f,
            sort_keys=True,
        )
        f.write("\n")


def check_known_stats(name: str, parts: dict) -> list[str]:
    warnings = []
    if name in KNOWN_STATS:
        nodes, edges, classes = KNOWN_STATS[name]
        got = (len(parts["labels"]), len(parts["edges"]), parts["num_classes"])
        for label, expected, actual in zip(("nodes", "edges", "classes"), (nodes, edges, classes), got):
            if expected != actual:
                warnings.append(
                    f"warning: {name} {label} = {actual}, published statistic is {expected}"
                )
    return warnings


def convert_planetoid(input_dir: str, name: str, output_dir: str, val_count: int = 500) -> list[str]:
    parts = assemble(load_bundle(input_dir, name), val_count)
    write_graphdir(output_dir, name, parts)
    return check_known_stats(name, parts)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="input_dir", required=True, help="Planetoid files directory")
    parser.add_argument("--name", required=True, choices=sorted(KNOWN_STATS))
    parser.add_argument("--out", required=True, help="GraphDir output directory")
    parser.add_argument("--val-count", type=int, default=500, dest="val_count",
                        help="validation nodes after the training block (upstream uses 500)")
    args = parser.parse_args(argv)
    try:
        warnings = convert_planetoid(args.input_dir, args.name, args.out, args.val_count)
    except ConvertError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for line in warnings:
        print(line, file=sys.stderr)
    print(f"wrote GraphDir for {args.name} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
