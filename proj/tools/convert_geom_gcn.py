#!/usr/bin/env python3
# Copyright 2026 The lnl Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Converts public benchmark files into the lnl dataset directory format.

Two input layouts are understood:

  geom-gcn   out1_node_feature_label.txt + out1_graph_edges.txt
             (Texas, Cornell, Wisconsin, Chameleon, Squirrel, Actor).
  planetoid  ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}
             (Cora, CiteSeer, PubMed). Needs numpy and scipy.

Output: <out>/features.tsv, edges.tsv, labels.tsv.
"""

import argparse
import os
import pickle
import sys


def write_dataset(out_dir, features, edges, labels):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "features.tsv"), "w") as f:
        for node, row in enumerate(features):
            f.write("%d\t%s\n" % (node, " ".join(repr(float(v)) if v % 1 else str(int(v)) for v in row)))
    with open(os.path.join(out_dir, "edges.tsv"), "w") as f:
        for u, v in edges:
            f.write("%d\t%d\n" % (u, v))
    with open(os.path.join(out_dir, "labels.tsv"), "w") as f:
        for node, label in enumerate(labels):
            if label is not None:
                f.write("%d\t%d\n" % (node, label))


def read_geom_gcn(src):
    rows = {}
    with open(os.path.join(src, "out1_node_feature_label.txt")) as f:
        next(f)  # header
        for line in f:
            node, feats, label = line.rstrip("\n").split("\t")
            rows[int(node)] = ([float(v) for v in feats.split(",")], int(label))
    n = len(rows)
    if sorted(rows) != list(range(n)):
        sys.exit("node ids in out1_node_feature_label.txt do not cover 0..N-1")
    edges = []
    with open(os.path.join(src, "out1_graph_edges.txt")) as f:
        next(f)
        for line in f:
            u, v = line.split()
            edges.append((int(u), int(v)))
    return [rows[i][0] for i in range(n)], edges, [rows[i][1] for i in range(n)]


def read_planetoid(src, name):
    import numpy as np
    import scipy.sparse as sp

    def load(part):
        with open(os.path.join(src, "ind.%s.%s" % (name, part)), "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, tx, allx, y, ty, ally, graph = (load(p) for p in ("x", "tx", "allx", "y", "ty", "ally", "graph"))
    with open(os.path.join(src, "ind.%s.test.index" % name)) as f:
        test_idx = [int(line) for line in f]
    order = np.sort(test_idx)
    n = max(max(graph) + 1, allx.shape[0] + len(test_idx))
    # CiteSeer has isolated test nodes missing from tx/ty: pad them unlabeled.
    feats = sp.lil_matrix((n, allx.shape[1]))
    feats[: allx.shape[0]] = allx
    onehot = np.zeros((n, y.shape[1]))
    onehot[: ally.shape[0]] = ally
    feats[order] = tx
    onehot[order] = ty
    feats = feats.toarray()
    labels = [int(np.argmax(r)) if r.any() else None for r in onehot]
    edges = sorted({(min(u, v), max(u, v)) for u, nbrs in graph.items() for v in nbrs if u != v})
    return feats.tolist(), edges, labels


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--format", choices=["geom-gcn", "planetoid"], required=True)
    p.add_argument("--src", required=True, help="directory holding the source files")
    p.add_argument("--name", help="planetoid dataset name, e.g. cora")
    p.add_argument("--out", required=True, help="output dataset directory")
    a = p.parse_args()
    if a.format == "geom-gcn":
        features, edges, labels = read_geom_gcn(a.src)
    else:
        if not a.name:
            sys.exit("--name is required for planetoid input")
        features, edges, labels = read_planetoid(a.src, a.name.lower())
    write_dataset(a.out, features, edges, labels)
    print("wrote %d nodes, %d edges to %s" % (len(features), len(edges), a.out))


if __name__ == "__main__":
    main()
