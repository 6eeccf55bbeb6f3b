#!/usr/bin/env python3
"""Convert the GraphSAGE release of PPI into the feras dataset layout.

Expects ppi-G.json, ppi-id_map.json, ppi-class_map.json and ppi-feats.npy in
the source directory (the files from the GraphSAGE `ppi.zip`). Writes
edges.txt, features.csv, labels.csv, roles.csv and meta.json.

    python3 scripts/convert_ppi.py path/to/ppi data/ppi
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def convert(src: Path, dst: Path, prefix: str = "ppi") -> dict:
    graph = json.loads((src / f"{prefix}-G.json").read_text())
    id_map = {str(k): int(v) for k, v in json.loads((src / f"{prefix}-id_map.json").read_text()).items()}
    class_map = json.loads((src / f"{prefix}-class_map.json").read_text())
    feats = np.load(src / f"{prefix}-feats.npy")

    nodes = graph["nodes"]
    n = len(nodes)
    if sorted(id_map.values()) != list(range(n)):
        sys.exit("id_map does not cover 0..n-1")
    if feats.shape[0] != n:
        sys.exit(f"features have {feats.shape[0]} rows, graph has {n} nodes")

    roles = [""] * n
    for node in nodes:
        i = id_map[str(node["id"])]
        roles[i] = "test" if node.get("test") else "val" if node.get("val") else "train"

    labels = np.zeros((n, len(next(iter(class_map.values())))), dtype=np.int8)
    for key, row in class_map.items():
        labels[id_map[str(key)]] = row

    edges = set()
    for link in graph["links"]:
        u, v = id_map[str(link["source"])], id_map[str(link["target"])]
        if u != v:
            edges.add((min(u, v), max(u, v)))

    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "edges.txt", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u} {v}\n")
    np.savetxt(dst / "features.csv", feats, delimiter=",", fmt="%.9g")
    np.savetxt(dst / "labels.csv", labels, delimiter=",", fmt="%d")
    (dst / "roles.csv").write_text("".join(r + "\n" for r in roles))
    (dst / "meta.json").write_text(json.dumps({"task": "multilabel"}))
    return {
        "nodes": n,
        "edges": len(edges),
        "features": feats.shape[1],
        "classes": labels.shape[1],
        **{r: roles.count(r) for r in ("train", "val", "test")},
    }


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", type=Path, help="directory with the GraphSAGE ppi-* files")
    p.add_argument("dst", type=Path, help="output dataset directory")
    p.add_argument("--prefix", default="ppi")
    args = p.parse_args()
    stats = convert(args.src, args.dst, args.prefix)
    print(", ".join(f"{k} {v}" for k, v in stats.items()))


if __name__ == "__main__":
    main()
