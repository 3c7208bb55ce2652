#!/usr/bin/env python3
"""Derive a labeled triplet-classification dataset from a link-prediction one.

Every dev/test fact is kept as a positive (label 1) and paired with one
corrupted fact (label 0) whose head or tail is replaced by a random entity,
re-drawing until the corruption is absent from all splits.  The train split
and the description files are copied unchanged.

    tools/make_tc_fixture.py data/umls data/umls_tc --seed 13
"""

import argparse
import random
import shutil
from pathlib import Path


def read_facts(path):
    with open(path, encoding="utf-8") as f:
        return [tuple(line.rstrip("\n").split("\t")[:3]) for line in f if line.strip()]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("source")
    parser.add_argument("target")
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args()

    src, dst = Path(args.source), Path(args.target)
    dst.mkdir(parents=True, exist_ok=True)
    for name in ("train.tsv", "entity2text.tsv", "relation2text.tsv"):
        shutil.copyfile(src / name, dst / name)

    with open(src / "entity2text.tsv", encoding="utf-8") as f:
        entities = [line.split("\t")[0] for line in f if line.strip()]
    splits = {name: read_facts(src / f"{name}.tsv") for name in ("train", "dev", "test")}
    known = set().union(*splits.values())

    rng = random.Random(args.seed)
    for name in ("dev", "test"):
        lines = []
        for h, r, t in splits[name]:
            lines.append(f"{h}\t{r}\t{t}\t1")
            while True:
                e = rng.choice(entities)
                corrupted = (e, r, t) if rng.random() < 0.5 else (h, r, e)
                if corrupted not in known:
                    break
            lines.append("\t".join(corrupted) + "\t0")
        (dst / f"{name}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
