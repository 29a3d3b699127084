"""Regenerate the shipped 50-dim demo embedding from the bundled rule packs."""

import argparse
import math

from semrobe.embedding import diameter
from semrobe.experiment import make_demo_embeddings
from semrobe.template_engine import data_path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(data_path("demo_embeddings.txt")))
    args = ap.parse_args()
    table = make_demo_embeddings(args.dim, args.seed)
    table.save(args.out)
    print(f"{len(table)} words, d={table.dim}, L2 diameter {diameter(table, 2):.2f}, "
          f"Linf diameter {diameter(table, math.inf):.2f} -> {args.out}")


if __name__ == "__main__":
    main()
