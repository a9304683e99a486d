#!/usr/bin/env python3
"""Emit a planted synthetic graph as the nodes.tsv / edges.tsv pair the CLI
consumes; handy for exercising the full command pipeline."""

import argparse
from pathlib import Path

from pathgat.graph import save_hetein
from pathgat.synthetic import planted_hetein


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--users", type=int, default=100)
    ap.add_argument("--recipes", type=int, default=200)
    ap.add_argument("--ingredients", type=int, default=50)
    ap.add_argument("--out", required=True, help="output directory")
    args = ap.parse_args()

    g, _ = planted_hetein(args.seed, n_users=args.users, n_recipes=args.recipes,
                          n_ingredients=args.ingredients)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_hetein(g, out / "nodes.tsv", out / "edges.tsv")
    print(f"wrote {out}/nodes.tsv and {out}/edges.tsv "
          f"({g.num_edges('user-recipe')} interactions)")


if __name__ == "__main__":
    main()
