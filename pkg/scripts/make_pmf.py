#!/usr/bin/env python3
"""
Write a joint pmf document (JSON) for Leaklab configs and network files.

- dsbs:         doubly symmetric binary pair, crossover --p
- markov_chain: X -> Y -> Z binary chain, crossovers --p and --q
- identical:    --sources copies of one uniform symbol (--size letters)
- random:       Dirichlet(1) table over --sizes, seeded by --seed

Usage:
  python3 scripts/make_pmf.py dsbs --p 0.1 --out pmfs/dsbs.json
  python3 scripts/make_pmf.py random --sizes 2,2,2 --seed 3 --out pmfs/r3.json
"""
from __future__ import annotations
import argparse
from pathlib import Path
import sys
from typing import Sequence

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from app.engine.probcore import JointPmf  # noqa: E402

KINDS = ("dsbs", "markov_chain", "identical", "random")


def parse_sizes(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_pmf(kind: str, p: float = 0.1, q: float = 0.1, sources: int = 2, size: int = 2,
              sizes: Sequence[int] = (2, 2), seed: int = 0) -> JointPmf:
    if kind == "dsbs":
        return JointPmf.dsbs(p)
    if kind == "markov_chain":
        return JointPmf.markov_chain(p, q)
    if kind == "identical":
        return JointPmf.identical(sources, size)
    if kind == "random":
        return JointPmf.random(tuple(sizes), np.random.default_rng(seed))
    raise ValueError(f"unknown pmf kind '{kind}', expected one of {KINDS}")


def write_pmf(pmf: JointPmf, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pmf.to_json() + "\n", encoding="utf-8")
    print(f"Wrote {path}: {pmf.num_sources} sources, alphabets {pmf.alphabet_sizes}")


def main(argv: Sequence[str] | None = None) -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument('kind', choices=KINDS)
    parser.add_argument('--p', type=float, default=0.1)
    parser.add_argument('--q', type=float, default=0.1)
    parser.add_argument('--sources', type=int, default=2)
    parser.add_argument('--size', type=int, default=2)
    parser.add_argument('--sizes', type=parse_sizes, default=(2, 2))
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', type=Path, default=Path('pmf.json'))
    args = parser.parse_args(argv)

    pmf = build_pmf(args.kind, args.p, args.q, args.sources, args.size, args.sizes, args.seed)
    write_pmf(pmf, args.out)


if __name__ == '__main__':
    main()
