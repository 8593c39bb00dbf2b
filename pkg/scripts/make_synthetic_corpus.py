#!/usr/bin/env python3
"""Emit a synthetic ReDial-format corpus plus its KG and alias tables.

Useful when no real dataset is on disk: the output of this script feeds
directly into `convrec preprocess --dataset redial`.
"""

import argparse

from convrec.synthdata import SynthConfig, write_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--conversations", type=int,
                        default=SynthConfig.num_conversations)
    parser.add_argument("--genres", type=int, default=SynthConfig.num_genres)
    parser.add_argument("--items-per-genre", type=int,
                        default=SynthConfig.items_per_genre)
    parser.add_argument("--seed", type=int, default=SynthConfig.seed)
    args = parser.parse_args()

    cfg = SynthConfig(num_conversations=args.conversations,
                      num_genres=args.genres,
                      items_per_genre=args.items_per_genre,
                      seed=args.seed)
    paths = write_corpus(cfg, args.out)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")


if __name__ == "__main__":
    main()
