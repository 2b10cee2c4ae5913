#!/usr/bin/env python3
"""Train PETS on continuous cart-pole and print the learning curve.

Equivalent to `mbrlkit train --config configs/cartpole.yaml`; kept as a
script so the run is easy to tweak inline.
"""

import argparse
import pathlib
import sys

from mbrlkit.algorithms import pets_run
from mbrlkit.config import load_config, to_pets_config

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=pathlib.Path,
                        default=ROOT / "configs" / "cartpole.yaml")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path("runs/cartpole"))
    args = parser.parse_args()

    cfg = to_pets_config(load_config(args.config), seed=args.seed)
    curve = pets_run(cfg, out_dir=args.out)
    print("trial  env_steps  return  train_epochs")
    for row in curve.rows:
        print(f"{row['trial']:5d}  {row['env_steps']:9d}  "
              f"{row['episode_return']:6.1f}  {row['train_epochs']:12d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
