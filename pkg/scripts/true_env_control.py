#!/usr/bin/env python3
"""Run CEM-based MPC directly on the true dynamics (no learned model).

Useful as a planner sanity check and as an upper bound on what the learned
model can achieve.
"""

import argparse
import sys

from mbrlkit.diagnostics import true_env_cem_control
from mbrlkit.planning import CEMConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--env", default="cartpole_continuous")
    parser.add_argument("--horizon", type=int, default=25)
    parser.add_argument("--episodes", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--population", type=int, default=200)
    parser.add_argument("--elites", type=int, default=20)
    parser.add_argument("--iterations", type=int, default=5)
    args = parser.parse_args()

    cfg = CEMConfig(population=args.population, elite_count=args.elites,
                    iterations=args.iterations, initial_var=0.25)
    returns = true_env_cem_control(args.env, cfg, args.horizon,
                                   args.episodes, seed=args.seed)
    for i, ret in enumerate(returns):
        print(f"episode {i}: return {ret:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
