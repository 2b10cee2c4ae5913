#!/usr/bin/env python3
"""Compare a trained model's open-loop rollouts against the true dynamics.

Loads a checkpoint produced by a training run, plans one action sequence,
applies it to both the real environment and a set of model particles, and
writes per-dimension CSV traces.
"""

import argparse
import pathlib
import sys

import numpy as np

from mbrlkit.config import load_config, to_pets_config
from mbrlkit.diagnostics import save_rollout_comparison, visualize_rollout
from mbrlkit.envs import make_env
from mbrlkit.models import ModelEnv, load_model
from mbrlkit.planning import create_mpc_agent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True, type=pathlib.Path)
    parser.add_argument("--model", required=True, type=pathlib.Path)
    parser.add_argument("--horizon", type=int, default=30)
    parser.add_argument("--samples", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path("rollout_comparison"))
    args = parser.parse_args()

    cfg = load_config(args.config)
    pets_cfg = to_pets_config(cfg, seed=args.seed)
    wrapper = load_model(args.model)
    env, term_fn, reward_fn = make_env(cfg.env_name)
    model_env = ModelEnv(
        wrapper, term_fn,
        reward_fn=None if wrapper.learned_rewards else reward_fn)
    agent = create_mpc_agent(
        model_env, args.horizon, env.spec.act_dim, env.spec.action_low,
        env.spec.action_high, particles=pets_cfg.particles,
        cem_config=pets_cfg.cem, sample=not wrapper.model.deterministic)
    rng = np.random.default_rng(args.seed)
    _, true_traj, model_trajs = visualize_rollout(
        model_env, env, agent, args.horizon, args.samples, rng,
        sample=not wrapper.model.deterministic)
    save_rollout_comparison(true_traj, model_trajs, args.out)
    print(f"wrote {true_traj.shape[1]} dimension traces to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
