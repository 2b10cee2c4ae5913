import csv

import numpy as np
import pytest

from mbrlkit.data import ReplayBuffer, Transition, ValidationError
from mbrlkit.diagnostics import (EvaluationTable, dataset_evaluate,
                                 save_rollout_comparison, true_env_cem_control,
                                 visualize_rollout)
from mbrlkit.envs import CartPoleContinuousEnv, cartpole_reward, no_termination
from mbrlkit.models import (GaussianMLPEnsemble, ModelEnv, ModelTrainer,
                            TransitionRewardWrapper)
from mbrlkit.planning import CEMConfig, RandomAgent


def linear_wrapper(obs_dim=1, act_dim=1, deterministic=True):
    """Model predicting delta = action exactly (weights set by hand)."""
    model = GaussianMLPEnsemble(obs_dim + act_dim, obs_dim, ensemble_size=1,
                                num_layers=1, deterministic=deterministic,
                                rng=np.random.default_rng(0))
    model.members[0].weights[0][:] = 0.0
    model.members[0].weights[0][0, obs_dim] = 1.0
    model.members[0].biases[0][:] = 0.0
    return TransitionRewardWrapper(model, obs_dim, act_dim)


def linear_buffer(n=50, rng=None):
    rng = rng or np.random.default_rng(0)
    buf = ReplayBuffer(n)
    for _ in range(n):
        obs = rng.standard_normal(1)
        act = rng.standard_normal(1)
        buf.add(Transition(obs, act, obs + act, 0.0, False))
    return buf


class TestDatasetEvaluate:
    def test_perfect_model_zero_error(self):
        table = dataset_evaluate(linear_wrapper(), linear_buffer())
        assert np.all(table.mse < 1e-28)
        assert np.all(table.r2 > 1.0 - 1e-12)

    def test_summary_recomputable_from_pairs(self):
        rng = np.random.default_rng(3)
        wrapper = linear_wrapper()
        # corrupt the model slightly so errors are nonzero
        wrapper.model.members[0].biases[0][0] = 0.05
        table = dataset_evaluate(wrapper, linear_buffer(rng=rng))
        err = table.predicted - table.target
        assert np.allclose(table.mse, (err ** 2).mean(axis=0), rtol=0, atol=0)
        var = table.target.var(axis=0)
        assert np.allclose(table.r2, 1.0 - table.mse / var)

    def test_r2_high_after_training(self):
        rng = np.random.default_rng(0)
        model = GaussianMLPEnsemble(2, 1, ensemble_size=2, num_layers=2,
                                    hid_size=16, deterministic=True, rng=rng)
        wrapper = TransitionRewardWrapper(model, 1, 1)
        buf = linear_buffer(200, rng)
        wrapper.update_normalizer(buf.get_all())
        trainer = ModelTrainer(wrapper, lr=5e-3, elite_count=2)
        from mbrlkit.data import train_val_split
        train_iter, _ = train_val_split(buf, 0.0, 64, rng, ensemble_size=2)
        trainer.train(train_iter, None, num_epochs=200, patience=200)
        table = dataset_evaluate(wrapper, buf)
        assert np.all(table.r2 > 0.99)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            dataset_evaluate(linear_wrapper(), ReplayBuffer(4))

    def test_dim_mismatch_rejected(self):
        buf = ReplayBuffer(4)
        buf.add(Transition(np.zeros(3), np.zeros(1), np.zeros(3), 0.0, False))
        with pytest.raises(ValidationError):
            dataset_evaluate(linear_wrapper(), buf)

    def test_save_roundtrip(self, tmp_path):
        wrapper = linear_wrapper()
        wrapper.model.members[0].biases[0][0] = 0.1
        table = dataset_evaluate(wrapper, linear_buffer())
        table.save(tmp_path)
        with open(tmp_path / "dimension_0.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        predicted = np.array([float(r["predicted"]) for r in rows])
        target = np.array([float(r["target"]) for r in rows])
        assert np.array_equal(predicted, table.predicted[:, 0])
        assert np.array_equal(target, table.target[:, 0])
        # summary row reproduces the in-memory statistics exactly
        with open(tmp_path / "summary.csv", newline="") as f:
            summary = list(csv.DictReader(f))
        assert float(summary[0]["mse"]) == table.mse[0]
        assert float(summary[0]["r2"]) == table.r2[0]
        # and it is recomputable from the emitted pairs
        assert ((predicted - target) ** 2).mean() == pytest.approx(
            float(summary[0]["mse"]), rel=1e-15)


class FixedEnv:
    """True env with next_obs = obs + action, matching linear_wrapper."""

    def __init__(self):
        self.state = np.zeros(1)

    def reset(self, rng):
        self.state = np.array([0.5])
        return self.state.copy()

    def set_state(self, state):
        self.state = np.asarray(state, dtype=np.float64).copy()

    def step(self, action):
        self.state = self.state + action
        return self.state.copy(), 0.0, False


class TestVisualizeRollout:
    def make(self):
        wrapper = linear_wrapper()
        model_env = ModelEnv(wrapper, no_termination,
                             reward_fn=lambda a, o: np.zeros(len(o)))
        return model_env, FixedEnv(), RandomAgent(1, -1.0, 1.0)

    def test_shapes(self):
        model_env, env, _ = self.make()

        class PlanAgent(RandomAgent):
            def plan(self, obs, rng):
                return rng.uniform(-1, 1, size=(30, 1))

        actions, true_traj, model_trajs = visualize_rollout(
            model_env, env, PlanAgent(1, -1.0, 1.0), horizon=30,
            num_model_samples=3, rng=np.random.default_rng(0))
        assert actions.shape == (30, 1)
        assert true_traj.shape == (30, 1)
        assert model_trajs.shape == (3, 30, 1)

    def test_perfect_model_matches_true_env(self):
        model_env, env, _ = self.make()

        class PlanAgent(RandomAgent):
            def plan(self, obs, rng):
                return rng.uniform(-1, 1, size=(5, 1))

        _, true_traj, model_trajs = visualize_rollout(
            model_env, env, PlanAgent(1, -1.0, 1.0), horizon=5,
            num_model_samples=4, rng=np.random.default_rng(1))
        for m in range(4):
            assert np.allclose(model_trajs[m], true_traj, atol=1e-12)

    def test_deterministic_model_samples_identical(self):
        model_env, env, _ = self.make()

        class PlanAgent(RandomAgent):
            def plan(self, obs, rng):
                return rng.uniform(-1, 1, size=(6, 1))

        _, _, model_trajs = visualize_rollout(
            model_env, env, PlanAgent(1, -1.0, 1.0), horizon=6,
            num_model_samples=3, rng=np.random.default_rng(2))
        assert np.array_equal(model_trajs[0], model_trajs[1])
        assert np.array_equal(model_trajs[0], model_trajs[2])

    def test_short_plan_rejected(self):
        model_env, env, agent = self.make()  # RandomAgent plans 1 step
        with pytest.raises(ValidationError):
            visualize_rollout(model_env, env, agent, horizon=5,
                              num_model_samples=1,
                              rng=np.random.default_rng(0))

    def test_initial_obs_honored(self):
        model_env, env, _ = self.make()

        class ZeroPlan(RandomAgent):
            def plan(self, obs, rng):
                return np.zeros((3, 1))

        _, true_traj, model_trajs = visualize_rollout(
            model_env, env, ZeroPlan(1, -1.0, 1.0), horizon=3,
            num_model_samples=1, rng=np.random.default_rng(0),
            initial_obs=np.array([7.0]))
        assert np.allclose(true_traj, 7.0)
        assert np.allclose(model_trajs, 7.0, atol=1e-12)

    def test_save_comparison_csv(self, tmp_path):
        true_traj = np.arange(4, dtype=float).reshape(4, 1)
        model_trajs = np.stack([true_traj + 0.1, true_traj - 0.1])
        save_rollout_comparison(true_traj, model_trajs, tmp_path)
        with open(tmp_path / "rollout_dim_0.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["time", "true", "sample_0", "sample_1"]
        assert len(rows) == 5
        assert float(rows[1][1]) == 0.0
        assert float(rows[1][2]) == 0.1


class TestTrueEnvCEMControl:
    def test_zero_episodes(self):
        returns = true_env_cem_control(
            "cartpole_continuous",
            CEMConfig(population=10, elite_count=2, iterations=1), 5, 0)
        assert returns == []

    def test_deterministic(self):
        cfg = CEMConfig(population=30, elite_count=3, iterations=2,
                        initial_var=0.25)
        a = true_env_cem_control("cartpole_continuous", cfg, 5, 1, seed=3,
                                 trial_length=10)
        b = true_env_cem_control("cartpole_continuous", cfg, 5, 1, seed=3,
                                 trial_length=10)
        assert a == b

    def test_cartpole_balances(self):
        # modest settings already keep the pole up for a short trial
        cfg = CEMConfig(population=100, elite_count=10, iterations=3,
                        initial_var=0.25)
        returns = true_env_cem_control("cartpole_continuous", cfg, 15, 1,
                                       seed=0, trial_length=50)
        assert returns[0] == 50.0


class TestModelDistributionShift:
    def test_on_distribution_error_lower_than_off(self):
        # train on a narrow slice of state space, evaluate on and off it
        rng = np.random.default_rng(0)
        model = GaussianMLPEnsemble(2, 1, ensemble_size=2, num_layers=2,
                                    hid_size=16, deterministic=True, rng=rng)
        wrapper = TransitionRewardWrapper(model, 1, 1)

        def fill(buf, low, high, n=200):
            for _ in range(n):
                obs = rng.uniform(low, high, size=1)
                act = rng.uniform(-1, 1, size=1)
                buf.add(Transition(obs, act, np.sin(3 * obs) + act, 0.0,
                                   False))

        train_buf = ReplayBuffer(200)
        fill(train_buf, -1.0, 1.0)
        off_buf = ReplayBuffer(200)
        fill(off_buf, 3.0, 5.0)

        wrapper.update_normalizer(train_buf.get_all())
        from mbrlkit.data import train_val_split
        train_iter, _ = train_val_split(train_buf, 0.0, 64, rng,
                                        ensemble_size=2)
        trainer = ModelTrainer(wrapper, lr=5e-3, elite_count=2)
        trainer.train(train_iter, None, num_epochs=150, patience=150)

        on_mse = dataset_evaluate(wrapper, train_buf).mse.mean()
        off_mse = dataset_evaluate(wrapper, off_buf).mse.mean()
        assert on_mse < off_mse
