import math

import numpy as np
import pytest

from mimickit import demos as demos_io
from mimickit import nets, trpo
from mimickit.arm import ArmConfig, ArmEnv
from mimickit.trpo import (GaussianPolicy, RolloutBatch, TrainingFault, TrpoConfig,
                           ValueFn, collect_rollouts, compute_gae, conjugate_gradient,
                           fisher_vector_product, fit_value, mean_kl, mean_kl_grad,
                           record_demos, trpo_update)
from mimickit.zfilter import ZFilter

TINY_ARM = ArmConfig(episode_length=0.3)  # 10 control steps per episode


def synthetic_batch(rewards, dones, input_dim=3, action_dim=2, seed=0):
    rng = np.random.default_rng(seed)
    t = len(rewards)
    policy = GaussianPolicy.create(input_dim, action_dim, (4,), seed)
    inputs = rng.standard_normal((t, input_dim))
    means, log_std = policy.dist(inputs)
    actions = np.array([nets.gaussian_sample(means[i], log_std, rng) for i in range(t)])
    logps, _, _ = nets.gaussian_logprob(means, log_std, actions)
    return policy, RolloutBatch(
        policy_inputs=inputs, raw_obs=inputs, actions=actions,
        rewards=np.asarray(rewards, dtype=np.float64),
        task_rewards=np.asarray(rewards, dtype=np.float64),
        features=None, contexts=np.zeros(t, dtype=np.int64),
        dones=np.asarray(dones, dtype=bool), logps=logps, means=means,
        log_std=log_std, episode_returns=np.array([0.0]))


def brute_force_gae(rewards, values, dones, gamma, lam):
    """O(T^2) double-sum oracle: A_t = sum_k (gamma lam)^k delta_{t+k}."""
    t_total = len(rewards)
    deltas = np.empty(t_total)
    for t in range(t_total):
        next_v = 0.0 if dones[t] else values[t + 1]
        deltas[t] = rewards[t] + gamma * next_v - values[t]
    adv = np.zeros(t_total)
    for t in range(t_total):
        factor = 1.0
        for k in range(t, t_total):
            adv[t] += factor * deltas[k]
            if dones[k]:
                break
            factor *= gamma * lam
    return adv


class TestGae:
    def _batch_and_values(self, seed=3, t=60):
        rng = np.random.default_rng(seed)
        rewards = rng.standard_normal(t)
        dones = np.zeros(t, dtype=bool)
        dones[[19, 39, 59]] = True  # three whole episodes
        _, batch = synthetic_batch(rewards, dones, seed=seed)
        valuefn = ValueFn.create(3, (4,), seed + 1)
        return batch, valuefn

    def test_lambda_zero_is_td_residual(self):
        batch, valuefn = self._batch_and_values()
        adv, _ = compute_gae(batch, valuefn, gamma=0.9, lam=0.0, normalize=False)
        values = valuefn.predict(batch.policy_inputs)
        for t in range(batch.size):
            next_v = 0.0 if batch.dones[t] else values[t + 1]
            assert math.isclose(adv[t], batch.rewards[t] + 0.9 * next_v - values[t],
                                rel_tol=0, abs_tol=1e-12)

    def test_gamma_lambda_one_zero_value_is_reward_to_go(self):
        batch, valuefn = self._batch_and_values()
        zero_v = ValueFn(spec=valuefn.spec, params=np.zeros_like(valuefn.params))
        adv, _ = compute_gae(batch, zero_v, gamma=1.0, lam=1.0, normalize=False)
        expected = np.zeros(batch.size)
        acc = 0.0
        for t in range(batch.size - 1, -1, -1):
            if batch.dones[t]:
                acc = 0.0
            acc += batch.rewards[t]
            expected[t] = acc
        assert np.allclose(adv, expected, atol=1e-12)

    def test_matches_brute_force_double_sum(self):
        batch, valuefn = self._batch_and_values(seed=11)
        gamma, lam = 0.97, 0.8
        adv, targets = compute_gae(batch, valuefn, gamma, lam, normalize=False)
        values = valuefn.predict(batch.policy_inputs)
        oracle = brute_force_gae(batch.rewards, values, batch.dones, gamma, lam)
        assert np.max(np.abs(adv - oracle)) <= 1e-10
        assert np.allclose(targets, oracle + values, atol=1e-10)

    def test_normalization(self):
        batch, valuefn = self._batch_and_values(seed=5)
        adv, _ = compute_gae(batch, valuefn, 0.99, 0.95, normalize=True)
        assert abs(adv.mean()) <= 1e-10
        assert abs(adv.std() - 1.0) <= 1e-6


class TestConjugateGradient:
    def test_identity_single_iteration(self):
        b = np.array([1.0, -2.0, 3.0])
        x, res = conjugate_gradient(lambda v: v, b, iterations=1)
        assert np.allclose(x, b, atol=1e-12) and res <= 1e-12

    def test_diagonal_analytic(self):
        a = np.diag([1.0, 2.0])
        x, _ = conjugate_gradient(lambda v: a @ v, np.array([1.0, 2.0]), iterations=10)
        assert np.allclose(x, [1.0, 1.0], atol=1e-12)

    def test_random_spd_matches_direct_solve(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            m = rng.standard_normal((20, 20))
            a = m @ m.T + 20 * np.eye(20)
            b = rng.standard_normal(20)
            x, _ = conjugate_gradient(lambda v: a @ v, b, iterations=200, residual_tol=1e-14)
            assert np.max(np.abs(x - np.linalg.solve(a, b))) <= 1e-8

    def test_nonfinite_operator_faults(self):
        with pytest.raises(TrainingFault):
            conjugate_gradient(lambda v: v * np.nan, np.ones(3), iterations=5)

    def test_zero_rhs(self):
        x, res = conjugate_gradient(lambda v: v, np.zeros(4), iterations=5)
        assert np.all(x == 0.0) and res == 0.0


class TestFisherVectorProduct:
    def _setup(self, seed=0, t=30):
        rng = np.random.default_rng(seed)
        policy = GaussianPolicy.create(4, 2, (8,), seed)
        inputs = rng.standard_normal((t, 4))
        old_means, old_log_std = policy.dist(inputs)
        return policy, inputs, old_means, old_log_std, rng

    def test_zero_vector(self):
        policy, inputs, *_ = self._setup()
        hv = fisher_vector_product(policy, inputs, np.zeros(policy.params.size), damping=0.1)
        assert np.all(hv == 0.0)

    def test_matches_finite_difference_of_kl_gradient(self):
        policy, inputs, old_means, old_log_std, rng = self._setup(seed=7)
        v = rng.standard_normal(policy.params.size)
        hv = fisher_vector_product(policy, inputs, v, damping=0.0)
        h = 1e-5
        gp = mean_kl_grad(policy, inputs, old_means, old_log_std, params=policy.params + h * v)
        gm = mean_kl_grad(policy, inputs, old_means, old_log_std, params=policy.params - h * v)
        fd = (gp - gm) / (2 * h)
        assert np.max(np.abs(hv - fd)) / np.max(np.abs(fd)) <= 1e-4

    def test_kl_grad_matches_finite_difference_of_kl(self):
        # Sanity for the oracle itself: analytic KL gradient vs FD of mean KL.
        policy, inputs, old_means, old_log_std, rng = self._setup(seed=9)
        at = policy.params + 0.05 * rng.standard_normal(policy.params.size)
        grad = mean_kl_grad(policy, inputs, old_means, old_log_std, params=at)
        h = 1e-6
        fd = np.zeros_like(grad)
        for i in range(at.size):
            e = np.zeros_like(at)
            e[i] = h
            fd[i] = (mean_kl(policy, inputs, old_means, old_log_std, params=at + e)
                     - mean_kl(policy, inputs, old_means, old_log_std, params=at - e)) / (2 * h)
        assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) <= 1e-6

    def test_symmetric_and_psd(self):
        policy, inputs, *_ , rng = self._setup(seed=3)
        for _ in range(5):
            u = rng.standard_normal(policy.params.size)
            v = rng.standard_normal(policy.params.size)
            hu = fisher_vector_product(policy, inputs, u, damping=0.0)
            hv = fisher_vector_product(policy, inputs, v, damping=0.0)
            assert abs(u @ hv - v @ hu) <= 1e-8 * max(1.0, abs(u @ hv))
            assert v @ hv >= -1e-12


class TestFitValue:
    def test_constant_targets_fit_below_tolerance(self):
        rng = np.random.default_rng(0)
        inputs = rng.standard_normal((200, 4))
        vf = ValueFn.create(4, (16, 8), seed=1)
        fitted, info = fit_value(vf, inputs, np.full(200, 0.5), epochs=25, step_size=0.01)
        assert info["final_loss"] < 1e-3
        assert np.max(np.abs(fitted.predict(inputs) - 0.5)) < 0.05

    def test_zero_epochs_leaves_params_unchanged(self):
        vf = ValueFn.create(4, (8,), seed=2)
        before = vf.params.copy()
        fitted, _ = fit_value(vf, np.zeros((5, 4)), np.ones(5), epochs=0, step_size=0.01)
        assert np.array_equal(fitted.params, before)

    def test_loss_finite_and_not_worse(self):
        rng = np.random.default_rng(4)
        inputs = rng.standard_normal((100, 3))
        targets = rng.standard_normal(100) * 50.0
        vf = ValueFn.create(3, (8,), seed=0)
        fitted, info = fit_value(vf, inputs, targets, epochs=10, step_size=0.01)
        assert math.isfinite(info["final_loss"])
        assert info["final_loss"] <= info["initial_loss"]

    def test_divergent_step_size_faults(self):
        rng = np.random.default_rng(4)
        inputs = rng.standard_normal((50, 3))
        targets = rng.standard_normal(50)
        vf = ValueFn.create(3, (8,), seed=0)
        with pytest.raises(TrainingFault):
            fit_value(vf, inputs, targets, epochs=50, step_size=1e3)


class TestCollectRollouts:
    def _policy_env(self, seed=0):
        env = ArmEnv(TINY_ARM)
        policy = GaussianPolicy.create(env.obs_dim, env.action_dim, (8,), seed)
        return policy, env

    def test_whole_episode_rule(self):
        policy, env = self._policy_env()
        batch = collect_rollouts(policy, env, 10, np.random.default_rng(0),
                                 obs_filter=ZFilter(env.obs_dim))
        assert batch.size == TINY_ARM.n_ctrl_steps  # one whole 10-step episode
        batch = collect_rollouts(policy, env, 11, np.random.default_rng(0),
                                 obs_filter=ZFilter(env.obs_dim))
        assert batch.size == 2 * TINY_ARM.n_ctrl_steps

    def test_deterministic_given_seed(self):
        policy, env = self._policy_env()
        batches = []
        for _ in range(2):
            zf = ZFilter(env.obs_dim)
            batches.append(collect_rollouts(policy, ArmEnv(TINY_ARM), 25,
                                            np.random.default_rng(7), obs_filter=zf))
        a, b = batches
        for key in ("policy_inputs", "actions", "rewards", "logps", "means"):
            assert np.array_equal(getattr(a, key), getattr(b, key))

    def test_boundary_flags_count_episodes(self):
        policy, env = self._policy_env()
        batch = collect_rollouts(policy, env, 35, np.random.default_rng(1),
                                 obs_filter=ZFilter(env.obs_dim))
        assert batch.n_episodes == 4
        assert batch.episode_returns.shape == (4,)
        # flags sit exactly at episode ends
        assert np.array_equal(np.where(batch.dones)[0], np.array([9, 19, 29, 39]))

    def test_filter_updates_online(self):
        policy, env = self._policy_env()
        zf = ZFilter(env.obs_dim)
        batch = collect_rollouts(policy, env, 10, np.random.default_rng(2), obs_filter=zf)
        assert zf.count == batch.size

    def test_worker_split_deterministic_and_merges_filter(self):
        policy, env = self._policy_env()
        results = []
        for _ in range(2):
            zf = ZFilter(env.obs_dim)
            batch = collect_rollouts(policy, ArmEnv(TINY_ARM), 40, np.random.default_rng(3),
                                     obs_filter=zf, workers=2)
            results.append((batch, zf))
        (b1, f1), (b2, f2) = results
        assert np.array_equal(b1.actions, b2.actions)
        assert f1.count == b1.size == f2.count
        assert np.array_equal(f1.mean, f2.mean)

    def test_custom_reward_fn(self):
        policy, env = self._policy_env()
        batch = collect_rollouts(policy, env, 10, np.random.default_rng(4),
                                 obs_filter=ZFilter(env.obs_dim),
                                 reward_fn=lambda s, a, ns: 42.0)
        assert np.all(batch.rewards == 42.0)
        assert not np.any(batch.task_rewards == 42.0)


class TestTrpoUpdate:
    def test_zero_advantages_leave_params_unchanged(self):
        policy, batch = synthetic_batch(np.zeros(40), [False] * 39 + [True], seed=1)
        new_policy, diag = trpo_update(policy, batch, np.zeros(40), TrpoConfig())
        assert new_policy.params is policy.params
        assert not diag.accepted and diag.grad_norm <= 1e-12

    def test_accepted_step_respects_kl_and_improves(self):
        rng = np.random.default_rng(2)
        config = TrpoConfig()
        policy, batch = synthetic_batch(rng.standard_normal(200), [False] * 199 + [True], seed=2)
        adv = rng.standard_normal(200)
        new_policy, diag = trpo_update(policy, batch, adv, config)
        assert diag.accepted
        assert diag.kl <= config.kl_radius + 1e-12
        assert diag.improvement > 0.0
        measured = mean_kl(policy, batch.policy_inputs, batch.means, batch.log_std,
                           params=new_policy.params)
        assert measured <= config.kl_radius + 1e-12

    def test_one_dim_toy_mean_increases_with_positive_advantage_on_larger_actions(self):
        rng = np.random.default_rng(5)
        policy = GaussianPolicy.create(1, 1, (), seed=3)
        t = 500
        inputs = np.ones((t, 1))
        means, log_std = policy.dist(inputs)
        actions = np.array([nets.gaussian_sample(means[i], log_std, rng) for i in range(t)])
        logps, _, _ = nets.gaussian_logprob(means, log_std, actions)
        batch = RolloutBatch(policy_inputs=inputs, raw_obs=inputs, actions=actions,
                             rewards=np.zeros(t), task_rewards=np.zeros(t), features=None,
                             contexts=np.zeros(t, dtype=np.int64),
                             dones=np.array([False] * (t - 1) + [True]), logps=logps,
                             means=means, log_std=log_std, episode_returns=np.zeros(1))
        adv = np.sign(actions[:, 0] - means[:, 0])
        old_mean = policy.mean_action(np.ones(1))[0]
        new_policy, diag = trpo_update(policy, batch, adv, TrpoConfig())
        assert diag.accepted
        assert new_policy.mean_action(np.ones(1))[0] > old_mean

    def test_nonfinite_advantages_fault(self):
        policy, batch = synthetic_batch(np.zeros(10), [False] * 9 + [True])
        with pytest.raises(TrainingFault):
            trpo_update(policy, batch, np.full(10, np.nan), TrpoConfig())


class TestRecordDemos:
    def test_row_count_and_width(self, tmp_path):
        env = ArmEnv(TINY_ARM)
        policy = GaussianPolicy.create(env.obs_dim, env.action_dim, (8,), 0)
        zf = ZFilter(env.obs_dim)
        demos = record_demos(policy, env, 3, "END_EFFECTOR_TARGET", context_label=0,
                             rng=np.random.default_rng(0), obs_filter=zf)
        assert demos.size == 3 * TINY_ARM.n_ctrl_steps
        assert demos.rows.shape[1] == 2
        assert demos.dt == TINY_ARM.dt_ctrl
        assert np.all(demos.contexts == 0)
        # round trip through the common on-disk format
        demos_io.write_demoset(demos, str(tmp_path / "d"))
        assert demos_io.read_demoset(str(tmp_path / "d")) == demos

    def test_reproducible(self):
        env = ArmEnv(TINY_ARM)
        policy = GaussianPolicy.create(env.obs_dim, env.action_dim, (8,), 0)
        d1 = record_demos(policy, ArmEnv(TINY_ARM), 2, "STATE_ACTION", 0,
                          np.random.default_rng(5), obs_filter=ZFilter(env.obs_dim))
        d2 = record_demos(policy, ArmEnv(TINY_ARM), 2, "STATE_ACTION", 0,
                          np.random.default_rng(5), obs_filter=ZFilter(env.obs_dim))
        assert d1 == d2

    def test_frozen_filter(self):
        env = ArmEnv(TINY_ARM)
        policy = GaussianPolicy.create(env.obs_dim, env.action_dim, (8,), 0)
        zf = ZFilter(env.obs_dim)
        zf.update(np.ones(env.obs_dim))
        record_demos(policy, env, 1, "FULL_STATE", 0, np.random.default_rng(0), obs_filter=zf)
        assert zf.count == 1


class TestExpertTrainer:
    def test_zero_iterations_returns_initialized_policy(self):
        policy, _, metrics = trpo.train_rl_expert(TINY_ARM, TrpoConfig(samples_per_iteration=20),
                                                  iterations=0, seed=0)
        fresh = trpo.ExpertTrainer(TINY_ARM, TrpoConfig(samples_per_iteration=20), seed=0)
        assert np.array_equal(policy.params, fresh.policy.params)
        assert metrics == []

    def test_metrics_rows_per_iteration(self):
        config = TrpoConfig(samples_per_iteration=20, value_fit_epochs=2)
        trainer = trpo.ExpertTrainer(TINY_ARM, config, policy_hidden=(8,), value_hidden=(8,), seed=0)
        rows = trainer.run(3)
        assert len(rows) == 3
        assert [r["iteration"] for r in rows] == [1, 2, 3]
        assert all(set(trpo.METRIC_COLUMNS) == set(r) for r in rows)

    def test_seeded_rerun_bit_identical(self):
        config = TrpoConfig(samples_per_iteration=20, value_fit_epochs=2)
        runs = []
        for _ in range(2):
            trainer = trpo.ExpertTrainer(TINY_ARM, config, policy_hidden=(8,), value_hidden=(8,), seed=9)
            trainer.run(3)
            runs.append((trainer.policy.params.copy(), trainer.metrics))
        assert np.array_equal(runs[0][0], runs[1][0])
        for r1, r2 in zip(runs[0][1], runs[1][1]):
            for key in trpo.METRIC_COLUMNS:
                if key != "wallclock_s":
                    assert r1[key] == r2[key] or (math.isnan(r1[key]) and math.isnan(r2[key]))
