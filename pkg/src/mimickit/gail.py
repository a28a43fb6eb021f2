"""Context-conditioned adversarial imitation training.

Each iteration: collect rollouts under scheduled contexts, replace the
environment reward with the discriminator reward ``min(-log(1 - D(z, c)),
clip)``, run GAE + value fit + a TRPO policy step, then take M adaptive-moment
gradient steps on the discriminator's binary cross-entropy (demonstration rows
labeled 1, generated rows 0). The task reward is never shown to the learner;
it is logged for evaluation only.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import features as feat
from . import nets, trpo
from .arm import ArmEnv
from .demos import DemoSet
from .nets import MlpSpec
from .zfilter import ZFilter

log = logging.getLogger(__name__)


class LayoutMismatchError(ValueError):
    """Demonstration feature layout does not match the configured mask."""


@dataclass(frozen=True)
class GailConfig:
    iterations: int = 300
    disc_updates: int = 5              # discriminator steps per iteration (M)
    disc_step_size: float = 1e-3
    disc_minibatch: int = 256
    reward_clip: float = 10.0
    feature_mask: str = feat.END_EFFECTOR_TARGET
    context_switch_period: float = 2.0
    demo_subsample_seed: int = 0
    filter_disc_inputs: bool = True
    checkpoint_interval: int = 50

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.disc_updates < 1:
            raise ValueError("disc_updates must be >= 1")
        if self.reward_clip <= 0.0:
            raise ValueError("reward_clip must be > 0")
        if self.disc_minibatch < 1 or self.disc_step_size <= 0.0:
            raise ValueError("bad discriminator minibatch/step size")
        if self.context_switch_period <= 0.0:
            raise ValueError("context_switch_period must be > 0")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        feat.validate_mask(self.feature_mask)


@dataclass
class Discriminator:
    """Logistic-output classifier over (masked features, context one-hot)."""

    spec: MlpSpec
    params: np.ndarray
    mask: str
    context_k: int
    zfilter: ZFilter | None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    adam_t: int = 0

    def __post_init__(self):
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.params)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.params)

    @classmethod
    def create(cls, feature_width: int, context_k: int, hidden, seed,
               mask: str, filter_inputs: bool = True) -> "Discriminator":
        spec = MlpSpec(feature_width + context_k, tuple(hidden), 1, head="logistic")
        return cls(spec=spec, params=nets.init_params(spec, seed), mask=mask,
                   context_k=context_k,
                   zfilter=ZFilter(feature_width) if filter_inputs else None)

    @property
    def feature_width(self) -> int:
        return self.spec.input_dim - self.context_k


def _one_hot(contexts, k: int) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=np.int64).reshape(-1)
    if contexts.size and (contexts.min() < 0 or contexts.max() >= k):
        raise ValueError(f"context labels must lie in [0, {k})")
    out = np.zeros((contexts.size, k))
    out[np.arange(contexts.size), contexts] = 1.0
    return out


def disc_input(disc: Discriminator, z, contexts) -> np.ndarray:
    """Filter features (frozen statistics) and append the context one-hot."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != disc.feature_width:
        raise ValueError(f"feature width {z.shape[1]} does not match discriminator "
                         f"({disc.feature_width})")
    if disc.zfilter is not None:
        z = disc.zfilter.apply(z)
    return np.hstack([z, _one_hot(contexts, disc.context_k)])


def disc_logits(disc: Discriminator, z, contexts) -> np.ndarray:
    lin = replace(disc.spec, head="linear")
    return nets.forward(lin, disc.params, disc_input(disc, z, contexts))[:, 0]


def disc_forward(disc: Discriminator, z, contexts) -> np.ndarray:
    """P(row is demonstration data); strictly inside (0, 1)."""
    return nets.sigmoid(disc_logits(disc, z, contexts))


def imitation_rewards(disc: Discriminator, features: np.ndarray, contexts: np.ndarray,
                      clip: float = 10.0) -> np.ndarray:
    """r = min(-log(1 - D(z, c)), clip); non-negative by construction."""
    logits = disc_logits(disc, features, contexts)
    return np.minimum(np.logaddexp(0.0, logits), clip)


def disc_loss_grad(disc: Discriminator, gen_z, gen_c, demo_z, demo_c):
    """Binary cross-entropy over a generated/demonstration pair of minibatches.

    loss = -mean log(1 - D(gen)) - mean log D(demo); gradients are exact,
    computed at the logits for numerical stability.
    """
    gen_x = disc_input(disc, gen_z, gen_c)
    demo_x = disc_input(disc, demo_z, demo_c)
    lin = replace(disc.spec, head="linear")
    gen_logit = nets.forward(lin, disc.params, gen_x)[:, 0]
    demo_logit = nets.forward(lin, disc.params, demo_x)[:, 0]
    n_gen, n_demo = gen_logit.size, demo_logit.size
    loss = float(np.mean(np.logaddexp(0.0, gen_logit)) + np.mean(np.logaddexp(0.0, -demo_logit)))
    g_gen = (nets.sigmoid(gen_logit) / n_gen)[:, None]
    g_demo = ((nets.sigmoid(demo_logit) - 1.0) / n_demo)[:, None]
    grad_gen, _ = nets.backward(disc.spec, disc.params, gen_x, g_gen, at_logits=True)
    grad_demo, _ = nets.backward(disc.spec, disc.params, demo_x, g_demo, at_logits=True)
    return loss, grad_gen + grad_demo


def disc_update(disc: Discriminator, gen_features: np.ndarray, gen_contexts: np.ndarray,
                demos: DemoSet, m_updates: int, step_size: float,
                rng: np.random.Generator, minibatch: int = 256) -> dict:
    """M adaptive-moment gradient steps on fresh balanced minibatches.

    Minibatches are drawn uniformly with replacement from the generated batch
    and the demonstration set; the input z-filter is updated from both sides
    before each step. Mutates ``disc`` in place and returns summary stats
    (loss at the last step, balanced accuracy, mean D on each side).
    """
    if demos.size == 0:
        raise ValueError("demonstration set is empty")
    n_gen = gen_features.shape[0]
    loss = float("nan")
    for _ in range(m_updates):
        mb = min(minibatch, n_gen, demos.size)
        gen_idx = rng.integers(0, n_gen, size=mb)
        demo_idx = rng.integers(0, demos.size, size=mb)
        gen_z, gen_c = gen_features[gen_idx], gen_contexts[gen_idx]
        demo_z, demo_c = demos.rows[demo_idx], demos.contexts[demo_idx]
        if disc.zfilter is not None:
            disc.zfilter.update_batch(gen_z)
            disc.zfilter.update_batch(demo_z)
        loss, grad = disc_loss_grad(disc, gen_z, gen_c, demo_z, demo_c)
        disc.adam_t += 1
        disc.adam_m = 0.9 * disc.adam_m + 0.1 * grad
        disc.adam_v = 0.999 * disc.adam_v + 0.001 * grad * grad
        m_hat = disc.adam_m / (1.0 - 0.9 ** disc.adam_t)
        v_hat = disc.adam_v / (1.0 - 0.999 ** disc.adam_t)
        disc.params = disc.params - step_size * m_hat / (np.sqrt(v_hat) + 1e-8)

    d_gen = disc_forward(disc, gen_features, gen_contexts)
    d_demo = disc_forward(disc, demos.rows, demos.contexts)
    return {
        "discriminator_loss": loss,
        "discriminator_accuracy": 0.5 * (float(np.mean(d_demo > 0.5)) + float(np.mean(d_gen <= 0.5))),
        "mean_D_on_gen": float(d_gen.mean()),
        "mean_D_on_demo": float(d_demo.mean()),
    }


def context_schedule(episode_length: float, dt: float, switch_period: float,
                     k: int, rng: np.random.Generator) -> np.ndarray:
    """Per-timestep contexts: uniform over K, re-drawn at switch_period multiples."""
    if switch_period <= 0.0:
        raise ValueError("switch_period must be > 0")
    n_steps = int(math.floor(episode_length / dt + 1e-9))
    segments = int(math.floor(((n_steps - 1) * dt + 1e-9) / switch_period)) + 1
    draws = rng.integers(0, k, size=segments)
    steps = np.arange(n_steps)
    return draws[np.minimum((steps * dt / switch_period + 1e-9).astype(np.int64), segments - 1)]


class GailTrainer:
    """The adversarial imitation loop over one environment and one DemoSet."""

    def __init__(self, env_config, demos: DemoSet, gail_config: GailConfig,
                 trpo_config: trpo.TrpoConfig, *, policy_hidden=(100, 60),
                 value_hidden=(100, 60), disc_hidden=(100, 100), seed: int = 0,
                 workers: int = 1):
        self.env = ArmEnv(env_config)
        expected = feat.feature_names(gail_config.feature_mask, env_config.n_links)
        if list(demos.feature_names) != expected:
            raise LayoutMismatchError(
                f"demo layout {demos.feature_names} does not match mask "
                f"{gail_config.feature_mask} layout {expected}")
        self.demos = demos
        self.config = gail_config
        self.trpo_config = trpo_config
        self.workers = workers
        self.context_k = demos.context_k

        seeds = np.random.SeedSequence(seed).spawn(4)
        obs_dim = self.env.obs_dim
        self.policy = trpo.GaussianPolicy.create(obs_dim + self.context_k,
                                                 self.env.action_dim, policy_hidden, seeds[0])
        self.valuefn = trpo.ValueFn.create(obs_dim + self.context_k, value_hidden, seeds[1])
        self.disc = Discriminator.create(len(expected), self.context_k, disc_hidden,
                                         seeds[2], gail_config.feature_mask,
                                         gail_config.filter_disc_inputs)
        self.rng = np.random.default_rng(seeds[3])
        self.disc_rng = np.random.default_rng(
            np.random.SeedSequence(gail_config.demo_subsample_seed))
        self.obs_filter = ZFilter(obs_dim)
        self.iteration = 0
        self.metrics: list[dict] = []
        self.last_diagnostics: trpo.TrpoDiagnostics | None = None

    def _schedule(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.env.config
        return context_schedule(cfg.n_ctrl_steps * cfg.dt_ctrl, cfg.dt_ctrl,
                                self.config.context_switch_period, self.context_k, rng)

    def run(self, n_iterations: int, checkpoint_fn=None) -> list[dict]:
        rows = []
        for _ in range(n_iterations):
            start = time.perf_counter()
            batch = trpo.collect_rollouts(
                self.policy, self.env, self.trpo_config.samples_per_iteration, self.rng,
                obs_filter=self.obs_filter, context_k=self.context_k,
                context_schedule=self._schedule, feature_mask=self.config.feature_mask,
                workers=self.workers)
            batch.rewards = imitation_rewards(self.disc, batch.features, batch.contexts,
                                              self.config.reward_clip)
            advantages, targets = compute_gae_for(batch, self.valuefn, self.trpo_config)
            self.valuefn, fit_info = trpo.fit_value(
                self.valuefn, batch.policy_inputs, targets,
                self.trpo_config.value_fit_epochs, self.trpo_config.value_step_size)
            self.policy, diag = trpo.trpo_update(self.policy, batch, advantages,
                                                 self.trpo_config)
            self.last_diagnostics = diag
            disc_stats = disc_update(self.disc, batch.features, batch.contexts,
                                     self.demos, self.config.disc_updates,
                                     self.config.disc_step_size, self.disc_rng,
                                     minibatch=self.config.disc_minibatch)
            self.iteration += 1
            row = {
                "iteration": self.iteration,
                "mean_episode_task_return": float(batch.episode_returns.mean()),
                "mean_imitation_reward": float(batch.rewards.mean()),
                "kl": diag.kl,
                "surrogate_improvement": diag.improvement,
                "value_loss": fit_info["final_loss"],
                "entropy": nets.gaussian_entropy(self.policy.log_std),
                "wallclock_s": time.perf_counter() - start,
                **disc_stats,
            }
            rows.append(row)
            self.metrics.append(row)
            log.info("gail iter %d task %.3f imit %.3f D(gen) %.3f D(demo) %.3f",
                     self.iteration, row["mean_episode_task_return"],
                     row["mean_imitation_reward"], row["mean_D_on_gen"], row["mean_D_on_demo"])
            if checkpoint_fn is not None and self.iteration % self.config.checkpoint_interval == 0:
                checkpoint_fn(self)
        return rows


GAIL_METRIC_COLUMNS = trpo.METRIC_COLUMNS + [
    "discriminator_loss", "discriminator_accuracy", "mean_D_on_gen", "mean_D_on_demo"]


def compute_gae_for(batch, valuefn, trpo_config: trpo.TrpoConfig):
    return trpo.compute_gae(batch, valuefn, trpo_config.gamma, trpo_config.lam,
                            trpo_config.normalize_advantages)


def gail_train(env_config, demos: DemoSet, gail_config: GailConfig,
               trpo_config: trpo.TrpoConfig, seed: int = 0, **trainer_kwargs):
    """Run the full loop; returns (policy, discriminator, metrics)."""
    trainer = GailTrainer(env_config, demos, gail_config, trpo_config, seed=seed,
                          **trainer_kwargs)
    trainer.run(gail_config.iterations)
    return trainer.policy, trainer.disc, trainer.metrics


# ---------------------------------------------------------------------------
# Task-objective evaluation
# ---------------------------------------------------------------------------

@dataclass
class ContextStats:
    context: int
    n_episodes: int
    mean_return: float
    mean_final_distance: float
    mean_offset: np.ndarray      # mean (ee - target) over the final window


@dataclass
class EvalStats:
    n_episodes: int
    mean_return: float
    std_return: float
    mean_final_distance: float
    per_context: list[ContextStats] = field(default_factory=list)


def _run_episode(policy, env, rng, obs_filter, context_seq, final_window):
    from .arm import arm_fk  # local import to keep module deps one-way

    cfg = env.config
    context_k = policy.spec.input_dim - env.obs_dim
    env.reset(rng)
    raw = env.observe()
    window_start = cfg.n_ctrl_steps - int(round(final_window / cfg.dt_ctrl))
    ep_return = 0.0
    dists, offsets = [], []
    for k in range(cfg.n_ctrl_steps):
        inp = trpo.policy_input(obs_filter.apply(raw), int(context_seq[k]), context_k)
        result = env.step(policy.mean_action(inp))
        ep_return += result.reward
        if k >= window_start:
            _, ee = arm_fk(result.next_state.q, cfg.link_lengths)
            offsets.append(ee - result.next_state.target)
            dists.append(float(np.linalg.norm(offsets[-1])))
        raw = result.observation
    return ep_return, float(np.mean(dists)), np.mean(offsets, axis=0)


def evaluate_task(policy, env: ArmEnv, n_episodes: int, rng: np.random.Generator, *,
                  obs_filter: ZFilter, context_k: int = 0,
                  final_window: float = 1.0) -> EvalStats:
    """Deterministic-mean-action evaluation on the task objective.

    With ``context_k > 1`` episodes cycle through constant per-episode
    contexts and per-context statistics are reported.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    buckets: dict[int, list] = {}
    returns, dists = [], []
    n_steps = env.config.n_ctrl_steps
    for ep in range(n_episodes):
        context = ep % context_k if context_k > 0 else 0
        seq = np.full(n_steps, context, dtype=np.int64)
        ep_return, dist, offset = _run_episode(policy, env, rng, obs_filter, seq, final_window)
        returns.append(ep_return)
        dists.append(dist)
        buckets.setdefault(context, []).append((ep_return, dist, offset))
    per_context = []
    if context_k > 1:
        for context in sorted(buckets):
            rows = buckets[context]
            per_context.append(ContextStats(
                context=context, n_episodes=len(rows),
                mean_return=float(np.mean([r[0] for r in rows])),
                mean_final_distance=float(np.mean([r[1] for r in rows])),
                mean_offset=np.mean([r[2] for r in rows], axis=0)))
    return EvalStats(n_episodes=n_episodes, mean_return=float(np.mean(returns)),
                     std_return=float(np.std(returns)),
                     mean_final_distance=float(np.mean(dists)), per_context=per_context)


def evaluate_context_switch(policy, env: ArmEnv, n_episodes: int, rng: np.random.Generator, *,
                            obs_filter: ZFilter, context_k: int, flip_time: float,
                            settle_time: float = 1.0) -> dict[int, np.ndarray]:
    """Mean (ee - target) offsets after a mid-episode context flip.

    Episodes start in one context and flip to another at ``flip_time``; the
    offset is averaged from ``flip_time + settle_time`` to the episode end and
    bucketed by the post-flip context.
    """
    from .arm import arm_fk

    cfg = env.config
    n_steps = cfg.n_ctrl_steps
    flip_step = int(round(flip_time / cfg.dt_ctrl))
    settle_step = flip_step + int(round(settle_time / cfg.dt_ctrl))
    policy_ctx = policy.spec.input_dim - env.obs_dim
    sums: dict[int, list] = {c: [] for c in range(context_k)}
    for ep in range(n_episodes):
        before = ep % context_k
        after = (ep + 1) % context_k
        seq = np.full(n_steps, before, dtype=np.int64)
        seq[flip_step:] = after
        env.reset(rng)
        raw = env.observe()
        offsets = []
        for k in range(n_steps):
            inp = trpo.policy_input(obs_filter.apply(raw), int(seq[k]), policy_ctx)
            result = env.step(policy.mean_action(inp))
            if k >= settle_step:
                _, ee = arm_fk(result.next_state.q, cfg.link_lengths)
                offsets.append(ee - result.next_state.target)
            raw = result.observation
        sums[after].append(np.mean(offsets, axis=0))
    return {c: np.mean(rows, axis=0) for c, rows in sums.items() if rows}
