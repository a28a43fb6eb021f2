"""Policy-gradient machinery: rollouts, GAE, value fitting, TRPO updates.

The policy is a tanh MLP with a diagonal-Gaussian action head; updates are
KL-constrained natural-gradient steps solved by conjugate gradient on
Fisher-vector products, followed by a backtracking line search that only
accepts steps with measured KL inside the trust region and a strictly
improved surrogate. Rollout batches always contain whole episodes, so GAE
never needs a bootstrap value at batch cut points.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import features as feat
from . import nets
from .arm import ArmEnv
from .demos import DemoSet
from .nets import GaussianAction, MlpSpec
from .zfilter import ZFilter

log = logging.getLogger(__name__)


class TrainingFault(RuntimeError):
    """Non-recoverable numerical failure inside a training loop."""


@dataclass(frozen=True)
class TrpoConfig:
    kl_radius: float = 0.01
    cg_iterations: int = 10
    cg_damping: float = 0.1
    gamma: float = 0.995
    lam: float = 0.97
    samples_per_iteration: int = 4000
    value_fit_epochs: int = 25
    value_step_size: float = 0.01
    max_backtracks: int = 10
    normalize_advantages: bool = True

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must be in [0, 1]")
        if self.kl_radius <= 0.0:
            raise ValueError("kl_radius must be > 0")
        if self.cg_iterations < 1 or self.samples_per_iteration < 1:
            raise ValueError("cg_iterations and samples_per_iteration must be >= 1")
        if self.value_fit_epochs < 0 or self.max_backtracks < 0:
            raise ValueError("value_fit_epochs and max_backtracks must be >= 0")


@dataclass
class GaussianPolicy:
    """Stochastic policy: state-dependent mean, trainable state-free log-std."""

    spec: MlpSpec
    params: np.ndarray

    @classmethod
    def create(cls, input_dim: int, action_dim: int, hidden, seed: int) -> "GaussianPolicy":
        spec = MlpSpec(input_dim, tuple(hidden), action_dim, head="gaussian")
        return cls(spec=spec, params=nets.init_params(spec, seed))

    @property
    def log_std(self) -> np.ndarray:
        return self.params[nets.logstd_slice(self.spec)]

    def dist(self, x):
        return nets.forward(self.spec, self.params, x)

    def act(self, x, rng: np.random.Generator) -> tuple[GaussianAction, float]:
        mean, log_std = self.dist(x)
        sample = nets.gaussian_sample(mean, log_std, rng)
        logp, _, _ = nets.gaussian_logprob(mean, log_std, sample)
        return GaussianAction(mean=mean, log_std=log_std, sample=sample), float(logp)

    def mean_action(self, x) -> np.ndarray:
        return self.dist(x)[0]


@dataclass
class ValueFn:
    """Scalar state-value network with affine output calibration.

    The net regresses standardized targets; ``out_mean``/``out_scale`` map its
    output back to return units. Refreshing the calibration per fit keeps the
    fixed gradient step size meaningful across reward scales.
    """

    spec: MlpSpec
    params: np.ndarray
    out_mean: float = 0.0
    out_scale: float = 1.0

    @classmethod
    def create(cls, input_dim: int, hidden, seed: int) -> "ValueFn":
        spec = MlpSpec(input_dim, tuple(hidden), 1, head="linear")
        return cls(spec=spec, params=nets.init_params(spec, seed))

    def predict(self, x) -> np.ndarray:
        out = nets.forward(self.spec, self.params, x)
        return self.out_mean + self.out_scale * out[..., 0]


@dataclass
class RolloutBatch:
    """Whole-episode, time-indexed data gathered under one policy snapshot."""

    policy_inputs: np.ndarray      # (T, obs+context) as consumed by policy/value
    raw_obs: np.ndarray            # (T, obs) unfiltered observations
    actions: np.ndarray            # (T, A) raw sampled actions
    rewards: np.ndarray            # (T,) learner rewards (task or imitation)
    task_rewards: np.ndarray       # (T,) environment task rewards, logging only
    features: np.ndarray | None    # (T, Z) discriminator features, if extracted
    contexts: np.ndarray           # (T,) integer context labels
    dones: np.ndarray              # (T,) True at the last step of each episode
    logps: np.ndarray              # (T,) log-prob of actions at sampling time
    means: np.ndarray              # (T, A) Gaussian means at sampling time
    log_std: np.ndarray            # (A,) Gaussian log-std at sampling time
    episode_returns: np.ndarray    # (E,) per-episode summed task rewards

    @property
    def size(self) -> int:
        return self.policy_inputs.shape[0]

    @property
    def n_episodes(self) -> int:
        return int(self.dones.sum())


def policy_input(filtered_obs: np.ndarray, context: int, context_k: int) -> np.ndarray:
    if context_k == 0:
        return filtered_obs
    one_hot = np.zeros(context_k)
    one_hot[context] = 1.0
    return np.concatenate([filtered_obs, one_hot])


def _make_actor(policy: GaussianPolicy):
    """Single-input sampling closure with the parameter views prebuilt.

    logp falls out of the pre-scaled noise: for a = mu + sigma eps,
    log pi(a) = -|eps|^2/2 - sum(log sigma) - d log(2 pi)/2.
    """
    layers, log_std = nets.split_params(policy.spec, policy.params)
    log_std = np.maximum(log_std, nets.LOG_STD_FLOOR)
    sigma = np.exp(log_std)
    logp_const = -float(log_std.sum()) - 0.5 * nets.LOG_2PI * log_std.size
    hidden = layers[:-1]
    w_out, b_out = layers[-1]

    def act(x, rng):
        a = x
        for w, b in hidden:
            a = np.tanh(w @ a + b)
        mean = w_out @ a + b_out
        noise = rng.standard_normal(mean.shape)
        sample = mean + sigma * noise
        logp = -0.5 * float(noise @ noise) + logp_const
        return mean, sample, logp

    return act


def _collect_worker(policy, env, n_samples, rng, obs_filter, context_k,
                    context_schedule, feature_mask, reward_fn, reward_filter):
    actor = _make_actor(policy)
    n_steps = env.config.n_ctrl_steps
    rows = {key: [] for key in
            ("inputs", "raw", "actions", "rewards", "task_rewards", "feats",
             "contexts", "dones", "logps", "means")}
    episode_returns = []
    episode = 0
    total = 0
    while total < n_samples:
        try:
            state = env.reset(rng)
            contexts = (context_schedule(rng) if context_schedule is not None
                        else np.zeros(n_steps, dtype=np.int64))
            raw = env.observe()
            ep_return = 0.0
            for k in range(n_steps):
                filtered = obs_filter.update_apply(raw)
                inp = policy_input(filtered, int(contexts[k]), context_k)
                mean, sample, logp = actor(inp, rng)
                result = env.step(sample)
                reward = result.reward if reward_fn is None else float(
                    reward_fn(state, np.clip(sample, -1.0, 1.0), result.next_state))
                if reward_filter is not None:
                    reward = float(reward_filter.update_apply(np.array([reward]))[0])
                rows["inputs"].append(inp)
                rows["raw"].append(raw)
                rows["actions"].append(sample)
                rows["rewards"].append(reward)
                rows["task_rewards"].append(result.reward)
                rows["contexts"].append(int(contexts[k]))
                rows["dones"].append(result.done)
                rows["logps"].append(logp)
                rows["means"].append(mean)
                if feature_mask is not None:
                    rows["feats"].append(feat.extract(feature_mask, raw, sample))
                ep_return += result.reward
                raw = result.observation
                state = result.next_state
            episode_returns.append(ep_return)
        except Exception as exc:
            raise TrainingFault(f"environment fault in episode {episode}") from exc
        episode += 1
        total += n_steps

    return RolloutBatch(
        policy_inputs=np.asarray(rows["inputs"]),
        raw_obs=np.asarray(rows["raw"]),
        actions=np.asarray(rows["actions"]),
        rewards=np.asarray(rows["rewards"]),
        task_rewards=np.asarray(rows["task_rewards"]),
        features=np.asarray(rows["feats"]) if feature_mask is not None else None,
        contexts=np.asarray(rows["contexts"], dtype=np.int64),
        dones=np.asarray(rows["dones"], dtype=bool),
        logps=np.asarray(rows["logps"]),
        means=np.asarray(rows["means"]),
        log_std=policy.log_std.copy(),
        episode_returns=np.asarray(episode_returns),
    )


def _merge_batches(parts: list[RolloutBatch]) -> RolloutBatch:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = lambda key: np.concatenate([getattr(p, key) for p in parts])
    return RolloutBatch(
        policy_inputs=cat("policy_inputs"), raw_obs=cat("raw_obs"), actions=cat("actions"),
        rewards=cat("rewards"), task_rewards=cat("task_rewards"),
        features=cat("features") if first.features is not None else None,
        contexts=cat("contexts"), dones=cat("dones"), logps=cat("logps"),
        means=cat("means"), log_std=first.log_std, episode_returns=cat("episode_returns"))


def collect_rollouts(policy: GaussianPolicy, env: ArmEnv, n_samples: int,
                     rng: np.random.Generator, *, obs_filter: ZFilter,
                     context_k: int = 0, context_schedule=None,
                     feature_mask: str | None = None, reward_fn=None,
                     reward_filter: ZFilter | None = None,
                     workers: int = 1) -> RolloutBatch:
    """Run whole episodes until at least ``n_samples`` timesteps are gathered.

    The observation filter is updated online while collecting. ``workers``
    splits the sample budget over per-worker RNG streams and filter copies
    whose statistics merge back in worker-index order; results are
    bit-reproducible for any fixed worker count, and identical to the plain
    sequential path at ``workers=1``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1:
        return _collect_worker(policy, env, n_samples, rng, obs_filter, context_k,
                               context_schedule, feature_mask, reward_fn, reward_filter)

    share = (n_samples + workers - 1) // workers
    streams = rng.spawn(workers)
    parts = []
    obs_deltas, reward_deltas = [], []
    for w in range(workers):
        w_env = ArmEnv(env.config)
        w_obs = _TrackingFilter(obs_filter)
        w_rew = _TrackingFilter(reward_filter) if reward_filter is not None else None
        parts.append(_collect_worker(policy, w_env, share, streams[w], w_obs, context_k,
                                     context_schedule, feature_mask, reward_fn, w_rew))
        obs_deltas.append(w_obs.delta)
        if w_rew is not None:
            reward_deltas.append(w_rew.delta)
    for delta in obs_deltas:
        obs_filter.merge(delta)
    for delta in reward_deltas:
        reward_filter.merge(delta)
    return _merge_batches(parts)


class _TrackingFilter:
    """Filter view that normalizes from a private copy but records its delta."""

    def __init__(self, base: ZFilter):
        self._online = base.copy()
        self.delta = ZFilter(base.dim, base.clip)

    def update_apply(self, x):
        self.delta.update(x)
        return self._online.update_apply(x)


def compute_gae(batch: RolloutBatch, valuefn: ValueFn, gamma: float, lam: float,
                normalize: bool = True):
    """Generalized advantage estimation over whole episodes.

    delta_t = r_t + gamma V(s_{t+1}) - V(s_t) with V(terminal successor) = 0;
    A_t = sum_k (gamma lam)^k delta_{t+k} truncated at episode ends;
    value targets are A_t + V(s_t) computed before any normalization.
    """
    values = valuefn.predict(batch.policy_inputs)
    t_total = batch.size
    advantages = np.empty(t_total)
    running = 0.0
    next_value = 0.0
    for t in range(t_total - 1, -1, -1):
        if batch.dones[t]:
            running = 0.0
            next_value = 0.0
        delta = batch.rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
        next_value = values[t]
    targets = advantages + values
    if normalize:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return advantages, targets


def fit_value(valuefn: ValueFn, inputs: np.ndarray, targets: np.ndarray,
              epochs: int, step_size: float) -> tuple[ValueFn, dict]:
    """Full-batch adaptive-moment regression of the value network.

    Re-centers the output calibration on the target statistics, then runs
    ``epochs`` gradient steps at a fixed step size, keeping the parameters
    with the lowest observed MSE so the fit never ends worse than it started.
    Faults if the loss ever exceeds 10x its initial value. ``epochs=0``
    leaves the network parameters unchanged.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (inputs.shape[0],):
        raise ValueError("targets must align with inputs")
    spec = valuefn.spec
    params = valuefn.params.copy()
    if epochs == 0:
        return valuefn, {"initial_loss": float("nan"), "final_loss": float("nan")}

    out_mean = float(targets.mean())
    out_scale = max(float(targets.std()), 1e-8)
    scaled = (targets - out_mean) / out_scale
    t_total = inputs.shape[0]

    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    z, cache = nets.forward_cache(spec, params, inputs)
    pred = z[:, 0]
    initial_loss = float(np.mean((pred - scaled) ** 2))
    best_loss, best_params = initial_loss, params.copy()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    for step in range(1, epochs + 1):
        out_grad = (2.0 / t_total) * (pred - scaled)[:, None]
        grad, _ = nets.backward(spec, params, inputs, out_grad, cache=cache)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        m_hat = m / (1.0 - 0.9 ** step)
        v_hat = v / (1.0 - 0.999 ** step)
        params = params - step_size * m_hat / (np.sqrt(v_hat) + 1e-8)
        z, cache = nets.forward_cache(spec, params, inputs)
        pred = z[:, 0]
        loss = float(np.mean((pred - scaled) ** 2))
        # Divergence reference is floored at the standardized target variance
        # (1.0) so a warm start that is already near-optimal cannot trip it.
        if not math.isfinite(loss) or loss > 10.0 * max(initial_loss, 1.0):
            raise TrainingFault(f"value fit diverged: loss {loss:.4g} from initial {initial_loss:.4g}")
        if loss < best_loss:
            best_loss, best_params = loss, params.copy()
    fitted = ValueFn(spec=spec, params=best_params, out_mean=out_mean, out_scale=out_scale)
    scale2 = out_scale * out_scale
    return fitted, {"initial_loss": initial_loss * scale2, "final_loss": best_loss * scale2}


def conjugate_gradient(apply_a, b: np.ndarray, iterations: int,
                       residual_tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Solve A x = b for a symmetric positive-definite linear operator."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdotr = float(r @ r)
    b_norm = math.sqrt(float(b @ b))
    if b_norm == 0.0:
        return x, 0.0
    for _ in range(iterations):
        ap = apply_a(p)
        if not np.all(np.isfinite(ap)):
            raise TrainingFault("non-finite operator output in conjugate gradient")
        alpha = rdotr / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        new_rdotr = float(r @ r)
        if math.sqrt(new_rdotr) <= residual_tol * b_norm:
            rdotr = new_rdotr
            break
        p = r + (new_rdotr / rdotr) * p
        rdotr = new_rdotr
    return x, math.sqrt(rdotr)


def fisher_vector_product(policy: GaussianPolicy, inputs: np.ndarray,
                          v: np.ndarray, damping: float, *, cache=None) -> np.ndarray:
    """H v + damping v, H the Hessian of mean KL(pi_old || pi_theta) at theta_old.

    At the expansion point the KL Hessian equals the Fisher matrix, which for
    a diagonal Gaussian splits into J_mu^T diag(1/sigma^2) J_mu / T on the
    trunk block and 2 I on the log-std block, so one JVP and one VJP through
    the mean network evaluate it exactly. ``cache`` carries the activations
    of (params, inputs), which are fixed across a CG solve.
    """
    spec, params = policy.spec, policy.params
    t_total = inputs.shape[0]
    dmean, _ = nets.jvp(spec, params, inputs, v, cache=cache)
    inv_var = np.exp(-2.0 * policy.log_std)
    weighted = dmean * inv_var / t_total
    hv, _ = nets.backward(spec, params, inputs, weighted, cache=cache)
    ls = nets.logstd_slice(spec)
    hv[ls] = 2.0 * v[ls]
    return hv + damping * v


def mean_kl(policy: GaussianPolicy, inputs, old_means, old_log_std,
            params: np.ndarray | None = None) -> float:
    p = policy.params if params is None else params
    means, log_std = nets.forward(policy.spec, p, inputs)
    return float(np.mean(nets.gaussian_kl(old_means, old_log_std, means, log_std)))


def mean_kl_grad(policy: GaussianPolicy, inputs, old_means, old_log_std,
                 params: np.ndarray | None = None) -> np.ndarray:
    """Analytic gradient of mean KL(pi_old || pi_theta) w.r.t. theta."""
    p = policy.params if params is None else params
    spec = policy.spec
    means, log_std = nets.forward(spec, p, inputs)
    t_total = inputs.shape[0]
    inv_var = np.exp(-2.0 * log_std)
    diff = means - old_means
    dmean = diff * inv_var / t_total
    var_old = np.exp(2.0 * old_log_std)
    dlogstd = (1.0 - (var_old + diff * diff) * inv_var).sum(axis=0) / t_total
    grad, _ = nets.backward(spec, p, inputs, dmean, logstd_grad=dlogstd)
    return grad


@dataclass
class TrpoDiagnostics:
    accepted: bool
    kl: float
    surrogate_before: float
    surrogate_after: float
    backtracks: int
    grad_norm: float
    step_norm: float
    cg_residual: float

    @property
    def improvement(self) -> float:
        return self.surrogate_after - self.surrogate_before


def _surrogate(policy, params, batch: RolloutBatch, advantages):
    means, log_std = nets.forward(policy.spec, params, batch.policy_inputs)
    logps, _, _ = nets.gaussian_logprob(means, log_std, batch.actions)
    ratio = np.exp(logps - batch.logps)
    surr = float(np.mean(ratio * advantages))
    klval = float(np.mean(nets.gaussian_kl(batch.means, batch.log_std, means, log_std)))
    return surr, klval


def trpo_update(policy: GaussianPolicy, batch: RolloutBatch, advantages: np.ndarray,
                config: TrpoConfig) -> tuple[GaussianPolicy, TrpoDiagnostics]:
    """One KL-constrained policy update.

    Builds the surrogate gradient at theta_old, solves the Fisher system by
    CG, scales the step to the trust-region boundary, then backtracks by
    halving until the measured mean KL is within the radius and the surrogate
    strictly improves. If no candidate qualifies the policy is returned
    unchanged (same parameter object, bit-identical).
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.shape != (batch.size,):
        raise ValueError("advantages must align with the batch")
    surrogate_before = float(np.mean(advantages))  # ratio is 1 at theta_old
    if not math.isfinite(surrogate_before):
        raise TrainingFault("non-finite surrogate objective")

    t_total = batch.size
    inputs = np.ascontiguousarray(batch.policy_inputs, dtype=np.float64)
    _, cache = nets.forward_cache(policy.spec, policy.params, inputs)
    _, dmean, dlogstd = nets.gaussian_logprob(batch.means, batch.log_std, batch.actions)
    out_grad = dmean * (advantages[:, None] / t_total)
    logstd_grad = (dlogstd * advantages[:, None]).sum(axis=0) / t_total
    grad, _ = nets.backward(policy.spec, policy.params, inputs,
                            out_grad, logstd_grad=logstd_grad, cache=cache)
    grad_norm = float(np.linalg.norm(grad))

    reject = TrpoDiagnostics(accepted=False, kl=0.0, surrogate_before=surrogate_before,
                             surrogate_after=surrogate_before,
                             backtracks=0, grad_norm=grad_norm, step_norm=0.0, cg_residual=0.0)
    if grad_norm < 1e-12:
        return policy, reject

    fvp = lambda v: fisher_vector_product(policy, inputs, v, config.cg_damping, cache=cache)
    step_dir, residual = conjugate_gradient(fvp, grad, config.cg_iterations)
    shs = float(step_dir @ fvp(step_dir))
    if shs <= 0.0 or not math.isfinite(shs):
        return policy, replace(reject, cg_residual=residual)
    full_step = math.sqrt(2.0 * config.kl_radius / shs) * step_dir

    for i in range(config.max_backtracks + 1):
        candidate = policy.params + (0.5 ** i) * full_step
        surr, klval = _surrogate(policy, candidate, batch, advantages)
        if (math.isfinite(surr) and math.isfinite(klval)
                and klval <= config.kl_radius and surr > surrogate_before):
            diag = TrpoDiagnostics(accepted=True, kl=klval, surrogate_before=surrogate_before,
                                   surrogate_after=surr, backtracks=i, grad_norm=grad_norm,
                                   step_norm=float(np.linalg.norm(candidate - policy.params)),
                                   cg_residual=residual)
            return GaussianPolicy(spec=policy.spec, params=candidate), diag
    log.debug("trpo update rejected after %d backtracks", config.max_backtracks + 1)
    return policy, replace(reject, backtracks=config.max_backtracks + 1, cg_residual=residual)


METRIC_COLUMNS = ["iteration", "mean_episode_task_return", "mean_imitation_reward",
                  "kl", "surrogate_improvement", "value_loss", "entropy", "wallclock_s"]


class ExpertTrainer:
    """RL training on the environment's own task reward.

    Iterates collect -> GAE -> value fit -> TRPO step. Observations are
    z-filtered online; task rewards are optionally z-filtered too (never in
    imitation mode, which has its own trainer).
    """

    def __init__(self, env_config, trpo_config: TrpoConfig, *, policy_hidden=(100, 60),
                 value_hidden=(100, 60), seed: int = 0, workers: int = 1,
                 filter_rewards: bool = True, reward_fn=None):
        self.env = ArmEnv(env_config)
        self.config = trpo_config
        self.workers = workers
        self.reward_fn = reward_fn
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.policy = GaussianPolicy.create(self.env.obs_dim, self.env.action_dim,
                                            policy_hidden, seeds[0])
        self.valuefn = ValueFn.create(self.env.obs_dim, value_hidden, seeds[1])
        self.rng = np.random.default_rng(seeds[2])
        self.obs_filter = ZFilter(self.env.obs_dim)
        self.reward_filter = ZFilter(1) if filter_rewards else None
        self.iteration = 0
        self.metrics: list[dict] = []

    def run(self, n_iterations: int) -> list[dict]:
        rows = []
        for _ in range(n_iterations):
            start = time.perf_counter()
            batch = collect_rollouts(
                self.policy, self.env, self.config.samples_per_iteration, self.rng,
                obs_filter=self.obs_filter, reward_fn=self.reward_fn,
                reward_filter=self.reward_filter, workers=self.workers)
            advantages, targets = compute_gae(batch, self.valuefn, self.config.gamma,
                                              self.config.lam, self.config.normalize_advantages)
            self.valuefn, fit_info = fit_value(self.valuefn, batch.policy_inputs, targets,
                                               self.config.value_fit_epochs,
                                               self.config.value_step_size)
            self.policy, diag = trpo_update(self.policy, batch, advantages, self.config)
            self.iteration += 1
            row = {
                "iteration": self.iteration,
                "mean_episode_task_return": float(batch.episode_returns.mean()),
                "mean_imitation_reward": float("nan"),
                "kl": diag.kl,
                "surrogate_improvement": diag.improvement,
                "value_loss": fit_info["final_loss"],
                "entropy": nets.gaussian_entropy(self.policy.log_std),
                "wallclock_s": time.perf_counter() - start,
            }
            rows.append(row)
            self.metrics.append(row)
            log.info("iter %d return %.3f kl %.2e entropy %.3f",
                     self.iteration, row["mean_episode_task_return"], row["kl"], row["entropy"])
        return rows


def train_rl_expert(env_config, trpo_config: TrpoConfig, iterations: int, seed: int = 0,
                    **trainer_kwargs) -> tuple[GaussianPolicy, ZFilter, list[dict]]:
    """Train an expert by RL; returns (policy, observation filter, metrics)."""
    trainer = ExpertTrainer(env_config, trpo_config, seed=seed, **trainer_kwargs)
    trainer.run(iterations)
    return trainer.policy, trainer.obs_filter, trainer.metrics


def record_demos(policy: GaussianPolicy, env: ArmEnv, n_episodes: int,
                 feature_mask: str, context_label: int, rng: np.random.Generator,
                 *, obs_filter: ZFilter, context_k: int = 1, source: str = "") -> DemoSet:
    """Log stochastic-policy episodes as demonstration feature rows.

    The observation filter is frozen (evaluation mode). Every row is tagged
    with ``context_label``; row count is the summed episode lengths.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    feat.validate_mask(feature_mask)
    policy_ctx = policy.spec.input_dim - env.obs_dim
    rows = []
    contexts = []
    for _ in range(n_episodes):
        env.reset(rng)
        raw = env.observe()
        for _ in range(env.config.n_ctrl_steps):
            inp = policy_input(obs_filter.apply(raw), min(context_label, max(policy_ctx - 1, 0)),
                               policy_ctx)
            action, _ = policy.act(inp, rng)
            rows.append(feat.extract(feature_mask, raw, action.sample))
            raw = env.step(action.sample).observation
    return DemoSet(
        feature_names=feat.feature_names(feature_mask, env.config.n_links),
        dt=env.config.dt_ctrl,
        rows=np.asarray(rows),
        contexts=np.full(len(rows), context_label, dtype=np.int64),
        context_k=context_k,
        source=source or f"policy-rollouts mask={feature_mask} episodes={n_episodes}",
    )
