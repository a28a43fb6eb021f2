"""Adversarial imitation learning toolkit on a planar-arm testbed.

Modules:
  nets      flat-parameter MLP kernels and Gaussian action-head math
  arm       planar N-link arm dynamics and the moving-target reaching task
  zfilter   online running mean/variance input normalization
  features  discriminator feature masks over observations/actions
  demos     the shared demonstration file format
  mocap     ASF/AMC parsing, spline resampling, kinematic feature extraction
  trpo      rollouts, GAE, value fitting, trust-region policy updates
  gail      context-conditioned adversarial imitation training loop
  config    experiment configuration files
  checkpoint  binary training checkpoints
  cli       command-line front end
"""

from .arm import ArmConfig, ArmEnv, ArmState, StepResult
from .demos import DemoSet, read_demoset, write_demoset
from .gail import (Discriminator, GailConfig, GailTrainer, evaluate_task, gail_train,
                   imitation_rewards)
from .nets import GaussianAction, MlpSpec
from .trpo import (ExpertTrainer, GaussianPolicy, RolloutBatch, TrpoConfig, ValueFn,
                   collect_rollouts, compute_gae, record_demos, train_rl_expert,
                   trpo_update)
from .zfilter import ZFilter

__version__ = "0.1.0"

__all__ = [
    "ArmConfig", "ArmEnv", "ArmState", "StepResult",
    "DemoSet", "read_demoset", "write_demoset",
    "Discriminator", "GailConfig", "GailTrainer", "evaluate_task", "gail_train",
    "imitation_rewards",
    "GaussianAction", "MlpSpec",
    "ExpertTrainer", "GaussianPolicy", "RolloutBatch", "TrpoConfig", "ValueFn",
    "collect_rollouts", "compute_gae", "record_demos", "train_rl_expert", "trpo_update",
    "ZFilter",
    "__version__",
]
