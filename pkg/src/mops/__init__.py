"""Model-based optimistic posterior sampling for episodic contextual MDPs."""
from .envs import KnrEnv, LinearMixtureEnv, RewardNoise, TabularEnv, exact_policy_value, rollout
from .generators import GeneratorKind, PolicyGenerator, g_optimal_design, generate
from .planner import TabularModel, plan
from .posterior import FiniteModelClass, LogPosterior, auto_gamma
from .driver import Hyperparams, online_to_batch, run_mops

__all__ = ["KnrEnv", "LinearMixtureEnv", "RewardNoise", "TabularEnv", "exact_policy_value",
           "rollout", "GeneratorKind", "PolicyGenerator", "g_optimal_design", "generate",
           "TabularModel", "plan", "FiniteModelClass", "LogPosterior", "auto_gamma",
           "Hyperparams", "online_to_batch", "run_mops"]
