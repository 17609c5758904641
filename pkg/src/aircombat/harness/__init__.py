"""Experiment harness: configuration, training protocols, evaluation and artifacts."""

from .agents import PolicySet, decode_row, learner_teams, policy_head
from .checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .config import Algorithm, ProtocolKind, RunConfig, config_digest, dump_config, load_config
from .evaluation import episode_seed, evaluate, play_episodes
from .metrics import MetricsWriter, metric_keys, read_metrics
from .training import Session, run_training
from .trajectory import export_trajectory, trajectory_columns

__all__ = [
    "Algorithm",
    "Checkpoint",
    "MetricsWriter",
    "PolicySet",
    "ProtocolKind",
    "RunConfig",
    "Session",
    "config_digest",
    "decode_checkpoint",
    "decode_row",
    "dump_config",
    "encode_checkpoint",
    "episode_seed",
    "evaluate",
    "export_trajectory",
    "learner_teams",
    "load_checkpoint",
    "load_config",
    "metric_keys",
    "play_episodes",
    "policy_head",
    "read_metrics",
    "run_training",
    "save_checkpoint",
    "trajectory_columns",
]
