"""Noise schedule, score models and score-matching training."""

from .checkpoint import Checkpoint
from .net import DenoiserNet, NetScoreModel, parameter_count
from .schedule import NoiseSchedule
from .score import GaussianScoreOracle, ScoreModel, ZeroScore, oracle_score
from .training import (
    TrainConfig,
    TrainResult,
    chain_perturb,
    dsm_loss,
    dsm_target,
    forward_perturb,
    train,
)

__all__ = [
    "Checkpoint", "DenoiserNet", "GaussianScoreOracle", "NetScoreModel",
    "NoiseSchedule", "ScoreModel", "TrainConfig", "TrainResult", "ZeroScore",
    "chain_perturb", "dsm_loss", "dsm_target", "forward_perturb",
    "oracle_score", "parameter_count", "train",
]
