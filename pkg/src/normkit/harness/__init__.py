"""Synthetic tasks, training loop, statistics and sweeps."""
from .stats import StatsTable, collect_stats, collect_stats_pair
from .sweep import RobustnessResult, loss_band, p_sweep, robustness_probe
from .tasks import Dataset, TaskKind, TaskSpec, adding_target, generate_task, sample_batch
from .train import (ConfigError, CurvePoint, ModelSpec, OptimizerSpec, RunConfig, RunReport, build_model,
                    median_final_loss, train, train_seeds)

__all__ = [
    "StatsTable", "collect_stats", "collect_stats_pair", "RobustnessResult", "loss_band", "p_sweep",
    "robustness_probe", "Dataset", "TaskKind", "TaskSpec", "adding_target", "generate_task", "sample_batch",
    "ConfigError", "CurvePoint", "ModelSpec", "OptimizerSpec", "RunConfig", "RunReport", "build_model",
    "median_final_loss", "train", "train_seeds",
]
