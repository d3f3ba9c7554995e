"""Patch-specialist graders: compact 3D U-Nets, their training and scheduling."""
from .schedule import schedule_ensemble
from .store import EnsembleStore, load_models
from .train import (GraderModel, GradingDataset, TrainConfig, alpha_from_gradings,
                    compute_alpha, grade_patch, mixup_pair, predict, stratified_split,
                    train_individual, train_location, translate_jitter)
from .unet import UNetConfig, forward, init_params

__all__ = [
    "UNetConfig", "forward", "init_params",
    "TrainConfig", "GraderModel", "GradingDataset",
    "train_location", "train_individual", "schedule_ensemble",
    "grade_patch", "predict", "compute_alpha", "alpha_from_gradings",
    "mixup_pair", "translate_jitter", "stratified_split",
    "EnsembleStore", "load_models",
]
