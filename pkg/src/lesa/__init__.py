"""Learned feature forecasting for cached diffusion sampling."""
from ._kernels import BACKEND
from .backbone import BackboneConfig, GmmBackbone, GmmSpec, SynthBackbone, SynthParams, integrate_full
from .core import (FormatError, IntegrationError, LengthError, LesaError, Schedule, Trajectory,
                   UnsupportedVersionError, ValidationError, read_trajectory, write_trajectory)
from .evalx import Method, compare, parse_method, run_accelerated
from .forecast import DiffTable, reuse_forecast, table_update, taylor_forecast
from .predictor import StagePredictor, load_model, make_predictor, predict, save_model
from .schedule import CostModel, StageConfig, StepPlan, build_plan, flop_account
from .train import TrainConfig, train, train_closed_loop, train_gt_guided

__all__ = [
    "BACKEND", "BackboneConfig", "CostModel", "DiffTable", "FormatError", "GmmBackbone", "GmmSpec",
    "IntegrationError", "LengthError", "LesaError", "Method", "Schedule", "StageConfig", "StagePredictor",
    "StepPlan", "SynthBackbone", "SynthParams", "TrainConfig", "Trajectory", "UnsupportedVersionError",
    "ValidationError", "build_plan", "compare", "flop_account", "integrate_full", "load_model",
    "make_predictor", "parse_method", "predict", "read_trajectory", "reuse_forecast", "run_accelerated",
    "save_model", "table_update", "taylor_forecast", "train", "train_closed_loop", "train_gt_guided",
    "write_trajectory",
]
