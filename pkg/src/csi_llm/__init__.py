"""Variable-length downlink CSI prediction with a causal-decoder backbone."""

from .backbone import Backbone, BackboneConfig, causal_mask, load_pretrained
from .channel_data import (
    ChannelDataset,
    ChannelSample,
    NormStats,
    ScenarioConfig,
    generate_synthetic_dataset,
    load_dataset,
    normalize,
    save_dataset,
    split_dataset,
)
from .config import ExperimentConfig, ci_config, default_config, parse_config
from .evaluation import nmse, no_prediction, one_step_eval, rollout, rollout_eval
from .model import CsiLlm, FixedStepModel, build_model
from .training import Checkpoint, HParams, next_step_loss, train_baseline, train_csi_llm

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneConfig",
    "ChannelDataset",
    "ChannelSample",
    "Checkpoint",
    "CsiLlm",
    "ExperimentConfig",
    "FixedStepModel",
    "HParams",
    "NormStats",
    "ScenarioConfig",
    "build_model",
    "causal_mask",
    "ci_config",
    "default_config",
    "generate_synthetic_dataset",
    "load_dataset",
    "load_pretrained",
    "next_step_loss",
    "nmse",
    "no_prediction",
    "normalize",
    "one_step_eval",
    "parse_config",
    "rollout",
    "rollout_eval",
    "save_dataset",
    "split_dataset",
    "train_baseline",
    "train_csi_llm",
]
