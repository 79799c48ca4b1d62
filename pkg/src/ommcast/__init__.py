"""Observed Markov model forecasting of conflict fatality densities."""

__version__ = "0.1.0"

from .errors import DataError, ModelError, OmmcastError, ValidationError
from .features import FeatureGroupSpec, FeaturePipeline, decay_feature
from .forest import ForestHyperparams, ProbClassifier, QuantileForest, fit_classifier, fit_qrf
from .markov import (
    FittedModelSet,
    MarkovState,
    allowed_successors,
    encode_states,
    fit_model_set,
    load_model_set,
    save_model_set,
)
from .metrics import IgnBinning, crps_sample, evaluate, ign_binned, mis
from .panel import PanelDataset, SplitSpec, SynthConfig, load_panel, split_train_eval, synth_panel
from .simulate import ForecastDraws, SimulationConfig, draws_summary, simulate_paths

__all__ = [
    "DataError",
    "ModelError",
    "OmmcastError",
    "ValidationError",
    "FeatureGroupSpec",
    "FeaturePipeline",
    "decay_feature",
    "ForestHyperparams",
    "ProbClassifier",
    "QuantileForest",
    "fit_classifier",
    "fit_qrf",
    "FittedModelSet",
    "MarkovState",
    "allowed_successors",
    "encode_states",
    "fit_model_set",
    "load_model_set",
    "save_model_set",
    "IgnBinning",
    "crps_sample",
    "evaluate",
    "ign_binned",
    "mis",
    "PanelDataset",
    "SplitSpec",
    "SynthConfig",
    "load_panel",
    "split_train_eval",
    "synth_panel",
    "ForecastDraws",
    "SimulationConfig",
    "draws_summary",
    "simulate_paths",
]
