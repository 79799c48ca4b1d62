import numpy as np
import pytest

from ommcast.features import FeaturePipeline, default_group_specs
from ommcast.forest import ForestHyperparams
from ommcast.markov import fit_model_set
from ommcast.panel import SynthConfig, synth_panel


@pytest.fixture(scope="session")
def signal_panel():
    """Panel with a planted escalation-driving covariate (>= 2 SD effect)."""
    cfg = SynthConfig(n_units=20, n_months=120, p_escalate=0.05, signal_strength=1.5)
    return synth_panel(cfg, seed=101)


@pytest.fixture(scope="session")
def fitted_models(signal_panel):
    pipeline = FeaturePipeline(default_group_specs(signal_panel.covariate_groups))
    hyper = ForestHyperparams(n_trees=60, seed=11)
    return fit_model_set(signal_panel, pipeline, hyper, hyper)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
