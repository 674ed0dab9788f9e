"""Deep compositional spatial models: SIWGP and SDSP fitting, prediction and scoring."""

import json

import numpy as np

from . import _deepwarp
from ._deepwarp import Error, Model, crps_samples, threat_score

__all__ = ["Error", "Model", "simulate", "fit", "score", "threat_score", "crps_samples"]


def _config_text(config):
    return json.dumps(config if config is not None else {})


def _locations(s):
    s = np.asarray(s, dtype=float)
    return s.reshape(-1, 1) if s.ndim == 1 else s


def simulate(config=None, seed=None):
    """Simulated data and noise-free truth for a config dict (the `simulate` section)."""
    config = dict(config or {})
    if seed is not None:
        config["seed"] = seed
    return _deepwarp.simulate(_config_text(config))


def fit(locations, z, config=None, seed=None):
    """Fits a model; returns (Model, report dict)."""
    config = dict(config or {})
    if seed is not None:
        config["seed"] = seed
    model, report = _deepwarp.fit(_config_text(config), _locations(locations), np.asarray(z, dtype=float))
    return model, json.loads(report)


def score(prediction, truth):
    """MAPE, RMSPE, Gaussian CRPS and 95% interval score for a prediction dict."""
    return _deepwarp.score(prediction["mean"], prediction["sd"], prediction["lower95"], prediction["upper95"],
                           np.asarray(truth, dtype=float))
