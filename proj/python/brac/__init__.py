"""Python bindings for the offline RL lab."""

import json

from ._brac import (
    ConfigError,
    ContractError,
    Dataset,
    FormatError,
    Policy,
    TrainingError,
    clone,
    collect_controller,
    combine,
    mmd_squared,
    preset_names,
    run_check,
    segment_counts,
    spearman,
)
from . import _brac


def preset(algo, action_dim, desk=True):
    """Trainer configuration for a named variant as a dict."""
    return json.loads(_brac.preset_json(algo, action_dim, desk))


def train(config, dataset, behavior=None, episodes=20):
    """Runs one offline training job and returns its record as a dict."""
    return json.loads(_brac.train_json(json.dumps(config), dataset, behavior, episodes))
