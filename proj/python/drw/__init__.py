"""Keyed output watermarking for prediction APIs and spectral detection of
distilled copies."""

import json

from ._core import (
    DrwError,
    Key,
    apply_watermark,
    average_precision,
    detect,
    frequency_grid,
    generate_key,
    jsd,
    load_key,
    lomb_scargle,
    save_key,
    snr_score,
)
from ._core import run_experiment as _run_experiment

__version__ = "0.1.0"


def run_experiment(config=None):
    """Run a simulated detection experiment; `config` is a dict of overrides."""
    return json.loads(_run_experiment(json.dumps(config or {})))


__all__ = [
    "DrwError",
    "Key",
    "apply_watermark",
    "average_precision",
    "detect",
    "frequency_grid",
    "generate_key",
    "jsd",
    "load_key",
    "lomb_scargle",
    "run_experiment",
    "save_key",
    "snr_score",
]
