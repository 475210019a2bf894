"""Exemplar-learning segmentation on procedural phantoms."""

import json as _json

from . import _elsnet
from ._elsnet import ConfigError, ValidationError, dsc, hd95, prototypes, seg_loss

__version__ = _elsnet.version().lstrip("v")

__all__ = [
    "ConfigError",
    "ValidationError",
    "dsc",
    "hd95",
    "prototypes",
    "seg_loss",
    "resolve_config",
    "generate_phantoms",
    "load_split",
    "synthesize",
    "run_pipeline",
    "evaluate",
    "grad_check",
]


def resolve_config(path="", overrides=()):
    """Defaults, then the optional JSON file, then `section.key=value` overrides."""
    return _json.loads(_elsnet.resolve_config(str(path), list(overrides)))


def _config_text(config):
    return _json.dumps(resolve_config() if config is None else config)


def generate_phantoms(out, seed=0, config=None):
    _elsnet.generate_phantoms(seed, _config_text(config), str(out))


def load_split(root, split):
    return _elsnet.load_split(str(root), split)


def synthesize(root, count, seed=0, config=None):
    """Synthetic samples as dicts of id, image, mask and the parsed transform log."""
    samples = _elsnet.synthesize(str(root), count, seed, _config_text(config))
    for s in samples:
        s["log"] = _json.loads(s["log"])
    return samples


def run_pipeline(root, config=None, out=""):
    return _json.loads(_elsnet.run_pipeline(_config_text(config), str(root), str(out)))


def evaluate(checkpoint, root, split="test"):
    return _json.loads(_elsnet.evaluate(str(checkpoint), str(root), split))


def grad_check(seed=1):
    return _elsnet.grad_check(seed)
