"""Bird-eye transformer language models."""

import json as _json

from ._bet import (
    Checkpoint,
    ConfigError,
    DimensionError,
    DivergenceError,
    LoadError,
    ParseError,
    ValidationError,
    attention_head,
    checkpoint_from_bytes,
    extract_hint,
    hint_targets,
    load_checkpoint,
    matrix_stats,
    parse_treebank,
    pointer_loss,
)
from . import _bet


def _config_json(config):
    return config if isinstance(config, str) else _json.dumps(config or {})


def train(config, corpus, treebank=None):
    """Train in memory. Returns (checkpoint, loss_curve)."""
    return _bet.train(_config_json(config), corpus, treebank)


def train_to_directory(config, corpus_path, out_dir, treebank_path=None):
    """Train from files and write checkpoint.bin, loss_curve.csv and config.json."""
    return _bet.train_to_directory(_config_json(config), str(corpus_path), str(out_dir),
                                   None if treebank_path is None else str(treebank_path))


def checkpoint_config(checkpoint):
    return _json.loads(checkpoint.config_json)


__all__ = [name for name in dir() if not name.startswith("_")]
