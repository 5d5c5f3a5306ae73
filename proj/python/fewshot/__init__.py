"""Few-shot text classification with label-adapted representations and
optimal-transport query augmentation.

Array functions take and return numpy arrays. Configs, checkpoints and
reports are plain dicts.
"""

import json

from . import _core
from ._core import (
    FewshotError,
    TransportPlan,
    barycentric_map,
    barycentric_map_matrix,
    class_posteriors,
    cost_matrix,
    cross_entropy,
    estimate_prototypes,
    exact_ot,
    load_precomputed,
    predict,
    retrieve_top_r,
    sinkhorn,
    tokenize,
)

__all__ = [
    "FewshotError",
    "TransportPlan",
    "barycentric_map",
    "barycentric_map_matrix",
    "class_posteriors",
    "cli",
    "cost_matrix",
    "cross_entropy",
    "default_config",
    "estimate_prototypes",
    "evaluate",
    "exact_ot",
    "load_precomputed",
    "predict",
    "retrieve_top_r",
    "sinkhorn",
    "tokenize",
    "train",
]


def default_config():
    return json.loads(_core.default_config())


def train(config, threads=1):
    """Returns (checkpoint, report) as dicts."""
    ck, report = _core.train(json.dumps(config), threads)
    return json.loads(ck), json.loads(report)


def evaluate(checkpoint, config=None, threads=1):
    text = "" if config is None else json.dumps(config)
    return json.loads(_core.evaluate(json.dumps(checkpoint), text, threads))


def cli(args):
    """Runs the command-line tool in-process; returns the exit status."""
    return _core.cli([str(a) for a in args])
