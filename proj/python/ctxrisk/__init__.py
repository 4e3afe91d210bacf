"""Risk-aware access-control inference over cyber-physical action logs."""

import json

from ._ctxrisk import (
    DecisionService,
    Error,
    default_config,
    default_scenario,
    level_for_crv,
    normalize,
    parse_record,
    run_pipeline,
    simulate,
    train_model,
    tree_accuracy,
)

__all__ = [
    "DecisionService",
    "Error",
    "Service",
    "default_config",
    "default_scenario",
    "level_for_crv",
    "normalize",
    "parse_record",
    "run_pipeline",
    "simulate",
    "train_model",
    "tree_accuracy",
]


class Service:
    """DecisionService taking and returning Python objects."""

    def __init__(self, model):
        self._svc = DecisionService(model if isinstance(model, str) else json.dumps(model))

    def request(self, payload):
        line = payload if isinstance(payload, str) else json.dumps(payload)
        return json.loads(self._svc.handle(line))
