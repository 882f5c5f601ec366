"""Recommender models with hand-written gradients."""

from ..errors import ConfigurationError
from ..numerics import TRAIN_DTYPE
from .base import DESK, TABLE2, HyperParams, Model
from .bpr import BPRModel
from .dnn import AvgPoolDNNModel
from .saslite import SASLiteModel

MODELS = {"bpr": BPRModel, "dnn": AvgPoolDNNModel, "saslite": SASLiteModel}


def build_model(kind: str, n_users: int, n_items: int, hp: HyperParams, rng=None, params=None,
                dtype=TRAIN_DTYPE) -> Model:
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown model {kind!r}; choose from {sorted(MODELS)}") from None
    return cls(n_users, n_items, hp, rng=rng, params=params, dtype=dtype)


def model_from_checkpoint(params, config: dict) -> Model:
    hp = HyperParams(**config["hp"])
    return build_model(config["kind"], config["n_users"], config["n_items"], hp, params=params)


__all__ = ["MODELS", "DESK", "TABLE2", "HyperParams", "Model", "BPRModel", "AvgPoolDNNModel",
           "SASLiteModel", "build_model", "model_from_checkpoint"]
