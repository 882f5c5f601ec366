"""Peer-collaboration training for top-N recommender models.

Two structurally identical models are trained side by side with different
learning rates and data orders; at each cooperation barrier their weights
are merged, either element-wise (replace small-magnitude weights with the
peer's) or layer-wise (blend with a coefficient driven by the layers'
entropy or relative L1 norm). One peer is kept for inference.
"""

from .config import RunConfig
from .cooperation import (LWConfig, PWConfig, coefficient, ensemble_scores, lw_cooperate, magnitude_prune,
                          noise_reactivate, pw_cooperate)
from .criteria import EntropyConfig, entropy, invalid_layer_ratio, layer_l1, pw_mask, relative_l1
from .data import InteractionDataset, build_sequences, ingest
from .evaluation import evaluate, metrics_at_n, rank_of_target
from .params import LayerGroup, ParameterSet, Role, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
