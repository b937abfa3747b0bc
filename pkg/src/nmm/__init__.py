"""Neural mixture language models.

Heterogeneous component models (feedforward, Elman RNN, LSTM) share one word
embedding, run side by side in a feature layer, and are fused by a mixture
layer ahead of a single softmax output.
"""

from .corpus import EncodedCorpus, Vocabulary, batches, build_vocab, encode
from .evaluation import EvalReport, grid_search_weights, interpolate_ppl, perplexity
from .mixture import NeuralMixtureModel, count_params, param_growth, sample_dropout
from .notation import ComponentSpec, MixtureSpec, parse_spec, render_spec
from .training import TrainConfig, TrainState, lr_schedule, run_epoch, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "ComponentSpec",
    "EncodedCorpus",
    "EvalReport",
    "MixtureSpec",
    "NeuralMixtureModel",
    "TrainConfig",
    "TrainState",
    "Vocabulary",
    "batches",
    "build_vocab",
    "count_params",
    "encode",
    "grid_search_weights",
    "interpolate_ppl",
    "lr_schedule",
    "param_growth",
    "parse_spec",
    "perplexity",
    "render_spec",
    "run_epoch",
    "sample_dropout",
    "sgd_step",
    "train",
]
