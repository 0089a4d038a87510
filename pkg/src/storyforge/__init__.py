"""Album storytelling with a hierarchical photo-scene encoder, attention
decoder and reconstructor, trained end to end on precomputed photo features."""

from .data import (AlbumExample, SynthSpec, Vocabulary, build_vocab,
                   load_albums, save_albums, synth_dataset, synth_vocab)
from .estimator import AlbumStoryteller, NotFittedError
from .metrics import EvalPair, bleu, cider, rouge_l
from .model import (ModelConfig, build_parameters, encode_album,
                    generate_story, story_objective)
from .tensor import ParamStore, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainResult, run_training

__version__ = "0.1.0"

__all__ = [
    "AlbumExample", "AlbumStoryteller", "EvalPair", "ModelConfig",
    "NotFittedError", "ParamStore", "SynthSpec", "TrainConfig", "TrainResult",
    "Vocabulary", "bleu", "build_parameters", "build_vocab", "cider",
    "encode_album", "generate_story", "load_albums", "load_checkpoint",
    "rouge_l", "run_training", "save_albums", "save_checkpoint",
    "story_objective", "synth_dataset", "synth_vocab",
]
