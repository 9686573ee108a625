"""Multi-tier knowledge projection for event relation extraction.

A shared pair encoder, a VAE semantic adaptor and a coarse-category adaptor
are trained jointly on event relation (ERE) and discourse relation (DRR)
data, each task keeping its own fine-grained classifier.
"""

from .coarse import CoarseLabel
from .data import InstancePair, SynthSpec, load_jsonl, save_jsonl, synth_generate
from .encoder import Vocab, tokenize_pair
from .model import AblationConfig, MKPNet, ModelConfig, ParamGroups
from .tasks import DRR, DRR_SPEC, ERE, ERE_SPEC, TaskSpec
from .trainer import TrainerConfig, train

__version__ = "0.1.0"

__all__ = [
    "AblationConfig", "CoarseLabel", "DRR", "DRR_SPEC", "ERE", "ERE_SPEC", "InstancePair", "MKPNet",
    "ModelConfig", "ParamGroups", "SynthSpec", "TaskSpec", "TrainerConfig", "Vocab", "load_jsonl",
    "save_jsonl", "synth_generate", "tokenize_pair", "train",
]
