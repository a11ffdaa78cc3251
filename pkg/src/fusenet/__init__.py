"""fusenet: an image+audio fusion CNN laboratory.

A numpy-backed autograd engine, an audio-to-spectrogram pipeline, a zoo of
multimodal fusion networks (early / middle / late), a deterministic training
harness with two-stage fine-tuning, and dataset tooling with a checksummed
binary container. The CLI (`fusenet`) ties the pieces together.
"""

from .tensor import (
    LrnParams, Parameters, Tensor, backward, sgd_step, no_grad,
)
from .audio import StftConfig, Waveform, decode_wav, resample, segment, stft, trim_silence
from .models import FusionStrategy, MultimodalNet, StreamConfig, UnimodalNet
from .training import StageSchedule, TrainConfig, train, evaluate, two_stage_finetune
from .datasets import PairedDataset, SyntheticSpec, gen_synthetic

__version__ = "0.1.0"
