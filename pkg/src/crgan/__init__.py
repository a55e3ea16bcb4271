"""Mask-based speech enhancement with convolutional-recurrent GANs.

The package splits into: `dsp` (STFT/masking), `corpus` (synthetic data and
manifests), `arch` (model zoo), `losses` (adversarial objectives), `train`
(alternating training with strict accounting), `quality` (objective metrics),
`report` (evaluation tables and figures), and `cli` (the `crgan` command).
"""

from .arch import ModelVariant, build_model
from .corpus import CorpusConfig, MixtureRecord, build_manifest
from .dsp import Waveform, Spectrogram, stft, istft, phase_sensitive_mask, apply_mask
from .train import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "ModelVariant",
    "build_model",
    "CorpusConfig",
    "MixtureRecord",
    "build_manifest",
    "Waveform",
    "Spectrogram",
    "stft",
    "istft",
    "phase_sensitive_mask",
    "apply_mask",
    "TrainConfig",
    "Trainer",
    "__version__",
]
