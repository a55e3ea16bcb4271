"""Model zoo: convolutional-recurrent mask estimators, plain recurrent
baselines, and the conv discriminator shared by all adversarial variants.

Conventions baked in here:
- features are (batch, frames, 257) natural-log magnitudes; masks come back in
  the same layout with sigmoid range (0, 1);
- frequency convolutions are un-padded with stride 2, so 257 collapses through
  128 -> 63 -> 31 -> 15 -> 7 across the five encoder stages;
- time convolutions are causal: kernel-2 stages pad one frame on the past side
  (and the mirrored transposed convolutions crop it back), so frame count never
  changes anywhere in the network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import dsp
from .dsp import Spectrogram, Waveform


class ModelVariant(str, Enum):
    W_CRGAN = "W-CRGAN"
    R_CRGAN = "R-CRGAN"
    RA_CRGAN = "Ra-CRGAN"
    M_CRGAN = "M-CRGAN"
    M_CRGAN_MSE = "M-CRGAN-MSE"
    W_CGAN = "W-CGAN"
    R_CGAN = "R-CGAN"
    RA_CGAN = "Ra-CGAN"
    M_CGAN = "M-CGAN"
    M_CGAN_MSE = "M-CGAN-MSE"
    CRN_MSE = "CRN-MSE"
    CNN_MSE = "CNN-MSE"
    LSTM = "LSTM"
    BILSTM = "BiLSTM"

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        for v in cls:
            if v.value == name:
                return v
        raise ValueError(f"unknown model variant {name!r}; expected one of "
                         f"{[v.value for v in cls]}")

    @property
    def loss_family(self) -> str | None:
        """Adversarial family, or None for the purely supervised baselines."""
        if self.value.startswith("W-"):
            return "wasserstein"
        if self.value.startswith("Ra-"):
            return "relativistic_average"
        if self.value.startswith("R-"):
            return "relativistic"
        if self.value.startswith("M-"):
            return "metric"
        return None

    @property
    def adversarial(self) -> bool:
        return self.loss_family is not None

    @property
    def uses_l1(self) -> bool:
        """Mask-domain L1 regularizer rides on the non-metric GAN generators."""
        return self.loss_family in ("wasserstein", "relativistic", "relativistic_average")

    @property
    def uses_mse(self) -> bool:
        return self in (ModelVariant.M_CRGAN_MSE, ModelVariant.M_CGAN_MSE) or self in (
            ModelVariant.CRN_MSE, ModelVariant.CNN_MSE, ModelVariant.LSTM, ModelVariant.BILSTM
        )

    @property
    def recurrent(self) -> bool:
        return self.value in (
            "W-CRGAN", "R-CRGAN", "Ra-CRGAN", "M-CRGAN", "M-CRGAN-MSE",
            "CRN-MSE", "LSTM", "BiLSTM",
        )

    @property
    def generator_kind(self) -> str:
        return "recurrent_baseline" if self in (ModelVariant.LSTM, ModelVariant.BILSTM) else "crn"

    @property
    def discriminator_input(self) -> str | None:
        """What D sees: the mask alone, a (candidate, target) mask pair, or a
        (log-magnitude enhanced, log-magnitude clean) spectrogram pair."""
        family = self.loss_family
        if family == "wasserstein":
            return "mask"
        if family in ("relativistic", "relativistic_average"):
            return "mask_pair"
        if family == "metric":
            return "spec_pair"
        return None


ALL_VARIANTS = tuple(ModelVariant)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

def _freq_chain(n_bins: int, n_layers: int) -> list[int]:
    sizes = [n_bins]
    for _ in range(n_layers):
        nxt = (sizes[-1] - 3) // 2 + 1
        if nxt < 1:
            raise ValueError(f"frequency axis collapses below 1 bin: chain {sizes}")
        sizes.append(nxt)
    return sizes


@dataclass(frozen=True)
class GeneratorSpec:
    encoder_channels: tuple = (16, 32, 64, 128, 256)
    lstm_hidden: int = 1024        # per direction
    lstm_layers: int = 2
    recurrent: bool = True
    n_bins: int = dsp.N_BINS

    def __post_init__(self):
        if len(self.encoder_channels) != 5:
            raise ValueError("expected five encoder stages")
        if any(c <= 0 for c in self.encoder_channels):
            raise ValueError("channel counts must be positive")
        if self.recurrent and (self.lstm_hidden <= 0 or self.lstm_layers <= 0):
            raise ValueError("recurrent sizes must be positive")
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))

    @property
    def freq_sizes(self) -> list[int]:
        return _freq_chain(self.n_bins, len(self.encoder_channels))

    @property
    def bottleneck_features(self) -> int:
        return self.encoder_channels[-1] * self.freq_sizes[-1]


@dataclass(frozen=True)
class RecurrentBaselineSpec:
    hidden: int = 256              # per direction
    layers: int = 2
    bidirectional: bool = False
    n_bins: int = dsp.N_BINS

    def __post_init__(self):
        if self.hidden <= 0 or self.layers <= 0:
            raise ValueError("recurrent sizes must be positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    channels: tuple = (4, 8, 16, 32, 64)
    in_channels: int = 1
    negative_slope: float = 0.2
    n_bins: int = dsp.N_BINS

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ValueError("expected five conv stages")
        if self.in_channels not in (1, 2):
            raise ValueError("discriminator takes 1 or 2 input channels")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def freq_sizes(self) -> list[int]:
        return _freq_chain(self.n_bins, len(self.channels))

    @property
    def head_features(self) -> int:
        return self.channels[-1] * self.freq_sizes[-1]


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

class CausalConv(nn.Module):
    """Valid frequency conv (stride 2) with past-side zero padding in time."""

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple):
        super().__init__()
        self.pad_t = kernel[0] - 1
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=(1, 2))

    def forward(self, x):
        if self.pad_t:
            x = F.pad(x, (0, 0, self.pad_t, 0))
        return self.conv(x)


class CausalDeconv(nn.Module):
    """Transposed mirror of CausalConv; pins the frequency size to the
    mirrored encoder stage via output_padding and crops the trailing time
    frames so output frame t never draws on inputs newer than t (keeping the
    convolutional path causal end to end)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple, freq_in: int, freq_out: int):
        super().__init__()
        out_pad = freq_out - ((freq_in - 1) * 2 + kernel[1])
        if out_pad not in (0, 1):
            raise ValueError(
                f"cannot reach {freq_out} bins from {freq_in} with kernel {kernel[1]}"
            )
        self.crop_t = kernel[0] - 1
        self.deconv = nn.ConvTranspose2d(
            in_ch, out_ch, kernel, stride=(1, 2), output_padding=(0, out_pad)
        )

    def forward(self, x):
        y = self.deconv(x)
        return y[:, :, : y.shape[2] - self.crop_t, :] if self.crop_t else y


def _encoder_kernels(n_layers: int) -> list[tuple]:
    return [(1, 3)] + [(2, 3)] * (n_layers - 1)


class MaskGenerator(nn.Module):
    """Conv encoder -> (optional) BiLSTM bottleneck -> transposed-conv decoder
    with per-stage skip concatenation; sigmoid mask output."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        chans = spec.encoder_channels
        kernels = _encoder_kernels(len(chans))
        freqs = spec.freq_sizes

        self.encoder = nn.ModuleList()
        in_ch = 1
        for out_ch, kernel in zip(chans, kernels):
            self.encoder.append(
                nn.Sequential(CausalConv(in_ch, out_ch, kernel), nn.BatchNorm2d(out_ch), nn.ELU())
            )
            in_ch = out_ch

        if spec.recurrent:
            feats = spec.bottleneck_features
            self.lstm = nn.LSTM(
                feats, spec.lstm_hidden, num_layers=spec.lstm_layers,
                batch_first=True, bidirectional=True,
            )
            self.projection = nn.Linear(2 * spec.lstm_hidden, feats)
        else:
            self.lstm = None
            self.projection = None

        self.decoder = nn.ModuleList()
        dec_out = list(reversed(chans[:-1])) + [1]
        dec_kernels = list(reversed(kernels))
        for i in range(len(chans)):
            in_ch = 2 * chans[-1 - i]
            block = CausalDeconv(
                in_ch, dec_out[i], dec_kernels[i], freq_in=freqs[-1 - i], freq_out=freqs[-2 - i]
            )
            if i < len(chans) - 1:
                self.decoder.append(
                    nn.Sequential(block, nn.BatchNorm2d(dec_out[i]), nn.ELU())
                )
            else:
                self.decoder.append(nn.Sequential(block, nn.Sigmoid()))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != self.spec.n_bins:
            raise ValueError(
                f"expected (batch, frames, {self.spec.n_bins}) features, got {tuple(x.shape)}"
            )
        h = x.unsqueeze(1)
        skips = []
        for block in self.encoder:
            h = block(h)
            skips.append(h)
        if self.lstm is not None:
            b, c, t, f = h.shape
            seq = h.permute(0, 2, 1, 3).reshape(b, t, c * f)
            seq, _ = self.lstm(seq)
            seq = self.projection(seq)
            h = seq.reshape(b, t, c, f).permute(0, 2, 1, 3)
        for i, block in enumerate(self.decoder):
            h = torch.cat([h, skips[-1 - i]], dim=1)
            h = block(h)
        return h.squeeze(1)


class RecurrentBaseline(nn.Module):
    """Frame-wise recurrent mask estimator: stacked (Bi)LSTM + sigmoid dense."""

    def __init__(self, spec: RecurrentBaselineSpec):
        super().__init__()
        self.spec = spec
        self.lstm = nn.LSTM(
            spec.n_bins, spec.hidden, num_layers=spec.layers,
            batch_first=True, bidirectional=spec.bidirectional,
        )
        width = spec.hidden * (2 if spec.bidirectional else 1)
        self.head = nn.Linear(width, spec.n_bins)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != self.spec.n_bins:
            raise ValueError(
                f"expected (batch, frames, {self.spec.n_bins}) features, got {tuple(x.shape)}"
            )
        seq, _ = self.lstm(x)
        return torch.sigmoid(self.head(seq))


class Discriminator(nn.Module):
    """Conv stack mirroring the encoder (leaky ReLU, no normalization), then
    time-average pooling and a linear head to one pre-sigmoid logit; accepts
    any frame count, which the whole-utterance metric family relies on."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        kernels = _encoder_kernels(len(spec.channels))
        layers = []
        in_ch = spec.in_channels
        for out_ch, kernel in zip(spec.channels, kernels):
            layers.append(CausalConv(in_ch, out_ch, kernel))
            in_ch = out_ch
        self.convs = nn.ModuleList(layers)
        self.head = nn.Linear(spec.head_features, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels or x.shape[-1] != self.spec.n_bins:
            raise ValueError(
                f"expected (batch, {self.spec.in_channels}, frames, {self.spec.n_bins}) "
                f"input, got {tuple(x.shape)}"
            )
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), self.spec.negative_slope)
        h = h.mean(dim=2)                      # pool over frames
        return self.head(h.flatten(1)).squeeze(-1)


# ---------------------------------------------------------------------------
# deterministic initialization
# ---------------------------------------------------------------------------

def _orthogonal(rows: int, cols: int, g: torch.Generator) -> torch.Tensor:
    a = torch.randn(rows, cols, generator=g)
    q, r = torch.linalg.qr(a)
    return q * torch.sign(torch.diagonal(r)).unsqueeze(0)


def init_parameters(module: nn.Module, seed: int):
    """Seeded init: uniform fan-in for conv/linear kernels, per-gate orthogonal
    recurrent kernels, zero biases. Driven by a private generator so results
    do not depend on global RNG state."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / np.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.Linear):
                bound = 1.0 / np.sqrt(m.in_features)
                m.weight.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.LSTM):
                hidden = m.hidden_size
                for name, p in m.named_parameters():
                    if name.startswith("weight_ih"):
                        bound = 1.0 / np.sqrt(p.shape[1])
                        p.uniform_(-bound, bound, generator=g)
                    elif name.startswith("weight_hh"):
                        for gate in range(4):
                            p[gate * hidden : (gate + 1) * hidden] = _orthogonal(hidden, hidden, g)
                    else:
                        p.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# variant assembly
# ---------------------------------------------------------------------------

def generator_spec_for(variant: ModelVariant, scale: str = "desk"):
    """Generator spec for a variant at full scale or the small desk scale used
    throughout the tests (tiny channels, 64-unit bottleneck)."""
    if scale not in ("full", "desk"):
        raise ValueError(f"unknown scale {scale!r}")
    if variant.generator_kind == "recurrent_baseline":
        bidirectional = variant is ModelVariant.BILSTM
        if scale == "full":
            hidden = 128 if bidirectional else 256
        else:
            hidden = 32 if bidirectional else 64
        return RecurrentBaselineSpec(hidden=hidden, bidirectional=bidirectional)
    if scale == "full":
        return GeneratorSpec(recurrent=variant.recurrent)
    return GeneratorSpec(
        encoder_channels=(4, 8, 16, 32, 64), lstm_hidden=64, recurrent=variant.recurrent
    )


def discriminator_spec_for(variant: ModelVariant):
    d_input = variant.discriminator_input
    if d_input is None:
        return None
    return DiscriminatorSpec(in_channels=1 if d_input == "mask" else 2)


def build_generator(spec) -> nn.Module:
    if isinstance(spec, RecurrentBaselineSpec):
        return RecurrentBaseline(spec)
    if isinstance(spec, GeneratorSpec):
        return MaskGenerator(spec)
    raise TypeError(f"not a generator spec: {type(spec).__name__}")


def topology_fingerprint(variant: ModelVariant, gen_spec, disc_spec) -> str:
    payload = {
        "variant": variant.value,
        "generator": {"kind": type(gen_spec).__name__, **asdict(gen_spec)},
        "discriminator": None if disc_spec is None else asdict(disc_spec),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class EnhancementModel:
    """A variant's generator (and discriminator, when adversarial) plus the
    specs that rebuild it; `fingerprint` pins the topology for checkpoints."""

    variant: ModelVariant
    generator: nn.Module
    generator_spec: object
    discriminator: nn.Module | None = None
    discriminator_spec: DiscriminatorSpec | None = None

    @property
    def fingerprint(self) -> str:
        return topology_fingerprint(self.variant, self.generator_spec, self.discriminator_spec)

    def estimate_mask(self, features: torch.Tensor) -> torch.Tensor:
        """Deterministic inference-mode mask for (batch, frames, bins) features."""
        was_training = self.generator.training
        self.generator.eval()
        try:
            with torch.no_grad():
                mask = self.generator(features)
        finally:
            self.generator.train(was_training)
        return mask

    def enhance(self, noisy: Waveform) -> Waveform:
        spec = dsp.stft(noisy)
        features = torch.from_numpy(dsp.log_magnitude(spec).astype(np.float32)).unsqueeze(0)
        mask = self.estimate_mask(features).squeeze(0).numpy().astype(np.float64)
        return dsp.istft(dsp.apply_mask(spec, mask))


def build_model(variant, scale: str = "desk", seed: int = 0) -> EnhancementModel:
    """Construct (and deterministically initialize) a variant's model pair."""
    if not isinstance(variant, ModelVariant):
        variant = ModelVariant.from_name(str(variant))
    gen_spec = generator_spec_for(variant, scale)
    generator = build_generator(gen_spec)
    init_parameters(generator, seed)
    disc_spec = discriminator_spec_for(variant)
    discriminator = None
    if disc_spec is not None:
        discriminator = Discriminator(disc_spec)
        init_parameters(discriminator, seed + 1)
    return EnhancementModel(
        variant=variant,
        generator=generator,
        generator_spec=gen_spec,
        discriminator=discriminator,
        discriminator_spec=disc_spec,
    )
