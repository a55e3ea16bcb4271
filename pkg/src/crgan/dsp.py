"""STFT analysis/synthesis, T-F masking, and WAV I/O.

All spectral processing in this package runs at 16 kHz with 25 ms periodic Hann
frames (400 samples), 10 ms hop (160 samples) and a 512-point FFT, i.e. 257
one-sided bins. Frames never straddle the signal end: a trailing partial frame
is discarded by analysis and synthesis pads the tail back with zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

SAMPLE_RATE = 16000
FRAME_LENGTH = 400
HOP = 160
FFT_SIZE = 512
N_BINS = FFT_SIZE // 2 + 1
EPS = 1e-8

# periodic Hann, the analysis and synthesis window everywhere
_WINDOW = get_window("hann", FRAME_LENGTH, fftbins=True)


@dataclass(frozen=True)
class Waveform:
    """A mono float64 waveform. Amplitudes are only forced into [-1, 1] at file I/O."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT, frames along axis 0, 257 bins along axis 1."""

    values: np.ndarray
    original_length: int
    sample_rate: int = SAMPLE_RATE
    frame_length: int = FRAME_LENGTH
    hop: int = HOP
    fft_size: int = FFT_SIZE

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.iscomplexobj(values):
            values = values.astype(np.complex128)
        if values.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {values.shape}")
        n_bins = self.fft_size // 2 + 1
        if values.shape[1] != n_bins:
            raise ValueError(
                f"expected {n_bins} bins for fft_size {self.fft_size}, got {values.shape[1]}"
            )
        if self.fft_size < self.frame_length:
            raise ValueError("fft_size must be >= frame_length")
        if not (0 < self.hop <= self.frame_length):
            raise ValueError("hop must be in (0, frame_length]")
        if self.original_length < self.frame_length:
            raise ValueError("original_length shorter than one frame")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


def n_frames_for(n_samples: int, frame_length: int = FRAME_LENGTH, hop: int = HOP) -> int:
    """Frame count for analysis without centering; trailing partial frame dropped."""
    if n_samples < frame_length:
        return 0
    return 1 + (n_samples - frame_length) // hop


def stft(wave: Waveform) -> Spectrogram:
    """Analysis STFT: Hann-windowed 400-sample frames, hop 160, zero-padded to 512."""
    x = wave.samples
    if len(x) < FRAME_LENGTH:
        raise ValueError(
            f"signal of {len(x)} samples is shorter than one frame ({FRAME_LENGTH})"
        )
    n = n_frames_for(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LENGTH)[:: HOP][:n]
    values = np.fft.rfft(frames * _WINDOW, n=FFT_SIZE, axis=1)
    return Spectrogram(values=values, original_length=len(x), sample_rate=wave.sample_rate)


def istft(spec: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis with per-sample window-energy normalization.

    Exact inverse of `stft` wherever the summed squared window is nonzero (i.e.
    everywhere but the very first/last window edge samples); the tail that
    analysis dropped comes back as zeros so the output length always equals
    `original_length`.
    """
    if spec.frame_length != FRAME_LENGTH or spec.hop != HOP or spec.fft_size != FFT_SIZE:
        raise ValueError("spectrogram metadata does not match the analysis configuration")
    frames_td = np.fft.irfft(spec.values, n=spec.fft_size, axis=1)[:, : spec.frame_length]
    covered = (spec.n_frames - 1) * spec.hop + spec.frame_length
    num = np.zeros(covered)
    den = np.zeros(covered)
    wsq = _WINDOW * _WINDOW
    for t in range(spec.n_frames):
        start = t * spec.hop
        num[start : start + spec.frame_length] += frames_td[t] * _WINDOW
        den[start : start + spec.frame_length] += wsq
    out = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    if spec.original_length >= covered:
        out = np.pad(out, (0, spec.original_length - covered))
    else:
        out = out[: spec.original_length]
    return Waveform(samples=out, sample_rate=spec.sample_rate)


def magnitude(spec: Spectrogram) -> np.ndarray:
    return np.abs(spec.values)


def log_magnitude(spec: Spectrogram, floor: float = EPS) -> np.ndarray:
    """Natural-log magnitude, floored at `floor` so silence maps to log(floor)."""
    return np.log(np.maximum(np.abs(spec.values), floor))


def _check_aligned(a: Spectrogram, b: Spectrogram):
    if a.values.shape != b.values.shape:
        raise ValueError(f"spectrogram shapes differ: {a.values.shape} vs {b.values.shape}")


def phase_sensitive_mask(
    clean: Spectrogram, noisy: Spectrogram, floor: float = EPS
) -> np.ndarray:
    """Phase-sensitive mask clip(|S|/|Y| * cos(theta_S - theta_Y), 0, 1).

    The magnitude ratio is floored in the denominator; the clip keeps the mask a
    valid per-bin gain in [0, 1] (negative cosine regions truncate to 0).
    """
    _check_aligned(clean, noisy)
    ratio = np.abs(clean.values) / np.maximum(np.abs(noisy.values), floor)
    cos = np.cos(np.angle(clean.values) - np.angle(noisy.values))
    return np.clip(ratio * cos, 0.0, 1.0)


def apply_mask(noisy: Spectrogram, mask: np.ndarray) -> Spectrogram:
    """Scale each T-F point's magnitude by the mask, keeping the noisy phase."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != noisy.values.shape:
        raise ValueError(f"mask shape {mask.shape} != spectrogram shape {noisy.values.shape}")
    if not np.all(np.isfinite(mask)):
        raise ValueError("mask contains non-finite values")
    if mask.min() < 0.0:
        raise ValueError("mask values must be non-negative")
    return replace(noisy, values=mask * noisy.values)


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Polyphase resampling to `target_rate` (no-op when rates already match)."""
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if wave.sample_rate == target_rate:
        return wave
    g = np.gcd(wave.sample_rate, target_rate)
    out = resample_poly(wave.samples, target_rate // g, wave.sample_rate // g)
    return Waveform(samples=out, sample_rate=target_rate)


def write_wav(path, wave: Waveform):
    """16-bit PCM mono; amplitudes are clipped to [-1, 1] before quantization."""
    x = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(path, wave.sample_rate, np.round(x * 32767.0).astype(np.int16))


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"{path}: unsupported WAV dtype {data.dtype}")
    return Waveform(samples=samples, sample_rate=int(rate))
