"""Objective quality metrics: STOI, segmental SNR, LLR, WSS, composite scores,
and the normalized quality score used as the metric-family training target.

PESQ itself is deliberately not reimplemented. The built-in stand-in is a
frequency-weighted segmental SNR mapped onto the PESQ value range; an external
PESQ executable can be plugged in instead. Every report labels the PESQ column
with whichever source produced it, and a failing plugin is a hard error -- we
never fall back silently.
"""

from __future__ import annotations

import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_toeplitz, toeplitz

from . import dsp
from .dsp import Waveform


class QualityError(ValueError):
    """Inputs outside a metric's domain (length mismatch, silence, too short)."""


class PluginError(RuntimeError):
    """External PESQ plugin missing, crashing, or emitting an unparseable score."""


_ACTIVITY_RANGE_DB = 40.0  # frames this far below the loudest clean frame are ignored


def _check_pair(clean: Waveform, degraded: Waveform):
    if clean.sample_rate != degraded.sample_rate:
        raise QualityError("clean/degraded sample rates differ")
    if len(clean) != len(degraded):
        raise QualityError(
            f"clean/degraded lengths differ: {len(clean)} vs {len(degraded)}"
        )


def _frame(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    if len(x) < length:
        raise QualityError(f"signal of {len(x)} samples shorter than one {length}-sample frame")
    n = 1 + (len(x) - length) // hop
    return np.lib.stride_tricks.sliding_window_view(x, length)[::hop][:n]


def _active_frames(clean_frames: np.ndarray) -> np.ndarray:
    """Boolean mask of frames within 40 dB of the loudest clean frame."""
    energy = np.sum(clean_frames * clean_frames, axis=1)
    peak = energy.max()
    if peak <= 0.0:
        raise QualityError("clean reference is silent: no active frames")
    return energy >= peak * 10.0 ** (-_ACTIVITY_RANGE_DB / 10.0)


# ---------------------------------------------------------------------------
# segmental SNR
# ---------------------------------------------------------------------------

def seg_snr(clean: Waveform, degraded: Waveform) -> float:
    """Mean per-frame SNR in dB over active frames, each frame clamped to [-10, 35].

    Frames are 400 samples with hop 160 (the analysis framing); a frame is
    active when its clean energy is within 40 dB of the loudest clean frame.
    """
    _check_pair(clean, degraded)
    c = _frame(clean.samples, dsp.FRAME_LENGTH, dsp.HOP)
    d = _frame(degraded.samples, dsp.FRAME_LENGTH, dsp.HOP)
    active = _active_frames(c)
    sig = np.sum(c * c, axis=1)
    err = np.sum((c - d) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig / np.maximum(err, 1e-300))
    snr = np.clip(snr, -10.0, 35.0)
    return float(np.mean(snr[active]))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30       # frames per intermediate-intelligibility segment (384 ms)
_STOI_BETA = -15.0   # lower SDR bound for the clipping step


def _stoi_window(n: int) -> np.ndarray:
    # MATLAB-style hanning: no zero endpoints
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(1, n + 1) / (n + 1)))


def _third_octave_bands() -> np.ndarray:
    f = np.linspace(0, _STOI_RATE, _STOI_FFT + 1)[: _STOI_FFT // 2 + 1]
    k = np.arange(_STOI_BANDS)
    cf = _STOI_MIN_FREQ * 2.0 ** (k / 3.0)
    fl = np.sqrt(cf * _STOI_MIN_FREQ * 2.0 ** ((k - 1) / 3.0))
    fr = np.sqrt(cf * _STOI_MIN_FREQ * 2.0 ** ((k + 1) / 3.0))
    bands = np.zeros((_STOI_BANDS, len(f)))
    for i in range(_STOI_BANDS):
        lo = int(np.argmin((f - fl[i]) ** 2))
        hi = int(np.argmin((f - fr[i]) ** 2))
        bands[i, lo:hi] = 1.0
    if np.any(bands.sum(axis=1) == 0):
        raise QualityError("empty one-third-octave band; check band layout")
    return bands


_OBM = _third_octave_bands()


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames where the CLEAN signal is >40 dB below its loudest frame,
    then rebuild both signals by overlap-adding the kept windowed frames."""
    w = _stoi_window(_STOI_FRAME)
    starts = np.arange(0, len(x) - _STOI_FRAME + 1, _STOI_HOP)
    if len(starts) == 0:
        raise QualityError("signal shorter than one intelligibility frame")
    frames_x = np.stack([x[s : s + _STOI_FRAME] * w for s in starts])
    level = 20.0 * np.log10(
        np.maximum(np.linalg.norm(frames_x, axis=1), 1e-300) / math.sqrt(_STOI_FRAME)
    )
    keep = level - level.max() + _ACTIVITY_RANGE_DB > 0
    if not np.any(keep):
        raise QualityError("no active frames after silence removal")
    kept = np.flatnonzero(keep)
    out_len = (len(kept) - 1) * _STOI_HOP + _STOI_FRAME
    x_out = np.zeros(out_len)
    y_out = np.zeros(out_len)
    for out_i, j in enumerate(kept):
        o = out_i * _STOI_HOP
        s = starts[j]
        x_out[o : o + _STOI_FRAME] += x[s : s + _STOI_FRAME] * w
        y_out[o : o + _STOI_FRAME] += y[s : s + _STOI_FRAME] * w
    return x_out, y_out


def _stoi_spectra(x: np.ndarray) -> np.ndarray:
    frames = _frame(x, _STOI_FRAME, _STOI_HOP) * _stoi_window(_STOI_FRAME)
    return np.fft.rfft(frames, n=_STOI_FFT, axis=1)


def stoi(clean: Waveform, degraded: Waveform) -> float:
    """Short-time objective intelligibility in [0, 1].

    10 kHz internal rate, clean-driven silent-frame removal, 15 one-third-octave
    bands from 150 Hz, 384 ms segments with per-band energy normalization and
    SDR clipping at -15 dB, averaged band/segment correlation.
    """
    _check_pair(clean, degraded)
    x = dsp.resample(clean, _STOI_RATE).samples
    y = dsp.resample(degraded, _STOI_RATE).samples
    x, y = _remove_silent_frames(x, y)

    bands_x = np.sqrt(np.maximum(_OBM @ np.abs(_stoi_spectra(x).T) ** 2, 0.0))
    bands_y = np.sqrt(np.maximum(_OBM @ np.abs(_stoi_spectra(y).T) ** 2, 0.0))
    n_frames = bands_x.shape[1]
    if n_frames < _STOI_SEG:
        raise QualityError(
            f"only {n_frames} frames after silence removal; need >= {_STOI_SEG}"
        )

    c = 10.0 ** (-_STOI_BETA / 20.0)
    total = 0.0
    n_segments = n_frames - _STOI_SEG + 1
    for m in range(n_segments):
        seg_x = bands_x[:, m : m + _STOI_SEG]
        seg_y = bands_y[:, m : m + _STOI_SEG]
        alpha = np.sqrt(
            np.sum(seg_x**2, axis=1, keepdims=True)
            / np.maximum(np.sum(seg_y**2, axis=1, keepdims=True), 1e-300)
        )
        seg_y = np.minimum(alpha * seg_y, seg_x * (1.0 + c))
        xn = seg_x - seg_x.mean(axis=1, keepdims=True)
        yn = seg_y - seg_y.mean(axis=1, keepdims=True)
        xn /= np.maximum(np.linalg.norm(xn, axis=1, keepdims=True), 1e-300)
        yn /= np.maximum(np.linalg.norm(yn, axis=1, keepdims=True), 1e-300)
        total += float(np.sum(xn * yn)) / _STOI_BANDS
    return float(np.clip(total / n_segments, 0.0, 1.0))


# ---------------------------------------------------------------------------
# LLR
# ---------------------------------------------------------------------------

_LPC_RATE = 8000
_LPC_ORDER = 10


def _lpc(frame: np.ndarray, order: int):
    """Autocorrelation-method LPC: returns (autocorr lags, [1, a_1..a_p]) or
    None for frames where the normal equations are degenerate."""
    n = len(frame)
    lags = np.array([np.dot(frame[: n - k], frame[k:]) for k in range(order + 1)])
    if lags[0] <= 0.0:
        return None
    try:
        coefs = solve_toeplitz((lags[:order], lags[:order]), -lags[1 : order + 1])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(coefs)):
        return None
    return lags, np.concatenate(([1.0], coefs))


def llr(clean: Waveform, degraded: Waveform) -> float:
    """Log-likelihood ratio at 8 kHz, LPC order 10, 30 ms Hann frames with
    7.5 ms hop; aggregate is the mean of the lowest 95% of frame values.
    Degenerate frames (singular normal equations, nonpositive ratio) are skipped."""
    _check_pair(clean, degraded)
    c = dsp.resample(clean, _LPC_RATE).samples
    d = dsp.resample(degraded, _LPC_RATE).samples
    win_len = int(round(30 * _LPC_RATE / 1000))
    hop = win_len // 4
    w = _stoi_window(win_len)
    frames_c = _frame(c, win_len, hop) * w
    frames_d = _frame(d, win_len, hop) * w

    values = []
    for fc, fd in zip(frames_c, frames_d):
        got_c = _lpc(fc, _LPC_ORDER)
        got_d = _lpc(fd, _LPC_ORDER)
        if got_c is None or got_d is None:
            continue
        lags_c, a_c = got_c
        _, a_d = got_d
        r = toeplitz(lags_c)
        num = a_d @ r @ a_d
        den = a_c @ r @ a_c
        if num <= 0.0 or den <= 0.0:
            continue
        values.append(math.log(num / den))
    if not values:
        raise QualityError("no stable frames for LLR")
    values = np.sort(np.array(values))
    keep = max(1, int(round(0.95 * len(values))))
    return float(np.mean(values[:keep]))


# ---------------------------------------------------------------------------
# WSS
# ---------------------------------------------------------------------------

_WSS_KMAX = 20.0     # Klatt's global-peak weighting constant
_WSS_KLOCMAX = 1.0   # Klatt's local-peak weighting constant

_CENT_FREQ = np.array([
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372, 703.378,
    798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70, 1794.16,
    1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63,
])
_BANDWIDTH = np.array([
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056, 95.3398,
    105.411, 116.256, 127.914, 140.423, 153.823, 168.154, 183.457, 199.776,
    217.153, 235.631, 255.255, 276.072, 298.126, 321.465, 346.136,
])


def _critical_band_filters(n_fft: int, rate: int) -> np.ndarray:
    """Gaussian critical-band filters, truncated 30 dB below their peaks."""
    half = n_fft // 2
    max_freq = rate / 2
    min_factor = math.exp(-30.0 / (2.0 * 2.303))
    filters = np.zeros((len(_CENT_FREQ), half))
    j = np.arange(half)
    for i in range(len(_CENT_FREQ)):
        f0 = (_CENT_FREQ[i] / max_freq) * half
        bw = (_BANDWIDTH[i] / max_freq) * half
        norm_factor = math.log(_BANDWIDTH[0]) - math.log(_BANDWIDTH[i])
        shape = np.exp(-11.0 * ((j - math.floor(f0)) / bw) ** 2 + norm_factor)
        filters[i] = np.where(shape > min_factor, shape, 0.0)
    return filters


def _nearest_peak(energy: np.ndarray, slope: np.ndarray) -> np.ndarray:
    """Klatt's nearest-peak search: walk uphill to the right on rising slopes,
    uphill to the left on falling ones."""
    n_bands = len(energy)
    peaks = np.empty(n_bands - 1)
    for i in range(n_bands - 1):
        n = i
        if slope[i] > 0:
            while n < n_bands - 1 and slope[n] > 0:
                n += 1
            peaks[i] = energy[n - 1]
        else:
            while n >= 0 and slope[n] <= 0:
                n -= 1
            peaks[i] = energy[n + 1]
    return peaks


def wss(clean: Waveform, degraded: Waveform) -> float:
    """Weighted spectral slope distance (Klatt weights), mean over all frames.

    25 Gaussian critical bands at 8 kHz, 30 ms Hann frames with 7.5 ms hop;
    band energies floored at 1e-10 before the dB conversion.
    """
    _check_pair(clean, degraded)
    c = dsp.resample(clean, _LPC_RATE).samples
    d = dsp.resample(degraded, _LPC_RATE).samples
    win_len = int(round(30 * _LPC_RATE / 1000))
    hop = win_len // 4
    n_fft = int(2 ** math.ceil(math.log2(2 * win_len)))
    filters = _critical_band_filters(n_fft, _LPC_RATE)
    w = _stoi_window(win_len)
    frames_c = _frame(c, win_len, hop) * w
    frames_d = _frame(d, win_len, hop) * w

    spec_c = np.abs(np.fft.fft(frames_c, n=n_fft, axis=1)[:, : n_fft // 2]) ** 2
    spec_d = np.abs(np.fft.fft(frames_d, n=n_fft, axis=1)[:, : n_fft // 2]) ** 2
    energy_c = 10.0 * np.log10(np.maximum(spec_c @ filters.T, 1e-10))
    energy_d = 10.0 * np.log10(np.maximum(spec_d @ filters.T, 1e-10))

    distortions = np.empty(len(frames_c))
    for f in range(len(frames_c)):
        ec, ed = energy_c[f], energy_d[f]
        slope_c = np.diff(ec)
        slope_d = np.diff(ed)
        peak_c = _nearest_peak(ec, slope_c)
        peak_d = _nearest_peak(ed, slope_d)
        w_clean = (_WSS_KMAX / (_WSS_KMAX + ec.max() - ec[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + peak_c - ec[:-1])
        )
        w_degr = (_WSS_KMAX / (_WSS_KMAX + ed.max() - ed[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + peak_d - ed[:-1])
        )
        weights = 0.5 * (w_clean + w_degr)
        distortions[f] = float(
            np.dot(weights, (slope_c - slope_d) ** 2) / np.sum(weights)
        )
    return float(np.mean(distortions))


# ---------------------------------------------------------------------------
# composite measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeScores:
    csig: float
    cbak: float
    covl: float


def composite(pesq: float, llr_value: float, wss_value: float, segsnr: float) -> CompositeScores:
    """Regression-based composite listening scores, each clipped to [1, 5]."""
    csig = 3.093 - 1.029 * llr_value + 0.603 * pesq - 0.009 * wss_value
    cbak = 1.634 + 0.478 * pesq - 0.007 * wss_value + 0.063 * segsnr
    covl = 1.594 + 0.805 * pesq - 0.512 * llr_value - 0.007 * wss_value
    clip = lambda v: float(min(5.0, max(1.0, v)))
    return CompositeScores(csig=clip(csig), cbak=clip(cbak), covl=clip(covl))


# ---------------------------------------------------------------------------
# normalized quality score (metric-family target) and PESQ sources
# ---------------------------------------------------------------------------

def fw_seg_snr(clean: Waveform, degraded: Waveform) -> float:
    """Frequency-weighted segmental SNR in dB over active frames.

    Per frame, per-bin SNRs 10*log10(|S|^2 / (|S|-|S_hat|)^2) are clamped to
    [-10, 35] and averaged with weights |S|^0.2 normalized within the frame.
    """
    _check_pair(clean, degraded)
    spec_c = np.abs(dsp.stft(clean).values)
    spec_d = np.abs(dsp.stft(degraded).values)
    frames = _frame(clean.samples, dsp.FRAME_LENGTH, dsp.HOP)
    active = _active_frames(frames)

    weights = spec_c**0.2
    weights /= np.maximum(weights.sum(axis=1, keepdims=True), 1e-300)
    with np.errstate(divide="ignore"):
        bin_snr = 10.0 * np.log10(spec_c**2 / np.maximum((spec_c - spec_d) ** 2, 1e-300))
    bin_snr = np.clip(bin_snr, -10.0, 35.0)
    frame_snr = np.sum(weights * bin_snr, axis=1)
    return float(np.mean(frame_snr[active]))


def surrogate_pesq(clean: Waveform, degraded: Waveform) -> float:
    """Built-in PESQ stand-in on the PESQ value range [-0.5, 4.5]: the
    frequency-weighted segmental SNR mapped linearly from [-10, 35] dB."""
    q = (fw_seg_snr(clean, degraded) + 10.0) / 45.0
    return 5.0 * float(np.clip(q, 0.0, 1.0)) - 0.5


def normalized_quality(pesq_value: float) -> float:
    """Map a PESQ-range score to the [0, 1] target the metric family trains on."""
    return float(np.clip((pesq_value + 0.5) / 5.0, 0.0, 1.0))


SURROGATE_LABEL = "PESQ[fwsnr-surrogate]"


class PesqPlugin:
    """External PESQ executable: called as `<exe> <clean.wav> <degraded.wav>`,
    must print a score whose last whitespace-separated stdout token parses as a
    float. Any failure raises PluginError -- no silent fallback."""

    def __init__(self, executable):
        self.executable = str(executable)
        if shutil.which(self.executable) is None and not Path(self.executable).exists():
            raise PluginError(f"PESQ plugin not found: {self.executable}")
        self.label = f"PESQ[plugin:{Path(self.executable).name}]"

    def __call__(self, clean: Waveform, degraded: Waveform) -> float:
        with tempfile.TemporaryDirectory(prefix="pesq-plugin-") as tmp:
            clean_path = Path(tmp) / "clean.wav"
            degraded_path = Path(tmp) / "degraded.wav"
            dsp.write_wav(clean_path, clean)
            dsp.write_wav(degraded_path, degraded)
            try:
                proc = subprocess.run(
                    [self.executable, str(clean_path), str(degraded_path)],
                    capture_output=True,
                    text=True,
                    timeout=120,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise PluginError(f"PESQ plugin failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise PluginError(
                f"PESQ plugin exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        tokens = proc.stdout.split()
        if not tokens:
            raise PluginError("PESQ plugin printed nothing")
        try:
            return float(tokens[-1])
        except ValueError as exc:
            raise PluginError(f"PESQ plugin output not a score: {tokens[-1]!r}") from exc


def make_pesq_source(spec: str | None):
    """Resolve a PESQ source string to (callable, column label).

    None or "fwsnr" selects the built-in surrogate; "plugin:<path>" (or a bare
    executable path) selects an external plugin.
    """
    if spec is None or spec == "fwsnr":
        return surrogate_pesq, SURROGATE_LABEL
    path = spec[len("plugin:"):] if spec.startswith("plugin:") else spec
    plugin = PesqPlugin(path)
    return plugin, plugin.label


def evaluate_pair(clean: Waveform, degraded: Waveform, pesq_fn=surrogate_pesq) -> dict:
    """All scalar metrics for one (clean, degraded) pair."""
    pesq_value = float(pesq_fn(clean, degraded))
    llr_value = llr(clean, degraded)
    wss_value = wss(clean, degraded)
    segsnr_value = seg_snr(clean, degraded)
    comp = composite(pesq_value, llr_value, wss_value, segsnr_value)
    return {
        "pesq": pesq_value,
        "stoi": stoi(clean, degraded),
        "segsnr": segsnr_value,
        "llr": llr_value,
        "wss": wss_value,
        "csig": comp.csig,
        "cbak": comp.cbak,
        "covl": comp.covl,
    }
