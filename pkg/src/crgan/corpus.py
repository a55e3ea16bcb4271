"""Synthetic speech/noise corpus: generation, SNR mixing, manifest, chunking.

Everything is reproducible from integer seeds: each record names the seeds that
produced it, and regenerating a record yields bit-identical WAV files. An
ingestion mode covers pre-recorded clean/noisy WAV directory pairs instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import dsp
from .dsp import Waveform

NOISE_KINDS = ("white", "pink", "tonal", "babble", "modulated")

_PEAK_TARGET = 0.95


# ---------------------------------------------------------------------------
# clean-speech surrogate
# ---------------------------------------------------------------------------

_BLOCK_S = 0.010  # formant trajectory update interval

# plausible steady-state (F, bandwidth) ranges for three formants
_FORMANT_RANGES = ((280.0, 850.0), (900.0, 2200.0), (2300.0, 3200.0))
_FORMANT_BW = (60.0, 90.0, 120.0)


def _formant_coeffs(freq: float, bw: float, rate: int):
    """Two-pole resonator; unit-ish gain near the resonance."""
    r = np.exp(-np.pi * bw / rate)
    theta = 2.0 * np.pi * freq / rate
    b = np.array([1.0 - r])
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return b, a


def synthesize_clean(seed: int, duration_s: float, sample_rate: int = dsp.SAMPLE_RATE) -> Waveform:
    """Speech surrogate: harmonic excitation through a time-varying formant
    cascade, gated by a syllable envelope with pauses.

    Fully determined by `seed`; filter state is carried across the 10 ms update
    blocks so trajectories glide without clicks.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    # voiced excitation: harmonics of a slowly wandering f0
    f0_base = rng.uniform(95.0, 220.0)
    vibrato = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    drift = 1.0 + 0.08 * np.sin(2.0 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    f0 = f0_base * vibrato * drift
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    n_harm = max(3, int(3800.0 / f0_base))
    excitation = np.zeros(n)
    for h in range(1, n_harm + 1):
        if h * f0_base > 0.45 * sample_rate:
            break
        excitation += (1.0 / h) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    excitation += 0.02 * rng.standard_normal(n)  # aspiration

    # per-syllable formant targets, linearly interpolated per block
    block = int(round(_BLOCK_S * sample_rate))
    n_blocks = int(np.ceil(n / block))
    syllable_s = rng.uniform(0.16, 0.26)
    blocks_per_syll = max(1, int(round(syllable_s / _BLOCK_S)))
    n_sylls = n_blocks // blocks_per_syll + 2

    targets = np.stack(
        [rng.uniform(lo, hi, size=n_sylls) for (lo, hi) in _FORMANT_RANGES], axis=1
    )
    voiced = rng.random(n_sylls) > 0.25  # some syllable slots are pauses

    out = np.zeros(n)
    zi = [np.zeros(2) for _ in _FORMANT_RANGES]
    env_prev = 0.0
    for b_idx in range(n_blocks):
        s_idx = b_idx // blocks_per_syll
        frac = (b_idx % blocks_per_syll) / blocks_per_syll
        freqs = (1.0 - frac) * targets[s_idx] + frac * targets[min(s_idx + 1, n_sylls - 1)]
        lo = b_idx * block
        hi = min(n, lo + block)
        seg = excitation[lo:hi]
        for k in range(len(_FORMANT_RANGES)):
            b_c, a_c = _formant_coeffs(freqs[k], _FORMANT_BW[k], sample_rate)
            seg, zi[k] = lfilter(b_c, a_c, seg, zi=zi[k])
        # raised-cosine syllable gate, smoothed across blocks
        gate = float(voiced[s_idx]) * (0.5 - 0.5 * np.cos(2.0 * np.pi * min(frac, 1.0)))
        env = np.linspace(env_prev, gate, hi - lo)
        env_prev = gate
        out[lo:hi] = seg * env

    peak = np.max(np.abs(out))
    if peak < 1e-9:
        # pathological draw (all pause slots); force one voiced syllable
        out = excitation * 0.1
        peak = np.max(np.abs(out))
    return Waveform(samples=0.9 * out / peak, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# noise kinds
# ---------------------------------------------------------------------------

def synthesize_noise(
    kind: str, seed: int, n_samples: int, sample_rate: int = dsp.SAMPLE_RATE
) -> Waveform:
    """Unit-RMS noise of the requested kind, fully determined by `seed`."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(n_samples) / sample_rate

    if kind == "white":
        x = rng.standard_normal(n_samples)
    elif kind == "pink":
        white = rng.standard_normal(n_samples)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
        spec[1:] /= np.sqrt(freqs[1:])
        spec[0] = 0.0
        x = np.fft.irfft(spec, n=n_samples)
    elif kind == "tonal":
        f0 = rng.uniform(80.0, 400.0)
        x = np.zeros(n_samples)
        for h in range(1, 11):
            f = h * f0
            if f > 0.45 * sample_rate:
                break
            x += (1.0 / np.sqrt(h)) * np.sin(2.0 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        x *= 1.0 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(0.3, 1.5) * t)
    elif kind == "babble":
        x = np.zeros(n_samples)
        for k in range(6):
            talker = synthesize_clean(seed * 7 + 1013 * k + 1, n_samples / sample_rate, sample_rate)
            x += talker.samples[:n_samples]
    else:  # modulated
        f_mod = rng.uniform(2.0, 8.0)
        env = 1.0 + 0.9 * np.sin(2.0 * np.pi * f_mod * t + rng.uniform(0, 2 * np.pi))
        x = rng.standard_normal(n_samples) * env

    rms = np.sqrt(np.mean(x * x))
    if rms < 1e-12:
        raise ValueError(f"degenerate zero-power noise draw for kind {kind!r}")
    return Waveform(samples=x / rms, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = np.asarray(noisy) - np.asarray(clean)
    p_clean = np.mean(np.square(clean))
    p_noise = np.mean(np.square(noise))
    if p_noise <= 0:
        return float("inf")
    return float(10.0 * np.log10(p_clean / p_noise))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> tuple[Waveform, Waveform]:
    """Scale `noise` for an exact global SNR, add, then jointly peak-normalize.

    Returns (clean_out, noisy_out): both scaled by the same constant so the
    clean/noisy relationship (and any mask computed from the pair) is
    unchanged. snr_db=+inf is a passthrough: noisy_out equals clean_out.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    if len(noise) < len(clean):
        raise ValueError("noise shorter than clean signal")
    c = clean.samples
    p_clean = np.mean(c * c)
    if p_clean <= 0:
        raise ValueError("clean signal has zero power")

    if np.isinf(snr_db) and snr_db > 0:
        mixed = c.copy()
    else:
        d = noise.samples[: len(c)]
        p_noise = np.mean(d * d)
        if p_noise <= 0:
            raise ValueError("noise signal has zero power")
        gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
        mixed = c + gain * d

    peak = max(np.max(np.abs(c)), np.max(np.abs(mixed)))
    scale = _PEAK_TARGET / peak if peak > 0 else 1.0
    return (
        Waveform(samples=c * scale, sample_rate=clean.sample_rate),
        Waveform(samples=mixed * scale, sample_rate=clean.sample_rate),
    )


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureRecord:
    """One clean/noisy pair, either synthesized from seeds or ingested from paths."""

    id: str
    split: str
    duration_s: float | None = None
    sample_rate: int = dsp.SAMPLE_RATE
    clean_seed: int | None = None
    noise_kind: str | None = None
    noise_seed: int | None = None
    snr_db: float | None = None
    clean_path: str | None = None
    noisy_path: str | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train/test, got {self.split!r}")
        synth = self.clean_seed is not None
        if synth:
            missing = [
                name
                for name in ("noise_kind", "noise_seed", "snr_db", "duration_s")
                if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"record {self.id}: synthetic record missing {missing}")
            if self.noise_kind not in NOISE_KINDS:
                raise ValueError(f"record {self.id}: unknown noise kind {self.noise_kind!r}")
        elif self.clean_path is None or self.noisy_path is None:
            raise ValueError(
                f"record {self.id}: needs either generation seeds or clean/noisy paths"
            )

    @property
    def is_synthetic(self) -> bool:
        return self.clean_seed is not None


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 32
    n_test: int = 8
    duration_s: float = 1.2
    seed: int = 0
    sample_rate: int = dsp.SAMPLE_RATE
    train_noise_kinds: tuple = NOISE_KINDS
    test_noise_kinds: tuple = NOISE_KINDS
    train_snrs_db: tuple = (0.0, 5.0, 10.0, 15.0)
    test_snrs_db: tuple = (2.5, 7.5, 12.5, 17.5)

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test < 0:
            raise ValueError("split sizes must be positive (test may be 0)")
        if self.duration_s < (dsp.FRAME_LENGTH + 1) / self.sample_rate:
            raise ValueError("utterances must cover at least one analysis frame")
        for kinds in (self.train_noise_kinds, self.test_noise_kinds):
            unknown = set(kinds) - set(NOISE_KINDS)
            if unknown:
                raise ValueError(f"unknown noise kinds {sorted(unknown)}")
        kinds_disjoint = not (set(self.train_noise_kinds) & set(self.test_noise_kinds))
        snrs_disjoint = not (set(self.train_snrs_db) & set(self.test_snrs_db))
        if self.n_test > 0 and not (kinds_disjoint or snrs_disjoint):
            raise ValueError(
                "train/test conditions overlap: need disjoint noise kinds or disjoint SNR grids"
            )


_SPLIT_SEED_OFFSET = {"train": 0, "test": 500_000}
_NOISE_SEED_OFFSET = 777_777


def build_manifest(config: CorpusConfig) -> list[MixtureRecord]:
    """Deterministic manifest: stable ids, disjoint clean seeds across splits,
    noise kinds and SNRs cycled so conditions are balanced."""
    records = []
    for split, count, kinds, snrs in (
        ("train", config.n_train, config.train_noise_kinds, config.train_snrs_db),
        ("test", config.n_test, config.test_noise_kinds, config.test_snrs_db),
    ):
        for i in range(count):
            clean_seed = config.seed * 1_000_003 + _SPLIT_SEED_OFFSET[split] + i
            records.append(
                MixtureRecord(
                    id=f"{split[:2]}-{i:05d}",
                    split=split,
                    duration_s=config.duration_s,
                    sample_rate=config.sample_rate,
                    clean_seed=clean_seed,
                    noise_kind=kinds[i % len(kinds)],
                    noise_seed=clean_seed + _NOISE_SEED_OFFSET,
                    snr_db=float(snrs[(i // len(kinds)) % len(snrs)]),
                )
            )
    return records


def synthesize_record(record: MixtureRecord) -> tuple[Waveform, Waveform]:
    """(clean, noisy) pair for a synthetic record, reproducible bit-for-bit."""
    if not record.is_synthetic:
        raise ValueError(f"record {record.id} is not synthetic; load it from its paths")
    clean = synthesize_clean(record.clean_seed, record.duration_s, record.sample_rate)
    noise = synthesize_noise(record.noise_kind, record.noise_seed, len(clean), record.sample_rate)
    return mix_at_snr(clean, noise, record.snr_db)


def load_record_audio(record: MixtureRecord, root=None) -> tuple[Waveform, Waveform]:
    """(clean, noisy) pair from disk when paths exist, else regenerated from seeds."""
    if record.clean_path is not None and record.noisy_path is not None:
        base = Path(root) if root is not None else Path(".")
        clean = dsp.read_wav(base / record.clean_path)
        noisy = dsp.read_wav(base / record.noisy_path)
        clean = dsp.resample(clean, record.sample_rate)
        noisy = dsp.resample(noisy, record.sample_rate)
        if len(clean) != len(noisy):
            n = min(len(clean), len(noisy))
            clean = Waveform(clean.samples[:n], clean.sample_rate)
            noisy = Waveform(noisy.samples[:n], noisy.sample_rate)
        return clean, noisy
    return synthesize_record(record)


def write_manifest(records: list[MixtureRecord], path):
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            row = {k: v for k, v in asdict(rec).items() if v is not None}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path) -> list[MixtureRecord]:
    records = []
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad manifest line: {exc}") from exc
            records.append(MixtureRecord(**row))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate record ids")
    return records


def save_corpus(records: list[MixtureRecord], out_dir) -> list[MixtureRecord]:
    """Render every record to <out>/<split>/{clean,noisy}/<id>.wav and write the
    manifest (with file paths added) to <out>/manifest.jsonl."""
    out_dir = Path(out_dir)
    saved = []
    for rec in records:
        clean, noisy = load_record_audio(rec, root=out_dir)
        rel_clean = Path(rec.split) / "clean" / f"{rec.id}.wav"
        rel_noisy = Path(rec.split) / "noisy" / f"{rec.id}.wav"
        for rel, wave in ((rel_clean, clean), (rel_noisy, noisy)):
            target = out_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            dsp.write_wav(target, wave)
        saved.append(replace(rec, clean_path=str(rel_clean), noisy_path=str(rel_noisy)))
    write_manifest(saved, out_dir / "manifest.jsonl")
    return saved


def build_ingestion_manifest(clean_dir, noisy_dir, split: str = "test") -> list[MixtureRecord]:
    """Manifest for matched clean/noisy WAV directories (matching file names)."""
    clean_dir, noisy_dir = Path(clean_dir), Path(noisy_dir)
    names = sorted(p.name for p in clean_dir.glob("*.wav"))
    if not names:
        raise ValueError(f"no .wav files in {clean_dir}")
    extra = sorted(p.name for p in noisy_dir.glob("*.wav") if p.name not in set(names))
    if extra:
        raise ValueError(f"noisy files without a clean counterpart: {extra}")
    records = []
    for name in names:
        noisy_path = noisy_dir / name
        if not noisy_path.exists():
            raise ValueError(f"missing noisy counterpart for {name} in {noisy_dir}")
        records.append(
            MixtureRecord(
                id=Path(name).stem,
                split=split,
                clean_path=str(clean_dir / name),
                noisy_path=str(noisy_path),
            )
        )
    return records


# ---------------------------------------------------------------------------
# features and chunking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSet:
    """Per-utterance training features; arrays are (frames, bins)."""

    noisy_logmag: np.ndarray     # generator input
    target_mask: np.ndarray      # phase-sensitive mask of the pair
    noisy_values: np.ndarray     # complex STFT of the mixture
    clean_values: np.ndarray     # complex STFT of the clean reference
    original_length: int
    record_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.noisy_logmag.shape[0]


def compute_features(clean: Waveform, noisy: Waveform, record_id: str = "") -> FeatureSet:
    if len(clean) != len(noisy):
        raise ValueError("clean/noisy length mismatch")
    clean_spec = dsp.stft(clean)
    noisy_spec = dsp.stft(noisy)
    return FeatureSet(
        noisy_logmag=dsp.log_magnitude(noisy_spec).astype(np.float32),
        target_mask=dsp.phase_sensitive_mask(clean_spec, noisy_spec).astype(np.float32),
        noisy_values=noisy_spec.values.astype(np.complex64),
        clean_values=clean_spec.values.astype(np.complex64),
        original_length=len(noisy),
        record_id=record_id,
    )


def chunk_features(
    features: FeatureSet, chunk_frames: int = 100, policy: str = "drop"
) -> list[FeatureSet]:
    """Split an utterance into non-overlapping fixed-length chunks.

    policy="drop" discards a trailing partial chunk (a 98-frame utterance at
    chunk_frames=100 yields no chunks); policy="pad" zero-pads it instead.
    """
    if chunk_frames <= 0:
        raise ValueError("chunk_frames must be positive")
    if policy not in ("drop", "pad"):
        raise ValueError(f"unknown chunk policy {policy!r}")
    total = features.n_frames
    chunks = []
    n_whole = total // chunk_frames
    for k in range(n_whole):
        sl = slice(k * chunk_frames, (k + 1) * chunk_frames)
        chunks.append(_slice_features(features, sl, chunk_frames, k))
    if policy == "pad" and total % chunk_frames:
        sl = slice(n_whole * chunk_frames, total)
        chunks.append(_slice_features(features, sl, chunk_frames, n_whole))
    return chunks


def _slice_features(features: FeatureSet, sl: slice, chunk_frames: int, index: int) -> FeatureSet:
    def cut(arr):
        seg = arr[sl]
        if seg.shape[0] < chunk_frames:
            pad = np.zeros((chunk_frames - seg.shape[0],) + seg.shape[1:], dtype=seg.dtype)
            seg = np.concatenate([seg, pad], axis=0)
        return seg

    return FeatureSet(
        noisy_logmag=cut(features.noisy_logmag),
        target_mask=cut(features.target_mask),
        noisy_values=cut(features.noisy_values),
        clean_values=cut(features.clean_values),
        original_length=(chunk_frames - 1) * dsp.HOP + dsp.FRAME_LENGTH,
        record_id=f"{features.record_id}#{index}",
    )
