"""Adversarial and supervised training with strict bookkeeping.

Guarantees the rest of the package (and the tests) lean on:
- alternating steps with explicit freezing: the untouched network's parameters
  and buffers are bit-identical before/after each step of its opponent;
- per-step loss accounting: every logged step re-sums weighted components
  against the stated totals (LossBreakdown refuses inconsistent records);
- a NaN/Inf guard that aborts with a diagnostic instead of training on;
- full determinism: given the same config, manifest, and seed, batch order,
  interpolation draws, parameter updates, and epoch logs all reproduce.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import arch, corpus, dsp, losses, quality
from .arch import EnhancementModel, ModelVariant
from .corpus import FeatureSet, MixtureRecord
from .dsp import Spectrogram, Waveform
from .losses import LossBreakdown, LossConfig


class TrainingDiverged(RuntimeError):
    """A loss component went NaN/Inf; carries the step diagnostic."""


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or topology fingerprint mismatch."""


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "CRN-MSE"
    epochs: int = 2
    batch_size: int = 60
    learning_rate: float = 0.002
    chunk_frames: int = 100
    chunk_policy: str = "drop"
    d_steps_per_g: int = 1
    utterances_per_epoch: int | None = None    # metric family only
    validation_fraction: float = 0.05
    scale: str = "desk"
    seed: int = 0
    q_metric: str = "fwsnr"
    lambda_gp: float = losses.DEFAULT_LAMBDA_GP
    lambda_l1: float = losses.DEFAULT_LAMBDA_L1
    lambda_mse: float = losses.DEFAULT_LAMBDA_MSE

    def __post_init__(self):
        v = self.resolved_variant  # validates the name
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if v.loss_family == "metric" and self.batch_size != 1:
            raise ValueError("the metric family trains on whole utterances at batch size 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.chunk_policy not in ("drop", "pad"):
            raise ValueError(f"unknown chunk policy {self.chunk_policy!r}")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if not (0.0 <= self.validation_fraction <= 0.5):
            raise ValueError("validation_fraction must lie in [0, 0.5]")
        if self.scale not in ("full", "desk"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @property
    def resolved_variant(self) -> ModelVariant:
        return ModelVariant.from_name(self.variant)

    def loss_config(self) -> LossConfig | None:
        v = self.resolved_variant
        family = v.loss_family
        if family is None:
            return None
        return LossConfig(
            family=family,
            lambda_gp=self.lambda_gp,
            lambda_l1=self.lambda_l1,
            lambda_mse=self.lambda_mse,
            use_l1=v.uses_l1,
            use_mse=v.uses_mse and family == "metric",
        )


@dataclass
class Batch:
    features: torch.Tensor       # (B, frames, bins) log magnitude
    target_mask: torch.Tensor    # (B, frames, bins)
    items: list                  # underlying FeatureSets


@dataclass
class TrainResult:
    epochs: list
    log_path: Path | None
    checkpoint_paths: list
    model: EnhancementModel


def parameter_digest(module: torch.nn.Module) -> str:
    """sha256 over every parameter and buffer; the freeze-contract witness."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _f(value: torch.Tensor) -> float:
    return float(value.detach())


def _set_requires_grad(module: torch.nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def _assert_finite(parts: dict, epoch: int, step: int):
    bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch}, step {step}: {bad}; "
            "lower the learning rate or inspect the input features"
        )


def _log_magnitude_t(mag: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(mag, min=dsp.EPS))


def _optimizer_for(variant: ModelVariant, params, lr: float):
    if variant in (ModelVariant.LSTM, ModelVariant.BILSTM):
        return torch.optim.RMSprop(params, lr=lr)
    return torch.optim.Adam(params, lr=lr)


class Trainer:
    """Drives one variant over a manifest of mixture records."""

    def __init__(self, records: list[MixtureRecord], config: TrainConfig, root=None):
        self.config = config
        self.variant = config.resolved_variant
        self.loss_config = config.loss_config()
        self.qualify = None
        if self.variant.loss_family == "metric" or config.validation_fraction > 0:
            pesq_fn, _ = quality.make_pesq_source(config.q_metric)
            self.qualify = lambda clean, degraded: quality.normalized_quality(
                pesq_fn(clean, degraded)
            )

        train_records = [r for r in records if r.split == "train"]
        if not train_records:
            raise ValueError("manifest has no train-split records")

        n_val = 0
        if config.validation_fraction > 0 and len(train_records) >= 2:
            n_val = max(1, int(round(config.validation_fraction * len(train_records))))
            n_val = min(n_val, len(train_records) - 1)
        val_rng = np.random.Generator(np.random.PCG64(config.seed + 424_243))
        order = val_rng.permutation(len(train_records))
        val_idx = set(order[:n_val].tolist())

        self.train_features: list[FeatureSet] = []
        self.val_audio: list[tuple[Waveform, Waveform]] = []
        for i, rec in enumerate(train_records):
            clean, noisy = corpus.load_record_audio(rec, root=root)
            if i in val_idx:
                self.val_audio.append((clean, noisy))
            else:
                self.train_features.append(corpus.compute_features(clean, noisy, rec.id))

        if self.variant.loss_family == "metric":
            self.items = self.train_features
            if not self.items:
                raise ValueError("no training utterances left after the validation split")
        else:
            self.items = [
                ch
                for feat in self.train_features
                for ch in corpus.chunk_features(feat, config.chunk_frames, config.chunk_policy)
            ]
            if not self.items:
                raise ValueError(
                    f"no training chunks: utterances are shorter than "
                    f"{config.chunk_frames} frames and the chunk policy drops partials"
                )

        self.model = arch.build_model(self.variant, scale=config.scale, seed=config.seed)
        self.g_optimizer = _optimizer_for(
            self.variant, self.model.generator.parameters(), config.learning_rate
        )
        self.d_optimizer = None
        if self.model.discriminator is not None:
            self.d_optimizer = _optimizer_for(
                self.variant, self.model.discriminator.parameters(), config.learning_rate
            )
        # one stream for every stochastic draw made during training
        self.torch_rng = torch.Generator().manual_seed(config.seed + 12_345)
        self.start_epoch = 1
        self.global_step = 0
        self._epoch = 0

    # ------------------------------------------------------------------
    # data plumbing
    # ------------------------------------------------------------------

    def _epoch_batches(self, epoch: int):
        if self.variant.loss_family == "metric":
            count = self.config.utterances_per_epoch or len(self.items)
            picks = torch.randint(
                len(self.items), (count,), generator=self.torch_rng
            ).tolist()
            groups = [[i] for i in picks]
        else:
            order_rng = np.random.Generator(
                np.random.PCG64(self.config.seed * 100_003 + 7_919 * epoch)
            )
            order = order_rng.permutation(len(self.items)).tolist()
            b = self.config.batch_size
            groups = [order[i : i + b] for i in range(0, len(order), b)]
        for group in groups:
            items = [self.items[i] for i in group]
            yield Batch(
                features=torch.from_numpy(np.stack([it.noisy_logmag for it in items])),
                target_mask=torch.from_numpy(np.stack([it.target_mask for it in items])),
                items=items,
            )

    # ------------------------------------------------------------------
    # discriminator inputs per family
    # ------------------------------------------------------------------

    def _d_logits(self, candidate: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        d_input = self.variant.discriminator_input
        if d_input == "mask":
            x = candidate.unsqueeze(1)
        else:
            x = torch.stack([candidate, reference], dim=1)
        return self.model.discriminator(x)

    def _frozen_mask(self, features: torch.Tensor) -> torch.Tensor:
        """Inference-mode mask for D steps: no grads, no batch-norm buffer writes."""
        return self.model.estimate_mask(features)

    def _metric_pairs(self, batch: Batch, mask: torch.Tensor, for_d_step: bool):
        """Quality-regression inputs: fake-pair logits always; real-pair logits
        and the measured quality target only for D steps (G steps don't use
        them). `mask` may carry generator gradients."""
        item = batch.items[0]
        noisy_mag = torch.from_numpy(np.abs(item.noisy_values).astype(np.float32)).unsqueeze(0)
        clean_mag = torch.from_numpy(np.abs(item.clean_values).astype(np.float32)).unsqueeze(0)
        enhanced_mag = mask * noisy_mag  # the multiplication layer
        log_enh = _log_magnitude_t(enhanced_mag)
        log_clean = _log_magnitude_t(clean_mag)
        fake_logits = self.model.discriminator(torch.stack([log_enh, log_clean], dim=1))
        if not for_d_step:
            return fake_logits, None, None
        real_logits = self.model.discriminator(torch.stack([log_clean, log_clean], dim=1))

        spec_kwargs = dict(original_length=item.original_length)
        enhanced_spec = Spectrogram(
            values=mask.detach().squeeze(0).numpy().astype(np.float64)
            * item.noisy_values.astype(np.complex128),
            **spec_kwargs,
        )
        clean_spec = Spectrogram(
            values=item.clean_values.astype(np.complex128), **spec_kwargs
        )
        q = self.qualify(dsp.istft(clean_spec), dsp.istft(enhanced_spec))
        return fake_logits, real_logits, torch.tensor([q], dtype=torch.float32)

    # ------------------------------------------------------------------
    # steps
    # ------------------------------------------------------------------

    def d_step(self, batch: Batch) -> dict:
        """One discriminator update; the generator is frozen throughout."""
        cfg = self.loss_config
        disc = self.model.discriminator
        _set_requires_grad(self.model.generator, False)
        _set_requires_grad(disc, True)
        try:
            fake_mask = self._frozen_mask(batch.features)
            target = batch.target_mask
            components, weights = {}, {}
            if cfg.family == "metric":
                fake_logits, real_logits, q = self._metric_pairs(batch, fake_mask, for_d_step=True)
                d_adv = losses.metric_d_loss(real_logits, fake_logits, q)
                components["metric_regression"] = _f(d_adv)
                weights["metric_regression"] = 1.0
                d_total = d_adv
            else:
                real_logits = self._d_logits(target, target)
                fake_logits = self._d_logits(fake_mask, target)
                if cfg.family == "wasserstein":
                    d_adv = losses.wasserstein_d_loss(real_logits, fake_logits)
                elif cfg.family == "relativistic":
                    d_adv, _ = losses.relativistic_losses(real_logits, fake_logits)
                else:
                    d_adv, _ = losses.relativistic_average_losses(real_logits, fake_logits)
                eps = torch.rand(target.shape[0], generator=self.torch_rng)
                if self.variant.discriminator_input == "mask":
                    critic = lambda cand: disc(cand.unsqueeze(1))
                else:
                    critic = lambda cand: disc(torch.stack([cand, target], dim=1))
                gp = losses.gradient_penalty(critic, target, fake_mask, eps)
                components["d_adversarial"] = _f(d_adv)
                components["gp"] = _f(gp)
                weights["d_adversarial"] = 1.0
                weights["gp"] = cfg.lambda_gp
                d_total = d_adv + cfg.lambda_gp * gp

            parts = dict(components)
            parts["d_total"] = _f(d_total)
            _assert_finite(parts, self._epoch, self.global_step)
            LossBreakdown(  # per-step accounting check
                d_total=_f(d_total), g_total=None, components=components, weights=weights
            )
            self.d_optimizer.zero_grad(set_to_none=True)
            d_total.backward()
            self.d_optimizer.step()
            out = dict(components)
            out["d_total"] = _f(d_total)
            out["_weights"] = weights
            return out
        finally:
            _set_requires_grad(self.model.generator, True)

    def g_step(self, batch: Batch) -> dict:
        """One generator update; the discriminator (if any) is frozen."""
        cfg = self.loss_config
        if self.model.discriminator is not None:
            _set_requires_grad(self.model.discriminator, False)
        try:
            mask = self.model.generator(batch.features)
            components, weights = {}, {}
            if cfg is None:
                g_total = losses.mse_term(mask, batch.target_mask)
                components["mse"] = _f(g_total)
                weights["mse"] = 1.0
            elif cfg.family == "metric":
                fake_logits, _, _ = self._metric_pairs(batch, mask, for_d_step=False)
                g_adv = losses.metric_g_loss(fake_logits)
                g_total = g_adv
                components["g_adversarial"] = _f(g_adv)
                weights["g_adversarial"] = 1.0
                if cfg.use_mse:
                    aux = losses.mse_term(mask, batch.target_mask)
                    components["mse"] = _f(aux)
                    weights["mse"] = cfg.lambda_mse
                    g_total = g_total + cfg.lambda_mse * aux
            else:
                target = batch.target_mask
                real_logits = self._d_logits(target, target)
                fake_logits = self._d_logits(mask, target)
                if cfg.family == "wasserstein":
                    g_adv = losses.wasserstein_g_loss(fake_logits)
                elif cfg.family == "relativistic":
                    _, g_adv = losses.relativistic_losses(real_logits, fake_logits)
                else:
                    _, g_adv = losses.relativistic_average_losses(real_logits, fake_logits)
                components["g_adversarial"] = _f(g_adv)
                weights["g_adversarial"] = 1.0
                g_total = g_adv
                if cfg.use_l1:
                    aux = losses.l1_term(mask, target)
                    components["l1"] = _f(aux)
                    weights["l1"] = cfg.lambda_l1
                    g_total = g_total + cfg.lambda_l1 * aux

            parts = dict(components)
            parts["g_total"] = _f(g_total)
            _assert_finite(parts, self._epoch, self.global_step)
            LossBreakdown(  # per-step accounting check
                d_total=None, g_total=_f(g_total), components=components, weights=weights
            )
            self.g_optimizer.zero_grad(set_to_none=True)
            g_total.backward()
            self.g_optimizer.step()
            out = dict(components)
            out["g_total"] = _f(g_total)
            out["_weights"] = weights
            return out
        finally:
            if self.model.discriminator is not None:
                _set_requires_grad(self.model.discriminator, True)

    # ------------------------------------------------------------------
    # epochs
    # ------------------------------------------------------------------

    def _validate(self) -> dict:
        if not self.val_audio or self.qualify is None:
            return {}
        q_vals, stoi_vals = [], []
        for clean, noisy in self.val_audio:
            enhanced = self.model.enhance(noisy)
            try:
                q_vals.append(self.qualify(clean, enhanced))
                stoi_vals.append(quality.stoi(clean, enhanced))
            except quality.QualityError:
                continue
        if not q_vals:
            return {}
        return {
            "validation_quality": float(np.mean(q_vals)),
            "validation_stoi": float(np.mean(stoi_vals)),
        }

    def train_epoch(self, epoch: int, log_fh=None, t0: float | None = None) -> dict:
        t0 = time.monotonic() if t0 is None else t0
        self._epoch = epoch
        d_totals, g_totals = [], []
        for batch in self._epoch_batches(epoch):
            d_parts = None
            if self.model.discriminator is not None:
                for _ in range(self.config.d_steps_per_g):
                    d_parts = self.d_step(batch)
            g_parts = self.g_step(batch)
            self.global_step += 1

            components = {}
            weights = {}
            d_total = None
            if d_parts is not None:
                weights.update(d_parts.pop("_weights"))
                d_total = d_parts.pop("d_total")
                components.update(d_parts)
                d_totals.append(d_total)
            weights.update(g_parts.pop("_weights"))
            g_total = g_parts.pop("g_total")
            components.update(g_parts)
            g_totals.append(g_total)

            breakdown = LossBreakdown(
                d_total=d_total, g_total=g_total, components=components, weights=weights
            )
            if log_fh is not None:
                row = {
                    "epoch": epoch,
                    "step": self.global_step,
                    "wall_time": round(time.monotonic() - t0, 3),
                }
                row.update(breakdown.as_dict())
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")

        summary = {
            "epoch": epoch,
            "summary": True,
            "mean_g_total": float(np.mean(g_totals)),
            "steps": len(g_totals),
        }
        if d_totals:
            summary["mean_d_total"] = float(np.mean(d_totals))
        summary.update(self._validate())
        if log_fh is not None:
            log_fh.write(json.dumps(summary, sort_keys=True) + "\n")
            log_fh.flush()
        return summary

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------

    def _checkpoint_payload(self, epoch: int) -> dict:
        model = self.model
        payload = {
            "variant": model.variant.value,
            "fingerprint": model.fingerprint,
            "generator_spec": _spec_to_dict(model.generator_spec),
            "generator_state": model.generator.state_dict(),
            "epoch": epoch,
            "global_step": self.global_step,
            "g_optimizer_state": self.g_optimizer.state_dict(),
            "torch_rng_state": self.torch_rng.get_state().tolist(),
            "train_config": asdict(self.config),
        }
        if model.discriminator is not None:
            payload["discriminator_spec"] = _spec_to_dict(model.discriminator_spec)
            payload["discriminator_state"] = model.discriminator.state_dict()
            payload["d_optimizer_state"] = self.d_optimizer.state_dict()
        return payload

    def save_checkpoint(self, path, epoch: int):
        torch.save(self._checkpoint_payload(epoch), path)

    def restore(self, path):
        payload = load_checkpoint_payload(path)
        if payload["variant"] != self.variant.value:
            raise CheckpointError(
                f"checkpoint is for variant {payload['variant']}, trainer runs {self.variant.value}"
            )
        if payload["fingerprint"] != self.model.fingerprint:
            raise CheckpointError("topology fingerprint mismatch; refusing to resume")
        self.model.generator.load_state_dict(payload["generator_state"])
        self.g_optimizer.load_state_dict(payload["g_optimizer_state"])
        if self.model.discriminator is not None:
            self.model.discriminator.load_state_dict(payload["discriminator_state"])
            self.d_optimizer.load_state_dict(payload["d_optimizer_state"])
        self.torch_rng.set_state(torch.tensor(payload["torch_rng_state"], dtype=torch.uint8))
        self.start_epoch = payload["epoch"] + 1
        self.global_step = int(payload.get("global_step", 0))

    # ------------------------------------------------------------------
    # full run
    # ------------------------------------------------------------------

    def run(self, out_dir=None, resume=None) -> TrainResult:
        if resume is not None:
            self.restore(resume)
        log_fh = None
        log_path = None
        checkpoint_paths = []
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_path = out_dir / "training_log.jsonl"
            mode = "a" if resume is not None and log_path.exists() else "w"
            log_fh = log_path.open(mode)
        t0 = time.monotonic()
        summaries = []
        try:
            for epoch in range(self.start_epoch, self.config.epochs + 1):
                summaries.append(self.train_epoch(epoch, log_fh, t0))
                if out_dir is not None:
                    ckpt = out_dir / f"checkpoint-epoch-{epoch:04d}.pt"
                    self.save_checkpoint(ckpt, epoch)
                    checkpoint_paths.append(ckpt)
        finally:
            if log_fh is not None:
                log_fh.close()
        if out_dir is not None and checkpoint_paths:
            last = out_dir / "checkpoint-last.pt"
            last.write_bytes(checkpoint_paths[-1].read_bytes())
            checkpoint_paths.append(last)
        return TrainResult(
            epochs=summaries,
            log_path=log_path,
            checkpoint_paths=checkpoint_paths,
            model=self.model,
        )


# ---------------------------------------------------------------------------
# checkpoint (de)serialization helpers
# ---------------------------------------------------------------------------

def _spec_to_dict(spec) -> dict:
    return {"kind": type(spec).__name__, **asdict(spec)}


def _spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "GeneratorSpec":
        d["encoder_channels"] = tuple(d["encoder_channels"])
        return arch.GeneratorSpec(**d)
    if kind == "RecurrentBaselineSpec":
        return arch.RecurrentBaselineSpec(**d)
    if kind == "DiscriminatorSpec":
        d["channels"] = tuple(d["channels"])
        return arch.DiscriminatorSpec(**d)
    raise CheckpointError(f"unknown spec kind {kind!r} in checkpoint")


def load_checkpoint_payload(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    required = {"variant", "fingerprint", "generator_spec", "generator_state", "epoch"}
    missing = required - set(payload)
    if missing:
        raise CheckpointError(f"checkpoint {path} missing fields {sorted(missing)}")
    return payload


def load_model(path) -> EnhancementModel:
    """Rebuild an EnhancementModel from a checkpoint, verifying the topology
    fingerprint stored at save time against the freshly rebuilt specs."""
    payload = load_checkpoint_payload(path)
    variant = ModelVariant.from_name(payload["variant"])
    gen_spec = _spec_from_dict(payload["generator_spec"])
    generator = arch.build_generator(gen_spec)
    generator.load_state_dict(payload["generator_state"])
    disc_spec = None
    discriminator = None
    if "discriminator_spec" in payload:
        disc_spec = _spec_from_dict(payload["discriminator_spec"])
        discriminator = arch.Discriminator(disc_spec)
        discriminator.load_state_dict(payload["discriminator_state"])
    model = EnhancementModel(
        variant=variant,
        generator=generator,
        generator_spec=gen_spec,
        discriminator=discriminator,
        discriminator_spec=disc_spec,
    )
    if model.fingerprint != payload["fingerprint"]:
        raise CheckpointError(
            f"topology fingerprint mismatch in {path}: stored {payload['fingerprint'][:12]}, "
            f"rebuilt {model.fingerprint[:12]}"
        )
    model.generator.eval()
    if model.discriminator is not None:
        model.discriminator.eval()
    return model
