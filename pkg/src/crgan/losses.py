"""The four adversarial objectives plus the bookkeeping that keeps per-step
loss accounting honest.

All functions take pre-sigmoid discriminator logits. Log-sigmoid terms go
through F.logsigmoid so large logit gaps stay finite instead of saturating
through an explicit sigmoid+log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

FAMILIES = ("wasserstein", "relativistic", "relativistic_average", "metric")

DEFAULT_LAMBDA_GP = 10.0
DEFAULT_LAMBDA_L1 = 200.0
DEFAULT_LAMBDA_MSE = 4.0


class LossError(ValueError):
    """Loss inputs outside the contract (empty batches, shape/range mismatch)."""


def _check_logits(*tensors):
    shape = None
    for t in tensors:
        if t.numel() == 0:
            raise LossError("empty logits batch")
        if t.dim() != 1:
            raise LossError(f"logits must be 1-D per batch, got shape {tuple(t.shape)}")
        if shape is None:
            shape = t.shape
        elif t.shape != shape:
            raise LossError(f"logit batch sizes differ: {tuple(shape)} vs {tuple(t.shape)}")


# ---------------------------------------------------------------------------
# Wasserstein with gradient penalty
# ---------------------------------------------------------------------------

def wasserstein_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(real_logits, fake_logits)
    return -real_logits.mean() + fake_logits.mean()


def wasserstein_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(fake_logits)
    return -fake_logits.mean()


def gradient_penalty(
    critic_fn, real: torch.Tensor, fake: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """Two-sided gradient penalty at per-sample interpolates eps*real + (1-eps)*fake.

    `critic_fn` maps the interpolated tensor to per-sample logits; the returned
    penalty stays differentiable w.r.t. the critic parameters (create_graph) so
    it can ride inside the discriminator loss.
    """
    if real.shape != fake.shape:
        raise LossError(f"real/fake shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
    if real.shape[0] == 0:
        raise LossError("empty batch")
    eps = eps.reshape(-1)
    if eps.shape[0] != real.shape[0]:
        raise LossError("need one interpolation draw per batch element")
    if eps.min() < 0.0 or eps.max() > 1.0:
        raise LossError("interpolation draws must lie in [0, 1]")
    eps = eps.reshape(-1, *([1] * (real.dim() - 1))).to(real.dtype)
    mixed = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(True)
    logits = critic_fn(mixed)
    if logits.shape[0] != real.shape[0]:
        raise LossError("critic must return one logit per batch element")
    grads = torch.autograd.grad(logits.sum(), mixed, create_graph=True)[0]
    norms = grads.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


# ---------------------------------------------------------------------------
# relativistic and relativistic-average
# ---------------------------------------------------------------------------

def relativistic_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """(d, g): pairwise relativistic objective. Equal logits give d = g = ln 2."""
    _check_logits(real_logits, fake_logits)
    d = -F.logsigmoid(real_logits - fake_logits).mean()
    g = -F.logsigmoid(fake_logits - real_logits).mean()
    return d, g


def relativistic_average_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """(d, g): each side is scored against the batch-mean logit of the other.
    All-equal logits give d = g = 2 ln 2."""
    _check_logits(real_logits, fake_logits)
    real_mean = real_logits.mean()
    fake_mean = fake_logits.mean()
    d = (
        -F.logsigmoid(real_logits - fake_mean).mean()
        - F.logsigmoid(-(fake_logits - real_mean)).mean()
    )
    g = (
        -F.logsigmoid(fake_logits - real_mean).mean()
        - F.logsigmoid(-(real_logits - fake_mean)).mean()
    )
    return d, g


# ---------------------------------------------------------------------------
# metric (quality-score regression)
# ---------------------------------------------------------------------------

def metric_d_loss(
    real_pair_logits: torch.Tensor, fake_pair_logits: torch.Tensor, quality: torch.Tensor
) -> torch.Tensor:
    """D regresses (clean, clean) pairs to 1 and (enhanced, clean) pairs to the
    measured quality score in [0, 1]."""
    _check_logits(real_pair_logits, fake_pair_logits)
    quality = quality.reshape(-1)
    if quality.shape != fake_pair_logits.shape:
        raise LossError("need one quality score per fake pair")
    if quality.min() < 0.0 or quality.max() > 1.0:
        raise LossError("quality scores must lie in [0, 1]")
    return ((real_pair_logits - 1.0) ** 2 + (fake_pair_logits - quality) ** 2).mean()


def metric_g_loss(fake_pair_logits: torch.Tensor) -> torch.Tensor:
    """G pushes the score D assigns to its output toward the perfect score 1."""
    _check_logits(fake_pair_logits)
    return ((fake_pair_logits - 1.0) ** 2).mean()


# ---------------------------------------------------------------------------
# auxiliary supervised terms
# ---------------------------------------------------------------------------

def l1_term(estimated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if estimated.shape != target.shape:
        raise LossError("L1 term: shape mismatch")
    return F.l1_loss(estimated, target)


def mse_term(estimated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if estimated.shape != target.shape:
        raise LossError("MSE term: shape mismatch")
    return F.mse_loss(estimated, target)


# ---------------------------------------------------------------------------
# configuration and accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    family: str = "wasserstein"
    lambda_gp: float = DEFAULT_LAMBDA_GP
    lambda_l1: float = DEFAULT_LAMBDA_L1
    lambda_mse: float = DEFAULT_LAMBDA_MSE
    use_l1: bool = True
    use_mse: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LossError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        for name in ("lambda_gp", "lambda_l1", "lambda_mse"):
            if getattr(self, name) < 0:
                raise LossError(f"{name} must be non-negative")
        if self.family == "metric" and self.use_l1:
            raise LossError("the metric family uses an MSE add-on, not L1")


_D_SIDE = frozenset({"d_adversarial", "gp", "metric_regression"})
_G_SIDE = frozenset({"g_adversarial", "l1", "mse"})
_ACCOUNTING_TOL = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss record. Construction re-sums the weighted components and
    refuses to exist if they disagree with the stated totals."""

    d_total: float | None
    g_total: float | None
    components: dict = field(default_factory=dict)   # unweighted values
    weights: dict = field(default_factory=dict)      # lambda applied to each

    def __post_init__(self):
        unknown = set(self.components) - set(_D_SIDE) - set(_G_SIDE)
        if unknown:
            raise LossError(f"unknown loss components {sorted(unknown)}")
        for name in self.components:
            if name not in self.weights:
                raise LossError(f"component {name!r} has no weight recorded")
        self._check_side(self.d_total, _D_SIDE, "d_total")
        self._check_side(self.g_total, _G_SIDE, "g_total")

    def _check_side(self, total, side, label):
        parts = [n for n in self.components if n in side]
        if total is None:
            if parts:
                raise LossError(f"{label} missing but components {parts} present")
            return
        acc = sum(self.weights[n] * self.components[n] for n in parts)
        if abs(acc - total) > _ACCOUNTING_TOL * max(1.0, abs(total)):
            raise LossError(
                f"{label} accounting violated: stated {total!r}, components sum to {acc!r}"
            )

    def as_dict(self) -> dict:
        out = {}
        if self.d_total is not None:
            out["d_total"] = self.d_total
        if self.g_total is not None:
            out["g_total"] = self.g_total
        for name, value in self.components.items():
            out[name] = value
        return out
