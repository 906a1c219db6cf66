"""Scalar training objectives for both generators and all discriminators.

Adversarial terms are the two binary cross-entropy halves, composed by
the trainer into discriminator and (label-flipped) generator losses.
The texture objective adds a Gram-matrix style loss over the encoder
feature stacks and a masked content loss; the binarization objective
adds a plain mean-squared error.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import torch

from .errors import NumericsError

PROB_EPS = 1e-7


def _clamped(scores: torch.Tensor) -> torch.Tensor:
    return scores.clamp(min=PROB_EPS, max=1.0 - PROB_EPS)


def bce_real(scores: torch.Tensor) -> torch.Tensor:
    """-mean(log s): the cost of scores under the 'real' target."""
    return -torch.log(_clamped(scores)).mean()


def bce_fake(scores: torch.Tensor) -> torch.Tensor:
    """-mean(log(1 - s)): the cost of scores under the 'fake' target."""
    return -torch.log1p(-_clamped(scores)).mean()


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Channel-by-channel inner products of vectorized feature maps.

    Accepts (C, M), (C, H, W), or batched (B, C, H, W) maps and returns
    (C, C) or (B, C, C) accordingly. The matrix is left unnormalized;
    the style loss folds the 1 / (4 N^2 M^2) factor into its per-layer
    weights.
    """
    if features.dim() == 2:
        return features @ features.t()
    if features.dim() == 3:
        flat = features.reshape(features.shape[0], -1)
        return flat @ flat.t()
    if features.dim() == 4:
        flat = features.reshape(features.shape[0], features.shape[1], -1)
        return flat @ flat.transpose(1, 2)
    raise ValueError(f"expected 2-D, 3-D, or 4-D features, got {features.dim()}-D")


def _layer_dims(features: torch.Tensor) -> tuple[int, int]:
    if features.dim() == 2:
        return features.shape[0], features.shape[1]
    if features.dim() == 3:
        return features.shape[0], features.shape[1] * features.shape[2]
    return features.shape[1], features.shape[2] * features.shape[3]


def style_loss(
    stack_ref: list[torch.Tensor], stack_gen: list[torch.Tensor]
) -> torch.Tensor:
    """Weighted Frobenius gap between the Gram matrices of two stacks.

    Each layer contributes ||G_gen - G_ref||_F^2 / (4 N^2 M^2) with N
    channels and M positions; layers are weighted equally. Batched maps
    average the per-sample contribution.
    """
    if len(stack_ref) != len(stack_gen):
        raise ValueError(
            f"feature stacks misaligned: {len(stack_ref)} vs {len(stack_gen)} layers"
        )
    total = None
    for ref, gen in zip(stack_ref, stack_gen):
        if ref.shape != gen.shape:
            raise ValueError(
                f"layer shape mismatch: {tuple(ref.shape)} vs {tuple(gen.shape)}"
            )
        n, m = _layer_dims(ref)
        gap = gram_matrix(gen) - gram_matrix(ref)
        term = (gap ** 2).sum(dim=(-2, -1)).mean() / (4.0 * n ** 2 * m ** 2)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("feature stacks are empty")
    return total


def content_loss(
    clean: torch.Tensor, generated: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean squared gap between the masked clean and generated images."""
    if clean.shape != generated.shape or clean.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: clean {tuple(clean.shape)}, generated "
            f"{tuple(generated.shape)}, mask {tuple(mask.shape)}"
        )
    m = mask.to(clean.dtype)
    return ((m * clean - m * generated) ** 2).mean()


def l2_loss(clean: torch.Tensor, binarized: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the clean target and the network output."""
    if clean.shape != binarized.shape:
        raise ValueError(
            f"shape mismatch: {tuple(clean.shape)} vs {tuple(binarized.shape)}"
        )
    return ((clean - binarized) ** 2).mean()


@dataclass(frozen=True)
class LossWeights:
    """Balancing coefficients for style, content, and L2 terms."""

    lambda_s: float = 0.5
    lambda_c: float = 10.0
    lambda_l2: float = 100.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


def atanet_objective(adv, adv_joint, style, content, weights: LossWeights):
    """Texture-generator total: adv + joint adv + ls * style + lc * content."""
    return adv + adv_joint + weights.lambda_s * style + weights.lambda_c * content


def udbnet_objective(adv, adv_joint, l2, weights: LossWeights):
    """Binarizer total: adv + joint adv + l_l2 * mse."""
    return adv + adv_joint + weights.lambda_l2 * l2


@dataclass
class LossReport:
    """Named scalars recorded once per optimization step."""

    adv_T: float = 0.0
    adv_F: float = 0.0
    adv_joint_T: float = 0.0
    adv_joint_F: float = 0.0
    style: float = 0.0
    content: float = 0.0
    l2: float = 0.0
    total_atanet: float = 0.0
    total_udbnet: float = 0.0
    disc_T: float = 0.0
    disc_F: float = 0.0
    disc_joint: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def check_finite(self, step: int | None = None) -> None:
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                where = f" at step {step}" if step is not None else ""
                raise NumericsError(f"loss {name!r} became {value}{where}")

    def to_records(self, step: int, stage: int) -> list[str]:
        """Line-delimited JSON records {step, stage, loss, value}."""
        return [
            json.dumps({"step": step, "stage": stage, "loss": name, "value": value})
            for name, value in self.as_dict().items()
        ]
