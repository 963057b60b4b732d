"""Adversarial, image L1 and structure L1 losses and their weighted total."""

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from arcnet.errors import NumericError, ParameterError, ShapeError

LOG_COLUMNS = ("step", "l_p", "l_i", "l_s", "l_d", "total")


@dataclass
class LossWeights:
    lambda1: float = 100.0
    lambda2: float = 50.0
    lambda3: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ParameterError("loss weights must be nonnegative")


@dataclass
class LossReport:
    l_p: float
    l_i: float
    l_s: float
    l_d: float
    total: float
    step: int = 0
    d_pixel: float = float("nan")
    d_domain: float = float("nan")

    def row(self):
        d = asdict(self)
        return [d[c] for c in LOG_COLUMNS]


def _finite(name, *tensors):
    for t in tensors:
        if t is not None and not torch.isfinite(t).all():
            raise NumericError(f"non-finite values in {name}")


def adversarial_loss(d_logits_real, d_logits_fake, side):
    """Binary cross-entropy on patch logits, averaged over patches.

    ``side="discriminator"``: real patches labelled 1, fake patches 0; the
    two means are summed. ``side="generator"``: the non-saturating
    ``-mean(log sigmoid(fake))``; ``d_logits_real`` is ignored and may be None.
    """
    _finite("discriminator logits", d_logits_real, d_logits_fake)
    if side == "discriminator":
        if d_logits_real.shape != d_logits_fake.shape:
            raise ShapeError("real and fake logit maps differ in shape")
        return (F.binary_cross_entropy_with_logits(d_logits_real, torch.ones_like(d_logits_real))
                + F.binary_cross_entropy_with_logits(d_logits_fake, torch.zeros_like(d_logits_fake)))
    if side == "generator":
        return F.binary_cross_entropy_with_logits(d_logits_fake, torch.ones_like(d_logits_fake))
    raise ParameterError(f"side must be 'discriminator' or 'generator', got {side!r}")


def image_l1(restored, reference):
    if restored.shape != reference.shape:
        raise ShapeError(f"shape mismatch {tuple(restored.shape)} vs {tuple(reference.shape)}")
    return (restored - reference).abs().mean()


def structure_l1(restored, reference, guidance):
    """L1 distance between the guidance rasters (HFCs) of both images."""
    if restored.shape != reference.shape:
        raise ShapeError(f"shape mismatch {tuple(restored.shape)} vs {tuple(reference.shape)}")
    return image_l1(guidance.torch(reference), guidance.torch(restored))


def total_generator_loss(parts, w):
    """``l_p + lambda1*l_i + lambda2*l_s + lambda3*l_d``; works on floats or tensors."""
    return parts.l_p + w.lambda1 * parts.l_i + w.lambda2 * parts.l_s + w.lambda3 * parts.l_d
