"""Training objectives: pixel MSE, frozen-feature perceptual distance, their
blend, and the adversarial pair in hinge and log forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Rng,
    Tensor,
    add,
    conv2d,
    mul,
    neg,
    reduce_mean,
    relu,
    softplus,
)
from .errors import ShapeMismatchError
from .params import ParamStore, load_checkpoint, save_checkpoint

# provenance seed for the default frozen feature weights; a constant, so the
# same features come out of every run regardless of the training seed
DEFAULT_FEATURE_SEED = 1009
DEFAULT_FEATURE_CHANNELS = (16, 32, 64)


class FeatureExtractor:
    """A small frozen convolutional pyramid used as a perceptual yardstick.

    Each stage is a stride-2 3x3 convolution followed by ReLU. Weights are
    either drawn once from a fixed seed (the default, so no external files
    are needed) or loaded from a checkpoint exported from elsewhere. The
    parameters never track gradients.
    """

    def __init__(self, in_channels: int = 3, stage_channels=DEFAULT_FEATURE_CHANNELS,
                 tap: int = 2, seed: int = DEFAULT_FEATURE_SEED, dtype=np.float32,
                 _stages=None):
        if not 1 <= tap <= len(stage_channels):
            raise ValueError(f"tap must be in [1, {len(stage_channels)}], got {tap}")
        self.in_channels = in_channels
        self.stage_channels = tuple(stage_channels)
        self.tap = tap
        if _stages is not None:
            self.stages = _stages
            self.provenance = "loaded_weights"
        else:
            rng = Rng(seed)
            self.stages = []
            c_in = in_channels
            for c_out in self.stage_channels:
                from .blocks import init_conv

                self.stages.append(init_conv(rng, c_in, c_out, 3, dtype, requires_grad=False))
                c_in = c_out
            self.provenance = f"fixed_seed({seed})"

    def features(self, x: Tensor) -> Tensor:
        """Feature map after the tap stage; gradient flows to x only."""
        f = x
        for stage in self.stages[: self.tap]:
            f = relu(conv2d(f, stage.weight, stage.bias, stride=2, padding=1))
        return f

    def store(self) -> ParamStore:
        ps = ParamStore()
        for i, stage in enumerate(self.stages):
            ps.add(f"feat.stage{i}.weight", stage.weight)
            ps.add(f"feat.stage{i}.bias", stage.bias)
        return ps

    def save(self, path) -> None:
        save_checkpoint(self.store(), path)

    @classmethod
    def from_checkpoint(cls, path, tap: int = 2) -> "FeatureExtractor":
        """Rebuild an extractor from a checkpoint, inferring stage widths."""
        from .blocks import Conv2dParams

        raw = load_checkpoint(path)
        stages = []
        i = 0
        while f"feat.stage{i}.weight" in raw:
            w = raw[f"feat.stage{i}.weight"]
            b = raw[f"feat.stage{i}.bias"]
            w.requires_grad = False
            b.requires_grad = False
            stages.append(Conv2dParams(w, b))
            i += 1
        if not stages:
            raise ShapeMismatchError(f"{path}: no feature stages found in checkpoint")
        chans = tuple(s.weight.data.shape[0] for s in stages)
        fx = cls(in_channels=stages[0].weight.data.shape[1], stage_channels=chans,
                 tap=tap, _stages=stages)
        return fx


@dataclass
class LossReport:
    """One training step's loss components, as plain floats."""

    mse: float = 0.0
    perceptual: float = 0.0
    content: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    FIELDS = ("mse", "perceptual", "content", "adv_g", "adv_d", "total_g", "total_d")

    def row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over every element of the squared difference."""
    if pred.data.shape != target.data.shape:
        raise ShapeMismatchError(f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    diff = target - pred
    return reduce_mean(mul(diff, diff))


def perceptual_loss(pred: Tensor, target: Tensor, fx: FeatureExtractor) -> Tensor:
    """MSE between frozen feature maps of the two images (gradient to pred only)."""
    if pred.data.shape != target.data.shape:
        raise ShapeMismatchError(
            f"perceptual_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    return mse_loss(fx.features(pred), fx.features(target).detach())


def content_loss(pred: Tensor, target: Tensor, fx: FeatureExtractor, beta: float = 0.5) -> Tensor:
    """beta * pixel MSE + (1 - beta) * perceptual distance."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0,1], got {beta}")
    return add(mul(mse_loss(pred, target), Tensor(np.asarray(beta, dtype=pred.data.dtype))),
               mul(perceptual_loss(pred, target, fx), Tensor(np.asarray(1.0 - beta, dtype=pred.data.dtype))))


def adversarial_losses(real_logits: Tensor, fake_logits: Tensor, form: str = "hinge",
                       nonsaturating: bool = False) -> tuple[Tensor, Tensor]:
    """(discriminator loss, generator loss) for raw logits.

    hinge: d = E max(0, 1 - real) + E max(0, 1 + fake); g = -E fake.
    log:   d = -E log sig(real) - E log(1 - sig(fake)); the generator term is
    the saturating E log(1 - sig(fake)) unless ``nonsaturating`` asks for
    -E log sig(fake). All means are over the batch.
    """
    if form == "hinge":
        d_loss = add(reduce_mean(relu(1.0 - real_logits)), reduce_mean(relu(1.0 + fake_logits)))
        g_loss = neg(reduce_mean(fake_logits))
    elif form == "log":
        # -log sig(x) = softplus(-x), -log(1 - sig(x)) = softplus(x)
        d_loss = add(reduce_mean(softplus(neg(real_logits))), reduce_mean(softplus(fake_logits)))
        if nonsaturating:
            g_loss = reduce_mean(softplus(neg(fake_logits)))
        else:
            g_loss = neg(reduce_mean(softplus(fake_logits)))
    else:
        raise ValueError(f"adversarial form must be 'hinge' or 'log', got {form!r}")
    return d_loss, g_loss


def generator_total(content: Tensor, g_adv: Tensor, weight: float = 0.01) -> Tensor:
    """Content term plus the weighted adversarial term."""
    return add(content, mul(g_adv, Tensor(np.asarray(weight, dtype=content.data.dtype))))
