"""Generator and discriminator: a U-net with attentive residual groups, and a
doubling conv ladder with attention and a fully connected head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Rng,
    Tensor,
    add,
    clamp,
    concat,
    conv2d,
    leaky_relu,
    matmul,
    no_grad,
    reshape,
    upsample_nearest,
)
from .bitdepth import ImageBuffer, from_unit, to_unit
from .blocks import (
    DEFAULT_SCORE_BUDGET,
    LEAK,
    AttentionGroupParams,
    AttentionParams,
    Conv2dParams,
    LinearParams,
    attention_group,
    init_attention,
    init_attention_group,
    init_conv,
    init_linear,
    self_attention,
)
from .errors import ConfigError, ShapeMismatchError
from .params import ParamStore


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 3
    base_channels: int = 64
    num_downscales: int = 2
    num_groups: int = 4  # attentive residual groups at the bottleneck
    blocks_per_group: int = 2
    layers_per_block: int = 4
    growth_rate: int = 32
    use_attention: bool = True
    attn_budget: int = DEFAULT_SCORE_BUDGET

    def __post_init__(self):
        if self.num_groups < 1:
            raise ConfigError(f"num_groups must be >= 1, got {self.num_groups}")
        if self.num_downscales < 0:
            raise ConfigError(f"num_downscales must be >= 0, got {self.num_downscales}")

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels << self.num_downscales


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    ladder: tuple = (64, 128, 256, 512)
    attn_channels: tuple = (128, 256)  # attention follows stages with these widths
    fc_width: int = 1024
    input_size: int = 64
    use_attention: bool = True
    attn_budget: int = DEFAULT_SCORE_BUDGET

    def __post_init__(self):
        self.ladder = tuple(self.ladder)
        self.attn_channels = tuple(self.attn_channels)
        for prev, cur in zip(self.ladder, self.ladder[1:]):
            if cur != 2 * prev:
                raise ConfigError(f"channel ladder must double at every step, got {self.ladder}")
        if self.input_size < (1 << len(self.ladder)):
            raise ConfigError(
                f"input size {self.input_size} below minimum {1 << len(self.ladder)} "
                f"for a {len(self.ladder)}-stage ladder"
            )

    @property
    def final_spatial(self) -> int:
        return self.input_size >> (len(self.ladder) - 1)


@dataclass
class GeneratorParams:
    head: Conv2dParams
    downs: list  # Conv2dParams, stride 2
    groups: list  # AttentionGroupParams
    up_reduce: list  # Conv2dParams after each upsample
    up_fuse: list  # Conv2dParams after each skip concat
    tail: Conv2dParams

    def named(self, prefix: str = "gen"):
        yield from self.head.named(f"{prefix}.head")
        for i, p in enumerate(self.downs):
            yield from p.named(f"{prefix}.down{i}")
        for i, p in enumerate(self.groups):
            yield from p.named(f"{prefix}.group{i}")
        for i, (r, f) in enumerate(zip(self.up_reduce, self.up_fuse)):
            yield from r.named(f"{prefix}.up{i}.reduce")
            yield from f.named(f"{prefix}.up{i}.fuse")
        yield from self.tail.named(f"{prefix}.tail")

    def store(self) -> ParamStore:
        ps = ParamStore()
        for name, t in self.named():
            ps.add(name, t)
        return ps


@dataclass
class DiscriminatorParams:
    head: Conv2dParams
    stages: list  # Conv2dParams, stride 2
    attns: dict  # stage index -> AttentionParams
    fc_hidden: LinearParams
    fc_out: LinearParams

    def named(self, prefix: str = "disc"):
        yield from self.head.named(f"{prefix}.head")
        for i, p in enumerate(self.stages):
            yield from p.named(f"{prefix}.stage{i}")
            if i in self.attns:
                yield from self.attns[i].named(f"{prefix}.stage{i}.attn")
        yield from self.fc_hidden.named(f"{prefix}.fc_hidden")
        yield from self.fc_out.named(f"{prefix}.fc_out")

    def store(self) -> ParamStore:
        ps = ParamStore()
        for name, t in self.named():
            ps.add(name, t)
        return ps


def init_generator(rng: Rng, cfg: GeneratorConfig, dtype=np.float32) -> GeneratorParams:
    """Build generator weights. The tail starts at zero, so the fresh model is
    the identity map on its input (training starts from the zero-padding
    baseline)."""
    ch = cfg.base_channels
    head = init_conv(rng, cfg.in_channels, ch, 3, dtype)
    downs = []
    for _ in range(cfg.num_downscales):
        downs.append(init_conv(rng, ch, ch * 2, 3, dtype))
        ch *= 2
    groups = [
        init_attention_group(rng, ch, cfg.growth_rate, cfg.layers_per_block,
                             cfg.blocks_per_group, cfg.use_attention, dtype)
        for _ in range(cfg.num_groups)
    ]
    up_reduce, up_fuse = [], []
    for _ in range(cfg.num_downscales):
        up_reduce.append(init_conv(rng, ch, ch // 2, 3, dtype))
        up_fuse.append(init_conv(rng, ch, ch // 2, 3, dtype))
        ch //= 2
    tail = init_conv(rng, ch, cfg.out_channels, 3, dtype, zero=True)
    return GeneratorParams(head, downs, groups, up_reduce, up_fuse, tail)


def init_discriminator(rng: Rng, cfg: DiscriminatorConfig, dtype=np.float32) -> DiscriminatorParams:
    head = init_conv(rng, cfg.in_channels, cfg.ladder[0], 3, dtype)
    stages, attns = [], {}
    for i, (prev, cur) in enumerate(zip(cfg.ladder, cfg.ladder[1:])):
        stages.append(init_conv(rng, prev, cur, 3, dtype))
        if cfg.use_attention and cur in cfg.attn_channels:
            attns[i] = init_attention(rng, cur, dtype)
    flat = cfg.ladder[-1] * cfg.final_spatial * cfg.final_spatial
    fc_hidden = init_linear(rng, flat, cfg.fc_width, dtype)
    fc_out = init_linear(rng, cfg.fc_width, 1, dtype)
    return DiscriminatorParams(head, stages, attns, fc_hidden, fc_out)


def generator_forward(lbd: Tensor, params: GeneratorParams, cfg: GeneratorConfig) -> Tensor:
    """Map a [N,3,H,W] unit-range input to a unit-range estimate of the same
    shape: encoder, attentive residual groups, decoder with skip concats, and
    a global residual add clamped to [0,1]."""
    if lbd.data.ndim != 4 or lbd.data.shape[1] != cfg.in_channels:
        raise ShapeMismatchError(
            f"generator expects [N,{cfg.in_channels},H,W], got shape {lbd.data.shape}"
        )
    n, _, h, w = lbd.data.shape
    div = 1 << cfg.num_downscales
    if h % div or w % div:
        raise ShapeMismatchError(
            f"spatial size {h}x{w} must be divisible by {div} "
            f"({cfg.num_downscales} downscales)"
        )

    f = leaky_relu(conv2d(lbd, params.head.weight, params.head.bias, 1, 1), LEAK)
    skips = []
    for dp in params.downs:
        skips.append(f)
        f = leaky_relu(conv2d(f, dp.weight, dp.bias, stride=2, padding=1), LEAK)

    for gp in params.groups:
        f = attention_group(f, gp, cfg.attn_budget)

    for rp, fp, skip in zip(params.up_reduce, params.up_fuse, reversed(skips)):
        f = upsample_nearest(f, 2)
        f = leaky_relu(conv2d(f, rp.weight, rp.bias, 1, 1), LEAK)
        f = concat([f, skip], axis=1)
        f = leaky_relu(conv2d(f, fp.weight, fp.bias, 1, 1), LEAK)

    residual = conv2d(f, params.tail.weight, params.tail.bias, 1, 1)
    return clamp(add(lbd, residual), 0.0, 1.0)


def discriminator_forward(img: Tensor, params: DiscriminatorParams,
                          cfg: DiscriminatorConfig) -> Tensor:
    """Raw realness logits [N,1]; no squashing, ready for the hinge loss."""
    if img.data.ndim != 4 or img.data.shape[1] != cfg.in_channels:
        raise ShapeMismatchError(
            f"discriminator expects [N,{cfg.in_channels},H,W], got shape {img.data.shape}"
        )
    n, _, h, w = img.data.shape
    if h != cfg.input_size or w != cfg.input_size:
        raise ShapeMismatchError(
            f"discriminator head was sized for {cfg.input_size}x{cfg.input_size} "
            f"inputs, got {h}x{w}"
        )
    f = leaky_relu(conv2d(img, params.head.weight, params.head.bias, 1, 1), LEAK)
    for i, sp in enumerate(params.stages):
        f = leaky_relu(conv2d(f, sp.weight, sp.bias, stride=2, padding=1), LEAK)
        if i in params.attns:
            f = self_attention(f, params.attns[i], cfg.attn_budget)
    flat = reshape(f, (n, -1))
    hidden = leaky_relu(add(matmul(flat, params.fc_hidden.weight), params.fc_hidden.bias), LEAK)
    return add(matmul(hidden, params.fc_out.weight), params.fc_out.bias)


# ---- inference on whole images ---------------------------------------------------


def _pad_spatial(arr: np.ndarray, min_h: int, min_w: int, div: int) -> np.ndarray:
    _, _, h, w = arr.shape
    ph = max(min_h, -(-h // div) * div) - h
    pw = max(min_w, -(-w // div) * div) - w
    if ph or pw:
        arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    return arr


def _tile_positions(total: int, tile: int, overlap: int) -> list[int]:
    if total <= tile:
        return [0]
    stride = max(1, tile - overlap)
    pos = list(range(0, total - tile + 1, stride))
    if pos[-1] != total - tile:
        pos.append(total - tile)
    return pos


def dequantize_model(img: ImageBuffer, params: GeneratorParams, cfg: GeneratorConfig,
                     tile: int = 64, overlap: int = 8) -> ImageBuffer:
    """Run the generator over a low bit-depth image and return an 8-bit image.

    The input is zero-padded to 8 bits and normalized first, so a zero tail
    reproduces the zero-padding baseline exactly. Images whose bottleneck
    q*q score matrix would exceed the attention budget are processed in
    overlapping tiles of the training crop size, averaging the overlaps.
    Grayscale inputs are replicated to three channels and reduced back.
    """
    from .bitdepth import dequantize_zp  # local import avoids cycle at module load

    src = dequantize_zp(img, 8) if img.bit_depth < 8 else img
    x = to_unit(src).data
    if x.shape[1] == 1 and cfg.in_channels == 3:
        x = np.repeat(x, 3, axis=1)

    div = 1 << cfg.num_downscales
    h, w = x.shape[2], x.shape[3]
    xp = _pad_spatial(x, div, div, div)
    q = (xp.shape[2] // div) * (xp.shape[3] // div)

    with no_grad():
        if q * q <= cfg.attn_budget:
            out = generator_forward(Tensor(xp), params, cfg).data
        else:
            if tile % div:
                raise ConfigError(f"tile size {tile} not divisible by {div}")
            xp = _pad_spatial(x, tile, tile, div)
            _, c, hp, wp = xp.shape
            acc = np.zeros((1, c, hp, wp), dtype=np.float64)
            weight = np.zeros((hp, wp), dtype=np.float64)
            for top in _tile_positions(hp, tile, overlap):
                for left in _tile_positions(wp, tile, overlap):
                    patch = Tensor(np.ascontiguousarray(xp[:, :, top : top + tile, left : left + tile]))
                    y = generator_forward(patch, params, cfg).data
                    acc[:, :, top : top + tile, left : left + tile] += y
                    weight[top : top + tile, left : left + tile] += 1.0
            out = (acc / weight).astype(np.float32)

    out = out[:, :, :h, :w]
    if img.channels == 1:
        out = out.mean(axis=1, keepdims=True)
    return from_unit(Tensor(out), 8)
