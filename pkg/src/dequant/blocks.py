"""Building blocks: residual dense convolutions and spatial self-attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Rng,
    Tensor,
    add,
    concat,
    conv2d,
    leaky_relu,
    matmul,
    mul,
    reshape,
    softmax_last,
    transpose,
)
from .errors import AttentionBudgetError, ShapeMismatchError

LEAK = 0.2
# max element count of the q x q attention matrix (q = H*W)
DEFAULT_SCORE_BUDGET = 1 << 24


@dataclass
class Conv2dParams:
    weight: Tensor
    bias: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class LinearParams:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]

    def named(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class AttentionParams:
    """1x1 projections and the learnable blend scalar (zero at init)."""

    query_w: Tensor  # [a, p, 1, 1]
    key_w: Tensor  # [a, p, 1, 1]
    value_w: Tensor  # [p, p, 1, 1]
    gain: Tensor  # shape (1,)

    def named(self, prefix: str):
        yield f"{prefix}.query_w", self.query_w
        yield f"{prefix}.key_w", self.key_w
        yield f"{prefix}.value_w", self.value_w
        yield f"{prefix}.gain", self.gain


@dataclass
class ResidualDenseBlockParams:
    layers: list  # Conv2dParams, layer k maps p + k*growth -> growth
    fusion: Conv2dParams  # 1x1, p + K*growth -> p

    def named(self, prefix: str):
        for k, lp in enumerate(self.layers):
            yield from lp.named(f"{prefix}.layer{k}")
        yield from self.fusion.named(f"{prefix}.fusion")


@dataclass
class AttentionGroupParams:
    """Residual dense blocks followed by optional attention, plus a group skip."""

    blocks: list  # ResidualDenseBlockParams
    attention: AttentionParams | None

    def named(self, prefix: str):
        for k, bp in enumerate(self.blocks):
            yield from bp.named(f"{prefix}.block{k}")
        if self.attention is not None:
            yield from self.attention.named(f"{prefix}.attn")


# ---- initialization ----------------------------------------------------------


def init_conv(rng: Rng, c_in: int, c_out: int, ksize: int, dtype=np.float32,
              zero: bool = False, requires_grad: bool = True) -> Conv2dParams:
    """Kaiming fan-in normal weights (or zeros), zero bias."""
    if zero:
        w = np.zeros((c_out, c_in, ksize, ksize), dtype=dtype)
    else:
        fan_in = c_in * ksize * ksize
        w = rng.normal((c_out, c_in, ksize, ksize), std=float(np.sqrt(2.0 / fan_in))).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return Conv2dParams(Tensor(w, requires_grad=requires_grad),
                        Tensor(b, requires_grad=requires_grad))


def init_linear(rng: Rng, n_in: int, n_out: int, dtype=np.float32) -> LinearParams:
    w = rng.normal((n_in, n_out), std=float(np.sqrt(2.0 / n_in))).astype(dtype)
    return LinearParams(Tensor(w, requires_grad=True),
                        Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True))


def attention_width(channels: int) -> int:
    """Projection width for the score space: an eighth of the channels, at least 1."""
    return max(1, channels // 8)


def init_attention(rng: Rng, channels: int, dtype=np.float32) -> AttentionParams:
    a = attention_width(channels)
    fan_in = channels  # 1x1 projections
    std = float(np.sqrt(2.0 / fan_in))
    mk = lambda c_out: Tensor(rng.normal((c_out, channels, 1, 1), std=std).astype(dtype),
                              requires_grad=True)
    return AttentionParams(
        query_w=mk(a),
        key_w=mk(a),
        value_w=mk(channels),
        gain=Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
    )


def init_residual_dense_block(rng: Rng, channels: int, growth: int, layers: int,
                              dtype=np.float32) -> ResidualDenseBlockParams:
    convs = [init_conv(rng, channels + k * growth, growth, 3, dtype) for k in range(layers)]
    fusion = init_conv(rng, channels + layers * growth, channels, 1, dtype)
    return ResidualDenseBlockParams(convs, fusion)


def init_attention_group(rng: Rng, channels: int, growth: int, layers: int, blocks: int,
                         use_attention: bool = True, dtype=np.float32) -> AttentionGroupParams:
    bs = [init_residual_dense_block(rng, channels, growth, layers, dtype) for _ in range(blocks)]
    attn = init_attention(rng, channels, dtype) if use_attention else None
    return AttentionGroupParams(bs, attn)


# ---- forward passes ------------------------------------------------------------


def self_attention(x: Tensor, params: AttentionParams,
                   budget: int = DEFAULT_SCORE_BUDGET, return_weights: bool = False):
    """Blend each location with a softmax-weighted sum over all locations.

    Scores s[j, i] = query(j) . key(i); each output location j's weights over
    input locations i sum to 1. Output is gain * attended + x, which is the
    exact identity while gain is zero. Refuses inputs whose q*q score matrix
    would exceed ``budget`` elements.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"self_attention expects [N,C,H,W], got shape {x.data.shape}")
    n, p, h, w = x.data.shape
    q = h * w
    if q * q > budget:
        raise AttentionBudgetError(
            f"attention over {h}x{w} needs a {q}x{q} score matrix "
            f"({q * q} elements > budget {budget}); tile the input instead"
        )
    a = params.query_w.data.shape[0]
    queries = reshape(conv2d(x, params.query_w), (n, a, q))
    keys = reshape(conv2d(x, params.key_w), (n, a, q))
    values = reshape(conv2d(x, params.value_w), (n, p, q))

    scores = matmul(transpose(queries, (0, 2, 1)), keys)  # [n, q_out, q_in]
    rho = softmax_last(scores)
    attended = matmul(values, transpose(rho, (0, 2, 1)))  # out(j) = sum_i rho[j,i] v(i)
    out = add(mul(params.gain, reshape(attended, (n, p, h, w))), x)
    if return_weights:
        return out, rho
    return out


def attention_weights(x: Tensor, params: AttentionParams,
                      budget: int = DEFAULT_SCORE_BUDGET) -> np.ndarray:
    """Debug accessor: the [N, q, q] attention matrix, rows summing to 1."""
    _, rho = self_attention(x, params, budget, return_weights=True)
    return rho.data


def residual_dense_block(x: Tensor, params: ResidualDenseBlockParams) -> Tensor:
    cat = x
    for lp in params.layers:
        y = leaky_relu(conv2d(cat, lp.weight, lp.bias, stride=1, padding=1), LEAK)
        cat = concat([cat, y], axis=1)
    fused = conv2d(cat, params.fusion.weight, params.fusion.bias, stride=1, padding=0)
    return add(fused, x)


def attention_group(x: Tensor, params: AttentionGroupParams,
                    budget: int = DEFAULT_SCORE_BUDGET) -> Tensor:
    """Block chain, then attention, then an unconditional group-level skip.

    With identity blocks (zero fusion weights) and zero gain the two paths
    coincide and the output is exactly 2x; that degenerate case is the
    documented cost of the unconditional skip.
    """
    y = x
    for bp in params.blocks:
        y = residual_dense_block(y, bp)
    if params.attention is not None:
        y = self_attention(y, params.attention, budget)
    return add(y, x)
