"""Built-in verification: a condensed run of the gradient and oracle suites.

The pytest suite is the full gate; this module gives deployments a fast
`dequant selfcheck` that exercises the same invariants end to end.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Rng,
    Tensor,
    backward,
    conv2d,
    grad_check,
    matmul,
    reduce_mean,
    softmax_rows,
)
from .bitdepth import ImageBuffer, dequantize_mig, dequantize_zp, quantize
from .blocks import attention_weights, init_attention, self_attention
from .losses import FeatureExtractor, adversarial_losses, content_loss, mse_loss
from .metrics import psnr, ssim
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .params import load_checkpoint, save_checkpoint


def _conv_naive(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = b[co]
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * w[co, ci, u, v]
                    out[ni, co, i, j] = acc
    return out


def _tiny_generator(rng):
    cfg = GeneratorConfig(base_channels=4, num_downscales=1, num_groups=1,
                          blocks_per_group=1, layers_per_block=2, growth_rate=2)
    params = init_generator(rng, cfg, dtype=np.float64)
    params.tail.weight.data[...] = rng.normal(params.tail.weight.data.shape, std=0.05)
    return params, cfg


def run_all(log=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        if ok:
            log(f"[ok]   {name}")
        else:
            failures += 1
            log(f"[FAIL] {name}  {detail}")

    # conv and matmul against naive loop oracles
    rng = Rng(11)
    x = rng.normal((2, 3, 6, 6))
    w = rng.normal((4, 3, 3, 3))
    b = rng.normal((4,))
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    want = _conv_naive(x, w, b, 2, 1)
    err = float(np.abs(got - want).max() / max(1.0, np.abs(want).max()))
    check("conv2d matches 7-loop oracle", err < 1e-6, f"rel err {err:.2e}")

    a = rng.normal((5, 7))
    c = rng.normal((7, 3))
    want = np.array([[sum(a[i, k] * c[k, j] for k in range(7)) for j in range(3)] for i in range(5)])
    got = matmul(Tensor(a), Tensor(c)).data
    check("matmul matches triple-loop oracle", float(np.abs(got - want).max()) < 1e-9)

    s = softmax_rows(Tensor(rng.normal((6, 9)) * 1e4)).data
    check("softmax rows sum to 1", float(np.abs(s.sum(axis=1) - 1).max()) < 1e-6)

    # gradient checks: ops, attention, losses, tiny networks
    xt = Tensor(rng.normal((1, 2, 5, 5)), requires_grad=True, dtype=np.float64)
    wt = Tensor(rng.normal((3, 2, 3, 3)), dtype=np.float64)
    e = grad_check(lambda t: reduce_mean(conv2d(t, wt, stride=1, padding=1)), xt)
    check("conv2d gradient", e < 1e-5, f"max rel err {e:.2e}")

    attn = init_attention(Rng(5), 8, dtype=np.float64)
    attn.gain.data[...] = 0.5
    xt = Tensor(rng.normal((1, 8, 4, 4)), requires_grad=True, dtype=np.float64)
    e = grad_check(lambda t: reduce_mean(self_attention(t, attn)), xt)
    check("self-attention gradient", e < 1e-5, f"max rel err {e:.2e}")

    rho = attention_weights(Tensor(rng.normal((1, 8, 4, 4))), init_attention(Rng(6), 8))
    check("attention weights rows sum to 1", float(np.abs(rho.sum(axis=2) - 1).max()) < 1e-6)

    zero_gain = init_attention(Rng(7), 8)
    xin = Tensor(rng.normal((2, 8, 3, 3)))
    out = self_attention(xin, zero_gain)
    check("zero-gain attention is the identity", float(np.abs(out.data - xin.data).max()) == 0.0)

    gen, gcfg = _tiny_generator(Rng(8))
    xt = Tensor(rng.uniform(0.25, 0.75, (1, 3, 8, 8)), requires_grad=True, dtype=np.float64)
    e = grad_check(lambda t: reduce_mean(generator_forward(t, gen, gcfg)), xt)
    check("tiny generator gradient", e < 1e-4, f"max rel err {e:.2e}")

    dcfg = DiscriminatorConfig(ladder=(8, 16), attn_channels=(16,), fc_width=8, input_size=8)
    disc = init_discriminator(Rng(9), dcfg, dtype=np.float64)
    xt = Tensor(rng.normal((1, 3, 8, 8)) * 0.3 + 0.5, requires_grad=True, dtype=np.float64)
    e = grad_check(lambda t: reduce_mean(discriminator_forward(t, disc, dcfg)), xt)
    check("tiny discriminator gradient", e < 1e-4, f"max rel err {e:.2e}")

    fx = FeatureExtractor(stage_channels=(4, 8), tap=2, dtype=np.float64)
    target = Tensor(rng.uniform(0.0, 1.0, (1, 3, 8, 8)), dtype=np.float64)
    pt = Tensor(rng.uniform(0.0, 1.0, (1, 3, 8, 8)), requires_grad=True, dtype=np.float64)
    e = grad_check(lambda t: content_loss(t, target, fx, 0.5), pt)
    check("content loss gradient", e < 1e-5, f"max rel err {e:.2e}")

    d_loss, _ = adversarial_losses(Tensor(np.zeros((2, 1))), Tensor(np.zeros((2, 1))), "log")
    check("log adversarial at zero logits = 2 ln 2",
          abs(d_loss.item() - 2 * math.log(2)) < 1e-6)

    # exhaustive integer round trips
    for bits in (4, 6):
        values = np.arange(1 << bits, dtype=np.uint8)
        img = ImageBuffer(len(values), 1, 1, bits, values)
        ok_zp = np.array_equal(quantize(dequantize_zp(img, 8), bits).pixels, values)
        ok_mig = np.array_equal(quantize(dequantize_mig(img, 8), bits).pixels, values)
        check(f"{bits}-bit quantize/dequantize round trips", ok_zp and ok_mig)

    # metric oracles on a small random image
    g = Rng(12)
    pa = (np.asarray(g.uniform(0, 255, (16, 16, 3)))).astype(np.uint8)
    pb = (np.asarray(g.uniform(0, 255, (16, 16, 3)))).astype(np.uint8)
    ia, ib = ImageBuffer.from_array(pa), ImageBuffer.from_array(pb)
    mse = float(np.mean((pa.astype(np.float64) - pb.astype(np.float64)) ** 2))
    check("psnr matches direct formula",
          abs(psnr(ia, ib) - 10 * math.log10(255**2 / mse)) < 1e-9)
    check("ssim of an image with itself is 1", ssim(ia, ia) == 1.0)

    # checkpoint round trip
    import tempfile
    from pathlib import Path

    gen32 = init_generator(Rng(3), GeneratorConfig(base_channels=4, num_downscales=1,
                                                   num_groups=1, blocks_per_group=1,
                                                   layers_per_block=1, growth_rate=2))
    store = gen32.store()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "check.ckpt"
        save_checkpoint(store, path)
        loaded = load_checkpoint(path)
        same = all(np.array_equal(loaded[name].data, t.data) for name, t in store.items())
        check("checkpoint round trip is bit-exact", same)

    log(f"selfcheck: {failures} failure(s)")
    return failures
