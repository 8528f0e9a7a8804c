"""Dataset sampling, the alternating optimization loop, and run orchestration."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Rng, Tensor, backward, no_grad
from .bitdepth import list_images, load_image, quantize_array, zp_array
from .errors import ConfigError, DivergenceError
from .losses import (
    FeatureExtractor,
    LossReport,
    adversarial_losses,
    content_loss,
    generator_total,
    mse_loss,
    perceptual_loss,
)
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .optim import adam_step, init_adam
from .params import save_checkpoint


@dataclass
class TrainConfig:
    source_dir: str = ""
    out_dir: str = "train_out"
    crop_size: int = 64
    batch_size: int = 16
    epochs: int = 80
    corpus_patches_target: int = 16000  # steps_per_epoch = ceil(target / batch_size)
    lr0: float = 1e-4
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    lbd_bits: int = 4
    beta: float = 0.5
    adv_weight: float = 0.01
    adv_form: str = "hinge"
    adv_nonsaturating: bool = False
    seed: int = 0
    sequential: bool = True
    use_discriminator: bool = True
    use_attention: bool = True
    base_channels: int = 64
    num_downscales: int = 2
    num_groups: int = 4
    blocks_per_group: int = 2
    layers_per_block: int = 4
    growth_rate: int = 32
    disc_base: int = 64
    disc_stages: int = 4
    fc_width: int = 1024
    perceptual_weights: str = ""

    def __post_init__(self):
        if not 1 <= self.lbd_bits <= 7:
            raise ConfigError(f"lbd_bits must be in [1,7], got {self.lbd_bits}")
        if self.crop_size % (1 << self.num_downscales):
            raise ConfigError(
                f"crop_size {self.crop_size} not divisible by 2^{self.num_downscales}"
            )
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0,1], got {self.beta}")
        if self.adv_form not in ("hinge", "log"):
            raise ConfigError(f"adv_form must be 'hinge' or 'log', got {self.adv_form!r}")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(self.corpus_patches_target / self.batch_size))

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            base_channels=self.base_channels,
            num_downscales=self.num_downscales,
            num_groups=self.num_groups,
            blocks_per_group=self.blocks_per_group,
            layers_per_block=self.layers_per_block,
            growth_rate=self.growth_rate,
            use_attention=self.use_attention,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        ladder = tuple(self.disc_base << i for i in range(self.disc_stages))
        return DiscriminatorConfig(
            ladder=ladder,
            attn_channels=(self.disc_base * 2, self.disc_base * 4),
            fc_width=self.fc_width,
            input_size=self.crop_size,
            use_attention=self.use_attention,
        )


# a small, fast configuration for CPU smoke training; NOT the full-scale setup
DESK_PRESET = {
    "crop_size": 32,
    "base_channels": 16,
    "num_groups": 2,
    "blocks_per_group": 2,
    "layers_per_block": 2,
    "growth_rate": 16,
    "batch_size": 4,
    "epochs": 4,
    "corpus_patches_target": 200,  # 4 epochs x 50 steps = 200 steps
    "disc_base": 32,
    "disc_stages": 4,
    "fc_width": 256,
}

PRESETS = {"desk": DESK_PRESET}


def _coerce_field(name: str, kind, raw: str):
    if kind is bool or kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return raw


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; keys must be TrainConfig fields."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce_field(key, fields[key], raw)
    return out


def make_config(config_file=None, preset: str | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then preset, then config file, then explicit flag overrides."""
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    if config_file is not None:
        merged.update(parse_config_file(config_file))
    if overrides:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        for key, value in overrides.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = value
    return TrainConfig(**merged)


def write_config(cfg: TrainConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---- sampling --------------------------------------------------------------------


@dataclass
class Sample:
    """One aligned training pair; the low bit-depth side is computed, never stored."""

    hbd_patch: Tensor  # [3, crop, crop] in [0,1]
    lbd_patch: Tensor  # quantize -> zero-pad -> normalize of the same crop


def load_corpus(source_dir, crop_size: int) -> list[tuple[str, np.ndarray]]:
    """All images in a directory as [H,W,3] uint8 arrays (grayscale replicated)."""
    paths = list_images(source_dir)
    if not paths:
        raise FileNotFoundError(f"no PNG/PPM images found in {source_dir}")
    corpus = []
    for p in paths:
        buf = load_image(p)
        if buf.bit_depth != 8:
            raise ConfigError(f"{p}: training corpus must be 8-bit (found {buf.bit_depth}-bit tag)")
        arr = buf.array()
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        if arr.shape[0] < crop_size or arr.shape[1] < crop_size:
            raise ConfigError(
                f"{p}: image {arr.shape[1]}x{arr.shape[0]} smaller than crop {crop_size}"
            )
        corpus.append((p.name, arr))
    return corpus


def _dihedral(arr: np.ndarray, which: int) -> np.ndarray:
    """One of the 8 axis-aligned symmetries: rotations, optionally after a flip."""
    if which >= 4:
        arr = arr[:, ::-1]
    return np.rot90(arr, which % 4)


def make_batch(rng: Rng, corpus, cfg: TrainConfig) -> list[Sample]:
    """Uniform image, uniform crop corner, uniform dihedral transform."""
    crop = cfg.crop_size
    samples = []
    for _ in range(cfg.batch_size):
        name, img = corpus[rng.integers(0, len(corpus))]
        top = rng.integers(0, img.shape[0] - crop + 1)
        left = rng.integers(0, img.shape[1] - crop + 1)
        patch = _dihedral(img[top : top + crop, left : left + crop], rng.integers(0, 8))
        patch = np.ascontiguousarray(patch)
        lbd = zp_array(quantize_array(patch, cfg.lbd_bits), cfg.lbd_bits, 8)
        hbd_t = Tensor(patch.astype(np.float32).transpose(2, 0, 1) / np.float32(255))
        lbd_t = Tensor(lbd.astype(np.float32).transpose(2, 0, 1) / np.float32(255))
        samples.append(Sample(hbd_t, lbd_t))
    return samples


def _stack(samples, attr) -> Tensor:
    return Tensor(np.stack([getattr(s, attr).data for s in samples]))


# ---- the optimization step -----------------------------------------------------------


class TrainState:
    """Everything a training step mutates, bundled for the loop and for tests."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.gen_cfg = cfg.generator_config()
        self.disc_cfg = cfg.discriminator_config()
        self.rng = Rng(cfg.seed)
        self.gen = init_generator(self.rng, self.gen_cfg)
        self.gen_store = self.gen.store()
        self.gen_adam = init_adam(self.gen_store)
        if cfg.use_discriminator:
            self.disc = init_discriminator(self.rng, self.disc_cfg)
            self.disc_store = self.disc.store()
            self.disc_adam = init_adam(self.disc_store)
        else:
            self.disc = None
            self.disc_store = None
            self.disc_adam = None
        if cfg.perceptual_weights:
            self.fx = FeatureExtractor.from_checkpoint(cfg.perceptual_weights)
        else:
            self.fx = FeatureExtractor()


def train_step(state: TrainState, batch: list[Sample], lr: float, step_index: int) -> LossReport:
    """One alternating update: discriminator first (if enabled), then generator."""
    cfg = state.cfg
    hbd = _stack(batch, "hbd_patch")
    lbd = _stack(batch, "lbd_patch")
    report = LossReport()
    real_logit_values = None

    if cfg.use_discriminator:
        with no_grad():
            fake = generator_forward(lbd, state.gen, state.gen_cfg)
        real_logits = discriminator_forward(hbd, state.disc, state.disc_cfg)
        fake_logits = discriminator_forward(fake, state.disc, state.disc_cfg)
        d_loss, _ = adversarial_losses(real_logits, fake_logits, cfg.adv_form,
                                       cfg.adv_nonsaturating)
        value = d_loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step_index, f"discriminator loss is {value}")
        backward(d_loss)
        adam_step(state.disc_store, state.disc_adam, lr)
        report.adv_d = value
        report.total_d = value
        real_logit_values = Tensor(real_logits.data.copy())

    pred = generator_forward(lbd, state.gen, state.gen_cfg)
    mse = mse_loss(pred, hbd)
    perc = perceptual_loss(pred, hbd, state.fx)
    content = content_loss(pred, hbd, state.fx, cfg.beta)
    report.mse = mse.item()
    report.perceptual = perc.item()
    report.content = content.item()

    if cfg.use_discriminator:
        fake_logits_g = discriminator_forward(pred, state.disc, state.disc_cfg)
        # real logits only feed the discriminator side; reuse this step's values
        _, g_adv = adversarial_losses(real_logit_values, fake_logits_g, cfg.adv_form,
                                      cfg.adv_nonsaturating)
        total = generator_total(content, g_adv, cfg.adv_weight)
        report.adv_g = g_adv.item()
    else:
        total = content
    report.total_g = total.item()
    if not math.isfinite(report.total_g):
        raise DivergenceError(step_index, f"generator loss is {report.total_g}")

    backward(total)
    adam_step(state.gen_store, state.gen_adam, lr)
    if cfg.use_discriminator:
        # drop the grads the adversarial term pushed into the frozen-side D
        state.disc_store.zero_grad()
    return report


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Stepwise decay: lr0 scaled by the decay factor every decay interval."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def run_training(cfg: TrainConfig, log=None):
    """Full run: per-epoch checkpoints, loss history CSV, resolved config copy.

    Returns (generator ParamStore, history CSV path). A non-finite loss
    aborts with DivergenceError; checkpoints already written stay on disk.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(cfg.source_dir, cfg.crop_size)
    state = TrainState(cfg)
    write_config(cfg, out_dir / "config.txt")

    history_path = out_dir / "history.csv"
    step = 0
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step",) + LossReport.FIELDS)
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            for _ in range(cfg.steps_per_epoch):
                step += 1
                batch = make_batch(state.rng, corpus, cfg)
                report = train_step(state, batch, lr, step)
                writer.writerow([step] + [f"{v:.8g}" for v in report.row()])
            save_checkpoint(state.gen_store, out_dir / f"gen_epoch_{epoch + 1:03d}.ckpt")
            if log:
                log(f"epoch {epoch + 1}/{cfg.epochs} lr={lr:g} total_g={report.total_g:.6f}")
    save_checkpoint(state.gen_store, out_dir / "gen_final.ckpt")
    return state.gen_store, history_path
