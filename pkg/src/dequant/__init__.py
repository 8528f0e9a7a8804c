"""Image bit-depth expansion: deterministic baselines and a trainable
attentive GAN, built on an in-package autodiff tensor library."""

from .autodiff import Rng, Tensor, backward, grad_check, no_grad
from .bitdepth import (
    ImageBuffer,
    dequantize_mig,
    dequantize_zp,
    from_unit,
    load_image,
    quantize,
    save_image,
    to_unit,
)
from .losses import FeatureExtractor, LossReport
from .metrics import EvalReport, intensity_histogram, psnr, run_benchmark, ssim
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    dequantize_model,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .params import ParamStore, load_checkpoint, save_checkpoint
from .training import TrainConfig, lr_at, make_batch, run_training, train_step

__version__ = "0.1.0"
