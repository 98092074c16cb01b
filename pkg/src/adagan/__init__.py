"""Adaptive-convolution GAN generators on a small numpy autodiff core."""
from .adaconv import AdaConvBlock, AdaConvBlockSpec, adaconv_block, cost_model, local_conv, regress_biases, regress_weights
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, load_cifar10_binary, synth_dataset, write_sample_grid
from .engine import Adam, SpectralNormState, gan_losses, spectral_normalize
from .engine.trainer import TrainConfig, Trainer, train
from .estimator import AdaGAN, TwoSampleClassifier
from .exceptions import (
    AdaGANError, CapacityError, ConfigError, ContractError, DimensionError, DivergenceError, FormatError,
)
from .tensor import Parameter, Rng, Tape, Tensor
from .zoo import (
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, build_discriminator, build_generator,
    name_architecture, parse_architecture,
)

__version__ = "0.1.0"
