from .losses import discriminator_loss, gan_losses, generator_loss
from .optim import Adam, AdamState, adam_step
from .spectral import SpectralNormState, estimate_sigma, spectral_normalize

__all__ = [
    "Adam",
    "AdamState",
    "SpectralNormState",
    "adam_step",
    "discriminator_loss",
    "estimate_sigma",
    "gan_losses",
    "generator_loss",
    "spectral_normalize",
]
