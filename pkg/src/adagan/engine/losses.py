"""GAN objectives in logit form."""
import numpy as np

from ..exceptions import DivergenceError
from ..tensor import mean, scale, softplus

G_LOSSES = ("non-saturating", "minimax")


def _check_finite(logits, what, iteration):
    if not np.all(np.isfinite(logits.data)):
        raise DivergenceError(f"non-finite {what} logits", iteration)


def discriminator_loss(real_logits, fake_logits, iteration=None):
    """-E[log D(x)] - E[log(1 - D(G(z)))] = mean softplus(-real) + mean softplus(fake)."""
    _check_finite(real_logits, "real", iteration)
    _check_finite(fake_logits, "fake", iteration)
    return mean(softplus(scale(real_logits, -1.0))) + mean(softplus(fake_logits))


def generator_loss(fake_logits, kind="non-saturating", iteration=None):
    """Non-saturating: mean softplus(-fake). Minimax: -mean softplus(fake)."""
    _check_finite(fake_logits, "fake", iteration)
    if kind == "non-saturating":
        return mean(softplus(scale(fake_logits, -1.0)))
    if kind == "minimax":
        return scale(mean(softplus(fake_logits)), -1.0)
    raise ValueError(f"generator loss must be one of {G_LOSSES}, got {kind!r}")


def gan_losses(real_logits, fake_logits, g_loss="non-saturating", iteration=None):
    return {
        "loss_D": discriminator_loss(real_logits, fake_logits, iteration),
        "loss_G": generator_loss(fake_logits, g_loss, iteration),
    }
