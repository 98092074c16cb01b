"""Baseline and AdaGAN generators, the strided-conv discriminator, and their names.

Generator layout (``M = m_g``, ``B = base_channels``)::

    z (latent_dim)
    dense -> M x M x B
    resize 2x, 3x3 conv -> B/2,  BatchNorm, ReLU      layer 3
    resize 2x, 3x3 conv -> B/4,  BatchNorm, ReLU      layer 4
    resize 2x, 3x3 conv -> B/8,  BatchNorm, ReLU      layer 5
    3x3 conv -> 3, Tanh                               layer 6

AdaGAN-n swaps the convs of layers 3 .. 2+n for AdaConvBlocks (lowest
resolution first); AdaGAN swaps all four. All blocks share one K_adaptive.
"""
import re
from collections import namedtuple
from dataclasses import asdict, dataclass

from .adaconv import VARIANTS, AdaConvBlock, AdaConvBlockSpec
from .engine.spectral import SpectralNormState, spectral_normalize
from .exceptions import ConfigError
from .nn import BatchNorm, Conv2d, Dense, Module, conv2d, dense, leaky_relu, relu, resize_nn_2x, tanh
from .tensor import Rng, reshape

N_CONV_LAYERS = 4
Architecture = namedtuple("Architecture", ["n_ada", "k_adaptive"])

_NAME_RE = re.compile(r"^AdaGAN(?:-(\d+))?-(\d+)x(\d+)$")

PROFILES = {
    "paper": {"base_channels": 128, "latent_dim": 128, "disc_channels": (64, 64, 128, 128, 256, 256, 512)},
    "tiny": {"base_channels": 32, "latent_dim": 128, "disc_channels": (8, 8, 16, 16, 32, 32, 64)},
}


def name_architecture(spec_or_n_ada, k_adaptive=None):
    """'Baseline', 'AdaGAN-<n>-<k>x<k>' for n = 1..3, or 'AdaGAN-<k>x<k>' for all four."""
    if hasattr(spec_or_n_ada, "n_ada"):
        n_ada, k_adaptive = spec_or_n_ada.n_ada, spec_or_n_ada.k_adaptive
    else:
        n_ada = spec_or_n_ada
    arch = _validate_arch(n_ada, k_adaptive)
    if arch.n_ada == 0:
        return "Baseline"
    k = arch.k_adaptive
    if arch.n_ada == N_CONV_LAYERS:
        return f"AdaGAN-{k}x{k}"
    return f"AdaGAN-{arch.n_ada}-{k}x{k}"


def parse_architecture(name):
    """Inverse of :func:`name_architecture`."""
    if name == "Baseline":
        return Architecture(0, None)
    m = _NAME_RE.match(name)
    if not m:
        raise ConfigError(f"unrecognised architecture name {name!r}; expected Baseline, AdaGAN-<n>-<k>x<k> or AdaGAN-<k>x<k>")
    count, k1, k2 = m.groups()
    if k1 != k2:
        raise ConfigError(f"{name!r}: the adaptive window must be square")
    if count is not None and not 1 <= int(count) < N_CONV_LAYERS:
        raise ConfigError(f"{name!r}: the block count must be 1..{N_CONV_LAYERS - 1} (use AdaGAN-<k>x<k> for all)")
    return _validate_arch(int(count) if count else N_CONV_LAYERS, int(k1))


def _validate_arch(n_ada, k_adaptive):
    if not isinstance(n_ada, int) or not 0 <= n_ada <= N_CONV_LAYERS:
        raise ConfigError(f"n_ada must be an integer in 0..{N_CONV_LAYERS}, got {n_ada!r}")
    if n_ada == 0:
        return Architecture(0, None)
    if k_adaptive is None or k_adaptive < 1 or k_adaptive % 2 == 0:
        raise ConfigError(f"K_adaptive must be a positive odd integer when n_ada > 0, got {k_adaptive!r}")
    return Architecture(n_ada, int(k_adaptive))


LayerSpec = namedtuple("LayerSpec", ["index", "resize", "kind", "c_in", "c_out", "batchnorm", "activation", "side"])


@dataclass(frozen=True)
class GeneratorSpec:
    m_g: int = 4
    base_channels: int = 128
    latent_dim: int = 128
    n_ada: int = 0
    k_adaptive: int = None
    k_filter: int = 3
    variant: str = "separable"

    def __post_init__(self):
        arch = _validate_arch(self.n_ada, self.k_adaptive)
        object.__setattr__(self, "k_adaptive", arch.k_adaptive)
        if self.m_g < 1:
            raise ConfigError(f"m_g must be positive, got {self.m_g}")
        if self.base_channels < 8 or self.base_channels % 8:
            raise ConfigError(f"base_channels must be a positive multiple of 8, got {self.base_channels}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @classmethod
    def from_name(cls, name, profile="paper", side=32, variant="separable"):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        if side % 8:
            raise ConfigError(f"image side must be divisible by 8, got {side}")
        arch = parse_architecture(name)
        p = PROFILES[profile]
        return cls(side // 8, p["base_channels"], p["latent_dim"], arch.n_ada, arch.k_adaptive, variant=variant)

    @property
    def name(self):
        return name_architecture(self)

    @property
    def output_side(self):
        return 8 * self.m_g

    @property
    def layers(self):
        b = self.base_channels
        chans = [b, b // 2, b // 4, b // 8, 3]
        out = []
        side = self.m_g
        for i in range(N_CONV_LAYERS):
            last = i == N_CONV_LAYERS - 1
            if not last:
                side *= 2
            out.append(LayerSpec(
                index=i + 3,
                resize=not last,
                kind="adaconv" if i < self.n_ada else "conv",
                c_in=chans[i],
                c_out=chans[i + 1],
                batchnorm=not last,
                activation="tanh" if last else "relu",
                side=side,
            ))
        return out

    def to_dict(self):
        return asdict(self)


class Generator(Module):
    """Maps latent codes (N, latent_dim) to images (N, 8M, 8M, 3) in [-1, 1]."""

    def __init__(self, spec, rng=None):
        self.spec = spec
        m, b = spec.m_g, spec.base_channels
        self.dense = Dense(spec.latent_dim, m * m * b, rng)
        self.convs = []
        self.norms = []
        for layer in spec.layers:
            if layer.kind == "adaconv":
                block_spec = AdaConvBlockSpec(spec.k_filter, spec.k_adaptive, layer.c_in, layer.c_out, spec.variant)
                self.convs.append(AdaConvBlock(block_spec, rng))
            else:
                self.convs.append(Conv2d(layer.c_in, layer.c_out, spec.k_filter, rng=rng))
            if layer.batchnorm:
                self.norms.append(BatchNorm(layer.c_out))

    def forward(self, z, trace=None):
        spec = self.spec
        h = reshape(self.dense(z), (z.shape[0], spec.m_g, spec.m_g, spec.base_channels))
        if trace is not None:
            trace.append(h.shape)
        for layer, conv in zip(spec.layers, self.convs):
            if layer.resize:
                h = resize_nn_2x(h)
            h = conv(h)
            if layer.batchnorm:
                h = self.norms[layer.index - 3](h)
            h = relu(h) if layer.activation == "relu" else tanh(h)
            if trace is not None:
                trace.append(h.shape)
        return h


@dataclass(frozen=True)
class DiscriminatorSpec:
    side: int = 32
    channels: tuple = PROFILES["paper"]["disc_channels"]
    slope: float = 0.1
    spectral_norm: bool = True
    n_power_iterations: int = 1

    def __post_init__(self):
        if self.side < 8 or self.side % 8:
            raise ConfigError(f"discriminator input side must be a positive multiple of 8, got {self.side}")
        if len(self.channels) != 7:
            raise ConfigError(f"discriminator needs 7 channel widths, got {len(self.channels)}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @classmethod
    def for_profile(cls, profile="paper", side=32):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        return cls(side, PROFILES[profile]["disc_channels"])

    @property
    def conv_layers(self):
        """(kernel, stride, padding, c_in, c_out) per conv, alternating 3x3/1 and 4x4/2."""
        out, c_in = [], 3
        for i, c in enumerate(self.channels):
            k, stride = (3, 1) if i % 2 == 0 else (4, 2)
            out.append((k, stride, 1, c_in, c))
            c_in = c
        return out

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class SNConv2d(Conv2d):
    def __init__(self, c_in, c_out, k, stride, padding, rng, n_power_iterations=1, spectral_norm=True):
        super().__init__(c_in, c_out, k, stride, padding, rng)
        self.sn = SpectralNormState.init(c_out, rng, n_power_iterations) if spectral_norm else None
        self.u = self.sn.u if self.sn else None

    def normalized_weight(self, update):
        if self.sn is None:
            return self.weight
        return spectral_normalize(self.weight, self.sn, update)

    def forward(self, x, update=False):
        return conv2d(x, self.normalized_weight(update), self.bias, self.stride, self.padding)


class SNDense(Dense):
    def __init__(self, n_in, n_out, rng, n_power_iterations=1, spectral_norm=True):
        super().__init__(n_in, n_out, rng)
        self.sn = SpectralNormState.init(n_out, rng, n_power_iterations) if spectral_norm else None
        self.u = self.sn.u if self.sn else None

    normalized_weight = SNConv2d.normalized_weight

    def forward(self, x, update=False):
        return dense(x, self.normalized_weight(update), self.bias)


class Discriminator(Module):
    """Maps images (N, M, M, 3) to unbounded real/fake logits (N, 1)."""

    def __init__(self, spec, rng):
        self.spec = spec
        kw = dict(n_power_iterations=spec.n_power_iterations, spectral_norm=spec.spectral_norm)
        self.convs = [SNConv2d(c_in, c_out, k, s, p, rng, **kw) for k, s, p, c_in, c_out in spec.conv_layers]
        final = spec.side // 8
        self.head = SNDense(final * final * spec.channels[-1], 1, rng, **kw)

    def sn_layers(self):
        return [*self.convs, self.head]

    def forward(self, x, update_sn=False, trace=None):
        """``update_sn`` advances every layer's power iteration before use."""
        h = x
        for conv in self.convs:
            h = leaky_relu(conv(h, update_sn), self.spec.slope)
            if trace is not None:
                trace.append(h.shape)
        return self.head(h, update_sn)


def build_generator(spec, rng):
    return Generator(spec, rng)


def build_discriminator(spec, rng):
    return Discriminator(spec, rng)


def build_models(arch, profile="tiny", side=32, seed=0, variant="separable", n_power_iterations=1):
    """Generator and discriminator for a named architecture, initialised from ``Rng(seed)``."""
    rng = Rng(seed)
    g_spec = GeneratorSpec.from_name(arch, profile, side, variant)
    d_spec = DiscriminatorSpec(side, PROFILES[profile]["disc_channels"], n_power_iterations=n_power_iterations)
    return Generator(g_spec, rng), Discriminator(d_spec, rng)


def models_from_checkpoint(ckpt):
    """Rebuild both networks from a training checkpoint and load their state."""
    meta = ckpt.meta
    try:
        g_spec = GeneratorSpec(**meta["generator"])
        d_spec = DiscriminatorSpec(**meta["discriminator"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"checkpoint metadata does not describe the networks: {exc}") from None
    if g_spec.name != ckpt.arch:
        raise ConfigError(f"checkpoint architecture {ckpt.arch!r} does not match its generator spec {g_spec.name!r}")
    g, d = Generator(g_spec), Discriminator(d_spec, Rng(0))
    for prefix, net in (("g/", g), ("d/", d)):
        net.load_state_dict({k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)})
    return g, d
