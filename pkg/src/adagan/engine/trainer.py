"""Alternating GAN training with checkpoint/resume.

One iteration = ``d_steps_per_g_step`` discriminator updates followed by one
generator update. The generator forward pass of the last D-step is recorded
once and reused by the G-step, so both players see the same fake batch.

Random streams are all derived from ``TrainConfig.seed``:

* ``Rng(seed)``: parameter initialisation (done by the caller),
* ``Rng(seed).spawn(epoch)``: the data permutation of each epoch,
* ``Rng(seed).spawn(NOISE_KEY)``: latent codes during training,
* ``Rng(seed).spawn(GRID_KEY)``: the fixed latent codes of sample grids.
"""
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..data import BatchIterator, write_sample_grid
from ..exceptions import ConfigError, DivergenceError
from ..nn import frozen
from ..tensor import Tape, Tensor, Rng, concat
from .losses import G_LOSSES, discriminator_loss, generator_loss
from .optim import Adam

logger = logging.getLogger(__name__)

NOISE_KEY = 2**32
GRID_KEY = 2**32 + 1


@dataclass
class TrainConfig:
    total_iterations: int = 2000
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    seed: int = 0
    dataset: str = "shapes"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    g_loss: str = "non-saturating"
    log_every: int = 50
    snapshot_every: int = 500
    n_power_iterations: int = 1
    grid_samples: int = 16
    grid_cols: int = 4
    log_wall_time: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.d_steps_per_g_step < 1:
            raise ConfigError(f"d_steps_per_g_step must be positive, got {self.d_steps_per_g_step}")
        if self.total_iterations < 0:
            raise ConfigError(f"total_iterations must be non-negative, got {self.total_iterations}")
        if self.g_loss not in G_LOSSES:
            raise ConfigError(f"g_loss must be one of {G_LOSSES}, got {self.g_loss!r}")
        for name in ("log_every", "snapshot_every", "n_power_iterations", "grid_samples", "grid_cols"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def grad_norm(module):
    total = 0.0
    for p in module.parameters():
        if p.grad is not None:
            g = p.grad.astype(np.float64)
            total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def _check_loss(value, what, iteration):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} is {value}", iteration)


class Trainer:
    """Owns the two networks, their optimisers, the data stream and all counters."""

    def __init__(self, generator, discriminator, config, dataset, out_dir=None, meta=None):
        if dataset.side != generator.spec.output_side:
            raise ConfigError(
                f"dataset images are {dataset.side}px but the generator emits {generator.spec.output_side}px"
            )
        if dataset.side != discriminator.spec.side:
            raise ConfigError(f"dataset images are {dataset.side}px but the discriminator expects {discriminator.spec.side}px")
        self.g = generator
        self.d = discriminator
        self.config = config
        self.dataset = dataset
        self.out_dir = out_dir
        self.meta = dict(meta or {})
        c = config
        self.opt_g = Adam(generator, c.lr, c.beta1, c.beta2, c.eps)
        self.opt_d = Adam(discriminator, c.lr, c.beta1, c.beta2, c.eps)
        self.noise = Rng(c.seed).spawn(NOISE_KEY)
        self.batches = BatchIterator(len(dataset), c.batch_size, c.seed)
        self.iteration = 0
        self.d_updates = 0
        self.g_updates = 0
        self.last_checkpoint = None
        if out_dir is not None:
            for sub in ("checkpoints", "samples"):
                os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    @property
    def arch(self):
        return self.g.spec.name

    def _latent(self, n):
        return Tensor(self.noise.normal((n, self.g.spec.latent_dim)))

    def _d_step(self, it, tape_g):
        c = self.config
        real = Tensor(self.dataset.images[next(self.batches)])
        with tape_g:
            fake = self.g(self._latent(c.batch_size))
        with Tape() as tape:
            logits = self.d(concat([real, fake.detach()]), update_sn=True)
            real_logits, fake_logits = logits[: c.batch_size], logits[c.batch_size :]
            loss = discriminator_loss(real_logits, fake_logits, it)
        _check_loss(loss.item(), "loss_D", it)
        self.d.zero_grad()
        tape.backward(loss)
        norm = grad_norm(self.d)
        self.opt_d.step(it)
        self.d_updates += 1
        stats = {
            "loss_D": loss.item(),
            "d_acc_real": float(np.mean(real_logits.data > 0)),
            "d_acc_fake": float(np.mean(fake_logits.data < 0)),
            "grad_norm_d": norm,
        }
        return fake, stats

    def _g_step(self, it, tape_g, fake):
        with frozen(self.d), tape_g:
            loss = generator_loss(self.d(fake), self.config.g_loss, it)
        _check_loss(loss.item(), "loss_G", it)
        self.g.zero_grad()
        tape_g.backward(loss)
        norm = grad_norm(self.g)
        self.opt_g.step(it)
        self.g_updates += 1
        return {"loss_G": loss.item(), "grad_norm_g": norm}

    def step(self):
        """Run one iteration and return its metrics record."""
        it = self.iteration + 1
        start = time.perf_counter()
        self.g.train()
        for _ in range(self.config.d_steps_per_g_step):
            tape_g = Tape()
            fake, d_stats = self._d_step(it, tape_g)
        g_stats = self._g_step(it, tape_g, fake)
        self.iteration = it
        record = {"iteration": it, **d_stats, **g_stats}
        record["wall_ms"] = (time.perf_counter() - start) * 1e3
        return record

    def run(self, until=None):
        """Train up to iteration ``until`` (default: the configured total).

        Returns the per-iteration records. On divergence the error propagates
        and the checkpoints already on disk are left untouched.
        """
        until = self.config.total_iterations if until is None else until
        history = []
        while self.iteration < until:
            try:
                record = self.step()
            except DivergenceError:
                logger.error("training diverged; last good checkpoint: %s", self.last_checkpoint)
                raise
            history.append(record)
            self._log(record)
            last = self.iteration == self.config.total_iterations
            if self.out_dir is not None and (self.iteration % self.config.snapshot_every == 0 or last):
                self.snapshot()
        return history

    def _log(self, record):
        if self.out_dir is None:
            return
        it = record["iteration"]
        if it % self.config.log_every and it != self.config.total_iterations:
            return
        timing = {"iteration": it, "wall_ms": record["wall_ms"]}
        with open(os.path.join(self.out_dir, "timing.jsonl"), "a") as fh:
            fh.write(json.dumps(timing) + "\n")
        line = dict(record)
        if not self.config.log_wall_time:
            del line["wall_ms"]
        with open(os.path.join(self.out_dir, "metrics.jsonl"), "a") as fh:
            fh.write(json.dumps(line) + "\n")

    def sample(self, n, rng=None):
        """Generator output in eval mode (batch-norm running statistics)."""
        rng = rng if rng is not None else Rng(self.config.seed).spawn(GRID_KEY)
        self.g.eval()
        try:
            return self.g(Tensor(rng.normal((n, self.g.spec.latent_dim)))).data
        finally:
            self.g.train()

    def snapshot(self):
        tag = f"{self.iteration:07d}"
        path = os.path.join(self.out_dir, "checkpoints", f"ckpt_{tag}.adagan")
        save_checkpoint(path, self.checkpoint())
        grid = self.sample(self.config.grid_samples)
        write_sample_grid(grid, self.config.grid_cols, os.path.join(self.out_dir, "samples", f"grid_{tag}.ppm"))
        self.last_checkpoint = path
        return path

    def checkpoint(self):
        tensors = {}
        for prefix, state in (
            ("g/", self.g.state_dict()),
            ("d/", self.d.state_dict()),
            ("opt_g/", self.opt_g.state_dict()),
            ("opt_d/", self.opt_d.state_dict()),
        ):
            tensors.update({prefix + k: v for k, v in state.items()})
        meta = dict(self.meta)
        meta.update({
            "iteration": self.iteration,
            "d_updates": self.d_updates,
            "g_updates": self.g_updates,
            "opt_g_step": self.opt_g.state.step,
            "opt_d_step": self.opt_d.state.step,
            "noise_rng": self.noise.get_state(),
            "batch_iter": self.batches.get_state(),
            "train_config": self.config.to_dict(),
            "generator": self.g.spec.to_dict(),
            "discriminator": self.d.spec.to_dict(),
        })
        return Checkpoint(self.arch, tensors, meta)

    def restore(self, ckpt):
        if ckpt.arch != self.arch:
            raise ConfigError(f"checkpoint architecture {ckpt.arch!r} does not match model {self.arch!r}")

        def part(prefix):
            return {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}

        self.g.load_state_dict(part("g/"))
        self.d.load_state_dict(part("d/"))
        self.opt_g.load_state_dict(part("opt_g/"), ckpt.meta["opt_g_step"])
        self.opt_d.load_state_dict(part("opt_d/"), ckpt.meta["opt_d_step"])
        self.noise.set_state(ckpt.meta["noise_rng"])
        self.batches.set_state(ckpt.meta["batch_iter"])
        self.iteration = ckpt.meta["iteration"]
        self.d_updates = ckpt.meta["d_updates"]
        self.g_updates = ckpt.meta["g_updates"]
        return self


def train(generator, discriminator, config, dataset, out_dir=None, resume=None, meta=None):
    """Build a :class:`Trainer`, optionally resume from a checkpoint path, and run it."""
    trainer = Trainer(generator, discriminator, config, dataset, out_dir, meta)
    if resume is not None:
        trainer.restore(load_checkpoint(resume))
    trainer.run()
    return trainer
