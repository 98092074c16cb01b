"""Command-line experiment runner: ``adagan {train,eval,audit,bench}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (divergence,
capacity, contract), 4 I/O or file-format error.
"""
import argparse
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import dataclass, fields, replace
from typing import Optional

from . import __version__
from ._runtime import retain_freed_memory
from .adaconv import VARIANTS, AdaConvBlock, AdaConvBlockSpec, audit_cost, cost_model
from .checkpoint import load_checkpoint
from .data import make_dataset
from .engine.losses import G_LOSSES
from .engine.trainer import TrainConfig, Trainer
from .evaluation import N_GROUPS, evaluate_generator
from .exceptions import AdaGANError, ConfigError, FormatError
from .tensor import Rng, Tape, Tensor, mul, sum as tsum
from .zoo import PROFILES, GeneratorSpec, build_models, models_from_checkpoint, name_architecture, parse_architecture

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

PROFILE_DEFAULTS = {
    "tiny": {"side": 16, "snapshot_every": 500},
    "paper": {"side": 32, "snapshot_every": 5000},
}

logger = logging.getLogger("adagan")


@dataclass
class ExperimentConfig:
    """Everything a run needs; serialised as ``key=value`` lines."""

    arch: str = "AdaGAN-1-3x3"
    profile: str = "tiny"
    dataset: str = "shapes"
    side: Optional[int] = None
    dataset_size: int = 10000
    data_seed: int = 0
    out: str = "runs/default"
    variant: str = "separable"
    total_iterations: int = 2000
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    g_loss: str = "non-saturating"
    log_every: int = 50
    snapshot_every: Optional[int] = None
    n_power_iterations: int = 1
    log_wall_time: bool = False

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.g_loss not in G_LOSSES:
            raise ConfigError(f"g_loss must be one of {G_LOSSES}, got {self.g_loss!r}")
        parse_architecture(self.arch)

    @property
    def image_side(self):
        return self.side if self.side is not None else PROFILE_DEFAULTS[self.profile]["side"]

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        kwargs = {f.name: getattr(self, f.name) for f in fields(self) if f.name in names}
        if kwargs["snapshot_every"] is None:
            kwargs["snapshot_every"] = PROFILE_DEFAULTS[self.profile]["snapshot_every"]
        return TrainConfig(**kwargs)

    def render(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={'none' if value is None else repr(value) if isinstance(value, float) else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep:
                raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
            if key not in types:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _convert(key, value, types[key], lineno)
        return cls(**values)


def _convert(key, value, annotation, lineno):
    optional = annotation == Optional[int]
    if optional and value.lower() == "none":
        return None
    kind = int if optional else annotation
    try:
        if kind is bool:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        return kind(value)
    except ValueError:
        raise ConfigError(f"config line {lineno}: {key}={value!r} is not a valid {kind.__name__}") from None


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

# flag -> ExperimentConfig field
_OVERRIDES = {
    "arch": "arch", "profile": "profile", "dataset": "dataset", "iters": "total_iterations",
    "seed": "seed", "batch": "batch_size", "out": "out", "side": "side", "variant": "variant",
    "g_loss": "g_loss", "log_every": "log_every", "snapshot_every": "snapshot_every",
    "dataset_size": "dataset_size", "data_seed": "data_seed", "n_power_iterations": "n_power_iterations",
}


def _with_k_adaptive(arch, k):
    if k is None:
        return arch
    spec = parse_architecture(arch)
    if spec.n_ada == 0:
        raise ConfigError("--k-adaptive was given but Baseline has no adaptive blocks")
    return name_architecture(spec.n_ada, k)


def resolve_config(args):
    """Config file (if any), then command-line flags on top."""
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                config = ExperimentConfig.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    else:
        config = ExperimentConfig()
    changes = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()
               if getattr(args, flag, None) is not None}
    config = replace(config, **changes)
    return replace(config, arch=_with_k_adaptive(config.arch, getattr(args, "k_adaptive", None)))


def _add_common(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--arch", help="Baseline, AdaGAN-<n>-<k>x<k> or AdaGAN-<k>x<k>")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--dataset", help="shapes, two-gaussians-image or cifar10:<file>[,<file>...]")
    p.add_argument("--k-adaptive", type=int, dest="k_adaptive", help="override the adaptive window of --arch")
    p.add_argument("--seed", type=int)
    p.add_argument("--side", type=int, help="image side (default 16 for tiny, 32 for paper)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--dataset-size", type=int, dest="dataset_size", help="synthetic dataset size")
    p.add_argument("--data-seed", type=int, dest="data_seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="adagan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a GAN and write checkpoints, metrics and sample grids")
    _add_common(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--out")
    p.add_argument("--g-loss", dest="g_loss", choices=G_LOSSES)
    p.add_argument("--log-every", type=int, dest="log_every")
    p.add_argument("--snapshot-every", type=int, dest="snapshot_every")
    p.add_argument("--n-power-iterations", type=int, dest="n_power_iterations")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="two-sample proxy and mode coverage of a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint", help="checkpoint file, or a run directory to select the best from")
    p.add_argument("--n-samples", type=int, default=1000, dest="n_samples", help="images per group and side")
    p.add_argument("--groups", type=int, default=N_GROUPS)
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("audit", help="naive vs separable weight-regression cost per layer")
    _add_common(p)
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("bench", help="time naive vs separable AdaConvBlocks")
    p.add_argument("--k-adaptive", type=int, nargs="+", default=[3], dest="k_adaptive")
    p.add_argument("--k-filter", type=int, nargs="+", default=[3], dest="k_filter")
    p.add_argument("--c-in", type=int, nargs="+", default=[64], dest="c_in")
    p.add_argument("--c-out", type=int, nargs="+", default=[32], dest="c_out")
    p.add_argument("--side", type=int, nargs="+", default=[8])
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_bench)
    return parser


def _emit(record, stream=None):
    print(json.dumps(record), file=stream or sys.stdout, flush=True)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _trim_log(path, last_iteration):
    if not os.path.exists(path):
        return
    with open(path) as fh:
        kept = [line for line in fh if json.loads(line)["iteration"] <= last_iteration]
    with open(path, "w") as fh:
        fh.writelines(kept)


def cmd_train(args):
    config = resolve_config(args)
    train_config = config.train_config()
    retain_freed_memory()
    side = config.image_side
    dataset = make_dataset(config.dataset, side, config.dataset_size, config.data_seed)
    g, d = build_models(config.arch, config.profile, side, config.seed, config.variant, config.n_power_iterations)
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config.txt"), "w") as fh:
        fh.write(config.render())
    meta = {"profile": config.profile, "dataset": config.dataset, "data_seed": config.data_seed}
    trainer = Trainer(g, d, train_config, dataset, config.out, meta)
    logs = [os.path.join(config.out, name) for name in ("metrics.jsonl", "timing.jsonl")]
    if args.resume:
        trainer.restore(load_checkpoint(args.resume))
        for path in logs:
            _trim_log(path, trainer.iteration)
    else:
        for path in logs:
            if os.path.exists(path):
                os.remove(path)
    history = trainer.run()
    summary = {"arch": trainer.arch, "iteration": trainer.iteration, "checkpoint": trainer.last_checkpoint}
    if history:
        summary.update({k: history[-1][k] for k in ("loss_D", "loss_G")})
    _emit(summary)
    return EXIT_OK


def _real_pool(dataset_spec, side, n, seed):
    """Shuffled real images for evaluation; synthetic pools are drawn fresh from ``seed``."""
    data = make_dataset(dataset_spec, side, n, seed)
    images = data.images[Rng(seed).permutation(len(data))]
    if len(images) < n:
        raise ConfigError(f"dataset {dataset_spec!r} has {len(images)} images, evaluation needs {n}")
    return images[:n]


def _checkpoint_paths(target):
    if os.path.isdir(target):
        folder = os.path.join(target, "checkpoints") if os.path.isdir(os.path.join(target, "checkpoints")) else target
        paths = sorted(os.path.join(folder, f) for f in os.listdir(folder) if f.endswith(".adagan"))
        if not paths:
            raise FileNotFoundError(f"no checkpoints found under {target}")
        return paths
    return [target]


def cmd_eval(args):
    config = resolve_config(args)
    reports = []
    for path in _checkpoint_paths(args.checkpoint):
        ckpt = load_checkpoint(path)
        if args.arch is not None and ckpt.arch != config.arch:
            raise ConfigError(f"checkpoint {path} holds {ckpt.arch!r} but --arch asked for {config.arch!r}")
        g, _ = models_from_checkpoint(ckpt)
        dataset_spec = args.dataset or ckpt.meta.get("dataset", config.dataset)
        seed = args.seed if args.seed is not None else 0
        real = _real_pool(dataset_spec, g.spec.output_side, args.groups * args.n_samples,
                          ckpt.meta.get("data_seed", 0) + 1 + seed)
        report = evaluate_generator(g, real, args.n_samples, args.groups, seed, shapes=dataset_spec == "shapes")
        record = {"checkpoint": path, "arch": ckpt.arch, "iteration": ckpt.meta.get("iteration"), **report.to_dict()}
        reports.append(record)
        _emit(record)
    best = min(reports, key=lambda r: r["two_sample_acc_mean"])
    result = {"selected": best["checkpoint"], "two_sample_acc_mean": best["two_sample_acc_mean"],
              "two_sample_acc_std": best["two_sample_acc_std"], "evaluated": len(reports)}
    _emit(result)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"reports": reports, "best": result}, fh, indent=2)
    return EXIT_OK


def audit_report(arch, profile="paper", side=32):
    """Per-adaptive-layer cost rows plus a totals row; each row checked against built tensors."""
    spec = GeneratorSpec.from_name(arch, profile, side)
    rows = []
    for layer in spec.layers:
        if layer.kind != "adaconv":
            continue
        block = AdaConvBlockSpec(spec.k_filter, spec.k_adaptive, layer.c_in, layer.c_out)
        report, counts = audit_cost(block)
        flops = cost_model(block, layer.side, layer.side)
        rows.append({
            "layer": layer.index, "c_in": layer.c_in, "c_out": layer.c_out, "k_filter": spec.k_filter,
            "k_adaptive": spec.k_adaptive, "side": layer.side,
            "params_naive": report.params_naive, "params_separable": report.params_separable,
            "flops_naive": flops.flops_naive, "flops_separable": flops.flops_separable,
            "ratio": report.ratio, "constructed": list(counts),
        })
    total = {key: sum(r[key] for r in rows) for key in ("params_naive", "params_separable", "flops_naive", "flops_separable")}
    total["ratio"] = total["params_naive"] / total["params_separable"] if rows else float("nan")
    return rows, {"layer": "total", "arch": arch, **total}


def cmd_audit(args):
    if args.profile is None:
        args.profile = "paper"
    if args.side is None:
        args.side = PROFILE_DEFAULTS[args.profile]["side"]
    config = resolve_config(args)
    rows, total = audit_report(config.arch, config.profile, config.image_side)
    for row in rows:
        _emit(row)
    _emit(total)
    return EXIT_OK


def _time_block(block, x, proj, repeats, warmup):
    def once():
        with Tape() as tape:
            loss = tsum(mul(block(x), proj))
        block.zero_grad()
        tape.backward(loss)

    for _ in range(warmup):
        once()
    runs = []
    for _ in range(repeats):
        start = time.perf_counter()
        once()
        runs.append((time.perf_counter() - start) * 1e3)
    return runs


def cmd_bench(args):
    if args.repeats < 5 or args.warmup < 2:
        raise ConfigError("bench needs at least 5 timed runs after 2 warmups")
    retain_freed_memory()
    rng = Rng(args.seed)
    for kf in args.k_filter:
        for ka in args.k_adaptive:
            for c_in in args.c_in:
                for c_out in args.c_out:
                    for side in args.side:
                        x = Tensor(rng.normal((args.batch, side, side, c_in)), requires_grad=True)
                        proj = Tensor(rng.normal((args.batch, side, side, c_out)))
                        for variant in VARIANTS:
                            block = AdaConvBlock(AdaConvBlockSpec(kf, ka, c_in, c_out, variant), rng)
                            runs = _time_block(block, x, proj, args.repeats, args.warmup)
                            _emit({"variant": variant, "k_filter": kf, "k_adaptive": ka, "c_in": c_in,
                                   "c_out": c_out, "side": side, "batch": args.batch,
                                   "median_ms": statistics.median(runs), "runs_ms": runs})
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"adagan: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"adagan: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AdaGANError, MemoryError, ValueError, FloatingPointError) as exc:
        print(f"adagan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
