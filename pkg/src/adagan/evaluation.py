"""Sample-quality proxies: a classifier two-sample test and shape-mode coverage.

Both are reported per group, as mean and standard deviation over
``n_groups`` disjoint groups of samples.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SHAPE_CATEGORIES, detect_shape
from .estimator import TwoSampleClassifier
from .tensor import Rng, Tensor

N_GROUPS = 10


def two_sample_accuracy(real, fake, seed=0, **probe_params):
    """Held-out accuracy of a probe trained on half of ``real`` (label 0) vs ``fake`` (label 1)."""
    n = min(len(real), len(fake))
    rng = Rng(seed)
    X = np.concatenate([real[:n], fake[:n]])
    y = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    order = rng.permutation(2 * n)
    train, test = order[:n], order[n:]
    clf = TwoSampleClassifier(random_state=seed, **probe_params).fit(X[train], y[train])
    return float(clf.score(X[test], y[test]))


def mode_coverage(images):
    """Fraction of the shape categories found among ``images`` by the rule-based detector."""
    found = {detect_shape(img) for img in images}
    return len(found & set(SHAPE_CATEGORIES)) / len(SHAPE_CATEGORIES)


def category_counts(images):
    counts = dict.fromkeys((*SHAPE_CATEGORIES, None), 0)
    for img in images:
        counts[detect_shape(img)] += 1
    return counts


@dataclass
class EvalReport:
    n_samples: int
    two_sample_acc: list
    mode_coverage: list = field(default_factory=list)

    @staticmethod
    def _stats(values):
        return (float(np.mean(values)), float(np.std(values))) if values else (float("nan"), float("nan"))

    @property
    def two_sample_mean_std(self):
        return self._stats(self.two_sample_acc)

    @property
    def mode_coverage_mean_std(self):
        return self._stats(self.mode_coverage)

    def to_dict(self):
        d = asdict(self)
        d["two_sample_acc_mean"], d["two_sample_acc_std"] = self.two_sample_mean_std
        if self.mode_coverage:
            d["mode_coverage_mean"], d["mode_coverage_std"] = self.mode_coverage_mean_std
        return d


def group_report(real, fake, n_samples, n_groups=N_GROUPS, seed=0, shapes=False, **probe_params):
    """Split the pools into ``n_groups`` disjoint groups of ``n_samples`` and score each."""
    need = n_groups * n_samples
    if len(real) < need or len(fake) < need:
        raise ValueError(f"need {need} real and generated images, got {len(real)} and {len(fake)}")
    report = EvalReport(n_samples, [])
    for k in range(n_groups):
        sl = slice(k * n_samples, (k + 1) * n_samples)
        report.two_sample_acc.append(two_sample_accuracy(real[sl], fake[sl], seed + k, **probe_params))
        if shapes:
            report.mode_coverage.append(mode_coverage(fake[sl]))
    return report


def generate(generator, n, seed, chunk=500):
    """``n`` eval-mode samples from a generator, latent codes from ``Rng(seed)``."""
    # latents drawn in one call so the result does not depend on ``chunk``
    z = Rng(seed).normal((n, generator.spec.latent_dim))
    was_training = generator.training
    generator.eval()
    try:
        out = [generator(Tensor(z[i : i + chunk])).data for i in range(0, n, chunk)]
    finally:
        generator.train(was_training)
    return np.concatenate(out)


def evaluate_generator(generator, real, n_samples=1000, n_groups=N_GROUPS, seed=0, shapes=False, **probe_params):
    """Two-sample proxy (and mode coverage for shape data) for a trained generator.

    ``real`` must hold at least ``n_groups * n_samples`` images, which are
    used in order, so pass a shuffled pool.
    """
    fake = generate(generator, n_groups * n_samples, seed)
    return group_report(real, fake, n_samples, n_groups, seed, shapes, **probe_params)
