import numpy as np
import pytest

from adagan import GeneratorSpec, Rng, build_generator, synth_dataset
from adagan.data import SHAPE_CATEGORIES
from adagan.evaluation import (
    EvalReport, category_counts, evaluate_generator, generate, group_report, mode_coverage, two_sample_accuracy,
)


@pytest.fixture(scope="module")
def pool():
    return synth_dataset("shapes", 1200, 16, Rng(21)).images


def test_real_vs_real_is_near_chance(pool):
    acc = two_sample_accuracy(pool[:300], pool[300:600], seed=1)
    # 300 held-out images: chance sd is about 0.029
    assert 0.38 <= acc <= 0.62


def test_untrained_generator_is_detected(pool):
    g = build_generator(GeneratorSpec(m_g=2, base_channels=32), Rng(0))
    fake = generate(g, 300, seed=3)
    assert two_sample_accuracy(pool[:300], fake, seed=1) >= 0.9


def test_accuracy_is_deterministic(pool):
    a = two_sample_accuracy(pool[:100], pool[100:200], seed=5, epochs=2)
    assert a == two_sample_accuracy(pool[:100], pool[100:200], seed=5, epochs=2)


def test_group_report_uses_disjoint_groups(pool):
    fake = np.clip(pool[::-1] + 0.3, -1, 1)
    report = group_report(pool, fake, 100, n_groups=4, shapes=True, epochs=2)
    assert len(report.two_sample_acc) == len(report.mode_coverage) == 4
    mean, std = report.two_sample_mean_std
    assert mean == pytest.approx(np.mean(report.two_sample_acc)) and std == pytest.approx(np.std(report.two_sample_acc))
    d = report.to_dict()
    assert {"two_sample_acc_mean", "two_sample_acc_std", "mode_coverage_mean", "mode_coverage_std"} <= set(d)
    with pytest.raises(ValueError, match="need 500"):
        group_report(pool[:400], fake, 100, n_groups=5)


def test_empty_report_stats_are_nan():
    assert all(np.isnan(v) for v in EvalReport(10, []).two_sample_mean_std)
    assert "mode_coverage_mean" not in EvalReport(10, [0.5]).to_dict()


def test_mode_coverage_counts_categories(pool):
    ds = synth_dataset("shapes", 60, 16, Rng(3))
    assert mode_coverage(ds.images) == 1.0
    only = ds.images[ds.labels == 0]
    assert mode_coverage(only) == pytest.approx(1 / len(SHAPE_CATEGORIES))
    assert mode_coverage(np.full((5, 16, 16, 3), -1.0)) == 0.0
    counts = category_counts(ds.images)
    assert sum(counts.values()) == 60 and counts[None] == 0


def test_generate_is_seeded_and_restores_mode():
    g = build_generator(GeneratorSpec(m_g=2, base_channels=16), Rng(0))
    assert g.training
    a = generate(g, 7, seed=2, chunk=3)
    assert a.shape == (7, 16, 16, 3) and g.training
    assert np.array_equal(a, generate(g, 7, seed=2, chunk=3))
    # chunking only changes BLAS blocking
    assert np.allclose(a, generate(g, 7, seed=2), rtol=1e-4, atol=1e-9)


def test_evaluate_generator_report(pool):
    g = build_generator(GeneratorSpec(m_g=2, base_channels=16), Rng(0))
    report = evaluate_generator(g, pool, n_samples=50, n_groups=2, shapes=True, epochs=2)
    assert report.n_samples == 50 and len(report.two_sample_acc) == 2
    assert all(0 <= v <= 1 for v in report.two_sample_acc + report.mode_coverage)


def test_real_vs_real_ten_groups_at_full_size():
    data = synth_dataset("shapes", 20000, 16, Rng(21)).images
    report = group_report(data[:10000], data[10000:], 1000)
    assert len(report.two_sample_acc) == 10
    assert all(0.45 <= a <= 0.58 for a in report.two_sample_acc)
    assert 0.45 <= report.two_sample_mean_std[0] <= 0.58
