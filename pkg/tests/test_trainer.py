import math

import numpy as np
import pytest

from daglab import autodiff as ad
from daglab import transforms as tf
from daglab.autodiff import Tensor
from daglab.config import parse_config
from daglab.trainer import (
    branch_weights,
    build_models,
    discriminator_gradients,
    discriminator_loss,
    generator_gradients,
    sample_real_batch,
    train,
    training_transforms,
)

from _oracles import degeneracy_errors, generator_loss_error

SMALL = {"d_hidden": [16, 16], "g_hidden": [16, 16], "batch": 32, "n_samples": 256}


def cfg(**kw):
    return parse_config({**SMALL, **kw})


def flat(grads):
    return np.concatenate([g.ravel() for g in grads])


def test_branch_weights():
    c = cfg(mode="dag", k=4, lambda_u=0.2)
    assert branch_weights(c, 0.2, 4) == pytest.approx([1.05, 0.05, 0.05, 0.05])
    assert branch_weights(cfg(mode="ida", k=4), 0.2, 4) == [0.25] * 4
    assert branch_weights(cfg(mode="baseline"), 0.2, 1) == [1.0]


def test_training_transforms_per_mode():
    assert len(training_transforms(cfg(mode="baseline"))) == 1
    md = training_transforms(cfg(mode="md", k=3))
    assert len(md) == 3 and all(t.kind is tf.PointKind.IDENTITY for t in md)
    assert [str(t) for t in training_transforms(cfg(mode="dag"))][1] == "plane_rot90"


def test_discriminator_loss_matches_manual_sum():
    c = cfg(mode="dag", k=3, lambda_u=0.6)
    m = build_models(c, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    real, fake = rng.normal(size=(32, 2)), rng.normal(size=(32, 2))
    total, branches = discriminator_loss(c, m, real, fake)
    manual = []
    for k, t in enumerate(m.transforms):
        lr = ad.bce_from_logits(m.discriminator.discriminate(k, Tensor(tf.apply(t, real))), 1)
        lf = ad.bce_from_logits(m.discriminator.discriminate(k, Tensor(tf.apply(t, fake))), 0)
        manual.append(float(lr.values) + float(lf.values))
    np.testing.assert_allclose(branches, manual, rtol=1e-13)
    expected = manual[0] + 0.6 / 3 * sum(manual)
    assert float(total.values) == pytest.approx(expected, rel=1e-13)


def test_two_state_hand_gradient():
    # D with a single head: logit = x w + b, one real and one fake point
    c = cfg(mode="baseline", d_hidden=[1])
    m = build_models(c, np.random.default_rng(0))
    layers = m.discriminator.branches[0]
    layers[0].weight.values = np.array([[1.0], [0.0]])
    layers[0].bias.values = np.zeros(1)
    layers[1].weight.values = np.array([[0.5]])
    layers[1].bias.values = np.array([0.25])
    real, fake = np.array([[2.0, 0.0]]), np.array([[-1.0, 0.0]])
    grads, losses = discriminator_gradients(c, m, real, fake)
    # real: h = 2, l = 1.25; fake: h = -0.2 (leaky), l = 0.15
    s = lambda v: 1 / (1 + math.exp(-v))
    lr, lf = 1.25, 0.5 * -0.2 + 0.25
    assert losses.total == pytest.approx(math.log1p(math.exp(-lr)) + math.log1p(math.exp(lf)), rel=1e-14)
    d_lr, d_lf = s(lr) - 1, s(lf)
    # head weight gradient: sum of dL/dl * h
    assert grads[2][0, 0] == pytest.approx(d_lr * 2.0 + d_lf * -0.2, rel=1e-13)
    assert grads[3][0] == pytest.approx(d_lr + d_lf, rel=1e-13)
    # first-layer weight on x0: dL/dl * head_w * act'(pre) * x0
    assert grads[0][0, 0] == pytest.approx(d_lr * 0.5 * 1.0 * 2.0 + d_lf * 0.5 * 0.2 * -1.0, rel=1e-13)


def test_mode_degeneracies():
    worst = degeneracy_errors(n_batches=5)
    assert all(v <= 1e-10 for v in worst.values()), worst


@pytest.mark.parametrize("mode", ["dag", "dag_no_g", "ida", "md"])
@pytest.mark.parametrize("flavor", ["non_saturating", "saturating"])
def test_generator_loss_flavors_match_finite_differences(mode, flavor):
    rng = np.random.default_rng(7)
    assert max(generator_loss_error(flavor, rng, mode) for _ in range(5)) <= 1e-4


def test_no_g_augmentation_equals_baseline_generator_through_branch_zero():
    c_nog = cfg(mode="dag_no_g", k=4)
    m = build_models(c_nog, np.random.default_rng(3))
    z = np.random.default_rng(4).normal(size=(32, 8))
    g_nog, _ = generator_gradients(c_nog, m, z)
    base = cfg(mode="baseline")
    m_base = build_models(base, np.random.default_rng(3))
    m_base.generator = m.generator
    m_base.discriminator = m.discriminator.subset([0])
    g_base, _ = generator_gradients(base, m_base, z)
    np.testing.assert_array_equal(flat(g_nog), flat(g_base))


def test_zero_lambda_v_matches_no_g_augmentation():
    z = np.random.default_rng(4).normal(size=(32, 8))
    out = []
    for c in (cfg(mode="dag", lambda_v=0.0), cfg(mode="dag_no_g")):
        m = build_models(c, np.random.default_rng(3))
        out.append(flat(generator_gradients(c, m, z)[0]))
    np.testing.assert_allclose(out[0], out[1], rtol=1e-12, atol=1e-18)


def test_saturating_and_non_saturating_differ():
    z = np.random.default_rng(4).normal(size=(32, 8))
    out = []
    for flavor in ("non_saturating", "saturating"):
        c = cfg(mode="dag", g_loss=flavor)
        out.append(flat(generator_gradients(c, build_models(c, np.random.default_rng(3)), z)[0]))
    assert not np.allclose(out[0], out[1])


def test_da_transforms_each_example_uniformly():
    c = cfg(mode="da", batch=4000, n_samples=4000)
    m = build_models(c, np.random.default_rng(0))
    batch = sample_real_batch(c, m, np.random.default_rng(1), np.random.default_rng(2))
    # every centre sits in the first quadrant; each rotation owns another quadrant
    quadrant = (batch[:, 0] < 0) * 1 + (batch[:, 1] < 0) * 2
    counts = np.bincount(quadrant, minlength=4) / len(batch)
    np.testing.assert_allclose(counts, 0.25, atol=0.03)


def test_iterations_zero_gives_one_row():
    report = train(cfg(iterations=0))
    assert [r.iteration for r in report.rows] == [0]
    assert report.aborted is None


def test_eval_cadence_includes_last_iteration():
    report = train(cfg(iterations=25, eval_every=10), keep_samples=False)
    assert [r.iteration for r in report.rows] == [0, 10, 20, 25]
    assert all(r.samples is None for r in report.rows)


def test_training_is_deterministic():
    a = train(cfg(mode="dag", iterations=30, eval_every=10))
    b = train(cfg(mode="dag", iterations=30, eval_every=10))
    for ra, rb in zip(a.rows, b.rows):
        assert (ra.d_loss, ra.g_loss, ra.frechet, ra.mode_kl, ra.leakage) == (rb.d_loss, rb.g_loss, rb.frechet, rb.mode_kl, rb.leakage)
        np.testing.assert_array_equal(ra.samples, rb.samples)


def test_seed_changes_the_run():
    a = train(cfg(iterations=5), seed=1, keep_samples=False)
    b = train(cfg(iterations=5), seed=2, keep_samples=False)
    assert a.final.frechet != b.final.frechet


def test_baseline_note_about_empty_leakage_family():
    assert train(cfg(mode="baseline", iterations=0)).notes
    assert not train(cfg(mode="dag", iterations=0)).notes


def test_non_finite_parameters_abort_cleanly(monkeypatch):
    import daglab.trainer as trainer

    real_build = trainer.build_models

    def poisoned(*args, **kwargs):
        m = real_build(*args, **kwargs)
        m.discriminator.params[0].values[0, 0] = np.nan
        return m

    monkeypatch.setattr(trainer, "build_models", poisoned)
    report = train(cfg(iterations=20, eval_every=10), keep_samples=False)
    assert report.aborted is not None and "non-finite" in report.aborted
    assert report.rows == []


def test_grid_dataset_trains():
    c = cfg(dataset="grid", family="rotation", k=4, iterations=3, eval_every=3, eval_samples=200, reference_samples=200)
    report = train(c)
    assert report.final.samples.shape == (200, 64)
    assert 0.0 <= report.final.leakage <= 1.0


def test_baseline_learns_something():
    report = train(cfg(mode="baseline", iterations=1500, eval_every=1500), keep_samples=False)
    assert report.final.frechet < 0.25 * report.rows[0].frechet
