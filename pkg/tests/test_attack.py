"""PGD gradient correctness, budgets, structured-noise geometry."""

import numpy as np
import pytest

from otalign import attack, bundle_io, classifier, subspace
from otalign.attack import AttackConfig, StructuredNoiseSpec
from otalign.classifier import ClassifierConfig
from otalign.distributions import bank_from_bundle, build_text_bank
from otalign.errors import DataError


def _fd_gradient(x, label, means, temperature, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        up[i] += h
        dn = x.copy()
        dn[i] -= h
        lu, _ = attack.cosine_ce_loss_grad(up, label, means, temperature)
        ld, _ = attack.cosine_ce_loss_grad(dn, label, means, temperature)
        grad[i] = (lu - ld) / (2 * h)
    return grad


def test_gradient_matches_finite_differences_100_configs():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 7))
        d = int(rng.integers(3, 10))
        means = rng.standard_normal((k, d))
        x = rng.standard_normal(d)
        temperature = float(rng.uniform(0.5, 5.0))
        label = int(rng.integers(0, k))
        _, grad = attack.cosine_ce_loss_grad(x, label, means, temperature)
        fd = _fd_gradient(x, label, means, temperature)
        scale = max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, np.linalg.norm(grad - fd) / scale)
    assert worst < 1e-4


def test_single_linf_step_moves_every_coordinate():
    # dense orthogonal means so the gradient has no zero coordinates
    means = np.array([[0.5, 0.5, 0.5, 0.5], [0.5, -0.5, 0.5, -0.5]])
    bank = build_text_bank(means.reshape(2, 1, 4))
    x = means[0].copy()
    cfg = AttackConfig(budget=0.05, steps=1, step_size=0.01)
    attacked = attack.pgd_embedding(x, 0, bank, cfg, temperature_logit=2.0)
    delta = attacked - x
    np.testing.assert_allclose(np.abs(delta), 0.01, atol=1e-12)
    _, grad = attack.cosine_ce_loss_grad(x, 0, means, 2.0)
    fd = _fd_gradient(x, 0, means, 2.0)
    assert (np.sign(grad) == np.sign(fd)).all()
    np.testing.assert_array_equal(np.sign(delta), np.sign(grad))


def test_degenerate_budget_returns_input():
    rng = np.random.default_rng(1)
    bank = build_text_bank(rng.standard_normal((3, 2, 6)))
    x = rng.standard_normal(6)
    cfg = AttackConfig(budget=1e-12, steps=10)
    out = attack.pgd_embedding(x, 0, bank, cfg)
    np.testing.assert_allclose(out, x, atol=1e-9)


@pytest.mark.parametrize("norm", ["l_inf", "l2"])
def test_budget_respected(norm):
    rng = np.random.default_rng(2)
    bank = build_text_bank(rng.standard_normal((4, 3, 8)))
    cfg = AttackConfig(budget=0.07, steps=10, norm=norm)
    for _ in range(20):
        x = rng.standard_normal(8)
        out = attack.pgd_embedding(x, int(rng.integers(0, 4)), bank, cfg)
        delta = out - x
        size = np.abs(delta).max() if norm == "l_inf" else np.linalg.norm(delta)
        assert size <= cfg.budget + 1e-9


def test_monotone_harm():
    rng = np.random.default_rng(3)
    bank = build_text_bank(rng.standard_normal((5, 2, 10)))
    cfg = AttackConfig(budget=0.1, steps=10)
    for _ in range(20):
        x = rng.standard_normal(10)
        label = int(rng.integers(0, 5))
        clean_loss, _ = attack.cosine_ce_loss_grad(x, label, bank.means, 100.0)
        out = attack.pgd_embedding(x, label, bank, cfg)
        attacked_loss, _ = attack.cosine_ce_loss_grad(out, label, bank.means, 100.0)
        assert attacked_loss >= clean_loss - 1e-12


def test_pgd_deterministic():
    rng = np.random.default_rng(4)
    bank = build_text_bank(rng.standard_normal((3, 2, 6)))
    x = rng.standard_normal(6)
    cfg = AttackConfig(budget=0.05, steps=5)
    a = attack.pgd_embedding(x, 1, bank, cfg)
    b = attack.pgd_embedding(x, 1, bank, cfg)
    np.testing.assert_array_equal(a, b)


def test_invalid_label_rejected():
    bank = build_text_bank(np.random.default_rng(0).standard_normal((2, 2, 4)))
    with pytest.raises(DataError, match="label"):
        attack.pgd_embedding(np.ones(4), 2, bank, AttackConfig())


def test_structured_zero_scales_identity():
    rng = np.random.default_rng(5)
    proj = subspace.build_projector(rng.standard_normal((12, 8)), 3)
    x = rng.standard_normal(8)
    out = attack.structured_perturb(x, proj, StructuredNoiseSpec(0.0, 0.0), seed=1)
    np.testing.assert_array_equal(out, x)


def test_structured_orthogonal_invisible_to_projection():
    rng = np.random.default_rng(6)
    proj = subspace.build_projector(rng.standard_normal((20, 10)), 4)
    x = rng.standard_normal(10)
    out = attack.structured_perturb(x, proj, StructuredNoiseSpec(0.0, 0.3), seed=2)
    np.testing.assert_allclose(
        subspace.project(proj, out), subspace.project(proj, x), atol=1e-6
    )


def test_structured_norm_targets_met():
    rng = np.random.default_rng(7)
    proj = subspace.build_projector(rng.standard_normal((24, 12)), 5)
    x = rng.standard_normal(12)
    spec = StructuredNoiseSpec(parallel_scale=0.1, orthogonal_scale=0.3)
    out = attack.structured_perturb(x, proj, spec, seed=3)
    split = subspace.split_perturbation(proj, out - x)
    assert np.linalg.norm(split.parallel) == pytest.approx(0.1, abs=1e-6)
    assert np.linalg.norm(split.orthogonal) == pytest.approx(0.3, abs=1e-6)


def test_structured_full_rank_orthogonal_errors():
    proj = subspace.build_projector(np.eye(4), 4)
    with pytest.raises(DataError, match="full space"):
        attack.structured_perturb(np.ones(4), proj, StructuredNoiseSpec(0.0, 0.1), seed=0)


def test_attack_bundle_tiny_budget_identity():
    bundle = bundle_io.generate_synthetic(11, 16, 3, 2, 2, 8, 0.1, 4)
    bank = bank_from_bundle(bundle)
    cfg = AttackConfig(budget=1e-12, steps=3)
    attacked = attack.attack_bundle(bundle, cfg, bank=bank)
    np.testing.assert_allclose(
        attacked.image_views.astype(float), bundle.image_views.astype(float), atol=1e-9
    )
    np.testing.assert_array_equal(attacked.labels, bundle.labels)
    assert attacked.manifest.normalization == "raw"
    assert attacked.manifest.metadata["attack"]["mode"] == "pgd_cosine"


def test_attack_bundle_structured_immunity_and_manifest():
    bundle = bundle_io.generate_synthetic(42, 64, 10, 8, 5, 80, 0.1, 16)
    proj = subspace.build_projector(bundle.text_features, 16)
    cfg = AttackConfig(mode="structured")
    spec = StructuredNoiseSpec(0.0, 0.3)
    attacked = attack.attack_bundle(bundle, cfg, projector=proj, spec=spec, seed=5)
    clean = classifier.evaluate(
        bundle, ClassifierConfig(method="ot_projected", components=16), proj
    )
    robust = classifier.evaluate(
        attacked, ClassifierConfig(method="ot_projected", components=16), proj
    )
    assert abs(clean.accuracy - robust.accuracy) <= 0.005


def test_attack_bundle_round_trips_through_disk(tmp_path):
    bundle = bundle_io.generate_synthetic(13, 16, 3, 2, 2, 6, 0.1, 4)
    bank = bank_from_bundle(bundle)
    attacked = attack.attack_bundle(bundle, AttackConfig(budget=0.05, steps=2), bank=bank)
    bundle_io.write_bundle(attacked, tmp_path / "att")
    loaded = bundle_io.load_bundle(tmp_path / "att")
    assert loaded.image_views.tobytes() == attacked.image_views.tobytes()
    assert loaded.manifest.metadata["attack"]["budget"] == 0.05


def test_attack_bundle_pgd_drops_cosine_accuracy():
    bundle = bundle_io.generate_synthetic(42, 64, 10, 8, 5, 120, 0.1, 16)
    bank = bank_from_bundle(bundle)
    attacked = attack.attack_bundle(bundle, AttackConfig(), bank=bank)
    clean = classifier.evaluate(bundle, ClassifierConfig(method="cosine"))
    robust = classifier.evaluate(attacked, ClassifierConfig(method="cosine"))
    assert clean.accuracy - robust.accuracy >= 0.3


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(budget=0.0)
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    with pytest.raises(ValueError):
        AttackConfig(norm="l1")
    cfg = AttackConfig(budget=0.08, steps=10)
    assert cfg.step_size == pytest.approx(2.5 * 0.08 / 10)


def test_attack_bundle_requires_matching_arguments():
    bundle = bundle_io.generate_synthetic(1, 8, 2, 2, 1, 2, 0.1, 4)
    with pytest.raises(DataError, match="text bank"):
        attack.attack_bundle(bundle, AttackConfig(mode="pgd_cosine"))
    with pytest.raises(DataError, match="projector"):
        attack.attack_bundle(bundle, AttackConfig(mode="structured"))
