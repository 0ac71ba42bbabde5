import numpy as np
import pytest

from cnfaug import augment as ag
from cnfaug import datagen as dg
from cnfaug import info


@pytest.fixture(scope="module")
def cm95():
    return dg.generate_dataset(dg.DatasetSpec("cm", 0.95, 20000, 100, seed=1))[0]


@pytest.fixture(scope="module")
def dcm95():
    return dg.generate_dataset(dg.DatasetSpec("dcm", 0.95, 20000, 100, seed=2))[0]


def test_null_intervention_identity(dcm95):
    inst = dcm95[3]
    for target in ("digit", "fg", "bg", "thickness"):
        cf = ag.counterfactual(inst, target, getattr(inst.factors, target))
        assert np.array_equal(cf.image, inst.image)


def test_digit_counterfactual_locality(dcm95):
    inst = dcm95[0]
    new = (inst.label + 3) % 10
    cf = ag.counterfactual(inst, "digit", new)
    assert cf.label == new and cf.factors.bg == inst.factors.bg
    both_bg = ~np.any(inst.image == dg.FG_PALETTE[inst.factors.fg], axis=-1)
    both_bg &= ~np.any(cf.image == dg.FG_PALETTE[cf.factors.fg], axis=-1)
    assert np.array_equal(inst.image[both_bg], cf.image[both_bg])


def test_double_intervention_round_trip(dcm95):
    rng = np.random.default_rng(0)
    for i in rng.choice(len(dcm95), 100, replace=False):
        inst = dcm95[int(i)]
        there = ag.counterfactual(inst, "fg", int(rng.integers(0, 10)))
        back = ag.counterfactual(there, "fg", inst.factors.fg)
        assert np.array_equal(back.image, inst.image)


def test_counterfactual_changes_only_target(dcm95):
    inst = dcm95[7]
    cf = ag.counterfactual(inst, "bg", (inst.factors.bg + 1) % 10)
    changed = [c for c in dg.FACTOR_COLUMNS if getattr(cf.factors, c) != getattr(inst.factors, c)]
    assert changed == ["bg"]


def test_counterfactual_abduction_mismatch(dcm95):
    inst = dcm95[1]
    tampered = dg.Instance(inst.image, inst.label, dg.FactorTuple(inst.label, inst.factors.thickness, fg=(inst.factors.fg + 1) % 10, bg=inst.factors.bg))
    with pytest.raises(ag.AbductionMismatch):
        ag.counterfactual(tampered, "digit", 0)


def test_filter_selects_canonical_cells(cm95):
    cells = ag.select_cells(cm95, 0.05)
    assert sorted((z0, zj) for _, z0, zj, _ in cells) == [(d, dg.CANONICAL["fg"][d]) for d in range(10)]


def test_tau_one_emits_nothing(cm95):
    assert len(ag.algorithm1_do_z0(cm95, ag.AugmentConfig(tau=1.0))) == 0


def test_do_z0_reduces_pooled_cnf(cm95):
    aug = ag.augment(cm95, "do_z0", ag.AugmentConfig())
    before = info.cnf_empirical(cm95.provenance(), "digit", "fg")
    after = info.cnf_empirical(ag.pooled_provenance(aug), "digit", "fg")
    assert after < 1.0 and after < 0.25 * before
    extra = aug.subset(np.arange(len(cm95), len(aug)))
    assert np.all(extra.origin == dg.ORIGIN_CODE["counterfactual"])
    assert np.all(extra.column("thickness") == (extra.column("digit") >= 5))
    # every emission changed the digit of an over-represented source
    assert np.all(dg.canonical_mask(extra.factors, "cm") == False)  # noqa: E712


@pytest.mark.parametrize("strategy", ["do_zcnf", "do_z0_zcnf"])
def test_emissions_are_near_independent(dcm95, strategy):
    extra = ag.emit(dcm95, strategy, ag.AugmentConfig())
    assert len(extra) >= 10**4
    for s in ("fg", "bg"):
        assert info.plugin_mi(extra.column("digit"), extra.column(s)) < 0.05


def test_do_z0_emission_dependence_bound(dcm95):
    # the new digit excludes the source digit, so within D' it avoids one of
    # ten values per style; the residual dependence is at most ln(10/9)
    extra = ag.emit(dcm95, "do_z0", ag.AugmentConfig())
    assert len(extra) >= 10**4
    for s in ("fg", "bg"):
        assert info.plugin_mi(extra.column("digit"), extra.column(s)) < np.log(10 / 9) + 0.01


def test_do_zcnf_keeps_digit(cm95):
    extra = ag.do_zcnf(cm95, ag.AugmentConfig())
    src_cells = ag._filtered_sources(cm95, 0.05)[0][1]
    assert np.array_equal(extra.column("digit"), cm95.column("digit")[src_cells])
    counts = np.bincount(extra.column("fg"), minlength=10) / len(extra)
    assert np.all(np.abs(counts - 0.1) < 0.02)


def test_patchmix_limits(cm95):
    small = ag.do_x_patchmix(cm95, ag.AugmentConfig(patch=(0.01, 0.01), alpha_cap=1000))
    base = small.factors
    assert np.array_equal(small.labels, base[:, 0])
    for i in range(20):
        assert np.array_equal(small.images[i], dg.render(dg.FactorTuple.from_row(base[i])))
    full = ag.do_x_patchmix(cm95, ag.AugmentConfig(patch=(1.0, 1.0), alpha_cap=1000))
    assert np.array_equal(full.labels, full.donors[:, 0])
    for i in range(20):
        assert np.array_equal(full.images[i], dg.render(dg.FactorTuple.from_row(full.donors[i])))
    assert np.allclose(full.soft.sum(axis=1), 1.0, atol=1e-6)


def test_patchmix_keeps_confounding(cm95):
    aug = ag.augment(cm95, "do_x", ag.AugmentConfig())
    before = info.cnf_empirical(cm95.provenance(), "digit", "fg")
    after = info.cnf_empirical(ag.pooled_provenance(aug), "digit", "fg")
    assert abs(after - before) <= 0.05 * before
    extra = ag.emit(cm95, "do_x", ag.AugmentConfig())
    src = np.zeros((10, 10))
    np.add.at(src, (cm95.column("digit"), cm95.column("fg")), 1)
    par = np.zeros((10, 10))
    np.add.at(par, (extra.column("digit"), extra.column("fg")), 1)
    assert 0.5 * np.abs(src / src.sum() - par / par.sum()).sum() < 0.02


def test_replicate_cyclic_fill(cm95):
    extra = ag.replicate_unconfounded(cm95, ag.AugmentConfig())
    keep = dg.unconfounded_indices(cm95)
    assert len(extra) == len(cm95)
    assert np.all(extra.origin == dg.ORIGIN_CODE["replica"])
    digests = {img.tobytes() for img in cm95.images[keep]}
    assert all(img.tobytes() in digests for img in extra.images[:200])
    # each unconfounded element appears floor or ceil of |D|/s times; identical
    # images in the subset (same factors) scale the bounds by their multiplicity
    lo, hi = len(cm95) // len(keep), -(-len(cm95) // len(keep))
    src_keys, src_mult = np.unique(cm95.factors[keep], axis=0, return_counts=True)
    out_keys, out_mult = np.unique(extra.factors, axis=0, return_counts=True)
    assert np.array_equal(src_keys, out_keys)
    assert np.all(out_mult >= lo * src_mult) and np.all(out_mult <= hi * src_mult)


def test_strategy_none_is_identity(cm95):
    aug = ag.augment(cm95, "none", ag.AugmentConfig())
    assert len(aug) == len(cm95) and np.array_equal(aug.images, cm95.images)


def test_alpha_cap_and_determinism(dcm95):
    cfg = ag.AugmentConfig(alpha_cap=5000, seed=4)
    a = ag.emit(dcm95, "do_z0", cfg)
    b = ag.emit(dcm95, "do_z0", cfg)
    assert len(a) == 5000 and dg.dataset_digest(a) == dg.dataset_digest(b)
    with pytest.raises(ValueError):
        ag.AugmentConfig(alpha_cap=1234)


def test_dedup_drops_existing_tuples(cm95):
    plain = ag.emit(cm95, "do_z0", ag.AugmentConfig())
    dedup = ag.emit(cm95, "do_z0", ag.AugmentConfig(dedup=True))
    seen = {tuple(r) for r in cm95.factors}
    assert len(dedup) <= len(plain)
    assert not any(tuple(r) in seen for r in dedup.factors)


def test_augment_metadata(cm95):
    aug = ag.augment(cm95, "do_zcnf", ag.AugmentConfig())
    meta = aug.meta["augmentation"]
    assert meta["strategy"] == "do_zcnf" and meta["n_source"] == len(cm95)
    assert meta["n_emitted"] == len(aug) - len(cm95)
