"""Intervention-derived augmentation strategies.

Every strategy emits a list D' that is appended to the source dataset D.
Counterfactuals go through abduction (stored provenance, cross-checked
against the renderer's inverse), an action on the factor tuple, and a
re-render.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, replace

import numpy as np

from .datagen import (
    COL, FACTOR_COLUMNS, H, K, ORIGIN_CODE, STYLE_FACTORS, W,
    Dataset, FactorTuple, Instance, Renderer, dataset_digest, default_renderer,
    empty_like, rng_for, unconfounded_indices,
)

ALPHA_CHOICES = (1000, 2000, 5000, 10000, 20000, 50000)


class Strategy(str, enum.Enum):
    NONE = "none"
    DO_Z0 = "do_z0"
    DO_ZCNF = "do_zcnf"
    DO_Z0_ZCNF = "do_z0_zcnf"
    DO_X = "do_x"
    REPLICATE = "replicate_unconfounded"


# grouping used when reporting, in display order
SIMULATED_INTERVENTION = {
    Strategy.NONE: "N/A",
    Strategy.REPLICATE: "N/A",
    Strategy.DO_X: "do(X)",
    Strategy.DO_Z0_ZCNF: "do(Z0 u Zcnf)",
    Strategy.DO_ZCNF: "do(Zcnf)",
    Strategy.DO_Z0: "do(Z0)",
}


@dataclass(frozen=True)
class AugmentConfig:
    tau: float = 0.05
    per_instance: int = 1
    alpha_cap: int | None = None
    patch: tuple[float, float] = (0.25, 0.75)
    seed: int = 0
    dedup: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 1 <= self.per_instance <= K - 1:
            raise ValueError(f"per_instance must lie in [1, {K - 1}]")
        if self.alpha_cap is not None and self.alpha_cap not in ALPHA_CHOICES:
            raise ValueError(f"alpha_cap must be one of {ALPHA_CHOICES} or None")
        lo, hi = self.patch
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("patch fractions need 0 < min <= max <= 1")


class AbductionMismatch(ValueError):
    pass


def _thickness_rule(digits: np.ndarray) -> np.ndarray:
    return (np.asarray(digits) >= 5).astype(np.uint8)


# ---------------------------------------------------------------------------
# Single-instance counterfactual


def counterfactual(instance: Instance, target: str, new_value: int, renderer: Renderer | None = None) -> Instance:
    """Abduct the factors of ``instance``, set ``target`` to ``new_value``, re-render."""
    renderer = renderer or default_renderer()
    z = instance.factors
    if target not in FACTOR_COLUMNS or getattr(z, target) is None:
        raise ValueError(f"{target!r} is not a factor of this instance")
    if not 0 <= new_value < (2 if target == "thickness" else K):
        raise ValueError(f"value {new_value} out of range for {target!r}")
    recovered = renderer.invert(instance.image, z.variant)
    if recovered.discrete() != z.discrete():
        raise AbductionMismatch(f"stored factors {z.discrete()} disagree with g^-1(image) = {recovered.discrete()}")
    z_cf = replace(z, **{target: int(new_value)})
    soft = np.zeros(K, dtype=np.float32)
    soft[z_cf.digit] = 1.0
    return Instance(renderer.render(z_cf), z_cf.digit, z_cf, "counterfactual", soft)


def _check_abduction(ds: Dataset, idx: np.ndarray, renderer: Renderer) -> None:
    uniq = np.unique(idx)
    if len(uniq) == 0:
        return
    recovered = renderer.invert_batch(ds.images[uniq], ds.variant)
    bad = np.flatnonzero(np.any(recovered != ds.factors[uniq], axis=1))
    if len(bad):
        i = int(uniq[bad[0]])
        raise AbductionMismatch(f"instance {i}: provenance {ds.factors[i].tolist()} != g^-1(image) {recovered[bad[0]].tolist()}")


def _emit(ds: Dataset, src: np.ndarray, rows: np.ndarray, renderer: Renderer, origin: str = "counterfactual") -> Dataset:
    out = Dataset.from_factors(ds.spec, ds.split, rows, ds.morph[src], origin=origin, renderer=renderer)
    out.meta = {}
    return out


# ---------------------------------------------------------------------------
# Cell filtering


def select_cells(ds: Dataset, tau: float) -> list[tuple[str, int, int, int]]:
    """Cells (style factor, z0, zj) whose share of D exceeds ``tau``, with their counts."""
    n = len(ds)
    digit = ds.column("digit").astype(np.int64)
    out = []
    for s in STYLE_FACTORS[ds.variant]:
        counts = np.bincount(digit * K + ds.column(s).astype(np.int64), minlength=K * K)
        for cell in np.flatnonzero(counts / n > tau):
            out.append((s, int(cell // K), int(cell % K), int(counts[cell])))
    return out


def _filtered_sources(ds: Dataset, tau: float) -> list[tuple[int, np.ndarray]]:
    """Per style factor (by index), the sorted indices of instances in selected cells."""
    digit = ds.column("digit").astype(np.int64)
    chosen = {}
    for s, z0, zj, _ in select_cells(ds, tau):
        chosen.setdefault(s, []).append(np.flatnonzero((digit == z0) & (ds.column(s) == zj)))
    out = []
    for k, s in enumerate(STYLE_FACTORS[ds.variant]):
        if s in chosen:
            out.append((k, np.sort(np.concatenate(chosen[s]))))
    return out


def _finish(ds: Dataset, src: np.ndarray, rows: np.ndarray, config: AugmentConfig, renderer: Renderer, tag: int) -> Dataset:
    if config.dedup and len(rows):
        base = 256 ** np.arange(len(FACTOR_COLUMNS), dtype=np.int64)
        seen = ds.factors.astype(np.int64) @ base
        keep = ~np.isin(rows.astype(np.int64) @ base, seen)
        src, rows = src[keep], rows[keep]
    if config.alpha_cap is not None and len(rows) > config.alpha_cap:
        pick = np.sort(rng_for(config.seed, tag, 99).choice(len(rows), config.alpha_cap, replace=False))
        src, rows = src[pick], rows[pick]
    if len(rows) == 0:
        return empty_like(ds)
    return _emit(ds, src, rows, renderer)


def _other_digits(rng: np.random.Generator, current: np.ndarray, k: int) -> np.ndarray:
    """``k`` distinct digits per row, uniform over the values other than ``current``."""
    offsets = rng.permuted(np.tile(np.arange(1, K), (len(current), 1)), axis=1)[:, :k]
    return (current[:, None].astype(np.int64) + offsets) % K


def algorithm1_do_z0(ds: Dataset, config: AugmentConfig, renderer: Renderer | None = None) -> Dataset:
    """Counterfactuals w.r.t. the digit for every instance in an over-represented cell."""
    renderer = renderer or default_renderer()
    srcs, rows = [], []
    for k, idx in _filtered_sources(ds, config.tau):
        _check_abduction(ds, idx, renderer)
        rng = rng_for(config.seed, 1, k)
        digits = _other_digits(rng, ds.column("digit")[idx], config.per_instance)
        src = np.repeat(idx, config.per_instance)
        new = ds.factors[src].copy()
        new[:, COL["digit"]] = digits.reshape(-1)
        new[:, COL["thickness"]] = _thickness_rule(new[:, COL["digit"]])
        srcs.append(src)
        rows.append(new)
    if not rows:
        return empty_like(ds)
    return _finish(ds, np.concatenate(srcs), np.concatenate(rows), config, renderer, 1)


def _resample(ds, config, renderer, tag: int, digit: bool, style: bool) -> Dataset:
    srcs, rows = [], []
    for k, idx in _filtered_sources(ds, config.tau):
        _check_abduction(ds, idx, renderer)
        rng = rng_for(config.seed, tag, k)
        src = np.repeat(idx, config.per_instance)
        new = ds.factors[src].copy()
        if digit:
            new[:, COL["digit"]] = rng.integers(0, K, len(src))
            new[:, COL["thickness"]] = _thickness_rule(new[:, COL["digit"]])
        if style:
            for s in STYLE_FACTORS[ds.variant]:
                new[:, COL[s]] = rng.integers(0, K, len(src))
        srcs.append(src)
        rows.append(new)
    if not rows:
        return empty_like(ds)
    return _finish(ds, np.concatenate(srcs), np.concatenate(rows), config, renderer, tag)


def do_zcnf(ds: Dataset, config: AugmentConfig, renderer: Renderer | None = None) -> Dataset:
    """Same filter as the digit strategy; every style factor redrawn uniformly, digit kept."""
    return _resample(ds, config, renderer or default_renderer(), 2, digit=False, style=True)


def do_z0_and_zcnf(ds: Dataset, config: AugmentConfig, renderer: Renderer | None = None) -> Dataset:
    return _resample(ds, config, renderer or default_renderer(), 3, digit=True, style=True)


def do_x_patchmix(ds: Dataset, config: AugmentConfig) -> Dataset:
    """Paste a random rectangle of a donor image onto a base image.

    Emits ``alpha_cap`` instances, or ``len(ds)`` when uncapped. The soft label
    mixes the parents' labels by patch area.
    """
    n = len(ds)
    if n < 2:
        raise ValueError("patch mixing needs at least two instances")
    m = config.alpha_cap or n
    rng = rng_for(config.seed, 4)
    base = rng.integers(0, n, m)
    donor = rng.integers(0, n, m)
    lo, hi = config.patch
    ph = np.rint(rng.uniform(lo, hi, m) * H).astype(np.int64)
    pw = np.rint(rng.uniform(lo, hi, m) * W).astype(np.int64)
    y0 = rng.integers(0, H - ph + 1)
    x0 = rng.integers(0, W - pw + 1)

    images = ds.images[base].copy()
    for i in range(m):
        ys, xs = slice(y0[i], y0[i] + ph[i]), slice(x0[i], x0[i] + pw[i])
        images[i, ys, xs] = ds.images[donor[i], ys, xs]
    area = (ph * pw / (H * W)).astype(np.float32)[:, None]
    soft = (1 - area) * ds.soft[base] + area * ds.soft[donor]
    return Dataset(
        ds.spec, ds.split, images, soft.argmax(axis=1).astype(np.uint8), ds.factors[base].copy(),
        ds.morph[base].copy(), np.full(m, ORIGIN_CODE["patchmix"], dtype=np.uint8), soft.astype(np.float32),
        ds.factors[donor].copy(), {},
    )


def replicate_unconfounded(ds: Dataset, config: AugmentConfig) -> Dataset:
    """Cycle through the unconfounded subset until D' is as large as D."""
    keep = unconfounded_indices(ds)
    idx = np.resize(rng_for(config.seed, 5).permutation(keep), len(ds))
    out = ds.subset(idx)
    out.origin = np.full(len(idx), ORIGIN_CODE["replica"], dtype=np.uint8)
    out.meta = {}
    return out


def emit(ds: Dataset, strategy: Strategy | str, config: AugmentConfig, renderer: Renderer | None = None) -> Dataset:
    """D' for ``strategy``."""
    strategy = Strategy(strategy)
    if strategy is Strategy.NONE:
        return empty_like(ds)
    if strategy is Strategy.DO_Z0:
        return algorithm1_do_z0(ds, config, renderer)
    if strategy is Strategy.DO_ZCNF:
        return do_zcnf(ds, config, renderer)
    if strategy is Strategy.DO_Z0_ZCNF:
        return do_z0_and_zcnf(ds, config, renderer)
    if strategy is Strategy.DO_X:
        return do_x_patchmix(ds, config)
    return replicate_unconfounded(ds, config)


def augment(ds: Dataset, strategy: Strategy | str, config: AugmentConfig, renderer: Renderer | None = None) -> Dataset:
    """D_aug = D followed by D'; provenance of every row is kept."""
    strategy = Strategy(strategy)
    extra = emit(ds, strategy, config, renderer)
    meta = dict(ds.meta)
    meta["augmentation"] = {
        "strategy": strategy.value,
        "config": asdict(config),
        "source_digest": dataset_digest(ds),
        "n_source": len(ds),
        "n_emitted": len(extra),
    }
    return ds.concat(extra, meta)


def pooled_provenance(ds: Dataset) -> dict[str, np.ndarray]:
    """Factor columns of every row; patch-mixed rows contribute both parents."""
    mixed = ds.origin == ORIGIN_CODE["patchmix"]
    rows = np.concatenate([ds.factors, ds.donors[mixed]])
    return {name: rows[:, i].astype(np.int64) for i, name in enumerate(FACTOR_COLUMNS)}

