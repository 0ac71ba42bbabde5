"""Confounded glyph datasets with a known, exactly invertible renderer.

Three families mirror colored / double-colored / textured morpho digits:

* ``cm``  -- glyph color confounded with the digit, black background
* ``dcm`` -- glyph color and background color both confounded
* ``wlm`` -- glyph texture and background texture both confounded

Confounding comes from a shared root ``U_d`` and one Bernoulli(r) gate per
style factor: when the gate fires the factor takes the digit's canonical
value, otherwise an independent uniform draw.
"""
from __future__ import annotations

import colorsys
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import truncnorm

from . import scm as scm_mod
from .scm import Scm

H = W = 28
CHANNELS = 3
N_PIXELS = H * W * CHANNELS
K = 10
UNUSED = 255
TRAIN_MORPH = 0.9
TEST_MORPH_MEAN, TEST_MORPH_SD = 0.9, 0.2
TEST_MORPH_RANGE = (0.3, 1.5)
BASE_WIDTH = {0: 1, 1: 3}  # thin, thick

FACTOR_COLUMNS = ("digit", "thickness", "fg", "bg", "fg_tex", "bg_tex")
COL = {name: i for i, name in enumerate(FACTOR_COLUMNS)}
VARIANTS = ("cm", "dcm", "wlm")
STYLE_FACTORS = {"cm": ("fg",), "dcm": ("fg", "bg"), "wlm": ("fg_tex", "bg_tex")}

CANONICAL = {
    "fg": (3, 8, 1, 6, 0, 9, 4, 7, 2, 5),
    "bg": (6, 2, 9, 4, 7, 0, 5, 1, 8, 3),
    "fg_tex": (2, 5, 8, 1, 4, 7, 0, 3, 6, 9),
    "bg_tex": (7, 0, 3, 6, 9, 2, 5, 8, 1, 4),
}

ORIGINS = ("real", "counterfactual", "patchmix", "replica")
ORIGIN_CODE = {name: i for i, name in enumerate(ORIGINS)}


def _hsv(h, s, v):
    return tuple(int(round(255 * c)) for c in colorsys.hsv_to_rgb(h % 1.0, s, v))


# glyph colors are saturated and bright, background colors muted; the two
# palettes are disjoint so a glyph never vanishes into its background
FG_PALETTE = np.array([_hsv(k / K, 1.0, 1.0) for k in range(K)], dtype=np.uint8)
BG_PALETTE = np.array([_hsv(k / K + 0.05, 0.55, 0.45) for k in range(K)], dtype=np.uint8)
CM_BACKGROUND = np.zeros(3, dtype=np.uint8)


def substream_key(seed: int, *tags: int) -> int:
    """128-bit Philox key derived from a seed and integer tags."""
    words = np.random.SeedSequence([int(seed) & (2**63 - 1), *map(int, tags)]).generate_state(2, dtype=np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=substream_key(seed, *tags)))


# ---------------------------------------------------------------------------
# Factor tuples and the SCM


@dataclass(frozen=True)
class FactorTuple:
    digit: int
    thickness: int  # 0 thin, 1 thick
    fg: int | None = None
    bg: int | None = None
    fg_tex: int | None = None
    bg_tex: int | None = None
    morph: float = TRAIN_MORPH

    def __post_init__(self):
        if not 0 <= self.digit < K:
            raise ValueError(f"digit {self.digit} out of range")
        if self.thickness not in (0, 1):
            raise ValueError("thickness must be 0 (thin) or 1 (thick)")
        for name in ("fg", "bg", "fg_tex", "bg_tex"):
            v = getattr(self, name)
            if v is not None and not 0 <= v < K:
                raise ValueError(f"{name}={v} out of range")
        if self.fg_tex is None and self.fg is None:
            raise ValueError("a tuple needs a glyph color or a glyph texture")
        if (self.fg_tex is None) != (self.bg_tex is None):
            raise ValueError("textures come in pairs")
        if self.fg_tex is not None and (self.fg is not None or self.bg is not None):
            raise ValueError("textured tuples carry no palette colors")

    @property
    def variant(self) -> str:
        if self.fg_tex is not None:
            return "wlm"
        return "cm" if self.bg is None else "dcm"

    def as_row(self) -> np.ndarray:
        return np.array([UNUSED if getattr(self, c) is None else getattr(self, c) for c in FACTOR_COLUMNS], dtype=np.uint8)

    @classmethod
    def from_row(cls, row: Sequence[int], morph: float = TRAIN_MORPH) -> "FactorTuple":
        vals = [None if int(v) == UNUSED else int(v) for v in row]
        return cls(*vals, morph=float(morph))

    def discrete(self) -> tuple:
        return tuple(getattr(self, c) for c in FACTOR_COLUMNS)


@dataclass(frozen=True)
class DatasetSpec:
    variant: str
    r: float
    n_train: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (0.0 <= self.r <= 1.0) or math.isnan(self.r):
            raise ValueError(f"r must lie in [0, 1], got {self.r}")
        if self.n_train <= 0 or self.n_test <= 0:
            raise ValueError("sample counts must be positive")


def build_scm(spec: DatasetSpec, thickness: str = "train") -> Scm:
    """Gate SCM for ``spec``.

    ``thickness="train"`` makes digits 0-4 thin and 5-9 thick; ``"uniform"``
    keeps the digit -> thickness edge but with a digit-independent table.
    """
    r = float(spec.r)
    cards: dict[str, int] = {"U_d": K}
    tables: dict[str, tuple] = {"U_d": ((), np.full(K, 1.0 / K))}
    styles = STYLE_FACTORS[spec.variant]
    for s in styles:
        cards[f"G_{s}"] = 2
        tables[f"G_{s}"] = ((), np.array([1.0 - r, r]))
        cards[f"R_{s}"] = K
        tables[f"R_{s}"] = ((), np.full(K, 1.0 / K))
    cards["digit"] = K
    tables["digit"] = (("U_d",), np.eye(K))
    if thickness == "train":
        thick = np.zeros((K, 2))
        thick[:5, 0] = 1.0
        thick[5:, 1] = 1.0
    elif thickness == "uniform":
        thick = np.full((K, 2), 0.5)
    else:
        raise ValueError(f"unknown thickness rule {thickness!r}")
    cards["thickness"] = 2
    tables["thickness"] = (("digit",), thick)
    for s in styles:
        t = np.zeros((K, 2, K, K))
        canon = CANONICAL[s]
        for u in range(K):
            t[u, 0, np.arange(K), np.arange(K)] = 1.0
            t[u, 1, :, canon[u]] = 1.0
        cards[s] = K
        tables[s] = (("U_d", f"G_{s}", f"R_{s}"), t)
    roots = tuple(n for n in cards if n.startswith(("U_", "G_", "R_")))
    return scm_mod.build(cards, tables, z0="digit", zcnf=styles, confounders=roots)


def closed_form_cnf(r: float, k: int = K) -> float:
    """2 * I(digit; style) for one gate: ln K + p_m ln p_m + (K-1) p_o ln p_o."""
    pm = r + (1.0 - r) / k
    po = (1.0 - r) / k
    mi = math.log(k) + (pm * math.log(pm) if pm > 0 else 0.0) + ((k - 1) * po * math.log(po) if po > 0 else 0.0)
    return 2.0 * mi


# ---------------------------------------------------------------------------
# Rendering


def stroke_width(thickness, morph):
    """Integer stroke width for a thin/thick flag and a morph scalar."""
    base = np.where(np.asarray(thickness) == 1, BASE_WIDTH[1], BASE_WIDTH[0])
    return np.maximum(1, np.floor(base * np.asarray(morph, dtype=np.float64) + 0.5)).astype(np.int64)


MAX_WIDTH = int(stroke_width(1, TEST_MORPH_RANGE[1]))

#     a
#   f   b
#     g
#   e   c
#     d
SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}
_TOP, _MID, _BOT, _LEFT, _RIGHT = 5, 14, 22, 9, 18


def _band(center: int, width: int) -> slice:
    lo = center - (width - 1) // 2
    return slice(lo, lo + width)


@lru_cache(maxsize=None)
def glyph_mask(digit: int, width: int) -> np.ndarray:
    m = np.zeros((H, W), dtype=bool)
    span_x = slice(_LEFT, _RIGHT + 1)
    upper = slice(_TOP, _MID + 1)
    lower = slice(_MID, _BOT + 1)
    for seg in SEGMENTS[digit]:
        if seg == "a":
            m[_band(_TOP, width), span_x] = True
        elif seg == "g":
            m[_band(_MID, width), span_x] = True
        elif seg == "d":
            m[_band(_BOT, width), span_x] = True
        elif seg == "f":
            m[upper, _band(_LEFT, width)] = True
        elif seg == "b":
            m[upper, _band(_RIGHT, width)] = True
        elif seg == "e":
            m[lower, _band(_LEFT, width)] = True
        elif seg == "c":
            m[lower, _band(_RIGHT, width)] = True
    m.setflags(write=False)
    return m


def _mask_bank() -> np.ndarray:
    bank = np.zeros((K, MAX_WIDTH + 1, H, W), dtype=bool)
    for d in range(K):
        for w in range(1, MAX_WIDTH + 1):
            bank[d, w] = glyph_mask(d, w)
    return bank


def _patterns() -> np.ndarray:
    """Ten intensity fields in [0, 1]: five stripe angles, checker, dots, gradient, hash noise, rings."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    out = []
    for k in range(5):
        theta = math.pi * k / 5
        proj = xx * math.cos(theta) + yy * math.sin(theta)
        out.append((np.floor(proj / 3.0) % 2).astype(np.float64))
    out.append(((xx // 4 + yy // 4) % 2).astype(np.float64))
    out.append((((xx % 5) - 2) ** 2 + ((yy % 5) - 2) ** 2 <= 2).astype(np.float64))
    out.append((xx + yy) / (H + W - 2))
    h = (xx.astype(np.int64) * 73856093) ^ (yy.astype(np.int64) * 19349663)
    out.append(((h >> 3) & 1).astype(np.float64))
    rad = np.hypot(xx - 13.5, yy - 13.5)
    out.append((np.floor(rad / 2.5) % 2).astype(np.float64))
    return np.stack(out)


def _texture_bank(hue_offset: float, sat: float, val_a: float, val_b: float) -> np.ndarray:
    pats = _patterns()
    bank = np.empty((K, H, W, 3), dtype=np.uint8)
    for k in range(K):
        a = np.array(_hsv(k / K + hue_offset, sat, val_a), dtype=np.float64)
        b = np.array(_hsv(k / K + hue_offset, sat * 0.6, val_b), dtype=np.float64)
        t = pats[k][..., None]
        bank[k] = np.round(a * (1 - t) + b * t).astype(np.uint8)
    return bank


class Renderer:
    """The mechanism g and its inverse.

    ``relabel`` permutes palette/texture indices before lookup, giving a
    reparameterized renderer with the same image set; used to check that
    counterfactual generation commutes with factor relabeling.
    """

    def __init__(self, relabel: Sequence[int] | None = None):
        self.relabel = np.arange(K) if relabel is None else np.asarray(relabel, dtype=np.int64)
        if sorted(self.relabel.tolist()) != list(range(K)):
            raise ValueError("relabel must be a permutation of 0..9")
        self.masks = _mask_bank()
        self.fg_palette = FG_PALETTE[self.relabel]
        self.bg_palette = BG_PALETTE[self.relabel]
        self.fg_textures = _texture_bank(0.0, 1.0, 1.0, 0.8)[self.relabel]
        self.bg_textures = _texture_bank(0.05, 0.5, 0.45, 0.3)[self.relabel]
        self._templates: dict[str, dict[bytes, FactorTuple]] = {}

    def render(self, f: FactorTuple) -> np.ndarray:
        row = f.as_row()[None]
        return self.render_batch(row, np.array([f.morph], dtype=np.float32), f.variant)[0]

    def render_batch(self, factors: np.ndarray, morph: np.ndarray, variant: str, chunk: int = 8192) -> np.ndarray:
        factors = np.asarray(factors)
        n = len(factors)
        out = np.empty((n, H, W, CHANNELS), dtype=np.uint8)
        widths = stroke_width(factors[:, COL["thickness"]], morph)
        for lo in range(0, n, chunk):
            sl = slice(lo, lo + chunk)
            f = factors[sl].astype(np.int64)
            mask = self.masks[f[:, COL["digit"]], widths[sl]][..., None]
            if variant == "wlm":
                fg = self.fg_textures[f[:, COL["fg_tex"]]]
                bg = self.bg_textures[f[:, COL["bg_tex"]]]
            else:
                fg = self.fg_palette[f[:, COL["fg"]]][:, None, None, :]
                if variant == "dcm":
                    bg = self.bg_palette[f[:, COL["bg"]]][:, None, None, :]
                else:
                    bg = CM_BACKGROUND
            out[sl] = np.where(mask, fg, bg)
        return out

    def grid(self, variant: str) -> list[FactorTuple]:
        """Every discrete factor combination of ``variant`` at the training morph."""
        tuples = []
        for d in range(K):
            for t in (0, 1):
                if variant == "cm":
                    tuples += [FactorTuple(d, t, fg=c) for c in range(K)]
                elif variant == "dcm":
                    tuples += [FactorTuple(d, t, fg=c, bg=b) for c in range(K) for b in range(K)]
                elif variant == "wlm":
                    tuples += [FactorTuple(d, t, fg_tex=a, bg_tex=b) for a in range(K) for b in range(K)]
                else:
                    raise ValueError(f"unknown variant {variant!r}")
        return tuples

    def templates(self, variant: str) -> dict[bytes, FactorTuple]:
        if variant not in self._templates:
            grid = self.grid(variant)
            rows = np.stack([g.as_row() for g in grid])
            imgs = self.render_batch(rows, np.full(len(grid), TRAIN_MORPH, np.float32), variant)
            table = {}
            for g, img in zip(grid, imgs):
                key = img.tobytes()
                if key in table:
                    raise RuntimeError(f"renderer is not injective: {g} collides with {table[key]}")
                table[key] = g
            self._templates[variant] = table
        return self._templates[variant]

    def invert(self, image: np.ndarray, variant: str) -> FactorTuple:
        image = np.asarray(image, dtype=np.uint8)
        if image.shape != (H, W, CHANNELS):
            raise NoMatchError(f"image has shape {image.shape}, expected {(H, W, CHANNELS)}")
        table = self.templates(variant)
        hit = table.get(image.tobytes())
        if hit is None:
            flat = image.reshape(-1).astype(np.int64)
            best = min(np.abs(np.frombuffer(k, np.uint8).astype(np.int64) - flat).sum() for k in table)
            raise NoMatchError(f"no rendered {variant} template matches; nearest L1 distance is {best}")
        return hit

    def invert_batch(self, images: np.ndarray, variant: str) -> np.ndarray:
        """Discrete factor rows for rendered images; raises on any miss."""
        table = self.templates(variant)
        out = np.empty((len(images), len(FACTOR_COLUMNS)), dtype=np.uint8)
        for i, img in enumerate(images):
            hit = table.get(img.tobytes())
            if hit is None:
                self.invert(img, variant)  # raises with the distance
            out[i] = hit.as_row()
        return out


class NoMatchError(ValueError):
    pass


@lru_cache(maxsize=None)
def default_renderer() -> Renderer:
    return Renderer()


def render(factors: FactorTuple) -> np.ndarray:
    """X = g(Z): a deterministic 28x28x3 uint8 image."""
    return default_renderer().render(factors)


def invert(image: np.ndarray, variant: str) -> FactorTuple:
    """g^-1 by exact template match over the variant's factor grid."""
    return default_renderer().invert(image, variant)


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class Instance:
    image: np.ndarray
    label: int
    factors: FactorTuple
    origin: str = "real"
    soft_label: np.ndarray | None = None
    donor: FactorTuple | None = None


@dataclass(eq=False)
class Dataset:
    """Columnar store of instances.

    ``factors`` holds one uint8 row per instance in ``FACTOR_COLUMNS`` order
    (255 = unused); ``donors`` is only meaningful for patch-mixed rows.
    """

    spec: DatasetSpec
    split: str
    images: np.ndarray
    labels: np.ndarray
    factors: np.ndarray
    morph: np.ndarray
    origin: np.ndarray
    soft: np.ndarray
    donors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        for name in ("images", "factors", "morph", "origin", "soft"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if self.donors is None:
            self.donors = np.full((n, len(FACTOR_COLUMNS)), UNUSED, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Instance:
        origin = ORIGINS[int(self.origin[i])]
        donor = FactorTuple.from_row(self.donors[i]) if origin == "patchmix" else None
        return Instance(
            image=self.images[i],
            label=int(self.labels[i]),
            factors=FactorTuple.from_row(self.factors[i], self.morph[i]),
            origin=origin,
            soft_label=self.soft[i],
            donor=donor,
        )

    @property
    def variant(self) -> str:
        return self.spec.variant

    def column(self, name: str) -> np.ndarray:
        return self.factors[:, COL[name]]

    def provenance(self) -> dict[str, np.ndarray]:
        return {name: self.factors[:, i].astype(np.int64) for i, name in enumerate(FACTOR_COLUMNS)}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.spec, self.split, self.images[idx], self.labels[idx], self.factors[idx],
            self.morph[idx], self.origin[idx], self.soft[idx], self.donors[idx], dict(self.meta),
        )

    def concat(self, other: "Dataset", meta: dict | None = None) -> "Dataset":
        return Dataset(
            self.spec,
            self.split,
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.factors, other.factors]),
            np.concatenate([self.morph, other.morph]),
            np.concatenate([self.origin, other.origin]),
            np.concatenate([self.soft, other.soft]),
            np.concatenate([self.donors, other.donors]),
            dict(self.meta if meta is None else meta),
        )

    @classmethod
    def from_factors(cls, spec, split, factors, morph, origin="real", renderer=None, meta=None) -> "Dataset":
        renderer = renderer or default_renderer()
        factors = np.asarray(factors, dtype=np.uint8)
        morph = np.asarray(morph, dtype=np.float32)
        n = len(factors)
        labels = factors[:, COL["digit"]].copy()
        soft = np.zeros((n, K), dtype=np.float32)
        soft[np.arange(n), labels] = 1.0
        return cls(
            spec, split, renderer.render_batch(factors, morph, spec.variant), labels, factors, morph,
            np.full(n, ORIGIN_CODE[origin], dtype=np.uint8), soft, None, dict(meta or {}),
        )


def empty_like(ds: Dataset) -> Dataset:
    return ds.subset(np.arange(0))


def _factor_rows(cols: dict[str, np.ndarray], variant: str) -> np.ndarray:
    n = len(cols["digit"])
    rows = np.full((n, len(FACTOR_COLUMNS)), UNUSED, dtype=np.uint8)
    rows[:, COL["digit"]] = cols["digit"]
    rows[:, COL["thickness"]] = cols["thickness"]
    for s in STYLE_FACTORS[variant]:
        rows[:, COL[s]] = cols[s]
    return rows


def sample_factors(spec: DatasetSpec, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Factor rows and morph scalars for one split, without rendering."""
    if split == "train":
        model = build_scm(spec)
        cols = scm_mod.sample(model, spec.n_train, substream_key(spec.seed, 0))
        morph = np.full(spec.n_train, TRAIN_MORPH, dtype=np.float32)
    elif split == "test":
        model = build_scm(replace(spec, r=0.0), thickness="uniform")
        cols = scm_mod.sample(model, spec.n_test, substream_key(spec.seed, 1))
        lo, hi = TEST_MORPH_RANGE
        a, b = (lo - TEST_MORPH_MEAN) / TEST_MORPH_SD, (hi - TEST_MORPH_MEAN) / TEST_MORPH_SD
        morph = truncnorm.rvs(a, b, loc=TEST_MORPH_MEAN, scale=TEST_MORPH_SD, size=spec.n_test,
                              random_state=rng_for(spec.seed, 2)).astype(np.float32)
    else:
        raise ValueError(f"unknown split {split!r}")
    return _factor_rows(cols, spec.variant), morph


def generate_dataset(spec: DatasetSpec, renderer: Renderer | None = None) -> tuple[Dataset, Dataset]:
    """Confounded training split and unconfounded test split for ``spec``."""
    out = []
    for split in ("train", "test"):
        rows, morph = sample_factors(spec, split)
        out.append(Dataset.from_factors(spec, split, rows, morph, renderer=renderer))
    return out[0], out[1]


def canonical_mask(ds_factors: np.ndarray, variant: str) -> np.ndarray:
    """True where every style factor equals the digit's canonical value."""
    digit = ds_factors[:, COL["digit"]].astype(np.int64)
    ok = np.ones(len(ds_factors), dtype=bool)
    for s in STYLE_FACTORS[variant]:
        ok &= ds_factors[:, COL[s]] == np.asarray(CANONICAL[s])[digit]
    return ok


class EmptySubsetError(ValueError):
    pass


def unconfounded_indices(ds: Dataset) -> np.ndarray:
    keep = np.flatnonzero(~canonical_mask(ds.factors, ds.variant))
    if len(keep) == 0:
        raise EmptySubsetError("no unconfounded instances in this dataset")
    return keep


def unconfounded_subset(ds: Dataset) -> Dataset:
    """Instances whose style deviates from the canonical map in at least one factor."""
    return ds.subset(unconfounded_indices(ds))


# ---------------------------------------------------------------------------
# On-disk format

FORMAT_VERSION = 1
RECORD_DTYPE = np.dtype(
    [
        ("label", "u1"), ("digit", "u1"), ("thick_flag", "u1"), ("fg", "u1"), ("bg", "u1"),
        ("fg_tex", "u1"), ("bg_tex", "u1"), ("morph", "<f4"), ("origin", "u1"),
        ("softlabel", "<f4", (K,)), ("pixels", "u1", (N_PIXELS,)),
    ]
)
assert RECORD_DTYPE.itemsize == 2404
DONOR_DTYPE = np.dtype([(c, "u1") for c in FACTOR_COLUMNS])


def _records(ds: Dataset) -> np.ndarray:
    rec = np.zeros(len(ds), dtype=RECORD_DTYPE)
    rec["label"] = ds.labels
    for name, src in zip(("digit", "thick_flag", "fg", "bg", "fg_tex", "bg_tex"), ds.factors.T):
        rec[name] = src
    rec["morph"] = ds.morph
    rec["origin"] = ds.origin
    rec["softlabel"] = ds.soft
    rec["pixels"] = ds.images.reshape(len(ds), N_PIXELS)
    return rec


def dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256(_records(ds).tobytes())
    if np.any(ds.origin == ORIGIN_CODE["patchmix"]):
        h.update(ds.donors.tobytes())
    return h.hexdigest()


def manifest_for(ds: Dataset, extra: dict | None = None) -> dict:
    origins, counts = np.unique(ds.origin, return_counts=True)
    return {
        "format_version": FORMAT_VERSION,
        "schema": {
            "record_bytes": RECORD_DTYPE.itemsize,
            "fields": [[name, RECORD_DTYPE.fields[name][0].str] for name in RECORD_DTYPE.names],
            "unused_factor_value": UNUSED,
            "origins": list(ORIGINS),
            "pixel_layout": [H, W, CHANNELS],
        },
        "spec": asdict(ds.spec),
        "seed": ds.spec.seed,
        "split": ds.split,
        "counts": {"n": len(ds), "by_origin": {ORIGINS[int(o)]: int(c) for o, c in zip(origins, counts)}},
        "canonical_maps": {k: list(v) for k, v in CANONICAL.items()},
        "gates": "independent Bernoulli(r) gate per style factor",
        "digest": dataset_digest(ds),
        **ds.meta,
        **(extra or {}),
    }


def save_dataset(ds: Dataset, directory, extra: dict | None = None) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _records(ds).tofile(d / "data.bin")
    if np.any(ds.origin == ORIGIN_CODE["patchmix"]):
        donors = np.zeros(len(ds), dtype=DONOR_DTYPE)
        for i, c in enumerate(FACTOR_COLUMNS):
            donors[c] = ds.donors[:, i]
        donors.tofile(d / "donors.bin")
    manifest = manifest_for(ds, extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')!r}")
    rec = np.fromfile(d / "data.bin", dtype=RECORD_DTYPE)
    n = len(rec)
    factors = np.stack([rec[c] for c in ("digit", "thick_flag", "fg", "bg", "fg_tex", "bg_tex")], axis=1)
    donors = None
    if os.path.exists(d / "donors.bin"):
        dr = np.fromfile(d / "donors.bin", dtype=DONOR_DTYPE)
        donors = np.stack([dr[c] for c in FACTOR_COLUMNS], axis=1)
    known = set(RECORD_DTYPE.names) | {"format_version", "schema", "spec", "seed", "split", "counts",
                                       "canonical_maps", "gates", "digest"}
    meta = {k: v for k, v in manifest.items() if k not in known}
    return Dataset(
        DatasetSpec(**manifest["spec"]),
        manifest["split"],
        rec["pixels"].reshape(n, H, W, CHANNELS).copy(),
        rec["label"].copy(),
        factors,
        rec["morph"].copy(),
        rec["origin"].copy(),
        rec["softlabel"].copy(),
        donors,
        meta,
    )

