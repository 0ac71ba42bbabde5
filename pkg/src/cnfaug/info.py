"""Information measures on exact tables and on samples (all in nats)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scm import DistTable, Scm, exact_joint, interventional_dist


def _kl_terms(p: np.ndarray, q: np.ndarray) -> float:
    """sum p * log(p / q) with 0 log 0 = 0."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def entropy(p: DistTable) -> float:
    x = p.probs[p.probs > 0]
    return float(max(0.0, -np.sum(x * np.log(x))))


def mutual_information(joint: DistTable) -> float:
    if len(joint.variables) != 2:
        raise ValueError("mutual_information expects a two-variable table")
    p = joint.probs
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    return max(0.0, _kl_terms(p, np.broadcast_to(pa * pb, p.shape)))


def conditional_mi(joint: DistTable) -> float:
    """I(A; B | C) for a table over (A, B, C)."""
    if len(joint.variables) != 3:
        raise ValueError("conditional_mi expects a three-variable table")
    p = joint.probs
    mask = p > 0
    pc = np.broadcast_to(p.sum(axis=(0, 1), keepdims=True), p.shape)[mask]
    pac = np.broadcast_to(p.sum(axis=1, keepdims=True), p.shape)[mask]
    pbc = np.broadcast_to(p.sum(axis=0, keepdims=True), p.shape)[mask]
    pm = p[mask]
    return max(0.0, float(np.sum(pm * np.log(pm * pc / (pac * pbc)))))


def directed_information(scm: Scm, zi: str, zj: str) -> float:
    """E_{p(zi, zj)} log p(zi | zj) / p(zi | do(zj))."""
    joint = exact_joint(scm, (zi, zj)).probs
    pj = joint.sum(axis=0)
    total = 0.0
    for v in range(joint.shape[1]):
        if pj[v] <= 0:
            continue
        cond = joint[:, v] / pj[v]
        do = interventional_dist(scm, (zi,), {zj: v}).probs
        mask = joint[:, v] > 0
        with np.errstate(divide="ignore"):
            total += float(np.sum(joint[mask, v] * (np.log(cond[mask]) - np.log(do[mask]))))
    return total


def cnf_exact(scm: Scm, zi: str, zj: str) -> float:
    return directed_information(scm, zi, zj) + directed_information(scm, zj, zi)


@dataclass(frozen=True)
class JointCounts:
    variables: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if np.any(c < 0):
            raise ValueError("negative counts")
        if c.sum() <= 0:
            raise ValueError("empty sample")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_columns(cls, columns: Sequence[np.ndarray], variables: Sequence[str], cards: Sequence[int] | None = None):
        cols = [np.asarray(c, dtype=np.int64) for c in columns]
        if cards is None:
            cards = [int(c.max()) + 1 if len(c) else 1 for c in cols]
        flat = np.ravel_multi_index(cols, cards)
        counts = np.bincount(flat, minlength=int(np.prod(cards))).reshape(cards)
        return cls(tuple(variables), counts)

    def to_table(self) -> DistTable:
        return DistTable(self.variables, self.counts / self.counts.sum())


def _columns(samples, names: Sequence[str]) -> list[np.ndarray]:
    if isinstance(samples, Mapping):
        return [np.asarray(samples[n]) for n in names]
    rows = list(samples)
    return [np.array([r[n] for r in rows], dtype=np.int64) for n in names]


def plugin_mi(x: np.ndarray, y: np.ndarray) -> float:
    return mutual_information(JointCounts.from_columns([x, y], ("a", "b")).to_table())


def cnf_empirical(samples, zi: str, zj: str) -> float:
    """Plug-in confounding: twice the empirical mutual information.

    ``samples`` is either a mapping of name -> integer column or an
    iterable of per-sample mappings.
    """
    a, b = _columns(samples, (zi, zj))
    if len(a) == 0:
        raise ValueError("need at least one sample")
    return 2.0 * plugin_mi(a, b)


def invariance_decomposition(joint: DistTable) -> tuple[float, float, float]:
    """Split I(Zi; Yhat | Z0) for a table over (Zi, Z0, Yhat).

    Returns ``(lhs, term1, mi)`` with lhs = term1 - mi, where mi = I(Zi; Z0)
    and term1 = E log [p(z0|zi) p(y|z0,zi) / (p(z0) p(y|z0))] = I(Zi; Yhat, Z0).
    term1 is oriented so that it is non-negative and the identity holds.
    """
    if len(joint.variables) != 3:
        raise ValueError("expects a table over (Zi, Z0, Yhat)")
    zi, z0, yh = joint.variables
    lhs = conditional_mi(DistTable((zi, yh, z0), np.transpose(joint.probs, (0, 2, 1))))
    mi = mutual_information(joint.marginal((zi, z0)))

    p = joint.probs
    mask = p > 0
    p_i = np.broadcast_to(p.sum(axis=(1, 2), keepdims=True), p.shape)[mask]
    p_0y = np.broadcast_to(p.sum(axis=0, keepdims=True), p.shape)[mask]
    pm = p[mask]
    # p(z0) p(y|z0) = p(z0, y);  p(z0|zi) p(y|z0,zi) = p(zi, z0, y) / p(zi)
    term1 = float(np.sum(pm * np.log(pm / (p_0y * p_i))))
    return lhs, term1, mi


CSV_COLUMNS = ("variant", "r", "n_samples", "pair", "cnf_empirical", "cnf_exact", "mi")


def write_measure_csv(rows: Iterable[Mapping], fh=None) -> str:
    """Emit measure-sweep rows with the fixed column set; returns the text."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text
