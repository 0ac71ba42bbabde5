"""Random model corpora and the invariant checks run by ``cnfaug props``."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import augment as ag
from . import classifier as cl
from . import datagen as dg
from . import info
from .scm import (
    DistTable, Scm, ace, ace_by_surgery, backdoor_admissible, build, d_separated,
    exact_joint, intervene, interventional_dist,
)

TOL = 1e-9
GRAD_TOL = 1e-4


def _cpt(rng: np.random.Generator, parent_cards, card: int) -> np.ndarray:
    # Dirichlet(1) rows bounded away from zero so every table is strictly positive
    t = rng.dirichlet(np.ones(card), size=int(np.prod(parent_cards, dtype=np.int64)))
    t = 0.9 * t + 0.1 / card
    return t.reshape(*parent_cards, card)


def random_confounded_scm(rng: np.random.Generator, n_style: int | None = None, max_card: int = 5,
                          perturb: bool = False) -> Scm:
    """A model in which every Z has only exogenous root parents and X collides all Z.

    Each style factor shares at least one root with Z0. ``perturb`` adds a
    direct edge from the first style factor into Z0, which leaves the class.
    """
    n_style = int(rng.integers(2, 5)) if n_style is None else n_style
    m = int(rng.integers(1, 4))
    cards: dict[str, int] = {}
    tables: dict[str, tuple] = {}
    roots = [f"U{j}" for j in range(m)]
    for u in roots:
        cards[u] = int(rng.integers(2, max_card + 1))
        tables[u] = ((), _cpt(rng, (), cards[u]))
    z0_par = sorted(rng.choice(roots, size=int(rng.integers(1, m + 1)), replace=False).tolist())
    styles = [f"Z{i}" for i in range(1, n_style + 1)]
    z_par = {"Z0": z0_par}
    for z in styles:
        shared = [str(rng.choice(z0_par))]
        extra = [u for u in roots if u not in shared and rng.random() < 0.5]
        z_par[z] = sorted(shared + extra)
    if perturb:
        z_par["Z0"] = z_par["Z0"] + [styles[0]]
    for z in ["Z0"] + styles:
        cards[z] = int(rng.integers(2, max_card + 1))
    # parents before children: roots, styles, then Z0 (which may depend on a style)
    for z in styles + ["Z0"]:
        tables[z] = (tuple(z_par[z]), _cpt(rng, [cards[p] for p in z_par[z]], cards[z]))
    cards["X"] = 2
    zs = ["Z0"] + styles
    tables["X"] = (tuple(zs), _cpt(rng, [cards[z] for z in zs], 2))
    order = roots + styles + ["Z0", "X"]
    return build({n: cards[n] for n in order}, {n: tables[n] for n in order}, z0="Z0", zcnf=styles, confounders=roots)


def random_dag_scm(rng: np.random.Generator, n: int = 6, p_edge: float = 0.4, max_card: int = 3) -> Scm:
    nodes = [f"V{i}" for i in range(n)]
    cards = {v: int(rng.integers(2, max_card + 1)) for v in nodes}
    tables = {}
    for i, v in enumerate(nodes):
        parents = tuple(nodes[j] for j in range(i) if rng.random() < p_edge)
        tables[v] = (parents, _cpt(rng, [cards[p] for p in parents], cards[v]))
    return build(cards, tables)


def ci_residual(joint: DistTable) -> float:
    """max |p(x, y, s) p(s) - p(x, s) p(y, s)| for a table over (x, y, *s)."""
    p = joint.probs
    ps = p.sum(axis=(0, 1), keepdims=True)
    pxs = p.sum(axis=1, keepdims=True)
    pys = p.sum(axis=0, keepdims=True)
    return float(np.max(np.abs(p * ps - pxs * pys)))


# ---------------------------------------------------------------------------


@dataclass
class PropertyResult:
    name: str
    passed: bool
    max_residual: float
    trials: int
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<32} trials={self.trials:<4} max_residual={self.max_residual:.3e}  {self.detail}"


def _corpus(seed: int, trials: int, perturb: bool = False):
    rng = np.random.default_rng([seed, 1])
    return [random_confounded_scm(rng, perturb=perturb) for _ in range(trials)]


def check_do_marginals(seed: int, trials: int, perturb: bool = False) -> PropertyResult:
    worst = 0.0
    for model in _corpus(seed, trials, perturb):
        zs = (model.z0,) + model.zcnf
        for zi, zj in itertools.permutations(zs, 2):
            marg = exact_joint(model, (zi,)).probs
            for v in range(model.card(zj)):
                do = interventional_dist(model, (zi,), {zj: v}).probs
                worst = max(worst, float(np.max(np.abs(do - marg))))
    return PropertyResult("do_equals_marginal", worst <= TOL, worst, trials)


def check_cnf_twice_mi(seed: int, trials: int, perturb: bool = False) -> PropertyResult:
    worst = 0.0
    for model in _corpus(seed, trials, perturb):
        zs = (model.z0,) + model.zcnf
        for zi, zj in itertools.combinations(zs, 2):
            c = info.cnf_exact(model, zi, zj)
            mi = info.mutual_information(exact_joint(model, (zi, zj)))
            worst = max(worst, abs(c - 2 * mi))
    return PropertyResult("cnf_is_twice_mi", worst <= TOL, worst, trials)


def check_interventions_remove_cnf(seed: int, trials: int, perturb: bool = False) -> PropertyResult:
    worst = 0.0
    rng = np.random.default_rng([seed, 3])
    for model in _corpus(seed, trials, perturb):
        do_z0 = {model.z0: int(rng.integers(model.card(model.z0)))}
        do_cnf = {z: int(rng.integers(model.card(z))) for z in model.zcnf}
        for do in (do_z0, do_cnf, {**do_z0, **do_cnf}):
            cut = intervene(model, do)
            for z in model.zcnf:
                worst = max(worst, info.cnf_exact(cut, model.z0, z))
    return PropertyResult("interventions_remove_cnf", worst <= TOL, worst, trials)


def check_cnf_symmetry(seed: int, trials: int) -> PropertyResult:
    worst, negative = 0.0, 0.0
    rng = np.random.default_rng([seed, 4])
    for _ in range(trials):
        model = random_dag_scm(rng, n=4)
        for a, b in itertools.combinations(model.nodes, 2):
            ab, ba = info.cnf_exact(model, a, b), info.cnf_exact(model, b, a)
            worst = max(worst, abs(ab - ba))
            negative = max(negative, -min(ab, ba))
    return PropertyResult("cnf_symmetric_nonnegative", worst <= TOL and negative <= TOL, max(worst, negative), trials)


def check_normalization_and_surgery(seed: int, trials: int) -> PropertyResult:
    """Tables sum to 1; interventions are idempotent, commute, and zero off the pinned value."""
    worst = 0.0
    rng = np.random.default_rng([seed, 5])
    for _ in range(trials):
        model = random_dag_scm(rng, n=5)
        a, b = rng.choice(model.nodes, 2, replace=False)
        da = {str(a): int(rng.integers(model.card(str(a))))}
        db = {str(b): int(rng.integers(model.card(str(b))))}
        full = exact_joint(model, model.nodes)
        worst = max(worst, abs(full.probs.sum() - 1.0))
        once = intervene(model, da)
        twice = intervene(once, da)
        worst = max(worst, 0.0 if once == twice else 1.0)
        ab = intervene(intervene(model, da), db)
        ba = intervene(intervene(model, db), da)
        worst = max(worst, 0.0 if ab == ba else 1.0)
        pinned = interventional_dist(model, model.nodes, da)
        off = np.delete(np.moveaxis(pinned.probs, pinned.axis(str(a)), 0), da[str(a)], axis=0)
        worst = max(worst, float(np.abs(off).max(initial=0.0)), abs(pinned.probs.sum() - 1.0))
    return PropertyResult("surgery_contracts", worst <= TOL, worst, trials)


def check_dsep_ci(seed: int, trials: int) -> PropertyResult:
    """d-separation agrees with conditional independence in exact joints."""
    rng = np.random.default_rng([seed, 6])
    worst, mismatches = 0.0, 0
    for _ in range(trials):
        model = random_dag_scm(rng, n=6)
        nodes = list(model.nodes)
        x, y = rng.choice(nodes, 2, replace=False)
        rest = [v for v in nodes if v not in (x, y)]
        s = [v for v in rest if rng.random() < 0.4]
        sep = d_separated(model.dag, str(x), str(y), s)
        res = ci_residual(exact_joint(model, [str(x), str(y), *s]))
        if sep:
            worst = max(worst, res)
        if sep != (res <= TOL):
            mismatches += 1
    return PropertyResult("dsep_matches_ci", mismatches == 0, worst, trials, f"mismatches={mismatches}")


def random_ace_case(rng: np.random.Generator):
    """A random model plus (x, y, s) with s = parents of x, which is always admissible."""
    while True:
        model = random_dag_scm(rng, n=5, p_edge=0.5)
        nodes = list(model.nodes)
        i, j = sorted(rng.choice(len(nodes), 2, replace=False))
        x, y = nodes[i], nodes[j]
        s = model.dag.parents(x)
        if backdoor_admissible(model.dag, x, y, s):
            return model, x, y, s


def check_ace(seed: int, trials: int) -> PropertyResult:
    rng = np.random.default_rng([seed, 7])
    worst = 0.0
    for _ in range(trials):
        model, x, y, s = random_ace_case(rng)
        cx = model.card(x)
        for a in range(cx):
            for b in range(cx):
                adj = ace(model, x, a, b, y, s)
                sur = ace_by_surgery(model, x, a, b, y)
                worst = max(worst, abs(adj - sur))
                if a == b and adj != 0.0:
                    worst = max(worst, 1.0)
    return PropertyResult("ace_adjustment_equals_surgery", worst <= TOL, worst, trials)


def random_table(rng: np.random.Generator, cards=(3, 3, 3), names=("zi", "z0", "yhat")) -> DistTable:
    p = rng.random(cards) ** 3
    p[rng.random(cards) < 0.1] = 0.0
    p[(0,) * len(cards)] += 1e-3
    return DistTable(names, p / p.sum())


def check_decomposition(seed: int, trials: int) -> PropertyResult:
    rng = np.random.default_rng([seed, 8])
    worst = 0.0
    for _ in range(trials):
        lhs, term1, mi = info.invariance_decomposition(random_table(rng))
        worst = max(worst, abs(lhs - (term1 - mi)))
    return PropertyResult("invariance_decomposition_identity", worst <= TOL, worst, trials)


def random_grid_tuple(rng: np.random.Generator, variant: str) -> dg.FactorTuple:
    d, t = int(rng.integers(10)), int(rng.integers(2))
    a, b = int(rng.integers(10)), int(rng.integers(10))
    if variant == "cm":
        return dg.FactorTuple(d, t, fg=a)
    if variant == "dcm":
        return dg.FactorTuple(d, t, fg=a, bg=b)
    return dg.FactorTuple(d, t, fg_tex=a, bg_tex=b)


def commutes_under_relabel(z: dg.FactorTuple, target: str, new_value: int, h: np.ndarray,
                           base: dg.Renderer, relabeled: dg.Renderer) -> bool:
    """Counterfactual via (g^-1, do, g) equals the one via (g~^-1, h, do, h^-1, g~).

    ``relabeled`` is g~ = g o h: it renders index k with the palette entry of h[k].
    """
    x = base.render(z)
    direct = base.render(replace(base.invert(x, z.variant), **{target: new_value}))

    z_tilde = relabeled.invert(x, z.variant)  # learned-space factors
    inv_h = np.argsort(h)
    to_true = _map_palette(z_tilde, h)
    moved = replace(to_true, **{target: new_value})
    back = _map_palette(moved, inv_h)
    via_tilde = relabeled.render(back)
    return bool(np.array_equal(direct, via_tilde))


def _map_palette(z: dg.FactorTuple, perm: np.ndarray) -> dg.FactorTuple:
    kw = {}
    for name in ("fg", "bg", "fg_tex", "bg_tex"):
        v = getattr(z, name)
        kw[name] = None if v is None else int(perm[v])
    return replace(z, **kw)


def check_identifiability(seed: int, trials: int) -> PropertyResult:
    rng = np.random.default_rng([seed, 9])
    base = dg.default_renderer()
    h = rng.permutation(10)
    relabeled = dg.Renderer(relabel=h)
    failures = 0
    for i in range(trials):
        variant = dg.VARIANTS[i % 3]
        z = random_grid_tuple(rng, variant)
        if base.invert(base.render(z), variant) != z:
            failures += 1
            continue
        target = ("fg", "bg", "fg_tex", "digit")[int(rng.integers(4))]
        if getattr(z, target) is None:
            target = "digit"
        new_value = int(rng.integers(10))
        if not commutes_under_relabel(z, target, new_value, h, base, relabeled):
            failures += 1
    return PropertyResult("counterfactual_identifiability", failures == 0, float(failures), trials)


def check_counterfactual_identities(seed: int, trials: int) -> PropertyResult:
    rng = np.random.default_rng([seed, 10])
    failures = 0
    for i in range(trials):
        variant = dg.VARIANTS[i % 3]
        z = random_grid_tuple(rng, variant)
        inst = dg.Instance(dg.render(z), z.digit, z)
        style = dg.STYLE_FACTORS[variant][0]
        same = ag.counterfactual(inst, style, getattr(z, style))
        other = (getattr(z, style) + 1 + int(rng.integers(9))) % 10
        there = ag.counterfactual(inst, style, other)
        back = ag.counterfactual(there, style, getattr(z, style))
        if not (np.array_equal(same.image, inst.image) and np.array_equal(back.image, inst.image)):
            failures += 1
    return PropertyResult("counterfactual_round_trip", failures == 0, float(failures), trials)


def check_gradients(seed: int, trials: int) -> PropertyResult:
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for t in range(trials):
        sizes = [int(rng.integers(3, 7)), int(rng.integers(3, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))]
        model = cl.MlpModel.init(sizes, seed=seed * 1000 + t, dtype="float64")
        for b in model.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        x = rng.normal(size=(5, sizes[0]))
        y = rng.dirichlet(np.ones(sizes[-1]), size=5)
        worst = max(worst, cl.gradient_check(model, x, y))
    return PropertyResult("gradient_check", worst < GRAD_TOL, worst, trials)


CHECKS: list[tuple[str, Callable[..., PropertyResult], float]] = [
    # (name, check, fraction of `trials` it runs; heavy checks run fewer)
    ("do_marginals", check_do_marginals, 1.0),
    ("cnf_twice_mi", check_cnf_twice_mi, 1.0),
    ("interventions_remove_cnf", check_interventions_remove_cnf, 1.0),
    ("cnf_symmetry", check_cnf_symmetry, 0.5),
    ("surgery", check_normalization_and_surgery, 0.5),
    ("dsep", check_dsep_ci, 1.0),
    ("ace", check_ace, 0.5),
    ("decomposition", check_decomposition, 1.0),
    ("identifiability", check_identifiability, 1.0),
    ("counterfactual", check_counterfactual_identities, 1.0),
    ("gradients", check_gradients, 0.2),
]


def run_suite(seed: int = 0, trials: int = 100, inject_fault: bool = False) -> list[PropertyResult]:
    if trials <= 0:
        return []
    results = []
    for name, fn, frac in CHECKS:
        n = max(1, math.ceil(trials * frac))
        if inject_fault and name in ("do_marginals", "cnf_twice_mi", "interventions_remove_cnf"):
            results.append(fn(seed, n, perturb=True))
        else:
            results.append(fn(seed, n))
    return results
