"""Discrete structural causal models.

A model is a DAG over finite-valued nodes with one conditional probability
table per node. Exogenous noise lives in explicit root nodes, so every
quantity here (joints, interventional distributions, adjustment estimates)
is an exact sum-product over the tables.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_CELL_CAP = 10**7
SCM_FORMAT = "cnfaug.scm/1"

Assignment = Mapping[str, int]


class ScmError(ValueError):
    pass


class UnknownNodeError(ScmError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


class CapExceededError(ScmError):
    pass


class InadmissibleSetError(ScmError):
    pass


@dataclass(frozen=True)
class FactorSpec:
    name: str
    cardinality: int

    def __post_init__(self):
        if int(self.cardinality) < 1:
            raise ScmError(f"factor {self.name!r} needs cardinality >= 1")


@dataclass(frozen=True)
class Dag:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            raise ScmError("duplicate node names")
        if len(set(self.edges)) != len(self.edges):
            raise ScmError("duplicate edges")
        known = set(self.nodes)
        for p, c in self.edges:
            if p not in known or c not in known:
                raise UnknownNodeError(f"edge ({p!r}, {c!r}) references an undeclared node")
            if p == c:
                raise ScmError(f"self-loop on {p!r}")
        self.topological_order()  # raises on cycles

    def _check(self, *names):
        known = set(self.nodes)
        for n in names:
            if n not in known:
                raise UnknownNodeError(f"unknown node {n!r}")

    def parents(self, node: str) -> tuple[str, ...]:
        return tuple(p for p, c in self.edges if c == node)

    def children(self, node: str) -> tuple[str, ...]:
        return tuple(c for p, c in self.edges if p == node)

    def topological_order(self) -> tuple[str, ...]:
        indeg = {n: 0 for n in self.nodes}
        for _, c in self.edges:
            indeg[c] += 1
        # Kahn's algorithm, ties broken by declaration order
        ready = [n for n in self.nodes if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise ScmError("graph contains a cycle")
        return tuple(order)

    def descendants(self, node: str) -> set[str]:
        self._check(node)
        seen, stack = set(), [node]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def ancestors(self, nodes: Iterable[str]) -> set[str]:
        """Ancestors of ``nodes``, the nodes themselves included."""
        nodes = list(nodes)
        self._check(*nodes)
        seen, stack = set(nodes), list(nodes)
        while stack:
            for p in self.parents(stack.pop()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def without_edges_into(self, nodes: Iterable[str]) -> "Dag":
        cut = set(nodes)
        return Dag(self.nodes, tuple(e for e in self.edges if e[1] not in cut))

    def without_edges_out_of(self, nodes: Iterable[str]) -> "Dag":
        cut = set(nodes)
        return Dag(self.nodes, tuple(e for e in self.edges if e[0] not in cut))


@dataclass(frozen=True, eq=False)
class Mechanism:
    """CPT of ``child`` given ``parents``.

    ``table`` has shape ``(*parent_cards, child_card)``; the last axis of
    every row is a probability vector.
    """

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        t = np.array(self.table, dtype=np.float64)
        if t.ndim != len(self.parents) + 1:
            raise ScmError(f"table for {self.child!r} has {t.ndim} axes, expected {len(self.parents) + 1}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ScmError(f"table for {self.child!r} has negative or non-finite entries")
        if np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-12):
            raise ScmError(f"rows of the table for {self.child!r} do not sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def __eq__(self, other):
        return (
            isinstance(other, Mechanism)
            and self.child == other.child
            and self.parents == other.parents
            and self.table.shape == other.table.shape
            and bool(np.array_equal(self.table, other.table))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Scm:
    dag: Dag
    specs: Mapping[str, FactorSpec]
    mechanisms: Mapping[str, Mechanism]
    z0: str | None = None
    zcnf: tuple[str, ...] = ()
    confounders: tuple[str, ...] = ()
    _order: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "specs", dict(self.specs))
        object.__setattr__(self, "mechanisms", dict(self.mechanisms))
        object.__setattr__(self, "zcnf", tuple(self.zcnf))
        object.__setattr__(self, "confounders", tuple(self.confounders))
        nodes = set(self.dag.nodes)
        if set(self.specs) != nodes or set(self.mechanisms) != nodes:
            raise ScmError("specs and mechanisms must cover exactly the DAG nodes")
        for name, spec in self.specs.items():
            if spec.name != name:
                raise ScmError(f"spec key {name!r} does not match spec name {spec.name!r}")
        for node in self.dag.nodes:
            mech = self.mechanisms[node]
            if mech.child != node:
                raise ScmError(f"mechanism stored under {node!r} is for {mech.child!r}")
            if set(mech.parents) != set(self.dag.parents(node)) or len(mech.parents) != len(set(mech.parents)):
                raise ScmError(f"mechanism parents of {node!r} do not match the DAG edges")
            expected = tuple(self.specs[p].cardinality for p in mech.parents) + (self.specs[node].cardinality,)
            if mech.table.shape != expected:
                raise ScmError(f"table for {node!r} has shape {mech.table.shape}, expected {expected}")
        for n in ((self.z0,) if self.z0 is not None else ()) + self.zcnf + self.confounders:
            if n not in nodes:
                raise UnknownNodeError(f"designated node {n!r} is not in the graph")
        if self.z0 is not None and self.z0 in self.zcnf:
            raise ScmError("Z0 cannot be a member of the confounded set")
        object.__setattr__(self, "_order", self.dag.topological_order())

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag.nodes

    def card(self, node: str) -> int:
        self.dag._check(node)
        return self.specs[node].cardinality

    def __eq__(self, other):
        return (
            isinstance(other, Scm)
            and self.dag.nodes == other.dag.nodes
            and set(self.dag.edges) == set(other.dag.edges)
            and self.specs == other.specs
            and self.mechanisms == other.mechanisms
            and self.z0 == other.z0
            and self.zcnf == other.zcnf
            and self.confounders == other.confounders
        )

    __hash__ = None

    def to_dict(self) -> dict:
        mechs = {}
        for node in self.dag.nodes:
            m = self.mechanisms[node]
            cards = [self.specs[p].cardinality for p in m.parents]
            rows = {}
            for key in product(*(range(c) for c in cards)):
                rows[",".join(map(str, key))] = [float(v) for v in m.table[key]]
            mechs[node] = {"parents": list(m.parents), "cpt": rows}
        return {
            "format": SCM_FORMAT,
            "nodes": [{"name": n, "cardinality": self.specs[n].cardinality} for n in self.dag.nodes],
            "edges": [list(e) for e in self.dag.edges],
            "mechanisms": mechs,
            "roles": {"z0": self.z0, "zcnf": list(self.zcnf), "confounders": list(self.confounders)},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scm":
        if doc.get("format") != SCM_FORMAT:
            raise ScmError(f"unsupported SCM document format {doc.get('format')!r}")
        specs = {d["name"]: FactorSpec(d["name"], int(d["cardinality"])) for d in doc["nodes"]}
        dag = Dag(tuple(specs), tuple(tuple(e) for e in doc["edges"]))
        mechs = {}
        for node, m in doc["mechanisms"].items():
            parents = tuple(m["parents"])
            shape = tuple(specs[p].cardinality for p in parents) + (specs[node].cardinality,)
            table = np.empty(shape)
            for key in product(*(range(c) for c in shape[:-1])):
                table[key] = m["cpt"][",".join(map(str, key))]
            mechs[node] = Mechanism(node, parents, table)
        roles = doc.get("roles", {})
        return cls(dag, specs, mechs, roles.get("z0"), tuple(roles.get("zcnf", ())), tuple(roles.get("confounders", ())))


def save_scm(scm: Scm, path) -> None:
    with open(path, "w") as fh:
        json.dump(scm.to_dict(), fh, indent=1)


def load_scm(path) -> Scm:
    with open(path) as fh:
        return Scm.from_dict(json.load(fh))


def build(
    cards: Mapping[str, int],
    tables: Mapping[str, tuple[Sequence[str], np.ndarray]],
    z0: str | None = None,
    zcnf: Sequence[str] = (),
    confounders: Sequence[str] = (),
) -> Scm:
    """Assemble an Scm from ``{node: card}`` and ``{node: (parents, table)}``."""
    nodes = tuple(cards)
    edges = tuple((p, n) for n in nodes for p in tables[n][0])
    return Scm(
        Dag(nodes, edges),
        {n: FactorSpec(n, int(c)) for n, c in cards.items()},
        {n: Mechanism(n, tuple(tables[n][0]), tables[n][1]) for n in nodes},
        z0,
        tuple(zcnf),
        tuple(confounders),
    )


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True, eq=False)
class DistTable:
    variables: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != len(self.variables):
            raise ValueError(f"probs has {p.ndim} axes for {len(self.variables)} variables")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("duplicate variables in DistTable")
        if np.any(p < 0):
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def cards(self) -> tuple[int, ...]:
        return self.probs.shape

    def axis(self, var: str) -> int:
        try:
            return self.variables.index(var)
        except ValueError:
            raise UnknownNodeError(f"{var!r} is not a variable of this table") from None

    def marginal(self, variables: Sequence[str]) -> "DistTable":
        variables = tuple(variables)
        axes = [self.axis(v) for v in variables]
        drop = tuple(i for i in range(len(self.variables)) if i not in axes)
        p = self.probs.sum(axis=drop)
        kept = [v for v in self.variables if v in variables]
        p = np.moveaxis(p, [kept.index(v) for v in variables], range(len(variables)))
        return DistTable(variables, p)

    def __getitem__(self, key):
        return self.probs[key]


# ---------------------------------------------------------------------------
# Sampling and exact inference


def sample(scm: Scm, n: int, seed: int) -> dict[str, np.ndarray]:
    """Ancestral sampling of ``n`` joint assignments.

    Returns one integer column per node. Row ``i`` depends only on ``(seed, i)``
    through a counter-based Philox stream, so prefixes are stable across ``n``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    order = scm._order
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random((n, len(order)))
    out: dict[str, np.ndarray] = {}
    for k, node in enumerate(order):
        mech = scm.mechanisms[node]
        if mech.parents:
            rows = mech.table[tuple(out[p] for p in mech.parents)]
        else:
            rows = np.broadcast_to(mech.table, (n, mech.table.shape[-1]))
        cdf = np.cumsum(rows, axis=1)
        cdf[:, -1] = np.inf  # guard against rounding at the top
        out[node] = (u[:, k : k + 1] >= cdf).sum(axis=1).astype(np.int64)
    return {node: out[node] for node in scm.nodes}


def exact_joint(scm: Scm, variables: Sequence[str], cap: int = DEFAULT_CELL_CAP) -> DistTable:
    variables = tuple(variables)
    for v in variables:
        scm.dag._check(v)
    if len(set(variables)) != len(variables):
        raise ValueError("duplicate variables requested")
    size = math.prod(scm.card(v) for v in variables)
    if size > cap:
        raise CapExceededError(f"joint over {variables} has {size} cells, above the cap of {cap}")
    # nodes outside the ancestral set sum out to 1
    keep = [n for n in scm.nodes if n in scm.dag.ancestors(variables)]
    index = {n: i for i, n in enumerate(keep)}
    operands = []
    for n in keep:
        m = scm.mechanisms[n]
        operands += [m.table, [index[p] for p in m.parents] + [index[n]]]
    out = [index[v] for v in variables]
    probs = np.einsum(*operands, out, optimize="greedy") if operands else np.ones(())
    probs = np.asarray(probs, dtype=np.float64)
    return DistTable(variables, probs)


def intervene(scm: Scm, do: Assignment) -> Scm:
    """Graph surgery: cut incoming edges and pin each node in ``do`` to a point mass."""
    for node, val in do.items():
        scm.dag._check(node)
        if not 0 <= int(val) < scm.card(node):
            raise ScmError(f"value {val} out of range for {node!r}")
    dag = scm.dag.without_edges_into(do)
    mechs = dict(scm.mechanisms)
    for node, val in do.items():
        table = np.zeros(scm.card(node))
        table[int(val)] = 1.0
        mechs[node] = Mechanism(node, (), table)
    return Scm(dag, scm.specs, mechs, scm.z0, scm.zcnf, scm.confounders)


def interventional_dist(scm: Scm, targets: Sequence[str], do: Assignment, cap: int = DEFAULT_CELL_CAP) -> DistTable:
    return exact_joint(intervene(scm, do), targets, cap=cap)


# ---------------------------------------------------------------------------
# Graphical criteria


def d_separated(dag: Dag, x: str, y: str, s: Iterable[str]) -> bool:
    """True iff every path between ``x`` and ``y`` is blocked by ``s``.

    Reachability over (node, direction) states: a trail may pass a
    non-collider only if it is unobserved, and a collider only if it or one
    of its descendants is observed.
    """
    s = set(s)
    dag._check(x, y, *s)
    if x == y:
        raise ValueError("x and y must differ")
    if x in s or y in s:
        raise ValueError("x and y must not be in the conditioning set")
    observed_anc = dag.ancestors(s)
    parents = {n: dag.parents(n) for n in dag.nodes}
    children = {n: dag.children(n) for n in dag.nodes}

    # "up": arrived from a child (or start); "down": arrived from a parent
    stack = [(x, "up")]
    seen = set()
    while stack:
        node, direction = stack.pop()
        if (node, direction) in seen:
            continue
        seen.add((node, direction))
        if node == y:
            return False
        if direction == "up":
            if node in s:
                continue
            stack += [(p, "up") for p in parents[node]]
            stack += [(c, "down") for c in children[node]]
        else:
            if node not in s:
                stack += [(c, "down") for c in children[node]]
            if node in observed_anc:
                stack += [(p, "up") for p in parents[node]]
    return True


def backdoor_admissible(dag: Dag, x: str, y: str, s: Iterable[str]) -> bool:
    s = set(s)
    dag._check(x, y, *s)
    if s & dag.descendants(x):
        return False
    # backdoor paths start with an edge into x; dropping x's out-edges leaves only those
    return d_separated(dag.without_edges_out_of([x]), x, y, s)


def ace(scm: Scm, x: str, x_val: int, x_base: int, y: str, s: Iterable[str]) -> float:
    """Average causal effect of ``x`` on ``y`` by the adjustment formula over ``s``.

    ``y``'s value index is its numeric value.
    """
    s = tuple(s)
    if not backdoor_admissible(scm.dag, x, y, s):
        raise InadmissibleSetError(f"{set(s)} does not satisfy the backdoor criterion for ({x}, {y})")
    if x_val == x_base:
        return 0.0
    joint = exact_joint(scm, (x, y) + s).probs  # axes: x, y, s...
    p_s = joint.sum(axis=(0, 1))
    p_xs = joint.sum(axis=1)
    yvals = np.arange(scm.card(y), dtype=np.float64)

    def expected(xv: int) -> float:
        num = np.tensordot(yvals, joint[xv], axes=(0, 0))  # sum_y y p(x, y, s)
        den = p_xs[xv]
        support = p_s > 0
        if np.any(den[support] <= 0):
            raise ScmError(f"positivity violated: p({x}={xv}, s) = 0 for some s with p(s) > 0")
        return float(np.sum(p_s[support] * num[support] / den[support]))

    return expected(x_val) - expected(x_base)


def ace_by_surgery(scm: Scm, x: str, x_val: int, x_base: int, y: str) -> float:
    """The same contrast computed on the mutilated graph instead of by adjustment."""
    yvals = np.arange(scm.card(y), dtype=np.float64)
    hi = interventional_dist(scm, [y], {x: x_val}).probs
    lo = interventional_dist(scm, [y], {x: x_base}).probs
    return float(yvals @ hi - yvals @ lo)
