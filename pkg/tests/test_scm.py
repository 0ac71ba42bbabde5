import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnfaug import datagen as dg
from cnfaug import props
from cnfaug.scm import (
    CapExceededError, Dag, DistTable, InadmissibleSetError, ScmError, UnknownNodeError, ace, ace_by_surgery,
    backdoor_admissible, build, d_separated, exact_joint, intervene, interventional_dist, load_scm, sample,
    save_scm,
)


def fork(p_u=(0.3, 0.7)):
    # X <- U -> Y, all binary
    cards = {"U": 2, "X": 2, "Y": 2}
    tables = {
        "U": ((), np.array(p_u)),
        "X": (("U",), np.array([[0.8, 0.2], [0.3, 0.7]])),
        "Y": (("U",), np.array([[0.6, 0.4], [0.1, 0.9]])),
    }
    return build(cards, tables)


def brute_force_joint(scm, variables):
    nodes = scm.nodes
    out = np.zeros([scm.card(v) for v in variables])
    for values in itertools.product(*[range(scm.card(n)) for n in nodes]):
        a = dict(zip(nodes, values))
        p = 1.0
        for n in nodes:
            m = scm.mechanisms[n]
            p *= m.table[tuple(a[q] for q in m.parents) + (a[n],)]
        out[tuple(a[v] for v in variables)] += p
    return out


def test_uniform_root_frequencies():
    m = build({"A": 10}, {"A": ((), np.full(10, 0.1))})
    freq = np.bincount(sample(m, 10**6, 3)["A"], minlength=10) / 1e6
    assert np.all(np.abs(freq - 0.1) <= 0.002)


def test_gate_canonical_frequency():
    spec = dg.DatasetSpec("cm", 0.95, 10, 10)
    cols = sample(dg.build_scm(spec), 200_000, 1)
    hit = np.mean(cols["fg"] == np.asarray(dg.CANONICAL["fg"])[cols["digit"]])
    assert abs(hit - 0.955) <= 0.003


def test_sample_deterministic():
    m = fork()
    a, b = sample(m, 1000, 42), sample(m, 1000, 42)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = sample(m, 1000, 43)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_independent_roots_product():
    m = build({"A": 2, "B": 3}, {"A": ((), np.array([0.25, 0.75])), "B": ((), np.array([0.2, 0.3, 0.5]))})
    j = exact_joint(m, ("A", "B")).probs
    assert np.allclose(j, np.outer([0.25, 0.75], [0.2, 0.3, 0.5]), atol=1e-15)


def test_copy_chain_diagonal():
    m = build({"U": 4, "Z": 4}, {"U": ((), np.full(4, 0.25)), "Z": (("U",), np.eye(4))})
    assert np.allclose(exact_joint(m, ("U", "Z")).probs, np.eye(4) / 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_joint_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = props.random_dag_scm(rng, n=4, p_edge=0.5, max_card=3)
    vars_ = tuple(rng.permutation(m.nodes)[: int(rng.integers(1, 5))])
    j = exact_joint(m, vars_)
    assert abs(j.probs.sum() - 1) < 1e-9
    assert np.allclose(j.probs, brute_force_joint(m, vars_), atol=1e-12)


def test_cap_is_an_error():
    cards = {f"V{i}": 10 for i in range(8)}
    tables = {v: ((), np.full(10, 0.1)) for v in cards}
    with pytest.raises(CapExceededError):
        exact_joint(build(cards, tables), tuple(cards))


def test_unknown_node():
    with pytest.raises(UnknownNodeError):
        exact_joint(fork(), ("Q",))
    with pytest.raises(UnknownNodeError):
        intervene(fork(), {"Q": 0})


def test_bad_do_value():
    with pytest.raises(ScmError):
        intervene(fork(), {"X": 5})


def test_root_intervention_replaces_one_mechanism():
    m = fork()
    d = intervene(m, {"U": 1})
    assert d.mechanisms["X"] == m.mechanisms["X"] and d.mechanisms["Y"] == m.mechanisms["Y"]
    assert np.array_equal(d.mechanisms["U"].table, [0.0, 1.0])


def test_surgery_removes_backdoor():
    j = exact_joint(intervene(fork(), {"X": 0}), ("X", "Y")).probs
    assert np.allclose(j, np.outer(j.sum(1), j.sum(0)), atol=1e-15)


def test_intervene_idempotent_and_commutes():
    m = props.random_dag_scm(np.random.default_rng(5), n=5, max_card=2)
    a, b = m.nodes[1], m.nodes[3]
    once = intervene(m, {a: 1})
    assert intervene(once, {a: 1}) == once
    assert intervene(intervene(m, {a: 1}), {b: 0}) == intervene(intervene(m, {b: 0}), {a: 1})


def test_isolated_do_leaves_others():
    cards = {"A": 2, "B": 3, "C": 2}
    tables = {"A": ((), np.array([0.4, 0.6])), "B": ((), np.array([0.2, 0.3, 0.5])),
              "C": (("B",), np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]))}
    m = build(cards, tables)
    before = exact_joint(m, ("B", "C")).probs
    after = interventional_dist(m, ("B", "C"), {"A": 0}).probs
    assert np.allclose(before, after, atol=1e-15)


def test_chain_do_equals_conditioning():
    cards = {"A": 3, "B": 2}
    tables = {"A": ((), np.array([0.2, 0.5, 0.3])), "B": (("A",), np.array([[0.9, 0.1], [0.4, 0.6], [0.25, 0.75]]))}
    m = build(cards, tables)
    joint = exact_joint(m, ("A", "B")).probs
    for a in range(3):
        assert np.allclose(interventional_dist(m, ("B",), {"A": a}).probs, joint[a] / joint[a].sum(), atol=1e-12)


def test_interventional_zero_mass_off_value():
    m = fork()
    p = interventional_dist(m, ("X", "Y"), {"X": 1}).probs
    assert np.all(p[0] == 0.0)


def test_dsep_fork_and_collider():
    f = Dag(("X", "U", "Y"), (("U", "X"), ("U", "Y")))
    assert d_separated(f, "X", "Y", {"U"})
    assert not d_separated(f, "X", "Y", set())
    c = Dag(("X", "C", "Y"), (("X", "C"), ("Y", "C")))
    assert d_separated(c, "X", "Y", set())
    assert not d_separated(c, "X", "Y", {"C"})


def test_dsep_descendant_of_collider_opens():
    g = Dag(("X", "C", "Y", "D"), (("X", "C"), ("Y", "C"), ("C", "D")))
    assert not d_separated(g, "X", "Y", {"D"})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dsep_agrees_with_ci(seed):
    rng = np.random.default_rng(seed)
    m = props.random_dag_scm(rng)
    x, y = rng.choice(m.nodes, 2, replace=False)
    rest = [n for n in m.nodes if n not in (x, y)]
    s = [n for n in rest if rng.random() < 0.4]
    resid = props.ci_residual(exact_joint(m, (x, y, *s)))
    if d_separated(m.dag, x, y, s):
        assert resid <= 1e-9
    else:
        assert resid > 1e-9


def test_backdoor_rules():
    f = Dag(("X", "U", "Y"), (("U", "X"), ("U", "Y"), ("X", "Y")))
    assert not backdoor_admissible(f, "X", "Y", set())
    assert backdoor_admissible(f, "X", "Y", {"U"})
    g = Dag(("X", "M", "Y"), (("X", "M"), ("M", "Y")))
    assert not backdoor_admissible(g, "X", "Y", {"M"})
    assert backdoor_admissible(g, "X", "Y", set())


def test_ace_examples():
    m = build({"X": 2, "Y": 2}, {"X": ((), np.array([0.5, 0.5])), "Y": (("X",), np.eye(2))})
    assert ace(m, "X", 1, 0, "Y", set()) == pytest.approx(1.0, abs=1e-12)
    assert ace(m, "X", 1, 1, "Y", set()) == 0.0


def test_ace_confounded_matches_surgery():
    cards = {"U": 2, "X": 2, "Y": 3}
    rng = np.random.default_rng(0)
    tables = {"U": ((), np.array([0.35, 0.65])), "X": (("U",), props._cpt(rng, (2,), 2)),
              "Y": (("U", "X"), props._cpt(rng, (2, 2), 3))}
    m = build(cards, tables)
    assert abs(ace(m, "X", 1, 0, "Y", {"U"}) - ace_by_surgery(m, "X", 1, 0, "Y")) <= 1e-9
    with pytest.raises(InadmissibleSetError):
        ace(m, "X", 1, 0, "Y", set())


def test_mechanism_validation():
    with pytest.raises(ScmError):
        build({"A": 2}, {"A": ((), np.array([0.5, 0.6]))})
    with pytest.raises(ScmError):
        build({"A": 2}, {"A": ((), np.array([1.2, -0.2]))})
    with pytest.raises(ScmError):
        build({"A": 2, "B": 2}, {"A": (("B",), np.eye(2)), "B": (("A",), np.eye(2))})


def test_disttable_validation():
    with pytest.raises(ValueError):
        DistTable(("a",), np.array([0.5, 0.6]))


def test_scm_roundtrip(tmp_path):
    m = dg.build_scm(dg.DatasetSpec("dcm", 0.9, 10, 10))
    save_scm(m, tmp_path / "m.json")
    assert load_scm(tmp_path / "m.json") == m
