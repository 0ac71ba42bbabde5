"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line in ``REPORT``; conftest prints them at
the end of the session. Running this file directly prints the same lines.
The strategy comparison (criterion 7) trains 10 models at full scale and
dominates wall time.
"""
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from cnfaug import augment as ag
from cnfaug import classifier as cl
from cnfaug import datagen as dg
from cnfaug import experiments as ex
from cnfaug import props

REPORT: dict[str, str] = {}

# published confounding values (nats) at r = 0.10, 0.20, 0.50, 0.90, 0.95
REFERENCE_CNF = {0.10: 0.072, 0.20: 0.249, 0.50: 1.244, 0.90: 3.585, 0.95: 4.041}
SEEDS = (0, 1, 2, 3, 4)


def record(key: str, ok: bool, text: str) -> None:
    REPORT[key] = f"{'PASS' if ok else 'FAIL'}  criterion {key:<4} {text}"
    print(REPORT[key])
    assert ok, text


# ---------------------------------------------------------------------------


def test_criterion_1_confounding_table():
    t0 = time.perf_counter()
    rows = ex.cnf_table(REFERENCE_CNF, n=60000, seeds=SEEDS)
    elapsed = time.perf_counter() - t0
    dev = max(abs(r["cnf_empirical_mean"] - REFERENCE_CNF[r["r"]]) for r in rows)
    exact = max(abs(r["cnf_exact"] - r["closed_form"]) for r in rows)
    cells = ", ".join(f"{r['r']:.2f}:{r['cnf_empirical_mean']:.3f}" for r in rows)
    ok = dev <= 0.03 and exact <= 1e-9 and elapsed < 60
    record("1", ok, f"max |emp - table| = {dev:.4f} (<= 0.03), max |exact - closed| = {exact:.1e} (<= 1e-9), "
                    f"{elapsed:.1f}s (< 60s) [{cells}]")


def test_criterion_2_cnf_is_twice_mi():
    t0 = time.perf_counter()
    res = props.check_cnf_twice_mi(seed=0, trials=100)
    elapsed = time.perf_counter() - t0
    record("2", res.passed and res.max_residual <= 1e-9 and elapsed < 30,
           f"100 models, max |cnf_exact - 2 MI| = {res.max_residual:.2e} (<= 1e-9), {elapsed:.1f}s (< 30s)")


def test_criterion_3_do_marginals_and_interventions():
    p1 = props.check_do_marginals(seed=0, trials=100)
    p3 = props.check_interventions_remove_cnf(seed=0, trials=100)
    record("3", p1.max_residual <= 1e-9 and p3.max_residual <= 1e-9,
           f"max |p(Zi|do(Zj)) - p(Zi)| = {p1.max_residual:.2e}, max cnf after do = {p3.max_residual:.2e} (<= 1e-9)")


def test_criterion_4_identifiability():
    r = dg.Renderer()
    failures = 0
    sizes = {}
    for variant in ("dcm", "cm", "wlm"):
        grid = r.grid(variant)
        sizes[variant] = len(grid)
        rows = np.stack([g.as_row() for g in grid])
        imgs = r.render_batch(rows, np.full(len(grid), dg.TRAIN_MORPH, np.float32), variant)
        failures += int(np.sum(np.any(r.invert_batch(imgs, variant) != rows, axis=1)))
        failures += sum(r.invert(im, variant) != g for im, g in zip(imgs[::50], grid[::50]))
    diag = props.check_identifiability(seed=0, trials=100)
    record("4", failures == 0 and diag.passed,
           f"invert(render(z)) = z on {sizes['dcm']} digit x thickness x fg x bg tuples "
           f"(+{sizes['cm']} cm, +{sizes['wlm']} wlm), failures {failures}; "
           f"commutative diagram under random h: {diag.trials - int(diag.max_residual)}/{diag.trials} bit-identical")


def test_criterion_5_decomposition_random_tables():
    res = props.check_decomposition(seed=0, trials=100)
    record("5a", res.max_residual <= 1e-9, f"100 random tables, max identity residual {res.max_residual:.2e} (<= 1e-9)")


def test_criterion_6_filter_cells():
    bad = []
    masses = []
    off = 0.0
    for variant in dg.VARIANTS:
        for seed in SEEDS:
            train, _ = dg.generate_dataset(dg.DatasetSpec(variant, 0.95, 60000, 1, seed))
            cells = ag.select_cells(train, 0.05)
            for s in dg.STYLE_FACTORS[variant]:
                got = sorted((z0, zj) for f, z0, zj, _ in cells if f == s)
                if got != [(d, dg.CANONICAL[s][d]) for d in range(dg.K)]:
                    bad.append((variant, seed, s))
                masses += [c / 60000 for f, _, _, c in cells if f == s]
                counts = np.bincount(train.column("digit").astype(int) * 10 + train.column(s), minlength=100)
                canon = {d * 10 + dg.CANONICAL[s][d] for d in range(10)}
                off = max(off, max(counts[i] for i in range(100) if i not in canon) / 60000)
    pm, po = (0.95 + 0.05 / dg.K) / dg.K, (0.05 / dg.K) / dg.K
    record("6", not bad, f"exactly the 10 canonical cells per style factor in {15 - len({b[:2] for b in bad})}/15 "
                         f"(variant, seed) runs; selected mass {min(masses):.4f}..{max(masses):.4f} "
                         f"(expected {pm:.4f}), max off-canonical {off:.4f} (expected {po:.4f}); tau = 0.05")


# ---------------------------------------------------------------------------
# Strategy comparison at full scale


@pytest.fixture(scope="module")
def comparison():
    cfg = ex.ExperimentConfig("dcm", 0.95, ("none", "do_x", "do_z0"), SEEDS, 60000, 10000, measure_only=("do_x",))
    t0 = time.perf_counter()
    records = ex.run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    return cfg, records, ex.aggregate(cfg, records), elapsed


def _row(rows, strategy):
    return next(r for r in rows if r["strategy"] == strategy)


def test_criterion_7a_accuracy_gap(comparison):
    cfg, records, rows, _ = comparison
    erm, doz0 = _row(rows, "none"), _row(rows, "do_z0")
    gap = doz0["accuracy_mean"] - erm["accuracy_mean"]
    record("7a", gap >= 0.10, f"test accuracy ERM {erm['accuracy_mean']:.4f} ± {erm['accuracy_sd']:.4f}, "
                              f"DoZ0 {doz0['accuracy_mean']:.4f} ± {doz0['accuracy_sd']:.4f}, gap {gap * 100:.1f} points (>= 10)")


def test_criterion_7b_pooled_confounding(comparison):
    cfg, records, rows, _ = comparison
    base, doz0, dox = _row(rows, "none"), _row(rows, "do_z0"), _row(rows, "do_x")
    parts, ok = [], True
    for s in cfg.styles:
        b, z, x = base[f"cnf_{s}_mean"], doz0[f"cnf_{s}_mean"], dox[f"cnf_{s}_mean"]
        ok &= z < 0.25 * b and abs(x - b) <= 0.05 * b
        parts.append(f"{s}: none {b:.3f}, DoZ0 {z:.3f} ({100 * z / b:.1f}% < 25%), DoX {x:.3f} ({100 * abs(x - b) / b:.2f}% dev <= 5%)")
    record("7b", ok, "; ".join(parts))


def test_criterion_7c_conditional_mi(comparison):
    cfg, records, rows, _ = comparison
    erm, doz0 = _row(rows, "none"), _row(rows, "do_z0")
    ok = all(doz0[f"cmi_{s}_mean"] < erm[f"cmi_{s}_mean"] for s in cfg.styles)
    record("7c", ok, "; ".join(f"I({s};Yhat|digit) ERM {erm[f'cmi_{s}_mean']:.4f} > DoZ0 {doz0[f'cmi_{s}_mean']:.4f}"
                               for s in cfg.styles))


def test_criterion_7_runtime(comparison):
    cfg, records, _, elapsed = comparison
    cpus = os.cpu_count() or 1
    serial = sum(r.seconds for r in records)
    text = (f"5-seed run took {elapsed:.0f}s on {cpus} CPU(s) (< 600s); "
            f"summed per-run time {serial:.0f}s, {serial / len(cfg.seeds):.0f}s per seed")
    if cpus < len(cfg.seeds):
        REPORT["7r"] = f"SKIP  criterion 7r   {text}; needs >= {len(cfg.seeds)} CPUs to run seeds concurrently"
        pytest.skip(REPORT["7r"])
    record("7r", elapsed < 600, text)


def test_criterion_5_decomposition_on_predicted_joints(comparison):
    _, records, _, _ = comparison
    trained = [r for r in records if r.decomposition_residual is not None]
    worst = max(r.decomposition_residual for r in trained)
    record("5b", worst <= 1e-9, f"{2 * len(trained)} predicted joints from criterion 7, max identity residual {worst:.2e} (<= 1e-9)")


# ---------------------------------------------------------------------------


def test_criterion_8_ace():
    res = props.check_ace(seed=0, trials=50)
    record("8", res.passed, f"50 admissible cases, max |adjustment - surgery| = {res.max_residual:.2e} (<= 1e-9); equal treatments give 0")


def _train_digest(seed: int) -> list[bytes]:
    train, _ = dg.generate_dataset(dg.DatasetSpec("dcm", 0.95, 2000, 10, seed=3))
    model = cl.train(train, cl.TrainConfig(epochs=3, seed=seed))
    return [p.tobytes() for p in model.params()]


def test_criterion_9_classifier_numerics():
    grads = props.check_gradients(seed=0, trials=20)
    here = _train_digest(5)
    again = _train_digest(5)
    with ProcessPoolExecutor(max_workers=1) as pool:
        child = pool.submit(_train_digest, 5).result()
    same = here == again == child
    record("9", grads.max_residual < 1e-4 and same,
           f"20 networks, max gradient relative error {grads.max_residual:.2e} (< 1e-4); "
           f"fixed-seed training bit-identical across runs and processes: {same}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
