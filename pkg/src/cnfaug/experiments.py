"""Sweeps and the augmentation-comparison experiment behind the CLI."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import augment as ag
from . import classifier as cl
from . import datagen as dg
from . import info
from . import scm as scm_mod

DEFAULT_RS = (0.10, 0.20, 0.50, 0.90, 0.95)

CNF_TABLE_SCHEMA = "cnfaug.cnf_table/1"
CNF_TABLE_COLUMNS = ("r", "n", "n_seeds", "cnf_empirical_mean", "cnf_empirical_sd", "cnf_exact", "closed_form")

EXPERIMENT_SCHEMA = "cnfaug.experiment/1"
RUN_SCHEMA = "cnfaug.experiment_runs/1"

# pseudo-strategy: train on the unconfounded subset alone
ERM_UC = "erm_uc"

METHOD_LABEL = {
    "none": "ERM",
    ERM_UC: "ERM-UC",
    "replicate_unconfounded": "ERM-RW",
    "do_x": "DoX (patch mix)",
    "do_z0_zcnf": "DoZ0+Zcnf",
    "do_zcnf": "DoZcnf",
    "do_z0": "DoZ0",
}
# reporting order: None group, then do(X), do(Z0 u Zcnf), do(Zcnf), do(Z0)
ROW_ORDER = ("none", ERM_UC, "replicate_unconfounded", "do_x", "do_z0_zcnf", "do_zcnf", "do_z0")


def parse_strategy(name: str) -> str:
    name = name.strip().lower().replace("-", "_")
    aliases = {"erm": "none", "doz0": "do_z0", "dozcnf": "do_zcnf", "dox": "do_x",
               "doz0zcnf": "do_z0_zcnf", "erm_rw": "replicate_unconfounded", "replicate": "replicate_unconfounded"}
    name = aliases.get(name, name)
    if name != ERM_UC:
        name = ag.Strategy(name).value
    return name


def group_of(strategy: str) -> str:
    if strategy == ERM_UC:
        return "N/A"
    return ag.SIMULATED_INTERVENTION[ag.Strategy(strategy)]


def _mean_sd(values: Sequence[float]) -> tuple[float, float | None]:
    a = np.asarray(values, dtype=np.float64)
    if len(a) == 0:
        return math.nan, None
    return float(a.mean()), (float(a.std(ddof=1)) if len(a) > 1 else None)


def _fmt(x, digits=6) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}f}"


# ---------------------------------------------------------------------------
# Confounding vs. correlation sweep


def cnf_table(rs: Iterable[float] = DEFAULT_RS, n: int = 60000, seeds: Sequence[int] = range(5),
              variant: str = "cm", style: str = "fg") -> list[dict]:
    """Empirical and exact CNF(style, digit) per r; factors only, nothing rendered."""
    rows = []
    seeds = list(seeds)
    for r in rs:
        spec = dg.DatasetSpec(variant, float(r), n, 1, 0)
        model = dg.build_scm(spec)
        emp = []
        for s in seeds:
            cols = scm_mod.sample(model, n, dg.substream_key(s, 0))
            emp.append(info.cnf_empirical(cols, style, "digit"))
        mean, sd = _mean_sd(emp)
        rows.append({
            "r": float(r), "n": n, "n_seeds": len(seeds),
            "cnf_empirical_mean": mean, "cnf_empirical_sd": sd,
            "cnf_exact": info.cnf_exact(model, style, "digit"),
            "closed_form": dg.closed_form_cnf(float(r)),
        })
    return rows


def cnf_table_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CNF_TABLE_COLUMNS)
    for row in rows:
        w.writerow([f"{row['r']:.2f}", row["n"], row["n_seeds"], _fmt(row["cnf_empirical_mean"]),
                    _fmt(row["cnf_empirical_sd"]), _fmt(row["cnf_exact"], 10), _fmt(row["closed_form"], 10)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Augmentation comparison


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "dcm"
    r: float = 0.95
    strategies: tuple[str, ...] = ("none", "do_z0")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_train: int = 60000
    n_test: int = 10000
    tau: float = 0.05
    alpha: int | None = None
    epochs: int = 30
    # strategies whose pooled dataset is measured but no model is trained
    measure_only: tuple[str, ...] = ()

    def __post_init__(self):
        dg.DatasetSpec(self.variant, self.r, self.n_train, self.n_test)
        object.__setattr__(self, "strategies", tuple(parse_strategy(s) for s in self.strategies))
        object.__setattr__(self, "measure_only", tuple(parse_strategy(s) for s in self.measure_only))
        ag.AugmentConfig(tau=self.tau, alpha_cap=self.alpha)
        if not self.strategies:
            raise ValueError("need at least one strategy")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def styles(self) -> tuple[str, ...]:
        return dg.STYLE_FACTORS[self.variant]


@dataclass
class RunRecord:
    strategy: str
    seed: int
    n_pool: int
    cnf: dict[str, float]
    accuracy: float | None = None
    cmi: dict[str, float] = field(default_factory=dict)
    decomposition_residual: float | None = None
    seconds: float = 0.0


def training_pool(train: dg.Dataset, strategy: str, config: ag.AugmentConfig) -> dg.Dataset:
    if strategy == ERM_UC:
        return dg.unconfounded_subset(train)
    return ag.augment(train, strategy, config)


def run_seed(cfg: ExperimentConfig, seed: int) -> list[RunRecord]:
    """Every strategy of ``cfg`` on one seed's dataset."""
    spec = dg.DatasetSpec(cfg.variant, cfg.r, cfg.n_train, cfg.n_test, seed)
    train, test = dg.generate_dataset(spec)
    acfg = ag.AugmentConfig(tau=cfg.tau, alpha_cap=cfg.alpha, seed=seed)
    out = []
    for strategy in cfg.strategies:
        t0 = time.perf_counter()
        pool = training_pool(train, strategy, acfg)
        prov = ag.pooled_provenance(pool)
        rec = RunRecord(strategy, seed, len(pool), {s: info.cnf_empirical(prov, "digit", s) for s in cfg.styles})
        if strategy not in cfg.measure_only:
            model = cl.train(pool, cl.TrainConfig(epochs=cfg.epochs, seed=seed))
            preds = cl.predict_labels(model, test)
            rec.accuracy = float(np.mean(preds == test.labels))
            worst = 0.0
            for s in cfg.styles:
                lhs, term1, mi = info.invariance_decomposition(cl.predicted_joint(model, test, s, preds))
                rec.cmi[s] = lhs
                worst = max(worst, abs(lhs - (term1 - mi)))
            rec.decomposition_residual = worst
        rec.seconds = time.perf_counter() - t0
        out.append(rec)
    return out


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> list[RunRecord]:
    """All (strategy, seed) runs, seeds in parallel processes, merged in seed order."""
    jobs = jobs or min(len(cfg.seeds), os.cpu_count() or 1)
    if jobs <= 1:
        per_seed = [run_seed(cfg, s) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_seed = list(ex.map(_run_seed_star, [(cfg, s) for s in cfg.seeds]))
    return [rec for recs in per_seed for rec in recs]


def aggregate(cfg: ExperimentConfig, records: Sequence[RunRecord]) -> list[dict]:
    rows = []
    for strategy in sorted(cfg.strategies, key=ROW_ORDER.index):
        recs = [r for r in records if r.strategy == strategy]
        row = {"group": group_of(strategy), "strategy": strategy, "method": METHOD_LABEL[strategy],
               "n_seeds": len(recs), "n_pool_mean": float(np.mean([r.n_pool for r in recs]))}
        accs = [r.accuracy for r in recs if r.accuracy is not None]
        row["accuracy_mean"], row["accuracy_sd"] = _mean_sd(accs) if accs else (None, None)
        for s in cfg.styles:
            row[f"cnf_{s}_mean"], row[f"cnf_{s}_sd"] = _mean_sd([r.cnf[s] for r in recs])
            vals = [r.cmi[s] for r in recs if s in r.cmi]
            row[f"cmi_{s}_mean"], row[f"cmi_{s}_sd"] = _mean_sd(vals) if vals else (None, None)
        rows.append(row)
    return rows


def experiment_columns(styles: Sequence[str]) -> list[str]:
    cols = ["group", "strategy", "method", "n_seeds", "n_pool_mean", "accuracy_mean", "accuracy_sd"]
    for s in styles:
        cols += [f"cnf_{s}_mean", f"cnf_{s}_sd"]
    for s in styles:
        cols += [f"cmi_{s}_mean", f"cmi_{s}_sd"]
    return cols


def experiment_csv(cfg: ExperimentConfig, rows: Sequence[dict]) -> str:
    cols = experiment_columns(cfg.styles)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([v if isinstance(v, str) or isinstance(v, int) else _fmt(v) for v in (row[c] for c in cols)])
    return buf.getvalue()


def runs_csv(cfg: ExperimentConfig, records: Sequence[RunRecord]) -> str:
    cols = ["strategy", "seed", "n_pool", "accuracy", "decomposition_residual", "seconds"]
    cols += [f"cnf_{s}" for s in cfg.styles] + [f"cmi_{s}" for s in cfg.styles]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow([r.strategy, r.seed, r.n_pool, _fmt(r.accuracy), _fmt(r.decomposition_residual, 12), f"{r.seconds:.2f}"]
                   + [_fmt(r.cnf[s]) for s in cfg.styles] + [_fmt(r.cmi.get(s)) for s in cfg.styles])
    return buf.getvalue()


def _pm(mean, sd, scale=1.0, digits=3) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "-"
    text = f"{mean * scale:.{digits}f}"
    return text + (f" ± {sd * scale:.{digits}f}" if sd is not None else "")


def experiment_markdown(cfg: ExperimentConfig, rows: Sequence[dict]) -> str:
    head = ["Sim. Interv.", "Method", "Test acc. (%)"]
    head += [f"CNF(digit, {s})" for s in cfg.styles] + [f"I({s}; Ŷ | digit)" for s in cfg.styles]
    lines = [
        f"{cfg.variant.upper()}-analogue, r = {cfg.r}, n_train = {cfg.n_train}, n_test = {cfg.n_test}, "
        f"seeds = {list(cfg.seeds)}, tau = {cfg.tau}, alpha = {cfg.alpha or 'all'}",
        "",
        "| " + " | ".join(head) + " |",
        "|" + "---|" * len(head),
    ]
    for row in rows:
        cells = [row["group"], row["method"], _pm(row["accuracy_mean"], row["accuracy_sd"], 100.0, 2)]
        cells += [_pm(row[f"cnf_{s}_mean"], row[f"cnf_{s}_sd"]) for s in cfg.styles]
        cells += [_pm(row[f"cmi_{s}_mean"], row[f"cmi_{s}_sd"], digits=4) for s in cfg.styles]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
