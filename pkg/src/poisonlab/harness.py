"""
Experiment orchestration: seeded repetitions over poisoning ratios, alpha
values and defenses, with NMSE and defense-gain metrics and report writers.
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.model import (
    CellRecord,
    CellSummary,
    DefenseName,
    DefenseSettings,
    ExperimentConfig,
    ExperimentReport,
    RecordStatus,
    TrainSettings,
)
from poisonlab.attack import AttackPlan, AttackResult, CleanReference, compute_R_ref, craft_attack, make_plan
from poisonlab.bayes import bayesclean_defense
from poisonlab.datasets import Dataset, RawDataset, gen_synthetic, load_csv, split, standardize
from poisonlab.defenses import DefenseReport, huber_defense, no_defense, proda, sever, trim
from poisonlab.errors import DefenseError, MetricError, PoisonLabError
from poisonlab.regressors import ModelParams, forward
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

# Failures recorded against a cell instead of aborting the grid.
CELL_ERRORS = (PoisonLabError, np.linalg.LinAlgError, ArithmeticError)

SUMMARY_COLUMNS = [
    "dataset", "model", "alpha", "ratio", "defense", "mean_gain_pct", "std_gain_pct", "mean_nmse_nodef",
]


def nmse(params: ModelParams, test: Dataset) -> float:
    """Raw test MSE divided by the mean squared test label."""
    scale = float(test.y @ test.y) / test.n if test.n else 0.0
    if scale <= 0.0:
        raise MetricError("undefined NMSE: all test labels are zero")
    r = forward(params, test.X) - test.y
    return float(r @ r) / test.n / scale


def defense_gain(nmse_nodef: float, nmse_def: float) -> float:
    """Relative NMSE reduction in percent; negative when the defense hurts."""
    if nmse_nodef == 0:
        raise MetricError("defense gain is undefined when the undefended NMSE is zero")
    return (nmse_nodef - nmse_def) / nmse_nodef * 100.0


def rejection_recall(report: DefenseReport, poison_indices: Sequence[int]) -> float:
    """Fraction of the known poisoning rows that the defense rejected."""
    poison = np.asarray(poison_indices, dtype=int)
    if poison.size == 0:
        raise MetricError("rejection recall is undefined without poisoning points")
    return float(np.isin(poison, report.rejected_indices).mean())


def apply_defense(
    name: Union[str, DefenseName],
    data: Dataset,
    settings: DefenseSettings,
    train_cfg: TrainSettings,
    seed: int = 0,
) -> DefenseReport:
    """Run one named defense with its configured hyperparameters."""
    name = DefenseName(name)
    if name is DefenseName.NONE:
        return no_defense(data, train_cfg)
    if name is DefenseName.TRIM:
        return trim(data, settings.reject_rate, train_cfg, settings.trim_max_iters)
    if name is DefenseName.HUBER:
        if train_cfg.model != "linear":
            raise DefenseError("Huber regression only defends the linear model")
        return huber_defense(data, settings.huber_epsilons, settings.huber_lam, settings.huber_max_iters,
                             settings.huber_folds, seed)
    if name is DefenseName.SEVER:
        return sever(data, settings.reject_rate, settings.sever_rounds, train_cfg)
    if name is DefenseName.PRODA:
        return proda(data, settings.proda_group_size, settings.proda_eps, settings.reject_rate,
                     settings.proda_worst_case, train_cfg, seed, settings.proda_selection,
                     settings.proda_finite_population)
    return bayesclean_defense(data, settings.bayesclean, train_cfg)


def load_source(config: ExperimentConfig) -> RawDataset:
    if config.csv_path is not None:
        return load_csv(config.csv_path, config.has_header, config.target_col)
    return gen_synthetic(config.synthetic_n, derive_seed(config.master_seed, "synthetic"))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def batches_for_ratio(ratio: float, n_train: int, batch_size: int) -> int:
    """Number of cumulative batches that realize ``ratio`` of the clean training size."""
    return _round_half_up(ratio * n_train / batch_size)


@dataclass(frozen=True)
class SeedSetup:
    """Everything shared by the alpha values of one repetition."""

    rep: int
    seed: int
    train: Dataset
    val: Dataset
    test: Dataset
    plan: AttackPlan
    r_ref: float


def _prepare(config: ExperimentConfig, raw: RawDataset, rep: int) -> SeedSetup:
    bundle = split(raw, config.split, derive_seed(config.master_seed, "split", rep))
    bundle, _ = standardize(bundle)
    train = bundle.train
    max_batches = max(batches_for_ratio(r, train.n, config.attack.batch_size) for r in config.ratios)
    settings = config.attack.model_copy(update={
        "n_p": max_batches * config.attack.batch_size,
        "seed": derive_seed(config.master_seed, "attack", rep),
    })
    clean = CleanReference.fit(train, settings)
    plan = make_plan(settings, train, clean=clean)
    if settings.normalize and plan.n_batches:
        r_ref = compute_R_ref(plan, bundle.val, train)
    else:
        r_ref = 1.0
    logger.info("repetition %d prepared: %d batches, R_ref=%.4g", rep, plan.n_batches, r_ref)
    return SeedSetup(rep=rep, seed=settings.seed, train=train, val=bundle.val, test=bundle.test,
                     plan=plan, r_ref=r_ref)


def _defenses(config: ExperimentConfig) -> List[DefenseName]:
    ordered = [DefenseName.NONE]
    ordered += [d for d in dict.fromkeys(config.defenses) if d is not DefenseName.NONE]
    return ordered


def _record(config: ExperimentConfig, rep: int, alpha: float, ratio: float, defense: DefenseName,
            **fields) -> CellRecord:
    return CellRecord(dataset=config.dataset, model=config.train.model, alpha=alpha, ratio=ratio,
                      defense=defense, seed=rep, **fields)


def _failed_cells(config: ExperimentConfig, rep: int, alpha: float, error: Exception) -> List[CellRecord]:
    message = f"{type(error).__name__}: {error}"
    return [
        _record(config, rep, alpha, ratio, defense, status=RecordStatus.FAILED, error=message)
        for ratio in config.ratios
        for defense in _defenses(config)
    ]


def _evaluate(config: ExperimentConfig, setup: SeedSetup, alpha: float) -> List[CellRecord]:
    """Craft the attack for one (repetition, alpha) and score every ratio and defense."""
    try:
        result: AttackResult = craft_attack(setup.plan.with_alpha(alpha), setup.r_ref, setup.val, setup.train)
    except CELL_ERRORS as e:
        logger.error("attack failed (repetition %d, alpha %.3g): %s", setup.rep, alpha, e)
        return _failed_cells(config, setup.rep, alpha, e)

    records: List[CellRecord] = []
    for ratio in config.ratios:
        k = min(batches_for_ratio(ratio, setup.train.n, config.attack.batch_size), len(result.batches))
        poisoned = result.snapshot(k)
        poison_idx = result.poison_indices_upto(k)
        baseline: Optional[float] = None
        for defense in _defenses(config):
            try:
                seed = derive_seed(config.master_seed, "defense", setup.rep, defense.value, ratio)
                report = apply_defense(defense, poisoned, config.defense, config.train, seed)
                score = nmse(report.final_params, setup.test)
                if defense is DefenseName.NONE:
                    baseline = score
                    gain = None
                else:
                    if baseline is None:
                        raise MetricError("no undefended baseline for this cell")
                    gain = defense_gain(baseline, score)
                recall = rejection_recall(report, poison_idx) if poison_idx.size else None
                records.append(_record(config, setup.rep, alpha, ratio, defense, nmse=score, gain_pct=gain,
                                       n_poison=int(poison_idx.size), poison_recall=recall))
            except CELL_ERRORS as e:
                logger.error("cell failed (rep %d, alpha %.3g, ratio %.3g, %s): %s",
                             setup.rep, alpha, ratio, defense.value, e)
                records.append(_record(config, setup.rep, alpha, ratio, defense, status=RecordStatus.FAILED,
                                       n_poison=int(poison_idx.size), error=f"{type(e).__name__}: {e}"))
    return records


def summarize(config: ExperimentConfig, records: Sequence[CellRecord]) -> List[CellSummary]:
    """Mean/std over repetitions per (alpha, ratio, defense), pairing gains with the same seed's baseline."""
    summaries: List[CellSummary] = []
    for alpha in config.alphas:
        for ratio in config.ratios:
            cell = [r for r in records if r.alpha == alpha and r.ratio == ratio]
            baseline = [r.nmse for r in cell if r.defense is DefenseName.NONE and r.status is RecordStatus.OK]
            for defense in _defenses(config):
                rows = [r for r in cell if r.defense is defense]
                ok = [r for r in rows if r.status is RecordStatus.OK]
                gains = [r.gain_pct for r in ok if r.gain_pct is not None]
                scores = [r.nmse for r in ok]
                summaries.append(CellSummary(
                    dataset=config.dataset,
                    model=config.train.model,
                    alpha=alpha,
                    ratio=ratio,
                    defense=defense,
                    mean_gain_pct=float(np.mean(gains)) if gains else None,
                    std_gain_pct=float(np.std(gains)) if gains else None,
                    mean_nmse=float(np.mean(scores)) if scores else None,
                    mean_nmse_nodef=float(np.mean(baseline)) if baseline else None,
                    n_ok=len(ok),
                    n_failed=len(rows) - len(ok),
                ))
    return summaries


def run_experiment(
    config: ExperimentConfig, threads: Optional[int] = None
) -> Tuple[ExperimentReport, Dict[str, float]]:
    """
    Run the full grid. Repetitions are prepared in parallel, then every
    (repetition, alpha) pair crafts its attack and scores all ratios and
    defenses in parallel. Failures are recorded per cell.

    Returns:
        (report, wall-clock seconds per repetition/alpha task)
    """
    workers = threads or config.threads or 1
    raw = load_source(config)
    logger.info("experiment on %s (%d rows), %d repetitions, %d worker(s)",
                config.dataset, raw.n, config.repetitions, workers)

    def prepare(rep: int) -> Union[SeedSetup, Exception]:
        try:
            return _prepare(config, raw, rep)
        except CELL_ERRORS as e:
            logger.error("repetition %d could not be prepared: %s", rep, e)
            return e

    def evaluate(task: Tuple[Union[SeedSetup, Exception], int, float]) -> Tuple[List[CellRecord], float]:
        setup, rep, alpha = task
        start = time.perf_counter()
        if isinstance(setup, Exception):
            records = _failed_cells(config, rep, alpha, setup)
        else:
            records = _evaluate(config, setup, alpha)
        return records, time.perf_counter() - start

    with ThreadPoolExecutor(max_workers=workers) as pool:
        setups = list(pool.map(prepare, range(config.repetitions)))
        tasks = [(setups[rep], rep, alpha) for rep in range(config.repetitions) for alpha in config.alphas]
        outcomes = list(pool.map(evaluate, tasks))

    records = [record for task_records, _ in outcomes for record in task_records]
    timings = {f"rep={rep}/alpha={alpha}": seconds for (_, rep, alpha), (_, seconds) in zip(tasks, outcomes)}
    report = ExperimentReport(config=config, records=records, summary=summarize(config, records))
    return report, timings


def write_report(report: ExperimentReport, out_dir: Union[str, os.PathLike],
                 timings: Optional[Dict[str, float]] = None) -> Dict[str, str]:
    """Write report.json, summary.csv and (when given) timings.json; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "summary": os.path.join(out_dir, "summary.csv"),
    }
    with open(paths["report"], "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))

    with open(paths["summary"], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for s in report.summary:
            writer.writerow([
                s.dataset, s.model, s.alpha, s.ratio, s.defense.value,
                "" if s.mean_gain_pct is None else repr(s.mean_gain_pct),
                "" if s.std_gain_pct is None else repr(s.std_gain_pct),
                "" if s.mean_nmse_nodef is None else repr(s.mean_nmse_nodef),
            ])

    if timings is not None:
        paths["timings"] = os.path.join(out_dir, "timings.json")
        with open(paths["timings"], "w", encoding="utf-8") as f:
            json.dump(timings, f, indent=2)
    return paths
