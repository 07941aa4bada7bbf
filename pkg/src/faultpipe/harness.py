"""Evaluation protocol: baseline plan, holdout split, transfer and comparison reports."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from faultpipe.classifiers import ALGORITHMS
from faultpipe.core import Dataset, DatasetError, GroupedSplit, WorkingCondition, make_grouped_folds
from faultpipe.optimizer import EvolutionConfig, Evaluator, Member, evolve, select_solution
from faultpipe.pipeline import (
    FeatureCache,
    FittedPipeline,
    PipelineError,
    evaluate,
    extract_matrix,
    fit_pipeline,
    record_accuracy,
    window_accuracy,
)
from faultpipe.rng import derive_rng, derive_seed
from faultpipe.space import PipelinePlan, baseline_chromosome, classifier_space, decode, default_space

log = logging.getLogger(__name__)

N_FOLDS = 5
REPEATS = 3
HOLDOUT_FRACTION = 0.2


def baseline_plan() -> PipelinePlan:
    """Raw channel, 1024-sample windows without overlap, FFT plus time features,
    min-max scaling, default gradient boosting."""
    return decode(default_space(), baseline_chromosome())


def holdout_split(d: Dataset, fraction: float = HOLDOUT_FRACTION, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split by serial, stratified by label. Each class with two or more serials
    gives ``max(1, round(fraction * n))`` serials (but never all) to the holdout."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("holdout fraction must lie in [0, 1)")
    rng = derive_rng(seed, "holdout")
    by_class: dict = {}
    for serial, label in sorted(d.serial_labels().items()):
        by_class.setdefault(label.code, []).append(serial)
    held: list[str] = []
    for code in sorted(by_class):
        serials = by_class[code]
        n = len(serials)
        take = 0 if fraction == 0.0 or n < 2 else min(n - 1, max(1, int(round(fraction * n))))
        perm = rng.permutation(n)
        held += [serials[i] for i in sorted(perm[:take])]
    held_set = set(held)
    train = d.subset([s for s in d.serials() if s not in held_set], name=f"{d.name}/train")
    holdout = d.subset(held, name=f"{d.name}/holdout")
    return train, holdout


def cv_folds(train: Dataset, seed: int, n_folds: int = N_FOLDS, repeats: int = REPEATS) -> list[GroupedSplit]:
    k = min(n_folds, min(_class_counts(train).values(), default=0))
    if k < 2:
        raise DatasetError("grouped CV needs at least two serials of every class")
    return make_grouped_folds(train, k, repeats, derive_seed(seed, "cv-folds"))


def _class_counts(d: Dataset) -> dict[int, int]:
    out: dict[int, int] = {}
    for label in d.serial_labels().values():
        out[label.code] = out.get(label.code, 0) + 1
    return out


def _condition(d: Dataset) -> WorkingCondition | None:
    conds = {r.condition for r in d.records}
    if len(conds) > 1:
        raise DatasetError(f"{d.name}: records span {len(conds)} working conditions")
    return next(iter(conds), None)


@dataclass(frozen=True)
class TransferReport:
    source_condition: str
    target_condition: str
    source_cv_accuracy: float
    source_holdout_accuracy: float
    target_accuracy: float
    accuracy_impact: float
    source_holdout_record_accuracy: float
    target_record_accuracy: float
    seed: int
    source_fingerprint: str
    target_fingerprint: str
    plan: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("source_cv_accuracy", "source_holdout_accuracy", "target_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")
        if abs(self.accuracy_impact - (self.target_accuracy - self.source_holdout_accuracy)) > 1e-12:
            raise ValueError("accuracy_impact must equal target - source holdout accuracy")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SourceFit:
    """A plan fitted on the source training serials, with its CV accuracy."""

    plan: PipelinePlan
    train: Dataset
    holdout: Dataset
    cv_accuracy: float
    fitted: FittedPipeline


def fit_source(plan: PipelinePlan, source: Dataset, seed: int = 0, holdout_fraction: float = HOLDOUT_FRACTION,
               cache: FeatureCache | None = None) -> SourceFit:
    train, holdout = holdout_split(source, holdout_fraction, seed)
    folds = cv_folds(train, seed)
    fit_seed = derive_seed(seed, "fit")
    rec = evaluate(plan, train, folds, fit_seed, cache=cache)
    if rec.failed:
        raise PipelineError(f"plan failed on source data: {rec.message}")
    fitted = fit_pipeline(plan, extract_matrix(plan, train), fit_seed)
    return SourceFit(plan, train, holdout, rec.cv_accuracy, fitted)


def _accuracies(fitted: FittedPipeline, d: Dataset) -> tuple[float, float]:
    m, pred, score = fitted.predict_dataset(d)
    if len(m) == 0:
        raise DatasetError(f"{d.name}: no windows to evaluate")
    return window_accuracy(pred, m.labels), record_accuracy(m, pred, score)


def transfer_report(sf: SourceFit, target: Dataset, seed: int) -> TransferReport:
    """Apply the unmodified source fit to the holdout serials at the target condition."""
    held = sf.holdout.serial_labels()
    if not held:
        raise DatasetError("holdout is empty; transfer needs holdout serials")
    tgt_labels = target.serial_labels()
    missing = sorted(s for s in held if s not in tgt_labels)
    if missing:
        raise DatasetError(f"target lacks holdout serials {missing}")
    for s, label in held.items():
        if tgt_labels[s] is not label:
            raise DatasetError(f"serial {s!r} is labelled differently in source and target")
    tgt = target.subset(held, name=f"{target.name}/holdout")
    if tgt.n_channels < sf.train.n_channels and sf.plan.source_method == "Park":
        raise DatasetError("target has fewer channels than the plan needs")
    hold_acc, hold_rec = _accuracies(sf.fitted, sf.holdout)
    tgt_acc, tgt_rec = _accuracies(sf.fitted, tgt)
    sc, tc = _condition(sf.holdout), _condition(tgt)
    return TransferReport(
        source_condition=sc.key if sc else "",
        target_condition=tc.key if tc else "",
        source_cv_accuracy=sf.cv_accuracy,
        source_holdout_accuracy=hold_acc,
        target_accuracy=tgt_acc,
        accuracy_impact=tgt_acc - hold_acc,
        source_holdout_record_accuracy=hold_rec,
        target_record_accuracy=tgt_rec,
        seed=seed,
        source_fingerprint=sf.train.fingerprint() + "+" + sf.holdout.fingerprint(),
        target_fingerprint=tgt.fingerprint(),
        plan=sf.plan.to_dict(),
    )


def evaluate_transfer(plan: PipelinePlan, source: Dataset, target: Dataset, seed: int = 0,
                      holdout_fraction: float = HOLDOUT_FRACTION) -> TransferReport:
    """Fit on source training serials, then score source CV, source holdout and
    the target condition restricted to holdout serials. Nothing is refit on target."""
    return transfer_report(fit_source(plan, source, seed, holdout_fraction), target, seed)


def with_source_method(plan: PipelinePlan, method: str) -> PipelinePlan:
    return replace(plan, source_method=method, requested_source_method=None, repairs=())


# ---------------------------------------------------------------- comparisons


@dataclass(frozen=True)
class ComparisonReport:
    kind: str
    metric: str
    rows: tuple[dict, ...]
    max_diff: float
    seed: int
    source_fingerprint: str

    def __post_init__(self) -> None:
        vals = [r[self.metric] for r in self.rows]
        expect = max(vals) - min(vals) if vals else 0.0
        if abs(self.max_diff - expect) > 1e-12:
            raise ValueError("max_diff must equal max - min of the listed accuracies")

    @property
    def accuracies(self) -> dict[str, float]:
        return {r["name"]: r[self.metric] for r in self.rows}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "metric": self.metric, "rows": [dict(r) for r in self.rows],
                "max_diff": self.max_diff, "seed": self.seed, "source_fingerprint": self.source_fingerprint}


def _report(kind: str, metric: str, rows: list[dict], seed: int, fp: str) -> ComparisonReport:
    vals = [r[metric] for r in rows]
    return ComparisonReport(kind, metric, tuple(rows), (max(vals) - min(vals)) if vals else 0.0, seed, fp)


REDUCERS = ("PCA", "SFS", "UFS", "mRMR")

# Fixed pre-processing for the classifier comparison: the baseline chain with
# per-window normalisation, so amplitude spread between motors does not decide
# which distance- or threshold-based learner wins.
CLASSIFIER_PREPROCESSING = {"b_2": True}


def compare_reducers(
    source: Dataset,
    seed: int = 0,
    *,
    methods: Sequence[str] = REDUCERS,
    ks: Iterable[int] = range(2, 25),
    base: PipelinePlan | None = None,
    target: Dataset | None = None,
    holdout_fraction: float = HOLDOUT_FRACTION,
) -> ComparisonReport:
    """Best k per reduction method by source CV; holdout and optional transfer delta."""
    base = base or baseline_plan()
    train, holdout = holdout_split(source, holdout_fraction, seed)
    folds = cv_folds(train, seed)
    fit_seed = derive_seed(seed, "fit")
    cache = FeatureCache()
    key = train.fingerprint()
    ks = list(ks)
    rows = []
    for method in methods:
        best = None
        for k in ks:
            plan = replace(base, reducer=method, reducer_k=k)
            rec = evaluate(plan, train, folds, fit_seed, cache=cache, data_key=key)
            if best is None or rec.cv_error < best[1].cv_error:
                best = (plan, rec)
        plan, rec = best
        sf = SourceFit(plan, train, holdout, rec.cv_accuracy,
                       fit_pipeline(plan, cache.get(plan, train, key), fit_seed))
        row = {"name": method, "best_k": plan.reducer_k, "cv_accuracy": rec.cv_accuracy}
        if len(holdout):
            row["holdout_accuracy"] = _accuracies(sf.fitted, holdout)[0]
        if target is not None:
            row["transfer_delta"] = transfer_report(sf, target, seed).accuracy_impact
        rows.append(row)
    return _report("reducers", "cv_accuracy", rows, seed, source.fingerprint())


def compare_classifiers(
    source: Dataset,
    seed: int = 0,
    *,
    algorithms: Sequence[str] = ALGORITHMS,
    preprocessing: dict | None = None,
    generations: int = 20,
    pop_size: int = 10,
    holdout_fraction: float = HOLDOUT_FRACTION,
) -> ComparisonReport:
    """Identical pre-processing for every classifier, a genetic hyperparameter
    search per classifier, then holdout accuracy of the selected setting."""
    train, holdout = holdout_split(source, holdout_fraction, seed)
    if not len(holdout):
        raise DatasetError("classifier comparison needs holdout serials")
    folds = cv_folds(train, seed)
    cache = FeatureCache()
    rows = []
    for algo in algorithms:
        space = classifier_space(algo, CLASSIFIER_PREPROCESSING if preprocessing is None else preprocessing)
        cfg = EvolutionConfig(generations=generations, pop_size=pop_size, seed=derive_seed(seed, "clf", algo))
        ev = Evaluator(space, train, folds, derive_seed(seed, "fit"), cfg.cost_mode)
        ev.cache = cache
        res = evolve(space, train, cfg, folds=folds, evaluator=ev)
        chosen = select_solution(res.front)
        plan = decode(space, chosen.chromosome, train.n_channels)
        fitted = fit_pipeline(plan, cache.get(plan, train, ev.data_key), derive_seed(seed, "fit"))
        hold_acc, hold_rec = _accuracies(fitted, holdout)
        rows.append({
            "name": algo,
            "cv_accuracy": chosen.fitness.cv_accuracy,
            "holdout_accuracy": hold_acc,
            "holdout_record_accuracy": hold_rec,
            "params": dict(plan.classifier.params),
        })
    return _report("classifiers", "holdout_accuracy", rows, seed, source.fingerprint())


# ---------------------------------------------------------------- optimisation run


@dataclass
class OptimizationOutcome:
    selected: Member
    plan: PipelinePlan
    fitted: FittedPipeline
    result: object
    baseline_cv_accuracy: float | None
    train_accuracy: float
    train_record_accuracy: float


def optimize_source(
    train: Dataset,
    cfg: EvolutionConfig,
    *,
    space=None,
    criterion: str = "min_error",
    with_baseline: bool = True,
    on_generation=None,
) -> OptimizationOutcome:
    """Evolve on training serials, select by CV and refit the winner on all of them.
    Only ``train`` is visible here: holdout and target data cannot influence selection."""
    space = space or default_space()
    folds = cv_folds(train, cfg.seed, cfg.n_folds, cfg.repeats)
    ev = Evaluator(space, train, folds, derive_seed(cfg.seed, "fit"), cfg.cost_mode, cfg.jobs)
    res = evolve(space, train, cfg, folds=folds, evaluator=ev, on_generation=on_generation)
    chosen = select_solution(res.front, criterion)
    plan = decode(space, chosen.chromosome, train.n_channels)
    m = ev.cache.get(plan, train, ev.data_key)
    fitted = fit_pipeline(plan, m, derive_seed(cfg.seed, "fit"))
    pred, score = fitted.predict(m), fitted.predict_score(m)
    base_acc = None
    if with_baseline:
        rec = evaluate(baseline_plan(), train, folds, derive_seed(cfg.seed, "fit"), cache=ev.cache, data_key=ev.data_key)
        base_acc = rec.cv_accuracy
    return OptimizationOutcome(chosen, plan, fitted, res, base_acc,
                               window_accuracy(pred, m.labels), record_accuracy(m, pred, score))


# ---------------------------------------------------------------- rendering


def _pct(v) -> str:
    return "-" if v is None else f"{100.0 * v:6.2f}"


def render_transfer_table(reports: Sequence[TransferReport]) -> str:
    head = f"{'#':>2}  {'source':<14} {'target':<14} {'CV':>6} {'holdout':>7} {'target':>6} {'impact':>7} {'rec.hold':>8} {'rec.tgt':>7}"
    lines = [head, "-" * len(head)]
    for i, r in enumerate(reports, 1):
        lines.append(
            f"{i:>2}  {r.source_condition:<14} {r.target_condition:<14} {_pct(r.source_cv_accuracy)} "
            f"{_pct(r.source_holdout_accuracy):>7} {_pct(r.target_accuracy)} {100 * r.accuracy_impact:+7.2f} "
            f"{_pct(r.source_holdout_record_accuracy):>8} {_pct(r.target_record_accuracy):>7}"
        )
    return "\n".join(lines) + "\n"


def render_comparison_table(report: ComparisonReport) -> str:
    cols = [c for c in ("best_k", "cv_accuracy", "holdout_accuracy", "transfer_delta") if any(c in r for r in report.rows)]
    head = f"{'name':<8} " + " ".join(f"{c:>16}" for c in cols)
    lines = [head, "-" * len(head)]
    for r in report.rows:
        cells = []
        for c in cols:
            v = r.get(c)
            if v is None:
                cells.append(f"{'-':>16}")
            elif c == "best_k":
                cells.append(f"{v:>16d}")
            elif c == "transfer_delta":
                cells.append(f"{100 * v:>+16.2f}")
            else:
                cells.append(f"{100 * v:>16.2f}")
        lines.append(f"{r['name']:<8} " + " ".join(cells))
    lines.append(f"max. difference ({report.metric}): {100 * report.max_diff:.2f} points")
    return "\n".join(lines) + "\n"


def dumps(obj) -> str:
    """Canonical JSON used for every report file."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"
