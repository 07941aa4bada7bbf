"""Executing a decoded plan: feature extraction, fitting and grouped-CV fitness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from faultpipe.classifiers import FittedModel, fit as fit_classifier
from faultpipe.core import Dataset, GroupedSplit
from faultpipe.spectral import (
    FEATURE_NAMES,
    FeatureMatrix,
    FittedReducer,
    FittedScaler,
    _fft_amplitude,
    _welch,
    drop_low_variance,
    feature_block,
    fit_reducer,
    fit_scaler,
)
from faultpipe.space import PipelinePlan, pseudo_shaft_freq_hz
from faultpipe.transforms import (
    WindowingParams,
    analytic_envelope,
    detrend,
    make_windows,
    normalize,
    stage_a_select,
    window_taper,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def _record_windows(plan: PipelinePlan, rec) -> np.ndarray:
    sig = stage_a_select(
        rec,
        plan.source_method,
        notch_hz=plan.notch_hz,
        pseudo_shaft_freq_hz=pseudo_shaft_freq_hz(plan.pseudo_shaft),
        savgol=(plan.savgol_window, plan.savgol_order) if plan.savgol else None,
    )
    w = make_windows(sig, WindowingParams(plan.window_len, plan.overlap)).windows
    if plan.normalize:
        w = normalize(w)
    if plan.detrend:
        w = detrend(w)
    if plan.envelope:
        w = analytic_envelope(w)
    if plan.taper:
        w = window_taper(w)
    return w


def feature_names(plan: PipelinePlan) -> tuple[str, ...]:
    prefix = plan.spectral.lower() + "_"
    names = [prefix + n for n in FEATURE_NAMES]
    if plan.time_features:
        names += ["time_" + n for n in FEATURE_NAMES]
    return tuple(names)


def extract_matrix(plan: PipelinePlan, data: Dataset) -> FeatureMatrix:
    """Stages A to C2 for every record: one feature row per window."""
    blocks, labels, serials, conds, rids = [], [], [], [], []
    names = feature_names(plan)
    for i, rec in enumerate(data.records):
        w = _record_windows(plan, rec)
        if plan.spectral == "FFT":
            spec = _fft_amplitude(w)
        else:
            _, spec = _welch(w, rec.sample_rate_hz, None, None)
        parts = [feature_block(spec, time_domain=False)]
        if plan.time_features:
            parts.append(feature_block(w, time_domain=True))
        block = np.hstack(parts)
        blocks.append(block)
        n = block.shape[0]
        labels += [rec.motor.label.code] * n
        serials += [rec.motor.serial] * n
        conds += [rec.condition.key] * n
        rids += [i] * n
    if blocks:
        values = np.vstack(blocks)
    else:
        values = np.zeros((0, len(names)))
    if not np.all(np.isfinite(values)):
        raise PipelineError("non-finite feature values")
    return FeatureMatrix(values, names, np.asarray(labels, dtype=np.int64), serials, conds, rids)


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    """All fitted stages of a plan: cleaning, scaling, reduction, classifier."""

    plan: PipelinePlan
    cleaner: FittedReducer | None
    scaler: FittedScaler
    reducer: FittedReducer | None
    model: FittedModel
    notes: tuple[str, ...] = ()

    def transform(self, m: FeatureMatrix) -> FeatureMatrix:
        if self.cleaner is not None:
            m = self.cleaner.transform_matrix(m)
        m = m.with_values(self.scaler.transform(m.values), m.names)
        if self.reducer is not None:
            m = self.reducer.transform_matrix(m)
        return m

    def predict(self, m: FeatureMatrix) -> np.ndarray:
        return self.model.predict(self.transform(m))

    def predict_score(self, m: FeatureMatrix) -> np.ndarray:
        return self.model.predict_score(self.transform(m))

    def predict_dataset(self, data: Dataset) -> tuple[FeatureMatrix, np.ndarray, np.ndarray]:
        m = extract_matrix(self.plan, data)
        if len(m) == 0:
            return m, np.zeros(0, dtype=np.int64), np.zeros(0)
        t = self.transform(m)
        return m, self.model.predict(t), self.model.predict_score(t)

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "cleaner": None if self.cleaner is None else self.cleaner.to_dict(),
            "scaler": self.scaler.to_dict(),
            "reducer": None if self.reducer is None else self.reducer.to_dict(),
            "model": self.model.to_dict(),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPipeline":
        return cls(
            PipelinePlan.from_dict(d["plan"]),
            None if d["cleaner"] is None else FittedReducer.from_dict(d["cleaner"]),
            FittedScaler.from_dict(d["scaler"]),
            None if d["reducer"] is None else FittedReducer.from_dict(d["reducer"]),
            FittedModel.from_dict(d["model"]),
            tuple(d.get("notes", ())),
        )


def fit_pipeline(plan: PipelinePlan, train: FeatureMatrix, seed: int = 0) -> FittedPipeline:
    """Fit stages C3 to D on training rows only."""
    notes = []
    m = train
    cleaner = None
    if plan.low_variance:
        cleaner = drop_low_variance(m)
        if cleaner.degenerate:
            notes.append("low-variance cleaning kept a single column")
        m = cleaner.transform_matrix(m)
    scaler = fit_scaler(m, plan.scaling)
    m = m.with_values(scaler.transform(m.values), m.names)
    reducer = None
    if plan.reducer != "none":
        k = min(plan.reducer_k, m.shape[1])
        if k != plan.reducer_k:
            notes.append(f"c_51: k clamped from {plan.reducer_k} to {k}")
        reducer = fit_reducer(m, plan.reducer, k, seed=seed)
        m = reducer.transform_matrix(m)
    model = fit_classifier(plan.classifier, m, seed=seed)
    return FittedPipeline(plan, cleaner, scaler, reducer, model, tuple(notes))


def window_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == labels)) if len(labels) else float("nan")


def record_votes(record_ids: np.ndarray, pred: np.ndarray, scores: np.ndarray) -> dict[int, tuple[int, float]]:
    """Majority vote per record; ties go to the mean score."""
    out = {}
    for rid in np.unique(record_ids):
        sel = record_ids == rid
        frac = float(np.mean(pred[sel]))
        mean_score = float(np.mean(scores[sel]))
        vote = 1 if frac > 0.5 else 0 if frac < 0.5 else int(mean_score > 0.5)
        out[int(rid)] = (vote, mean_score)
    return out


def record_accuracy(m: FeatureMatrix, pred: np.ndarray, scores: np.ndarray) -> float:
    if len(m) == 0:
        return float("nan")
    votes = record_votes(m.record_ids, pred, scores)
    truth = {int(r): int(l) for r, l in zip(m.record_ids, m.labels)}
    return float(np.mean([votes[r][0] == truth[r] for r in votes]))


@dataclass(frozen=True)
class FitnessRecord:
    cv_error: float
    cost: float
    cv_std: float = 0.0
    failed: bool = False
    message: str = ""
    fold_accuracies: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cv_error) and math.isfinite(self.cost)):
            raise ValueError("fitness objectives must be finite")

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.cv_error, self.cost)

    @property
    def cv_accuracy(self) -> float:
        return 1.0 - self.cv_error

    def to_dict(self) -> dict:
        return {
            "cv_error": self.cv_error, "cost": self.cost, "cv_std": self.cv_std,
            "failed": self.failed, "message": self.message,
            "fold_accuracies": list(self.fold_accuracies),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitnessRecord":
        return cls(d["cv_error"], d["cost"], d.get("cv_std", 0.0), d.get("failed", False),
                   d.get("message", ""), tuple(d.get("fold_accuracies", ())))


FAILED_COST = 1e6

# surrogate cost weights
_STAGE_WEIGHT = 1.0
_WINDOW_WEIGHT = 1e-3
_TREE_WEIGHT = 1e-3


def surrogate_cost(plan: PipelinePlan, n_rows: int) -> float:
    """Deterministic stand-in for wall time: active stages, windows, model size."""
    optional = [
        plan.source_method != "Raw", plan.savgol, plan.normalize, plan.detrend,
        plan.envelope, plan.taper, plan.time_features, plan.low_variance, plan.reducer != "none",
    ]
    if plan.reducer == "SFS":
        optional.append(True)
    spec = plan.classifier
    p = spec.params
    if spec.algorithm == "GB":
        model_size = p["n_estimators"] * p["max_leaves"]
    elif spec.algorithm in ("RF", "ETC"):
        model_size = p["n_trees"] * (2 ** p["max_depth"] if p["max_depth"] else 64)
    elif spec.algorithm == "LogReg":
        model_size = p["max_iter"]
    else:
        model_size = p["k"]
    cost = _STAGE_WEIGHT * sum(optional) + _WINDOW_WEIGHT * n_rows + _TREE_WEIGHT * model_size
    return round(cost, 9)


class FeatureCache:
    """Feature matrices keyed by the plan's pre-processing and the dataset."""

    def __init__(self, max_items: int = 256) -> None:
        self._store: dict = {}
        self.max_items = max_items

    def get(self, plan: PipelinePlan, data: Dataset, data_key: str) -> FeatureMatrix:
        key = (data_key, plan.preprocessing_key())
        hit = self._store.get(key)
        if hit is None:
            hit = extract_matrix(plan, data)
            if len(self._store) >= self.max_items:
                self._store.pop(next(iter(self._store)))
            self._store[key] = hit
        return hit


def evaluate(
    plan: PipelinePlan,
    source: Dataset,
    folds: list[GroupedSplit],
    seed: int = 0,
    *,
    cost_mode: str = "surrogate",
    cache: FeatureCache | None = None,
    data_key: str | None = None,
) -> FitnessRecord:
    """Grouped-CV fitness: 1 - mean window accuracy over every (repeat, fold)."""
    if cost_mode not in ("surrogate", "timing"):
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    try:
        t0 = time.perf_counter()
        if cache is not None:
            m = cache.get(plan, source, data_key or source.fingerprint())
        else:
            m = extract_matrix(plan, source)
        extract_time = time.perf_counter() - t0
        accs, times = [], []
        for split in folds:
            for f in range(split.k):
                t1 = time.perf_counter()
                test = m.rows_for_serials(split.test_serials(f))
                train = ~test
                if not test.any() or not train.any():
                    raise PipelineError("empty fold")
                fitted = fit_pipeline(plan, m.take(np.flatnonzero(train)), seed)
                pred = fitted.predict(m.take(np.flatnonzero(test)))
                accs.append(window_accuracy(pred, m.labels[test]))
                times.append(time.perf_counter() - t1)
    except Exception as exc:  # a broken plan gets the worst fitness
        log.debug("plan failed: %s", exc)
        return FitnessRecord(1.0, FAILED_COST, 0.0, True, f"{type(exc).__name__}: {exc}")
    accs_arr = np.asarray(accs)
    if cost_mode == "surrogate":
        cost = surrogate_cost(plan, len(m))
    else:
        cost = float(np.mean(times) + extract_time / max(len(times), 1))
    return FitnessRecord(
        float(1.0 - accs_arr.mean()), cost, float(accs_arr.std()), False, "", tuple(float(a) for a in accs_arr)
    )
