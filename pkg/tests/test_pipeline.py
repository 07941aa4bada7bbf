from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from faultpipe.classifiers import ClassifierSpec
from faultpipe.core import make_grouped_folds
from faultpipe.pipeline import (
    FAILED_COST,
    FeatureCache,
    FitnessRecord,
    FittedPipeline,
    evaluate,
    extract_matrix,
    feature_names,
    fit_pipeline,
    record_accuracy,
    record_votes,
    surrogate_cost,
)
from faultpipe.space import PipelinePlan
from faultpipe.spectral import FeatureMatrix

from conftest import SMALL, noise_dataset


def _source(small_data):
    return next(iter(small_data.values()))


def test_feature_names_and_matrix_shape(small_data):
    plan = PipelinePlan()
    names = feature_names(plan)
    assert len(names) == 48 and names[0] == "fft_mean" and names[24] == "time_mean"
    assert len(feature_names(replace(plan, time_features=False, spectral="PSD"))) == 24
    d = _source(small_data)
    m = extract_matrix(plan, d)
    assert m.shape == (len(d) * SMALL.record_len // 1024, 48)
    assert set(np.unique(m.record_ids)) == set(range(len(d)))


def test_random_labels_give_chance_error():
    d = noise_dataset(10, 4096, seed=0)
    folds = make_grouped_folds(d, 5, 3, seed=0)
    plan = PipelinePlan(classifier=ClassifierSpec("GB", {"n_estimators": 20}))
    fit = evaluate(plan, d, folds)
    assert not fit.failed
    assert abs(fit.cv_error - 0.5) <= 0.1
    assert len(fit.fold_accuracies) == 15


def test_planted_signal_gives_low_error(small_data):
    d = _source(small_data)
    folds = make_grouped_folds(d, 4, 1, seed=0)
    fit = evaluate(PipelinePlan(), d, folds)
    assert fit.cv_error <= 0.2


def test_failing_plan_gets_worst_fitness(small_data):
    d = _source(small_data)
    folds = make_grouped_folds(d, 4, 1, seed=0)
    fit = evaluate(PipelinePlan(window_len=8192), d, folds)
    assert fit.failed and fit.cv_error == 1.0 and fit.cost == FAILED_COST
    assert "TransformError" in fit.message or "window" in fit.message


def test_evaluate_is_deterministic_and_cache_transparent(small_data):
    d = _source(small_data)
    folds = make_grouped_folds(d, 4, 2, seed=1)
    plan = PipelinePlan(reducer="PCA", reducer_k=5, low_variance=True)
    a = evaluate(plan, d, folds, seed=2)
    cache = FeatureCache()
    b = evaluate(plan, d, folds, seed=2, cache=cache)
    c = evaluate(plan, d, folds, seed=2, cache=cache)
    assert a == b == c
    t = evaluate(plan, d, folds, seed=2, cost_mode="timing")
    assert t.cv_error == a.cv_error and t.cost > 0
    with pytest.raises(ValueError):
        evaluate(plan, d, folds, cost_mode="wall")


def test_fit_uses_training_rows_only(small_data):
    d = _source(small_data)
    m = extract_matrix(PipelinePlan(), d)
    train = np.flatnonzero(m.rows_for_serials(d.serials()[:6]))
    plan = PipelinePlan(reducer="UFS", reducer_k=4)
    a = fit_pipeline(plan, m.take(train), seed=0)
    poisoned = m.with_values(np.where(m.rows_for_serials(d.serials()[:6])[:, None], m.values, 1e9), m.names)
    b = fit_pipeline(plan, poisoned.take(train), seed=0)
    assert a.to_dict() == b.to_dict()


def test_fitted_pipeline_round_trip(small_data):
    d = _source(small_data)
    m = extract_matrix(PipelinePlan(), d)
    plan = PipelinePlan(low_variance=True, scaling="ZScore", reducer="mRMR", reducer_k=10)
    fp = fit_pipeline(plan, m)
    assert fp.reducer.k == 10
    back = FittedPipeline.from_dict(json.loads(json.dumps(fp.to_dict())))
    assert np.array_equal(back.predict(m), fp.predict(m))
    _, pred, score = fp.predict_dataset(d)
    assert len(pred) == len(m) == len(score)


def test_record_votes():
    votes = record_votes(np.array([0, 0, 0, 1, 1]), np.array([1, 1, 0, 1, 0]), np.array([.9, .8, .2, .4, .3]))
    assert votes[0][0] == 1
    assert votes[1][0] == 0  # tie resolved by mean score 0.35


def test_record_accuracy_and_surrogate(small_data):
    d = _source(small_data)
    m = extract_matrix(PipelinePlan(), d)
    fp = fit_pipeline(PipelinePlan(), m)
    assert record_accuracy(m, fp.predict(m), fp.predict_score(m)) == 1.0
    base = surrogate_cost(PipelinePlan(), 100)
    assert surrogate_cost(replace(PipelinePlan(), detrend=True), 100) > base
    assert surrogate_cost(PipelinePlan(), 200) > base
    with pytest.raises(ValueError):
        FitnessRecord(float("nan"), 1.0)


def test_reducer_k_clamped_to_available_columns():
    rng = np.random.default_rng(0)
    m = FeatureMatrix(rng.normal(size=(20, 5)), list("abcde"), np.arange(20) % 2, ["s"] * 20, ["c"] * 20)
    fp = fit_pipeline(PipelinePlan(reducer="UFS", reducer_k=24), m)
    assert fp.reducer.k == 5 and fp.notes == ("c_51: k clamped from 24 to 5",)
