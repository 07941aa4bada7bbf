from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from faultpipe.core import TABLE_CONDITIONS, Dataset, DatasetError, Label
from faultpipe.harness import (
    ComparisonReport,
    TransferReport,
    baseline_plan,
    compare_classifiers,
    compare_reducers,
    dumps,
    evaluate_transfer,
    fit_source,
    holdout_split,
    render_comparison_table,
    render_transfer_table,
    transfer_report,
    with_source_method,
)
from faultpipe.pipeline import PipelineError
from faultpipe.space import baseline_chromosome, decode, default_space

from conftest import make_record, noise_dataset

SLOW, FAST = TABLE_CONDITIONS[0], TABLE_CONDITIONS[2]


def test_baseline_plan():
    plan = baseline_plan()
    assert plan == decode(default_space(), baseline_chromosome())
    assert not {"RSFR", "Notch", "Park"} & set(plan.stages())
    assert plan.stages() == ["window", "FFT", "features", "scale", "GB"]


def test_holdout_split_examples():
    d = noise_dataset(5, 64, seed=0)
    train, hold = holdout_split(d, 0.2, seed=4)
    assert len(hold.serials()) == 2 and len(train.serials()) == 8
    assert not set(train.serials()) & set(hold.serials())
    assert {l.code for l in hold.serial_labels().values()} == {0, 1}
    again = holdout_split(d, 0.2, seed=4)
    assert again[1].serials() == hold.serials()
    assert holdout_split(d, 0.0, 0)[1].serials() == []
    with pytest.raises(ValueError):
        holdout_split(d, 1.0, 0)


def test_transfer_identity(small_data):
    d = small_data[SLOW]
    r = evaluate_transfer(baseline_plan(), d, d, seed=0)
    assert r.accuracy_impact == 0.0
    assert r.target_accuracy == r.source_holdout_accuracy
    assert r.target_record_accuracy == r.source_holdout_record_accuracy
    json.loads(dumps(r.to_dict()))


def test_transfer_report_invariants():
    with pytest.raises(ValueError):
        TransferReport("a", "b", 0.9, 0.9, 0.8, 0.0, 1, 1, 0, "", "")
    with pytest.raises(ValueError):
        TransferReport("a", "b", 1.2, 0.9, 0.8, -0.1, 1, 1, 0, "", "")


def test_transfer_schema_errors(small_data):
    d = small_data[SLOW]
    sf = fit_source(baseline_plan(), d, seed=0)
    held = sf.holdout.serials()
    stranger = Dataset(tuple(make_record(f"X{i}", (Label.HEALTHY, Label.FAULTY)[i % 2], np.zeros(4096), fs=8192) for i in range(4)))
    with pytest.raises(DatasetError, match="lacks holdout serials"):
        transfer_report(sf, stranger, 0)
    flipped = Dataset(tuple(
        replace(r, motor=replace(r.motor, label=Label.FAULTY if r.motor.label is Label.HEALTHY else Label.HEALTHY))
        for r in small_data[FAST].records if r.motor.serial in held
    ))
    with pytest.raises(DatasetError, match="labelled differently"):
        transfer_report(sf, flipped, 0)
    with pytest.raises(PipelineError):
        fit_source(replace(baseline_plan(), window_len=1 << 16), d, seed=0)


def test_baseline_degrades_and_rsfr_recovers(default_data):
    base = evaluate_transfer(baseline_plan(), default_data[SLOW], default_data[FAST], seed=0)
    assert base.target_accuracy < base.source_holdout_accuracy
    rsfr = evaluate_transfer(with_source_method(baseline_plan(), "RSFR"), default_data[SLOW], default_data[FAST], seed=0)
    assert abs(rsfr.accuracy_impact) <= 0.10
    for r in (base, rsfr):
        assert 0 <= r.source_holdout_record_accuracy <= 1 and 0 <= r.target_record_accuracy <= 1
    table = render_transfer_table([base, rsfr])
    assert table.count("\n") == 4 and "250rpm_0N" in table


def test_compare_reducers_shape(small_data):
    rep = compare_reducers(small_data[SLOW], seed=0, ks=(2, 3), target=small_data[FAST])
    assert [r["name"] for r in rep.rows] == ["PCA", "SFS", "UFS", "mRMR"]
    accs = [r["cv_accuracy"] for r in rep.rows]
    assert rep.max_diff == max(accs) - min(accs)
    assert all("transfer_delta" in r and r["best_k"] in (2, 3) for r in rep.rows)
    assert "max. difference" in render_comparison_table(rep)


def test_compare_classifiers_shape_and_determinism(small_data):
    kw = dict(generations=1, pop_size=4)
    a = compare_classifiers(small_data[SLOW], seed=1, **kw)
    assert [r["name"] for r in a.rows] == ["GB", "RF", "ETC", "LogReg", "kNN"]
    accs = [r["holdout_accuracy"] for r in a.rows]
    assert a.max_diff == max(accs) - min(accs)
    b = compare_classifiers(small_data[SLOW], seed=1, **kw)
    assert dumps(a.to_dict()) == dumps(b.to_dict())


def test_comparison_report_checks_max_diff():
    rows = ({"name": "a", "acc": 0.5}, {"name": "b", "acc": 0.9})
    assert ComparisonReport("x", "acc", rows, 0.4, 0, "").accuracies == {"a": 0.5, "b": 0.9}
    with pytest.raises(ValueError):
        ComparisonReport("x", "acc", rows, 0.3, 0, "")
