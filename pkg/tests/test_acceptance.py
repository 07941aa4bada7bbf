"""Acceptance criteria 1-9. Each test records one pass/fail line, printed in the
terminal summary under "acceptance criteria"."""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

import conftest
import oracles
from faultpipe.cli import main
from faultpipe.core import TRANSFER_SETTINGS, save_dataset
from faultpipe.harness import (
    baseline_plan,
    compare_classifiers,
    evaluate_transfer,
    holdout_split,
    optimize_source,
    with_source_method,
)
from faultpipe.optimizer import EvolutionConfig, crowding_distance, evolve, non_dominated_sort
from faultpipe.space import default_space
from faultpipe.spectral import Spectrum, extract_features, fft_magnitude, spectrum_mean_square, welch_psd
from faultpipe.transforms import (
    RsfrParams,
    Signal,
    WindowingParams,
    make_windows,
    park_transform,
    rsfr,
    savitzky_golay,
    window_count,
)

SEEDS = (0, 1, 2)


def _record(n: int, ok: bool, text: str) -> None:
    conftest.ACCEPTANCE[n] = f"[{'PASS' if ok else 'FAIL'}] {n}. {text}"


# ---------------------------------------------------------------- 1


def test_1_windowing_oracle():
    buf = np.arange(8192, dtype=float)
    cases = [(s, w) for s in (128, 1024, 2048) for w in (0, s // 4, s // 2)]
    expected = {}
    for s, w in cases:
        for length in range(512, 8193):
            expected[(length, s, w)] = list(range(0, length - s + 1, s - w)) if length >= s else []
    bad = 0
    t0 = time.perf_counter()
    for s, w in cases:
        p = WindowingParams(s, w)
        for length in range(512, 8193):
            want = expected[(length, s, w)]
            if window_count(length, p) != len(want):
                bad += 1
            elif want:
                ws = make_windows(buf[:length], p)
                if ws.offsets.tolist() != want or ws.windows[:, 0].tolist() != want:
                    bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 1.0
    _record(1, ok, f"windowing: {len(expected)} (L, s, w) cases, {bad} mismatches, {elapsed:.2f} s (< 1 s)")
    assert ok


# ---------------------------------------------------------------- 2


def _peak_hz(x: Signal) -> float:
    n = 16 * len(x)
    spec = np.abs(np.fft.rfft(x.values * np.hanning(len(x)), n))
    spec[:16] = 0.0
    return float(np.argmax(spec) * x.sample_rate_hz / n)


def test_2_rsfr_alignment():
    t0 = time.perf_counter()
    fs, n, pp = 8192.0, 16384, 4
    target = 118.0 / 60.0
    peaks = {}
    for rpm in (250.0, 2000.0):
        x = Signal(np.sin(2 * np.pi * rpm / 60 * pp * np.arange(n) / fs), fs)
        peaks[rpm] = _peak_hz(rsfr(x, RsfrParams(target, pp, rpm / 60)))
    rel = abs(peaks[250.0] - peaks[2000.0]) / peaks[2000.0]
    noise = Signal(np.random.default_rng(0).normal(size=n), fs)
    ident = float(np.max(np.abs(rsfr(noise, RsfrParams(25 / 6, pp, 25 / 6)).values - noise.values)))
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.01 and ident <= 1e-9 and elapsed < 5
    _record(2, ok, f"RSFR: 250/2000 rpm peaks {peaks[250.0]:.3f}/{peaks[2000.0]:.3f} Hz "
                   f"(rel diff {rel:.2e} <= 1e-2), identity max err {ident:.1e} (<= 1e-9), {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 3


def test_3_numerics_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checks = {}

    x = np.sin(2 * np.pi * 100 * np.arange(1024) / 1024)
    s = fft_magnitude(Signal(x, 1024.0)).values
    checks["fft peak"] = abs(s[100] - 1.0) <= 1e-6 and np.max(np.delete(s, 100)) <= 1e-6

    worst = 0.0
    for _ in range(100):
        y = rng.normal(size=int(rng.integers(2, 2048)))
        ms = float(np.mean(y * y))
        worst = max(worst, abs(spectrum_mean_square(fft_magnitude(Signal(y, 1.0)), len(y)) - ms) / ms)
    checks["parseval"] = worst <= 1e-9

    sigma = 1.3
    integrals = []
    for _ in range(50):
        p = welch_psd(Signal(sigma * rng.normal(size=8192), 500.0))
        integrals.append(np.sum(p.values) * p.bin_hz)
    checks["welch"] = abs(np.mean(integrals) / sigma**2 - 1) <= 0.10

    t = np.arange(500, dtype=float)
    sg_err = 0.0
    for _ in range(20):
        c = rng.normal(size=3) * [1, 0.1, 0.001]
        q = c[0] + c[1] * t + c[2] * t * t
        sg_err = max(sg_err, np.max(np.abs(savitzky_golay(Signal(q, 1.0), 5, 2).values - q)) / np.max(np.abs(q)))
    checks["savgol"] = sg_err <= 1e-9

    theta = np.linspace(0, 6 * np.pi, 300)
    a, b, c = (np.cos(theta - k * 2 * np.pi / 3) + 0.1 * rng.normal(size=300) for k in range(3))
    z = 7.5 * rng.normal(size=300)
    d0, q0 = park_transform(a, b, c, theta)
    d1, q1 = park_transform(a + z, b + z, c + z, theta)
    park_err = max(np.max(np.abs(d1 - d0)), np.max(np.abs(q1 - q0)))
    checks["park"] = park_err <= 1e-12

    mismatches = 0
    for _ in range(100):
        v = rng.normal(rng.normal(), rng.uniform(0.1, 3), size=int(rng.integers(4, 1024)))
        mismatches += bool(oracles.features_close(extract_features(v).values.tolist(), oracles.features(v.tolist())))
        sp = np.abs(v)
        got = extract_features(Spectrum(sp, 1.0, "FFT")).values.tolist()
        mismatches += bool(oracles.features_close(got, oracles.features(sp.tolist(), time_domain=False)))
    checks["24 features"] = mismatches == 0

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 30
    failed = [k for k, v in checks.items() if not v]
    _record(3, ok, f"numerics: FFT, Parseval (worst {worst:.1e}), Welch (mean {np.mean(integrals):.3f} vs {sigma**2:.3f}), "
                   f"SG (worst {sg_err:.1e}), Park (err {park_err:.1e}), 24 features x 200 signals "
                   f"({mismatches} mismatches), {elapsed:.1f} s (< 30 s)" + (f"; failed {failed}" if failed else ""))
    assert ok


# ---------------------------------------------------------------- 4


def test_4_optimized_beats_baseline(default_data):
    t0 = time.perf_counter()
    opt = {s.key: [] for s, _ in TRANSFER_SETTINGS}
    base = {s.key: [] for s, _ in TRANSFER_SETTINGS}
    monotone = True
    for seed in SEEDS:
        for src, _ in TRANSFER_SETTINGS:
            train, _ = holdout_split(default_data[src], 0.2, seed)
            o = optimize_source(train, EvolutionConfig(generations=20, pop_size=10, seed=seed))
            opt[src.key].append(o.selected.fitness.cv_accuracy)
            base[src.key].append(o.baseline_cv_accuracy)
            best = [h.best_err for h in o.result.history]
            monotone &= all(b <= a for a, b in zip(best, best[1:]))
    elapsed = time.perf_counter() - t0
    mo = {k: float(np.mean(v)) for k, v in opt.items()}
    mb = {k: float(np.mean(v)) for k, v in base.items()}
    geq = sum(mo[k] >= mb[k] for k in mo)
    gt = sum(mo[k] > mb[k] for k in mo)
    ok = geq >= 3 and gt >= 2 and elapsed <= 600 and monotone
    detail = ", ".join(f"{k} {mo[k]:.3f} vs {mb[k]:.3f}" for k in mo)
    _record(4, ok, f"optimized vs baseline source CV (mean of 3 seeds): {detail}; >= in {geq}/4, > in {gt}/4, "
                   f"{elapsed:.0f} s (<= 600 s)")
    assert ok


# ---------------------------------------------------------------- 5


def test_5_rsfr_shrinks_transfer_gap(default_data):
    t0 = time.perf_counter()
    impacts = {"Raw": [], "RSFR": []}
    for seed in SEEDS:
        for src, tgt in TRANSFER_SETTINGS:
            for method in impacts:
                plan = with_source_method(baseline_plan(), method)
                r = evaluate_transfer(plan, default_data[src], default_data[tgt], seed)
                impacts[method].append(abs(r.accuracy_impact))
    elapsed = time.perf_counter() - t0
    off, on = float(np.mean(impacts["Raw"])), float(np.mean(impacts["RSFR"]))
    ok = on < off and elapsed <= 600
    _record(5, ok, f"mean |accuracy impact| over 4 settings x 3 seeds: RSFR on {on:.3f} < off {off:.3f}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 6


def test_6_nsga2(small_data):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        pts = [tuple(p) for p in rng.integers(0, 10, size=(n, 2)).tolist()]
        got = [sorted(f) for f in non_dominated_sort(pts)]
        bad += got != [sorted(f) for f in oracles.non_dominated_fronts(pts)]
    cd = crowding_distance([(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)])
    crowd_ok = cd[1] == pytest.approx(2.0) and math.isinf(cd[0]) and math.isinf(cd[2])
    source = next(iter(small_data.values()))
    space = default_space().fixed({"c_50": "none"})
    monotone = True
    for seed in SEEDS:
        res = evolve(space, source, EvolutionConfig(generations=6, pop_size=6, seed=seed, n_folds=4, repeats=1))
        best = [h.best_err for h in res.history]
        monotone &= all(b <= a for a, b in zip(best, best[1:]))
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and crowd_ok and monotone and elapsed < 10
    _record(6, ok, f"NSGA-II: sort vs brute force on 1000 instances, {bad} mismatches; colinear crowding "
                   f"{cd[1]:.3f} (= 2); best error non-increasing on every run: {monotone}; {elapsed:.1f} s (< 10 s)")
    assert ok


# ---------------------------------------------------------------- 7 and 8


def _cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc")
    assert _cli("generate", "--set", f"io.data_dir={root / 'data'}") == 0
    return root


def test_7_leakage_freedom(generated, default_data):
    t0 = time.perf_counter()
    root = generated
    source = default_data[TRANSFER_SETTINGS[0][0]]
    _, holdout = holdout_split(source, 0.2, 0)
    held = sorted(holdout.serials())
    common = ["--set", f"eval.holdout_serials={json.dumps(held)}", "--set", "search.generations=10"]
    assert _cli("optimize", "--set", f"io.data_dir={root / 'data'}", "--out", root / "leak_a", *common) == 0
    stripped = root / "stripped"
    stripped.mkdir()
    keep = [s for s in source.serials() if s not in held]
    save_dataset(source.subset(keep, name=source.name), stripped / f"{source.records[0].condition.key}.ndjson")
    assert _cli("optimize", "--set", f"io.data_dir={stripped}", "--out", root / "leak_b", *common) == 0
    same = {n: (root / "leak_a" / n).read_bytes() == (root / "leak_b" / n).read_bytes()
            for n in ("artifact.json", "history.csv")}
    elapsed = time.perf_counter() - t0
    ok = all(same.values()) and elapsed < 300
    _record(7, ok, f"leakage: target files and holdout records deleted -> artifact identical {same['artifact.json']}, "
                   f"history identical {same['history.csv']}, {elapsed:.0f} s (< 300 s)")
    assert ok


def test_8_determinism_across_jobs(generated):
    t0 = time.perf_counter()
    root = generated
    data = ["--set", f"io.data_dir={root / 'data'}"]
    assert _cli("optimize", *data, "--jobs", 1, "--out", root / "det_1") == 0
    assert _cli("optimize", *data, "--jobs", 1, "--out", root / "det_1b") == 0
    assert _cli("optimize", *data, "--jobs", 2, "--out", root / "det_2") == 0
    same = all(
        (root / "det_1" / n).read_bytes() == (root / d / n).read_bytes()
        for d in ("det_1b", "det_2") for n in ("artifact.json", "history.csv")
    )
    elapsed = time.perf_counter() - t0
    ok = same and elapsed < 300
    _record(8, ok, f"determinism: optimize 20x10 twice with --jobs 1 and once with --jobs 2, byte-identical "
                   f"artifact and history: {same}, {elapsed:.0f} s (< 300 s)")
    assert ok


# ---------------------------------------------------------------- 9


def test_9_classifier_sanity(default_data):
    t0 = time.perf_counter()
    rep = compare_classifiers(default_data[TRANSFER_SETTINGS[0][0]], seed=0)
    acc = rep.accuracies
    elapsed = time.perf_counter() - t0
    ok = min(acc.values()) >= 0.80 and acc["GB"] >= 0.85 and elapsed <= 300
    detail = ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
    _record(9, ok, f"classifiers (holdout): {detail}; max diff {rep.max_diff:.3f}; {elapsed:.0f} s (<= 300 s)")
    assert ok
