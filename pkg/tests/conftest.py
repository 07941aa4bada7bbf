from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from faultpipe.core import Dataset, Label, MotorMetadata, PhaseCurrentRecord, WorkingCondition
from faultpipe.synthgen import SynthConfig, generate_dataset

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


SMALL = SynthConfig(n_motors_per_class=4, record_len=4096, seed=3)


@pytest.fixture(scope="session")
def small_data() -> dict[WorkingCondition, Dataset]:
    """Four conditions, 8 motors, 4096 samples per record."""
    return generate_dataset(SMALL)


@pytest.fixture(scope="session")
def default_data() -> dict[WorkingCondition, Dataset]:
    return generate_dataset(SynthConfig())


def make_record(serial: str, label: Label, values, *, fs: float = 1000.0, speed: float = 600.0,
                force: float = 0.0, pole_pairs: int = 2) -> PhaseCurrentRecord:
    return PhaseCurrentRecord(
        np.atleast_2d(np.asarray(values, dtype=float)), fs,
        MotorMetadata(serial, pole_pairs, label), WorkingCondition(speed, force), speed / 60.0,
    )


def noise_dataset(n_per_class: int, n_samples: int, seed: int, *, channels: int = 1) -> Dataset:
    """Pure noise records with labels unrelated to the signal."""
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(2 * n_per_class):
        label = Label.FAULTY if i % 2 else Label.HEALTHY
        recs.append(make_record(f"N{i:03d}", label, rng.normal(size=(channels, n_samples))))
    return Dataset(tuple(recs), "noise")
