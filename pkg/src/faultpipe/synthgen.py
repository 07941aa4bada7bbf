"""Synthetic PMSM phase currents for healthy and rough-bearing motors.

Each motor carries its own amplitude jitter, bearing geometry and damage
severity, so the serial number is a genuine grouping factor. Faulty motors add
bearing sidebands around the supply frequency and a lifted noise floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from faultpipe.core import (
    TABLE_CONDITIONS,
    Dataset,
    Label,
    MotorMetadata,
    PhaseCurrentRecord,
    WorkingCondition,
)
from faultpipe.rng import derive_rng

# Load couples into current magnitude with this slope per newton.
FORCE_SLOPE_PER_N = 1e-4


@dataclass(frozen=True)
class BearingGeometry:
    n_balls: int = 8
    ball_ratio: float = 0.3
    contact_cos: float = 1.0

    def __post_init__(self) -> None:
        if self.n_balls < 3:
            raise ValueError("n_balls must be >= 3")
        if not 0.0 < self.ball_ratio < 1.0:
            raise ValueError("ball_ratio must lie in (0, 1)")
        if not 0.0 < self.contact_cos <= 1.0:
            raise ValueError("contact_cos must lie in (0, 1]")


@dataclass(frozen=True)
class FaultProfile:
    severity: float = 0.0
    sideband_gain: float = 0.0
    roughness_gain: float = 0.0
    bearing_geometry: BearingGeometry = field(default_factory=BearingGeometry)

    def __post_init__(self) -> None:
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        if self.sideband_gain < 0 or self.roughness_gain < 0:
            raise ValueError("gains must be >= 0")


class BpfFrequencies(NamedTuple):
    bpfo: float
    bpfi: float


def bpf_frequencies(shaft_freq_hz: float, geometry: BearingGeometry) -> BpfFrequencies:
    """Outer- and inner-race ball pass frequencies from bearing kinematics."""
    half = geometry.n_balls / 2.0 * shaft_freq_hz
    k = geometry.ball_ratio * geometry.contact_cos
    return BpfFrequencies(bpfo=half * (1.0 - k), bpfi=half * (1.0 + k))


def supply_frequency(speed_rpm: float, pole_pairs: int) -> float:
    return speed_rpm / 60.0 * pole_pairs


@dataclass(frozen=True)
class SynthConfig:
    n_motors_per_class: int = 8
    conditions: tuple[WorkingCondition, ...] = TABLE_CONDITIONS
    record_len: int = 16384
    sample_rate_hz: float = 8192.0
    pole_pairs: int = 4
    n_channels: int = 3
    base_amplitude: float = 1.0
    amplitude_jitter: float = 0.15
    noise_sigma: float = 0.02
    sideband_gain: float = 0.1
    roughness_gain: float = 0.5
    severity_range: tuple[float, float] = (0.2, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "conditions",
            tuple(c if isinstance(c, WorkingCondition) else WorkingCondition(*c) for c in self.conditions),
        )
        if self.n_motors_per_class < 2:
            raise ValueError("n_motors_per_class must be >= 2")
        if not self.conditions:
            raise ValueError("at least one working condition is required")
        if self.record_len < 4:
            raise ValueError("record_len must be >= 4")
        if not 1 <= self.n_channels <= 3:
            raise ValueError("n_channels must be 1, 2 or 3")
        max_supply = max(supply_frequency(c.speed_rpm, self.pole_pairs) for c in self.conditions)
        if self.sample_rate_hz <= 10 * max_supply:
            raise ValueError("sample_rate_hz must exceed 10x the highest supply frequency")
        lo, hi = self.severity_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("severity_range must satisfy 0 <= lo <= hi <= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def supply_freq_fn(self, speed_rpm: float) -> float:
        return supply_frequency(speed_rpm, self.pole_pairs)


def motor_roster(cfg: SynthConfig) -> list[MotorMetadata]:
    """Serials for both classes, with labels shuffled over serial numbers."""
    n = cfg.n_motors_per_class
    labels = [Label.HEALTHY] * n + [Label.FAULTY] * n
    order = derive_rng(cfg.seed, "roster").permutation(2 * n)
    return [
        MotorMetadata(f"SN{1001 + i:04d}", cfg.pole_pairs, labels[j]) for i, j in enumerate(order)
    ]


def motor_fault_profile(motor: MotorMetadata, cfg: SynthConfig) -> FaultProfile:
    rng = derive_rng(cfg.seed, "motor-fault", motor.serial)
    geometry = BearingGeometry(
        n_balls=int(rng.integers(7, 11)),
        ball_ratio=float(rng.uniform(0.18, 0.32)),
        contact_cos=math.cos(math.radians(float(rng.uniform(0.0, 15.0)))),
    )
    if motor.label is Label.HEALTHY:
        return FaultProfile(0.0, cfg.sideband_gain, cfg.roughness_gain, geometry)
    lo, hi = cfg.severity_range
    return FaultProfile(float(rng.uniform(lo, hi)), cfg.sideband_gain, cfg.roughness_gain, geometry)


def _motor_amplitude(motor: MotorMetadata, cfg: SynthConfig) -> float:
    rng = derive_rng(cfg.seed, "motor-amplitude", motor.serial)
    return cfg.base_amplitude * (1.0 + cfg.amplitude_jitter * float(rng.uniform(-1.0, 1.0)))


def generate_record(
    motor: MotorMetadata,
    condition: WorkingCondition,
    fault: FaultProfile,
    cfg: SynthConfig,
    rng: np.random.Generator | None = None,
) -> PhaseCurrentRecord:
    if rng is None:
        rng = derive_rng(cfg.seed, "record", motor.serial, condition.key)
    fs = cfg.sample_rate_hz
    shaft_hz = condition.speed_rpm / 60.0
    f_e = supply_frequency(condition.speed_rpm, motor.pole_pairs)
    t = np.arange(cfg.record_len) / fs
    amp = _motor_amplitude(motor, cfg) * (1.0 + FORCE_SLOPE_PER_N * condition.radial_force_n)
    phase0 = float(rng.uniform(0.0, 2.0 * np.pi))

    bpfo = bpf_frequencies(shaft_hz, fault.bearing_geometry).bpfo
    side_amp = amp * fault.sideband_gain * fault.severity
    side_phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
    sigma = cfg.noise_sigma * (1.0 + fault.roughness_gain * fault.severity)

    channels = np.empty((cfg.n_channels, cfg.record_len))
    for ch in range(cfg.n_channels):
        shift = -2.0 * np.pi * ch / 3.0
        x = amp * np.sin(2.0 * np.pi * f_e * t + phase0 + shift)
        if side_amp > 0.0:
            for i, (k, sign) in enumerate(((1, -1), (1, 1), (2, -1), (2, 1))):
                f_side = f_e + sign * k * bpfo
                x += side_amp * np.sin(2.0 * np.pi * f_side * t + side_phases[i] + shift)
        if sigma > 0.0:
            x += rng.normal(0.0, sigma, size=cfg.record_len)
        channels[ch] = x
    return PhaseCurrentRecord(channels, fs, motor, condition, shaft_hz)


def generate_dataset(cfg: SynthConfig) -> dict[WorkingCondition, Dataset]:
    roster = motor_roster(cfg)
    profiles = {m.serial: motor_fault_profile(m, cfg) for m in roster}
    out = {}
    for cond in cfg.conditions:
        records = tuple(generate_record(m, cond, profiles[m.serial], cfg) for m in roster)
        out[cond] = Dataset(records, name=cond.key)
    return out
