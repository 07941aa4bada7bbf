"""Domain types, the NDJSON dataset format and serial-grouped splitting."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from faultpipe.rng import derive_rng


class DatasetError(ValueError):
    """Raised for malformed dataset files or records violating invariants."""


class Label(str, Enum):
    HEALTHY = "healthy"
    FAULTY = "faulty"

    @property
    def code(self) -> int:
        return 1 if self is Label.FAULTY else 0


@dataclass(frozen=True)
class WorkingCondition:
    speed_rpm: float
    radial_force_n: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.speed_rpm) and self.speed_rpm > 0):
            raise DatasetError(f"speed_rpm must be > 0, got {self.speed_rpm!r}")
        if not (math.isfinite(self.radial_force_n) and self.radial_force_n >= 0):
            raise DatasetError(f"radial_force_n must be >= 0, got {self.radial_force_n!r}")

    @property
    def key(self) -> str:
        return f"{self.speed_rpm:g}rpm_{self.radial_force_n:g}N"


@dataclass(frozen=True)
class MotorMetadata:
    serial: str
    pole_pairs: int
    label: Label

    def __post_init__(self) -> None:
        if not isinstance(self.serial, str) or not self.serial:
            raise DatasetError("serial must be a nonempty string")
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise DatasetError(f"pole_pairs must be an integer >= 1, got {self.pole_pairs!r}")
        object.__setattr__(self, "label", Label(self.label))


@dataclass(frozen=True, eq=False)
class PhaseCurrentRecord:
    """One labeled acquisition: ``channels`` has shape (n_phases, n_samples)."""

    channels: np.ndarray
    sample_rate_hz: float
    motor: MotorMetadata
    condition: WorkingCondition
    shaft_freq_hz: float

    def __post_init__(self) -> None:
        ch = np.array(self.channels, dtype=np.float64, ndmin=2, copy=True)
        if ch.ndim != 2 or not 1 <= ch.shape[0] <= 3:
            raise DatasetError("channels: expected 1 to 3 equal-length sequences")
        if ch.shape[1] < 2:
            raise DatasetError("channels: each channel needs at least 2 samples")
        if not np.all(np.isfinite(ch)):
            raise DatasetError("channels: NaN or Inf sample")
        if not (math.isfinite(self.shaft_freq_hz) and self.shaft_freq_hz > 0):
            raise DatasetError("shaft_freq_hz must be > 0")
        if not (math.isfinite(self.sample_rate_hz) and self.sample_rate_hz > 2 * self.shaft_freq_hz):
            raise DatasetError("sample_rate_hz must exceed 2 * shaft_freq_hz")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def supply_freq_hz(self) -> float:
        """Electrical supply frequency of the drive."""
        return self.shaft_freq_hz * self.motor.pole_pairs

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhaseCurrentRecord):
            return NotImplemented
        return (
            self.motor == other.motor
            and self.condition == other.condition
            and self.sample_rate_hz == other.sample_rate_hz
            and self.shaft_freq_hz == other.shaft_freq_hz
            and self.channels.shape == other.channels.shape
            and bool(np.array_equal(self.channels, other.channels))
        )

    def to_json(self) -> dict:
        return {
            "serial": self.motor.serial,
            "pole_pairs": int(self.motor.pole_pairs),
            "label": self.motor.label.value,
            "speed_rpm": self.condition.speed_rpm,
            "radial_force_n": self.condition.radial_force_n,
            "shaft_freq_hz": self.shaft_freq_hz,
            "sample_rate_hz": self.sample_rate_hz,
            "channels": self.channels.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PhaseCurrentRecord":
        motor = MotorMetadata(str(obj["serial"]), int(obj["pole_pairs"]), Label(obj["label"]))
        cond = WorkingCondition(float(obj["speed_rpm"]), float(obj["radial_force_n"]))
        return cls(
            channels=np.asarray(obj["channels"], dtype=np.float64),
            sample_rate_hz=float(obj["sample_rate_hz"]),
            motor=motor,
            condition=cond,
            shaft_freq_hz=float(obj["shaft_freq_hz"]),
        )


@dataclass(frozen=True)
class Dataset:
    records: tuple[PhaseCurrentRecord, ...]
    name: str = "dataset"

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        labels: dict[str, Label] = {}
        for i, rec in enumerate(self.records):
            prev = labels.setdefault(rec.motor.serial, rec.motor.label)
            if prev is not rec.motor.label:
                raise DatasetError(
                    f"record {i}: serial {rec.motor.serial!r} carries conflicting labels"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def serials(self) -> list[str]:
        """Distinct serials in first-appearance order."""
        return list(dict.fromkeys(r.motor.serial for r in self.records))

    def serial_labels(self) -> dict[str, Label]:
        return {r.motor.serial: r.motor.label for r in self.records}

    def subset(self, serials: Iterable[str], name: str | None = None) -> "Dataset":
        keep = set(serials)
        return Dataset(
            tuple(r for r in self.records if r.motor.serial in keep),
            name if name is not None else self.name,
        )

    @property
    def n_channels(self) -> int:
        return min((r.channels.shape[0] for r in self.records), default=0)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for rec in self.records:
            meta = rec.to_json()
            meta.pop("channels")
            h.update(json.dumps(meta, sort_keys=True).encode())
            h.update(np.ascontiguousarray(rec.channels, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def load_dataset(path: str | Path, *, allow_empty: bool = False) -> Dataset:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: parse error: {exc.msg}") from exc
            try:
                records.append(PhaseCurrentRecord.from_json(obj))
            except KeyError as exc:
                raise DatasetError(
                    f"{path}:{lineno}: record {len(records)}: missing field {exc.args[0]!r}"
                ) from exc
            except (DatasetError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: record {len(records)}: {exc}") from exc
    if not records and not allow_empty:
        raise DatasetError(f"{path}: empty dataset")
    return Dataset(tuple(records), name=path.stem)


def save_dataset(d: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in d.records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")))
            fh.write("\n")


@dataclass(frozen=True)
class GroupedSplit:
    """Assignment of every motor serial to one of ``k`` folds."""

    fold_assignments: dict[str, int]
    k: int
    repeat_seed: int
    repeat: int = 0

    def test_serials(self, fold: int) -> list[str]:
        return [s for s, f in self.fold_assignments.items() if f == fold]

    def train_serials(self, fold: int) -> list[str]:
        return [s for s, f in self.fold_assignments.items() if f != fold]

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.fold_assignments.values():
            sizes[f] += 1
        return sizes

    def to_json(self) -> str:
        return json.dumps(self.fold_assignments, sort_keys=True)


def deal_serial_folds(serial_labels: dict[str, object], k: int, rng: np.random.Generator) -> dict[str, int]:
    """Shuffle the serials of each class and deal them round-robin onto ``k`` folds.

    The dealing pointer carries over between classes, so fold sizes differ by
    at most one and each fold sees both classes whenever counts allow.
    """
    by_class: dict[str, list[str]] = {}
    for serial, label in serial_labels.items():
        by_class.setdefault(str(getattr(label, "value", label)), []).append(serial)
    assignment: dict[str, int] = {}
    pointer = 0
    for label in sorted(by_class):
        serials = sorted(by_class[label])
        for idx in rng.permutation(len(serials)):
            assignment[serials[idx]] = pointer % k
            pointer += 1
    return {s: assignment[s] for s in sorted(assignment)}


def make_grouped_folds(d: Dataset, k: int, repeats: int, seed: int) -> list[GroupedSplit]:
    """Class-stratified folds over motor serials, one split per repeat."""
    if k < 2:
        raise DatasetError("k must be >= 2")
    serial_labels = d.serial_labels()
    counts: dict[Label, int] = {}
    for label in serial_labels.values():
        counts[label] = counts.get(label, 0) + 1
    if len(serial_labels) < k:
        raise DatasetError(f"too few serials: {len(serial_labels)} distinct serials for k={k}")
    if len(counts) < 2:
        raise DatasetError("single-class dataset: grouped CV needs both classes")
    for label, n in counts.items():
        if n < k:
            raise DatasetError(f"too few serials: class {label.value} has {n} < k={k}")
    return [
        GroupedSplit(deal_serial_folds(serial_labels, k, derive_rng(seed, "grouped-folds", r)), k, seed, r)
        for r in range(repeats)
    ]


TABLE_CONDITIONS = (
    WorkingCondition(250.0, 0.0),
    WorkingCondition(250.0, 1000.0),
    WorkingCondition(2000.0, 0.0),
    WorkingCondition(2000.0, 1000.0),
)

# (source, target) pairs of the four transfer settings
TRANSFER_SETTINGS = (
    (TABLE_CONDITIONS[0], TABLE_CONDITIONS[3]),
    (TABLE_CONDITIONS[1], TABLE_CONDITIONS[2]),
    (TABLE_CONDITIONS[2], TABLE_CONDITIONS[1]),
    (TABLE_CONDITIONS[3], TABLE_CONDITIONS[0]),
)
