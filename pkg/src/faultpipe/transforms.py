"""Stage A (data-source) and stage B (general) signal transformers.

Length-preserving transformers accept either a :class:`Signal` or a bare
array; arrays are processed along the last axis so that a stack of windows
can be transformed in one call.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from faultpipe.core import PhaseCurrentRecord


class TransformError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Signal:
    values: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise TransformError("a signal needs at least 2 samples")
        if not np.all(np.isfinite(v)):
            raise TransformError("signal contains NaN or Inf")
        if not self.sample_rate_hz > 0:
            raise TransformError("sample_rate_hz must be > 0")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "Signal":
        return Signal(values, self.sample_rate_hz)


def _signal_op(func):
    """Let an array kernel also accept and return a :class:`Signal`."""

    @functools.wraps(func)
    def wrapper(x, *args, **kwargs):
        if isinstance(x, Signal):
            return x.with_values(func(x.values, *args, **kwargs))
        return func(np.asarray(x, dtype=np.float64), *args, **kwargs)

    return wrapper


def notch_filter(x: Signal, f0_hz: float, q: float = 30.0) -> Signal:
    """Second-order IIR notch, started in steady state on the first sample."""
    fs = x.sample_rate_hz
    if not 0.0 < f0_hz < fs / 2.0:
        raise TransformError(f"notch frequency {f0_hz} Hz outside (0, {fs / 2} Hz)")
    if q <= 0:
        raise TransformError("q must be > 0")
    b, a = sps.iirnotch(f0_hz, q, fs=fs)
    zi = sps.lfilter_zi(b, a) * x.values[0]
    y, _ = sps.lfilter(b, a, x.values, zi=zi)
    return x.with_values(y)


@dataclass(frozen=True)
class RsfrParams:
    pseudo_shaft_freq_hz: float
    pole_pairs: int
    shaft_freq_hz: float

    def __post_init__(self) -> None:
        if not self.pseudo_shaft_freq_hz > 0:
            raise TransformError("pseudo_shaft_freq_hz must be > 0")
        if self.pole_pairs < 1:
            raise TransformError("pole_pairs must be >= 1")
        if not self.shaft_freq_hz > 0:
            raise TransformError("shaft_freq_hz must be > 0")

    @property
    def source_supply_hz(self) -> float:
        return self.shaft_freq_hz * self.pole_pairs

    @property
    def target_supply_hz(self) -> float:
        return self.pseudo_shaft_freq_hz * self.pole_pairs


def rsfr(x: Signal, p: RsfrParams) -> Signal:
    """Rotational shaft frequency resampling.

    The signal is cut into one support vector per electrical oscillation and
    every oscillation is linearly interpolated onto the number of samples an
    oscillation spans at the pseudo speed. With constant speed the boundaries
    line up, so the map is one piecewise-linear resampling by
    ``f_source / f_target``. The result is cropped, or edge-padded when the
    target is faster, to the input length.
    """
    fs = x.sample_rate_hz
    n = len(x)
    f_src = p.source_supply_hz
    f_tgt = p.target_supply_hz
    if f_tgt >= fs / 2.0:
        raise TransformError(f"pseudo supply frequency {f_tgt:g} Hz exceeds Nyquist ({fs / 2:g} Hz)")
    n_osc_src = n * f_src / fs
    if n_osc_src < 2.0:
        raise TransformError("rsfr needs at least two supply oscillations")
    if f_src == f_tgt:
        return x.with_values(x.values.copy())
    n_osc_tgt = n * f_tgt / fs
    # samples needed to hold n_osc_src oscillations at the pseudo speed
    n_interp = n * n_osc_src / n_osc_tgt
    pos = np.arange(n) * (n / n_interp)
    inside = pos <= n - 1
    y = np.empty(n)
    y[inside] = np.interp(pos[inside], np.arange(n), x.values)
    y[~inside] = x.values[-1]
    return x.with_values(y)


def park_transform(ia, ib, ic, theta) -> tuple:
    """Amplitude-invariant Park transform; returns ``(d, q)``."""
    sig = ia if isinstance(ia, Signal) else None
    a, b, c = (np.asarray(v.values if isinstance(v, Signal) else v, dtype=np.float64) for v in (ia, ib, ic))
    th = np.asarray(theta, dtype=np.float64)
    if not (a.shape == b.shape == c.shape == th.shape):
        raise TransformError("park_transform: phase and angle lengths differ")
    shift = 2.0 * np.pi / 3.0
    d = (2.0 / 3.0) * (a * np.cos(th) + b * np.cos(th - shift) + c * np.cos(th + shift))
    q = -(2.0 / 3.0) * (a * np.sin(th) + b * np.sin(th - shift) + c * np.sin(th + shift))
    if sig is not None:
        return sig.with_values(d), sig.with_values(q)
    return d, q


@_signal_op
def savitzky_golay(x: np.ndarray, window: int, poly_order: int) -> np.ndarray:
    if window % 2 == 0:
        raise TransformError("Savitzky-Golay window must be odd")
    if poly_order >= window:
        raise TransformError("poly_order must be smaller than the window")
    if x.shape[-1] < window:
        raise TransformError("signal shorter than the Savitzky-Golay window")
    return sps.savgol_filter(x, window, poly_order, axis=-1, mode="interp")


STAGE_A_METHODS = ("Raw", "Notch", "RSFR", "Park")


def stage_a_select(
    record: PhaseCurrentRecord,
    method: str,
    *,
    notch_hz: float = 16.6,
    pseudo_shaft_freq_hz: float | None = None,
    savgol: tuple[int, int] | None = None,
) -> Signal:
    """Apply the selected data-source transformer and return the working channel.

    Raw, Notch and RSFR act on phase 0; Park consumes all three phases and
    returns the d-axis current.
    """
    fs = record.sample_rate_hz
    base = Signal(record.channels[0], fs)
    if method == "Raw":
        out = base
    elif method == "Notch":
        out = notch_filter(base, notch_hz)
    elif method == "RSFR":
        if pseudo_shaft_freq_hz is None:
            raise TransformError("RSFR needs a pseudo shaft frequency")
        params = RsfrParams(pseudo_shaft_freq_hz, record.motor.pole_pairs, record.shaft_freq_hz)
        out = rsfr(base, params)
    elif method == "Park":
        if record.channels.shape[0] < 3:
            raise TransformError("Park transformation needs three phase channels")
        theta = 2.0 * np.pi * record.supply_freq_hz * np.arange(record.n_samples) / fs
        out, _ = park_transform(*(Signal(ch, fs) for ch in record.channels[:3]), theta)
    else:
        raise TransformError(f"unknown stage A method {method!r}")
    if savgol is not None:
        out = savitzky_golay(out, *savgol)
    return out


@dataclass(frozen=True)
class WindowingParams:
    window_len: int
    overlap: int = 0

    def __post_init__(self) -> None:
        if self.window_len < 2:
            raise TransformError("window_len must be >= 2")
        if not 0 <= self.overlap < self.window_len:
            raise TransformError("overlap must satisfy 0 <= overlap < window_len")

    @property
    def step(self) -> int:
        return self.window_len - self.overlap


@dataclass(frozen=True, eq=False)
class WindowSet:
    windows: np.ndarray  # (n_windows, window_len)
    offsets: np.ndarray
    sample_rate_hz: float
    origin: dict

    def __len__(self) -> int:
        return self.windows.shape[0]

    def signals(self) -> list[Signal]:
        return [Signal(w, self.sample_rate_hz) for w in self.windows]


def window_count(length: int, p: WindowingParams) -> int:
    if length < p.window_len:
        return 0
    return (length - p.window_len) // p.step + 1


def make_windows(x: Signal | np.ndarray, p: WindowingParams, origin: dict | None = None) -> WindowSet:
    """Chunk a signal into windows of ``window_len`` starting every ``window_len - overlap``."""
    values = x.values if isinstance(x, Signal) else np.ascontiguousarray(x, dtype=np.float64)
    fs = x.sample_rate_hz if isinstance(x, Signal) else 1.0
    n = values.shape[-1]
    if values.ndim != 1:
        raise TransformError("make_windows expects a one-dimensional signal")
    if n < p.window_len:
        raise TransformError(f"signal of length {n} is shorter than window {p.window_len}")
    step = p.step
    count = (n - p.window_len) // step + 1
    item = values.strides[0]
    view = np.lib.stride_tricks.as_strided(values, (count, p.window_len), (step * item, item), writeable=False)
    return WindowSet(view.copy(), np.arange(0, count * step, step), fs, dict(origin or {}))


@_signal_op
def normalize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    centered = x - mean
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, centered / safe, 0.0)


@_signal_op
def detrend(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    t = np.arange(n, dtype=np.float64)
    t -= t.mean()
    centered = x - x.mean(axis=-1, keepdims=True)
    slope = (centered @ t) / (t @ t)
    return centered - np.multiply.outer(slope, t)


@_signal_op
def analytic_envelope(x: np.ndarray) -> np.ndarray:
    return np.abs(sps.hilbert(x, axis=-1))


@_signal_op
def window_taper(x: np.ndarray) -> np.ndarray:
    return x * np.hanning(x.shape[-1])


__all__ = [
    "Signal",
    "TransformError",
    "RsfrParams",
    "WindowingParams",
    "WindowSet",
    "STAGE_A_METHODS",
    "notch_filter",
    "rsfr",
    "park_transform",
    "savitzky_golay",
    "stage_a_select",
    "make_windows",
    "window_count",
    "normalize",
    "detrend",
    "analytic_envelope",
    "window_taper",
]
