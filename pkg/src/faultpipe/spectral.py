"""Stage C: spectral representations, the 24-feature set, cleaning, scaling
and feature reduction."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from faultpipe.core import deal_serial_folds
from faultpipe.rng import derive_rng
from faultpipe.transforms import Signal

log = logging.getLogger(__name__)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    values: np.ndarray
    bin_hz: float
    kind: str  # "FFT" or "PSD"

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.values.shape[-1]) * self.bin_hz


def _fft_amplitude(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    amp = np.abs(np.fft.rfft(x, axis=-1)) / n
    if n % 2 == 0:
        amp[..., 1:-1] *= 2.0
    else:
        amp[..., 1:] *= 2.0
    return amp


def fft_magnitude(x: Signal) -> Spectrum:
    """One-sided amplitude spectrum: a bin-centred sine of amplitude A peaks at A."""
    if len(x) < 2:
        raise FeatureError("fft_magnitude needs at least 2 samples")
    return Spectrum(_fft_amplitude(x.values), x.sample_rate_hz / len(x), "FFT")


def spectrum_mean_square(s: Spectrum, n: int) -> float:
    """Mean square of the time signal recovered from an FFT amplitude spectrum."""
    a = s.values
    if n % 2 == 0:
        return float(a[0] ** 2 + np.sum(a[1:-1] ** 2) / 2.0 + a[-1] ** 2)
    return float(a[0] ** 2 + np.sum(a[1:] ** 2) / 2.0)


def _welch(x: np.ndarray, fs: float, seg_len: int | None, overlap: int | None):
    n = x.shape[-1]
    if seg_len is None:
        seg_len = min(1024, n)
    if overlap is None:
        overlap = seg_len // 2
    if not 2 <= seg_len <= n:
        raise FeatureError(f"seg_len must lie in [2, {n}], got {seg_len}")
    if not 0 <= overlap < seg_len:
        raise FeatureError("overlap must satisfy 0 <= overlap < seg_len")
    freqs, pxx = sps.welch(
        x, fs=fs, window="hann", nperseg=seg_len, noverlap=overlap,
        detrend=False, scaling="density", axis=-1,
    )
    return freqs[1] - freqs[0], pxx


def welch_psd(x: Signal, seg_len: int | None = None, overlap: int | None = None) -> Spectrum:
    """Welch average of Hann-windowed periodograms, density scaling."""
    bin_hz, pxx = _welch(x.values, x.sample_rate_hz, seg_len, overlap)
    return Spectrum(pxx, bin_hz, "PSD")


FEATURE_NAMES = (
    "mean", "median", "std", "variance", "rms", "min", "max", "peak_to_peak",
    "abs_mean", "skewness", "kurtosis", "crest_factor", "shape_factor",
    "impulse_factor", "margin_factor", "clearance_factor", "energy",
    "log_energy_entropy", "shannon_entropy", "zero_crossings", "slope", "iqr",
    "p05", "p95",
)
N_FEATURES = len(FEATURE_NAMES)
ENTROPY_BINS = 16


def _ratio(num: np.ndarray, den: np.ndarray, ok: np.ndarray) -> np.ndarray:
    ok = ok & (den != 0)
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def feature_block(x: np.ndarray, *, time_domain: bool = True) -> np.ndarray:
    """Compute the 24 features for every row of ``x`` (shape ``(rows, length)``).

    Ratio and shape features are 0 when their denominator vanishes or the row
    is constant. Zero crossings are only counted for time-domain rows.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rows, n = x.shape
    if n < 4:
        raise FeatureError("feature extraction needs at least 4 values")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    var = np.mean(centered**2, axis=1)
    std = np.sqrt(var)
    nonconst = var > 0
    absx = np.abs(x)
    sq = x * x
    ms = sq.mean(axis=1)
    rms = np.sqrt(ms)
    xmin = x.min(axis=1)
    xmax = x.max(axis=1)
    peak = absx.max(axis=1)
    abs_mean = absx.mean(axis=1)
    m3 = np.mean(centered**3, axis=1)
    m4 = np.mean(centered**4, axis=1)
    skew = _ratio(m3, var**1.5, nonconst)
    kurt = np.where(nonconst, _ratio(m4, var**2, nonconst) - 3.0, 0.0)
    sqrt_mean = np.sqrt(absx).mean(axis=1)

    energy = sq.sum(axis=1)
    with np.errstate(divide="ignore"):
        logsq = np.where(sq > 0, np.log(np.where(sq > 0, sq, 1.0)), 0.0)
    log_energy = logsq.sum(axis=1)

    lo = absx.min(axis=1)
    hi = absx.max(axis=1)
    span = hi - lo
    spread = span > 0
    scaled = (absx - lo[:, None]) / np.where(spread, span, 1.0)[:, None]
    idx = np.minimum((scaled * ENTROPY_BINS).astype(np.int64), ENTROPY_BINS - 1)
    counts = np.zeros((rows, ENTROPY_BINS))
    np.add.at(counts, (np.repeat(np.arange(rows), n), idx.ravel()), 1.0)
    p = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    entropy = np.where(spread, -plogp.sum(axis=1), 0.0)

    if time_domain:
        zc = np.count_nonzero(x[:, :-1] * x[:, 1:] < 0, axis=1).astype(np.float64)
    else:
        zc = np.zeros(rows)
    t = np.arange(n, dtype=np.float64)
    t -= t.mean()
    slope = (centered @ t) / (t @ t)
    p05, p25, p75, p95 = np.percentile(x, [5, 25, 75, 95], axis=1)

    cols = [
        mean, np.median(x, axis=1), std, var, rms, xmin, xmax, xmax - xmin,
        abs_mean, skew, kurt,
        _ratio(peak, rms, nonconst),
        _ratio(rms, abs_mean, nonconst),
        _ratio(peak, abs_mean, nonconst),
        _ratio(peak, abs_mean**2, nonconst),
        _ratio(peak, sqrt_mean**2, nonconst),
        energy, log_energy, entropy, zc, slope, p75 - p25, p05, p95,
    ]
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def extract_features(x: Signal | Spectrum | np.ndarray, prefix: str = "") -> FeatureVector:
    """The 24-feature vector of a time signal or spectrum."""
    time_domain = not isinstance(x, Spectrum)
    values = x.values if isinstance(x, (Signal, Spectrum)) else np.asarray(x, dtype=np.float64)
    if values.ndim != 1:
        raise FeatureError("extract_features expects a one-dimensional input")
    if values.size < 4:
        raise FeatureError("feature extraction needs at least 4 values")
    row = feature_block(values[None, :], time_domain=time_domain)[0]
    return FeatureVector(row, tuple(prefix + n for n in FEATURE_NAMES))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Windows x named features, with label, serial, condition and record of each row."""

    values: np.ndarray
    names: tuple[str, ...]
    labels: np.ndarray
    serials: np.ndarray
    conditions: np.ndarray
    record_ids: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise FeatureError("feature matrix must be two-dimensional")
        if v.shape[1] != len(self.names):
            raise FeatureError("column names do not match the matrix width")
        if len(set(self.names)) != len(self.names):
            raise FeatureError("feature names must be unique")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "serials", np.asarray(self.serials, dtype=object))
        object.__setattr__(self, "conditions", np.asarray(self.conditions, dtype=object))
        rid = np.arange(v.shape[0]) if self.record_ids is None else np.asarray(self.record_ids, dtype=np.int64)
        object.__setattr__(self, "record_ids", rid)
        n = v.shape[0]
        if not (len(self.labels) == len(self.serials) == len(self.conditions) == len(rid) == n):
            raise FeatureError("row metadata lengths do not match the matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            self.values[rows], self.names, self.labels[rows], self.serials[rows],
            self.conditions[rows], self.record_ids[rows],
        )

    def with_values(self, values: np.ndarray, names: Sequence[str]) -> "FeatureMatrix":
        return FeatureMatrix(values, tuple(names), self.labels, self.serials, self.conditions, self.record_ids)

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {n: i for i, n in enumerate(self.names)}
        try:
            cols = [index[n] for n in names]
        except KeyError as exc:
            raise FeatureError(f"missing feature column {exc.args[0]!r}") from None
        return self.with_values(self.values[:, cols], names)

    def rows_for_serials(self, serials) -> np.ndarray:
        return np.isin(self.serials, list(serials))

    def fingerprint(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.values).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.names, "label", "serial", "condition"])
            for i in range(len(self)):
                writer.writerow(
                    [*(repr(float(v)) for v in self.values[i]), int(self.labels[i]),
                     self.serials[i], self.conditions[i]]
                )


def _fingerprint(x: np.ndarray, y: np.ndarray | None = None) -> str:
    h = hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes())
    if y is not None:
        h.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FittedScaler:
    method: str
    offset: np.ndarray
    scale: np.ndarray
    fitted_on: str = ""

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"method": self.method, "offset": self.offset.tolist(),
                "scale": self.scale.tolist(), "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedScaler":
        return cls(d["method"], np.asarray(d["offset"], float), np.asarray(d["scale"], float), d["fitted_on"])


SCALING_METHODS = ("0...+1", "Standardized", "ZScore")


def fit_scaler(x: np.ndarray | FeatureMatrix, method: str) -> FittedScaler:
    """Learn per-column scaling on training rows.

    ``0...+1`` maps to [0, 1] (constant columns to 0.5), ``Standardized`` to
    mean 0 / std 1, ``ZScore`` is the robust median / interquartile variant.
    """
    values = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if method == "0...+1":
        lo = values.min(axis=0)
        span = values.max(axis=0) - lo
        const = span == 0
        offset = np.where(const, lo - 0.5, lo)
        scale = np.where(const, 1.0, span)
    elif method == "Standardized":
        offset = values.mean(axis=0)
        sd = values.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
    elif method == "ZScore":
        offset = np.median(values, axis=0)
        q75, q25 = np.percentile(values, [75, 25], axis=0)
        iqr = q75 - q25
        sd = values.std(axis=0)
        scale = np.where(iqr > 0, iqr, np.where(sd > 0, sd, 1.0))
    else:
        raise FeatureError(f"unknown scaling method {method!r}")
    return FittedScaler(method, offset, scale, _fingerprint(values))


@dataclass(frozen=True, eq=False)
class FittedReducer:
    """Column selection (``indices``) or linear projection (``components``)."""

    method: str
    names_in: tuple[str, ...]
    names_out: tuple[str, ...]
    indices: np.ndarray | None = None
    components: np.ndarray | None = None
    mean: np.ndarray | None = None
    fitted_on: str = ""
    degenerate: bool = False
    explained_variance_ratio: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.names_out)

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.components is not None:
            return (x - self.mean) @ self.components.T
        return x[:, self.indices]

    def transform_matrix(self, m: FeatureMatrix) -> FeatureMatrix:
        return m.with_values(self.transform(m.values), self.names_out)

    def to_dict(self) -> dict:
        out = {"method": self.method, "names_in": list(self.names_in),
               "names_out": list(self.names_out), "fitted_on": self.fitted_on,
               "degenerate": self.degenerate}
        if self.components is not None:
            out["components"] = self.components.tolist()
            out["mean"] = self.mean.tolist()
        else:
            out["indices"] = self.indices.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FittedReducer":
        comps = d.get("components")
        return cls(
            d["method"], tuple(d["names_in"]), tuple(d["names_out"]),
            indices=None if comps is not None else np.asarray(d["indices"], dtype=np.int64),
            components=None if comps is None else np.asarray(comps, float),
            mean=None if comps is None else np.asarray(d["mean"], float),
            fitted_on=d["fitted_on"], degenerate=d.get("degenerate", False),
        )


def drop_low_variance(m: FeatureMatrix, threshold: float = 1e-12) -> FittedReducer:
    """Drop columns whose training variance is <= ``threshold``; the highest-variance
    column always survives."""
    var = m.values.var(axis=0)
    keep = np.flatnonzero(var > threshold)
    degenerate = keep.size == 0
    if degenerate:
        keep = np.array([int(np.argmax(var))])
        log.warning("all feature columns below the variance threshold; keeping %s", m.names[keep[0]])
    return FittedReducer(
        "low_variance", m.names, tuple(m.names[i] for i in keep), indices=keep,
        fitted_on=m.fingerprint(), degenerate=degenerate,
    )


REDUCER_METHODS = ("PCA", "SFS", "UFS", "mRMR")
MRMR_BINS = 8


def anova_f_scores(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    classes = np.unique(y)
    n = x.shape[0]
    grand = x.mean(axis=0)
    between = np.zeros(x.shape[1])
    within = np.zeros(x.shape[1])
    for c in classes:
        xc = x[y == c]
        mu = xc.mean(axis=0)
        between += xc.shape[0] * (mu - grand) ** 2
        within += ((xc - mu) ** 2).sum(axis=0)
    df_b = len(classes) - 1
    df_w = n - len(classes)
    if df_b < 1 or df_w < 1:
        return np.zeros(x.shape[1])
    num = between / df_b
    den = within / df_w
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return f


def equal_frequency_bins(x: np.ndarray, n_bins: int = MRMR_BINS) -> np.ndarray:
    """Discretise each column into ``n_bins`` equal-frequency bins."""
    codes = np.empty(x.shape, dtype=np.int64)
    qs = np.arange(1, n_bins) / n_bins
    for j in range(x.shape[1]):
        edges = np.unique(np.quantile(x[:, j], qs))
        codes[:, j] = np.searchsorted(edges, x[:, j], side="right")
    return codes


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) of two discrete code vectors."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    nb = int(b.max()) + 1
    joint = np.bincount(a * nb + b, minlength=(int(a.max()) + 1) * nb).astype(np.float64)
    joint = joint.reshape(-1, nb) / a.size
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mrmr_order(x: np.ndarray, y: np.ndarray, k: int) -> list[int]:
    """Greedy max-relevance min-redundancy (difference form) on binned features."""
    codes = equal_frequency_bins(x)
    p = x.shape[1]
    relevance = np.array([mutual_information(codes[:, j], y) for j in range(p)])
    selected = [int(np.argmax(relevance))]
    redundancy = np.zeros(p)
    while len(selected) < k:
        last = selected[-1]
        for j in range(p):
            if j not in selected:
                redundancy[j] += mutual_information(codes[:, j], codes[:, last])
        score = relevance - redundancy / len(selected)
        score[selected] = -np.inf
        selected.append(int(np.argmax(score)))
    return selected


def _probe_folds(serials: np.ndarray, y: np.ndarray, seed: int, k_max: int = 3) -> list[np.ndarray]:
    serial_labels = {}
    for s, lab in zip(serials, y):
        serial_labels.setdefault(str(s), int(lab))
    per_class = {}
    for lab in serial_labels.values():
        per_class[lab] = per_class.get(lab, 0) + 1
    k = min([k_max, len(serial_labels)] + list(per_class.values()))
    if k < 2:
        return []
    folds = deal_serial_folds(serial_labels, k, derive_rng(seed, "sfs-probe"))
    fold_of_row = np.array([folds[str(s)] for s in serials])
    return [fold_of_row == f for f in range(k)]


def sfs_order(x: np.ndarray, y: np.ndarray, serials: np.ndarray, k: int, seed: int = 0) -> list[int]:
    """Greedy forward selection by grouped-CV accuracy of a logistic-regression probe."""
    from faultpipe.classifiers import ClassifierSpec, fit

    probe = ClassifierSpec("LogReg", {"l2": 1.0, "max_iter": 25})
    test_masks = _probe_folds(serials, y, seed)

    def score(cols: list[int]) -> float:
        xs = x[:, cols]
        if not test_masks:
            model = fit(probe, xs, y)
            return float(np.mean(model.predict(xs) == y))
        accs = []
        for test in test_masks:
            train = ~test
            if np.unique(y[train]).size < 2:
                continue
            model = fit(probe, xs[train], y[train])
            accs.append(np.mean(model.predict(xs[test]) == y[test]))
        return float(np.mean(accs)) if accs else 0.0

    selected: list[int] = []
    while len(selected) < k:
        best, best_j = -1.0, -1
        for j in range(x.shape[1]):
            if j in selected:
                continue
            s = score(selected + [j])
            if s > best:
                best, best_j = s, j
        selected.append(best_j)
    return selected


def fit_reducer(
    m: FeatureMatrix,
    method: str,
    k: int,
    seed: int = 0,
) -> FittedReducer:
    """Fit a dimensionality reducer on training rows only."""
    p = m.values.shape[1]
    if not 1 <= k <= min(p, 24):
        raise FeatureError(f"k={k} out of range for {p} columns")
    x = m.values
    y = m.labels
    if method == "PCA":
        mean = x.mean(axis=0)
        _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
        comps = vt[:k]
        # deterministic sign: largest-magnitude loading positive
        signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
        comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
        total = float(np.sum(s**2))
        evr = (s[:k] ** 2) / total if total > 0 else np.zeros(k)
        if comps.shape[0] < k:
            raise FeatureError("PCA: fewer training rows than components")
        return FittedReducer(
            "PCA", m.names, tuple(f"pc{i + 1}" for i in range(k)), components=comps,
            mean=mean, fitted_on=m.fingerprint(), explained_variance_ratio=evr,
        )
    if np.unique(y).size < 2:
        raise FeatureError(f"{method} needs both classes in the training rows")
    if method == "UFS":
        order = np.argsort(-anova_f_scores(x, y), kind="stable")[:k].tolist()
    elif method == "mRMR":
        order = mrmr_order(x, y, k)
    elif method == "SFS":
        order = sfs_order(x, y, m.serials, k, seed)
    else:
        raise FeatureError(f"unknown reducer {method!r}")
    idx = np.asarray(order, dtype=np.int64)
    return FittedReducer(method, m.names, tuple(m.names[i] for i in idx), indices=idx, fitted_on=m.fingerprint())
