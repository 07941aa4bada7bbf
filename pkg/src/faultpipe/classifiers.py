"""Stage D: from-scratch binary classifiers behind one fit/predict contract."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

from faultpipe import kernels
from faultpipe.rng import derive_rng


class ClassifierError(ValueError):
    pass


ALGORITHMS = ("GB", "RF", "ETC", "LogReg", "kNN")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "GB": {"n_estimators": 100, "max_leaves": 8, "learning_rate": 0.1, "min_child_weight": 1},
    "RF": {"n_trees": 25, "max_depth": None, "min_samples_leaf": 1},
    "ETC": {"n_trees": 25, "max_depth": None, "min_samples_leaf": 1},
    "LogReg": {"l2": 1.0, "max_iter": 50},
    "kNN": {"k": 5, "metric": "euclidean"},
}
KNN_METRICS = ("euclidean", "manhattan")


@dataclass(frozen=True)
class ClassifierSpec:
    algorithm: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ClassifierError(f"unknown algorithm {self.algorithm!r}")
        allowed = DEFAULT_PARAMS[self.algorithm]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ClassifierError(f"{self.algorithm}: unknown hyperparameters {sorted(unknown)}")
        merged = {**allowed, **self.params}
        _validate(self.algorithm, merged)
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        return cls(d["algorithm"], d.get("params", {}))


def _validate(algo: str, p: dict) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ClassifierError(f"{algo}: {msg}")

    if algo == "GB":
        need(int(p["n_estimators"]) >= 1, "n_estimators must be >= 1")
        need(int(p["max_leaves"]) >= 1, "max_leaves must be >= 1")
        need(float(p["learning_rate"]) > 0, "learning_rate must be > 0")
        need(float(p["min_child_weight"]) >= 1, "min_child_weight must be >= 1")
    elif algo in ("RF", "ETC"):
        need(int(p["n_trees"]) >= 1, "n_trees must be >= 1")
        need(p["max_depth"] is None or int(p["max_depth"]) >= 1, "max_depth must be >= 1 or None")
        need(int(p["min_samples_leaf"]) >= 1, "min_samples_leaf must be >= 1")
    elif algo == "LogReg":
        need(float(p["l2"]) >= 0, "l2 must be >= 0")
        need(int(p["max_iter"]) >= 1, "max_iter must be >= 1")
    elif algo == "kNN":
        need(int(p["k"]) >= 1, "k must be >= 1")
        need(p["metric"] in KNN_METRICS, f"metric must be one of {KNN_METRICS}")


def _prepare(x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ClassifierError("expected a 2-D matrix with one label per row")
    if x.shape[0] == 0:
        raise ClassifierError("empty training set")
    if not np.all(np.isfinite(x)):
        raise ClassifierError("NaN or Inf in training features")
    classes = np.unique(y)
    if classes.size < 2:
        raise ClassifierError("single-class training set")
    if classes.size > 2:
        raise ClassifierError("only binary classification is supported")
    return x, (y == classes[1]).astype(np.float64), classes


def _fingerprint(x: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256(x.tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def _sorted_index(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T, dtype=np.int32)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[kernels.apply_tree(x, self.feature, self.threshold, self.left, self.right)]

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], np.int32), np.asarray(d["threshold"], float),
            np.asarray(d["left"], np.int32), np.asarray(d["right"], np.int32),
            np.asarray(d["value"], float),
        )


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A trained classifier. ``params`` holds the learned state."""

    spec: ClassifierSpec
    classes: np.ndarray
    feature_names: tuple[str, ...] | None
    params: dict
    fingerprint: str

    def _matrix(self, rows) -> np.ndarray:
        from faultpipe.spectral import FeatureMatrix

        if isinstance(rows, FeatureMatrix):
            if self.feature_names is not None:
                rows = rows.select(self.feature_names)
            x = rows.values
        else:
            x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2:
            raise ClassifierError("expected a 2-D matrix")
        width = self._width()
        if width is not None and x.shape[1] != width:
            raise ClassifierError(f"expected {width} feature columns, got {x.shape[1]}")
        return x

    def _width(self) -> int | None:
        return None if self.feature_names is None else len(self.feature_names)

    def predict_score(self, rows) -> np.ndarray:
        """Probability-like score of the second class, in [0, 1]."""
        x = self._matrix(rows)
        if x.shape[0] == 0:
            return np.zeros(0)
        return _SCORERS[self.spec.algorithm](self, x)

    def predict(self, rows) -> np.ndarray:
        x = self._matrix(rows)
        if x.shape[0] == 0:
            return self.classes[:0]
        if self.spec.algorithm == "kNN":
            positive = _knn_vote(self, x)[1]
        else:
            positive = _SCORERS[self.spec.algorithm](self, x) > 0.5
        return self.classes[positive.astype(np.int64)]

    def margin(self, rows) -> np.ndarray:
        if self.spec.algorithm != "GB":
            raise ClassifierError("margin is defined for gradient boosting only")
        return _gb_margin(self, self._matrix(rows))

    def to_dict(self) -> dict:
        state = {}
        for k, v in self.params.items():
            if k == "trees":
                state[k] = [t.to_dict() for t in v]
            elif isinstance(v, np.ndarray):
                state[k] = v.tolist()
            else:
                state[k] = v
        return {
            "spec": self.spec.to_dict(),
            "classes": self.classes.tolist(),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "state": state,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        spec = ClassifierSpec.from_dict(d["spec"])
        state = dict(d["state"])
        if "trees" in state:
            state["trees"] = [Tree.from_dict(t) for t in state["trees"]]
        for k in ("weights", "x", "y"):
            if k in state:
                state[k] = np.asarray(state[k], dtype=np.float64)
        names = d.get("feature_names")
        return cls(spec, np.asarray(d["classes"]), None if names is None else tuple(names), state, d["fingerprint"])


def _log_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # log(1 + e^m) - y m, computed stably
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def _fit_gb(x, y, p, seed):
    n = x.shape[0]
    rounds = int(p["n_estimators"])
    lr = float(p["learning_rate"])
    max_leaves = int(p["max_leaves"])
    min_child = int(math.ceil(float(p["min_child_weight"])))
    prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    base = math.log(prior / (1.0 - prior))
    margin = np.full(n, base)
    order = _sorted_index(x)
    sorted_vals = np.take_along_axis(x.T, order, axis=1)
    no_uniforms = np.zeros(1)
    trees = []
    for _ in range(rounds):
        prob = expit(margin)
        grad = y - prob
        hess = prob * (1.0 - prob)
        feat, thr, left, right, leaf = kernels.grow_tree(
            x, grad, order, min_child, max_leaves, 0, 0, False, no_uniforms, sorted_vals
        )
        g_sum = np.bincount(leaf, weights=grad, minlength=feat.size)
        h_sum = np.bincount(leaf, weights=hess, minlength=feat.size)
        value = lr * g_sum / np.maximum(h_sum, 1e-12)
        trees.append(Tree(feat, thr, left, right, value))
        margin = margin + value[leaf]
    return {"base_margin": base, "trees": trees}


def staged_log_loss(model: FittedModel, x, labels) -> np.ndarray:
    """Mean log-loss of a GB model after 0, 1, ..., n_estimators rounds."""
    if model.spec.algorithm != "GB":
        raise ClassifierError("staged_log_loss is defined for gradient boosting only")
    x = model._matrix(x)
    y = (np.asarray(labels) == model.classes[1]).astype(np.float64)
    margin = np.full(x.shape[0], model.params["base_margin"])
    out = [_log_loss(y, margin)]
    for tree in model.params["trees"]:
        margin = margin + tree.predict(x)
        out.append(_log_loss(y, margin))
    return np.asarray(out)


def _gb_margin(model: FittedModel, x: np.ndarray) -> np.ndarray:
    margin = np.full(x.shape[0], model.params["base_margin"])
    for tree in model.params["trees"]:
        margin += tree.predict(x)
    return margin


def _fit_forest(x, y, p, seed, randomized: bool):
    n, n_feat = x.shape
    n_trees = int(p["n_trees"])
    depth = 0 if p["max_depth"] is None else int(p["max_depth"])
    min_leaf = int(p["min_samples_leaf"])
    mtry = max(1, int(math.isqrt(n_feat)))
    rng = derive_rng(seed, "ETC" if randomized else "RF")
    # a single tree sees all rows so it can interpolate the training set
    bootstrap = n_trees > 1 and not randomized
    shared_order = None if bootstrap else _sorted_index(x)
    trees = []
    for _ in range(n_trees):
        if bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            xb, yb, order = x[rows], y[rows], None
        else:
            xb, yb, order = x, y, shared_order
        if order is None:
            order = _sorted_index(xb)
        uniforms = rng.random(4096)
        feat, thr, left, right, leaf = kernels.grow_tree(
            xb, yb, order, min_leaf, 0, depth, mtry, randomized, uniforms
        )
        counts = np.bincount(leaf, minlength=feat.size)
        sums = np.bincount(leaf, weights=yb, minlength=feat.size)
        value = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        trees.append(Tree(feat, thr, left, right, value))
    return {"trees": trees}


def _forest_score(model: FittedModel, x: np.ndarray) -> np.ndarray:
    trees = model.params["trees"]
    return sum(t.predict(x) for t in trees) / len(trees)


def _fit_logreg(x, y, p, seed):
    """L2-penalised logistic regression by Newton iterations (intercept unpenalised)."""
    n, d = x.shape
    xa = np.hstack([np.ones((n, 1)), x])
    w = np.zeros(d + 1)
    penalty = np.full(d + 1, float(p["l2"]))
    penalty[0] = 0.0
    ridge = np.full(d + 1, 1e-8)
    for _ in range(int(p["max_iter"])):
        prob = expit(xa @ w)
        grad = xa.T @ (prob - y) + penalty * w
        hess = (xa * (prob * (1.0 - prob))[:, None]).T @ xa + np.diag(penalty + ridge)
        step = np.linalg.solve(hess, grad)
        w = w - step
        if np.max(np.abs(step)) < 1e-10:
            break
    return {"weights": w}


def _logreg_score(model: FittedModel, x: np.ndarray) -> np.ndarray:
    w = model.params["weights"]
    return expit(w[0] + x @ w[1:])


def _fit_knn(x, y, p, seed):
    return {"x": x.copy(), "y": y.copy()}


def _knn_vote(model: FittedModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (fraction of positive neighbours, positive decision)."""
    train = model.params["x"]
    ty = model.params["y"]
    k = min(int(model.spec.params["k"]), train.shape[0])
    if model.spec.params["metric"] == "manhattan":
        dist = np.abs(x[:, None, :] - train[None, :, :]).sum(axis=2)
    else:
        dist = np.sqrt(np.maximum(
            (x * x).sum(1)[:, None] - 2.0 * x @ train.T + (train * train).sum(1)[None, :], 0.0
        ))
    nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
    nd = np.take_along_axis(dist, nn, axis=1)
    pos = ty[nn]
    frac = pos.mean(axis=1)
    decision = frac > 0.5
    tie = frac == 0.5
    if tie.any():
        with np.errstate(invalid="ignore"):
            d_pos = (nd * pos).sum(1) / np.maximum(pos.sum(1), 1)
            d_neg = (nd * (1 - pos)).sum(1) / np.maximum((1 - pos).sum(1), 1)
        decision = np.where(tie, d_pos < d_neg, decision)
    return frac, decision


def _knn_score(model: FittedModel, x: np.ndarray) -> np.ndarray:
    return _knn_vote(model, x)[0]


_FITTERS = {
    "GB": _fit_gb,
    "RF": lambda x, y, p, s: _fit_forest(x, y, p, s, randomized=False),
    "ETC": lambda x, y, p, s: _fit_forest(x, y, p, s, randomized=True),
    "LogReg": _fit_logreg,
    "kNN": _fit_knn,
}
_SCORERS = {
    "GB": lambda m, x: expit(_gb_margin(m, x)),
    "RF": _forest_score,
    "ETC": _forest_score,
    "LogReg": _logreg_score,
    "kNN": _knn_score,
}


def fit(spec: ClassifierSpec, data, labels=None, seed: int = 0) -> FittedModel:
    """Train ``spec`` on a FeatureMatrix (or on a matrix plus ``labels``)."""
    from faultpipe.spectral import FeatureMatrix

    if isinstance(data, FeatureMatrix):
        x, y_raw, names = data.values, data.labels, data.names
    else:
        if labels is None:
            raise ClassifierError("labels are required for a bare matrix")
        x, y_raw, names = data, labels, None
    x, y, classes = _prepare(x, y_raw)
    state = _FITTERS[spec.algorithm](x, y, spec.params, seed)
    return FittedModel(spec, classes, names, state, _fingerprint(x, y))
