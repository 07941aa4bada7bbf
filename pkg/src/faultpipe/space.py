"""Search space, chromosome codec and the decoded pipeline plan.

A chromosome holds one value per gene. Decoding is total: combinations the
data cannot support are repaired and the repair is noted on the plan.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from faultpipe.classifiers import ALGORITHMS, ClassifierSpec

SPACE_VERSION = "1"


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class GeneSpec:
    id: str
    domain: tuple
    stage: str
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", tuple(self.domain))
        if not self.domain:
            raise SpaceError(f"gene {self.id}: empty domain")
        if self.stage not in ("A", "B", "C", "D"):
            raise SpaceError(f"gene {self.id}: stage must be one of A-D")
        if len({json.dumps(v) for v in self.domain}) != len(self.domain):
            raise SpaceError(f"gene {self.id}: duplicate domain values")

    def index(self, value: Any) -> int:
        for i, v in enumerate(self.domain):
            # keep True apart from 1 and None apart from everything
            if isinstance(v, bool) != isinstance(value, bool) or (v is None) != (value is None):
                continue
            if v == value:
                return i
        raise SpaceError(f"gene {self.id}: value {value!r} not in domain {self.domain}")

    def to_dict(self) -> dict:
        return {"id": self.id, "domain": list(self.domain), "stage": self.stage, "description": self.description}


def _g(id_, domain, stage, description):
    return GeneSpec(id_, tuple(domain), stage, description)


# Every gene the decoder understands, with its full domain.
GENE_LIBRARY: dict[str, GeneSpec] = {
    g.id: g
    for g in (
        _g("a_10", (16.6, 133.3), "A", "notch frequency [Hz]"),
        _g("a_20", (118.0,), "A", "pseudo shaft speed"),
        _g("a_40", ("Raw", "Notch", "RSFR", "Park"), "A", "data-source transformer"),
        _g("a_5", (False, True), "A", "Savitzky-Golay active"),
        _g("a_50", (5,), "A", "Savitzky-Golay window"),
        _g("a_51", (2, 3), "A", "Savitzky-Golay polynomial order"),
        _g("b_10", (1024, 2048), "B", "window size"),
        _g("b_11", (0,), "B", "window overlap"),
        _g("b_2", (False, True), "B", "normalization active"),
        _g("b_3", (False, True), "B", "detrend active"),
        _g("b_4", (False, True), "B", "analytic envelope active"),
        _g("b_5", (False, True), "B", "Hann taper active"),
        _g("c_10", ("FFT", "PSD"), "C", "spectral representation"),
        _g("c_20", (False, True), "C", "time-domain features active"),
        _g("c_3", (False, True), "C", "low-variance cleaning active"),
        _g("c_40", ("0...+1", "Standardized", "ZScore"), "C", "scaling method"),
        _g("c_50", ("none", "PCA", "UFS", "mRMR", "SFS"), "C", "feature reducer"),
        _g("c_51", tuple(range(2, 25)), "C", "reducer output size"),
        _g("d_00", ALGORITHMS, "D", "classifier"),
        _g("d_10", (100,), "D", "GB estimators"),
        _g("d_11", tuple(range(1, 11)), "D", "GB max leaves per tree"),
        _g("d_12", (1e-3, 1e-2, 1e-1, 0.5, 1.0), "D", "GB learning rate"),
        _g("d_13", tuple(range(1, 21)), "D", "GB min samples per child"),
        _g("d_20", (10, 25, 50), "D", "forest size"),
        _g("d_21", (2, 4, 8, None), "D", "forest max depth"),
        _g("d_22", (1, 2, 5, 10), "D", "forest min samples per leaf"),
        _g("d_30", (0.01, 0.1, 1.0, 10.0), "D", "logistic L2 strength"),
        _g("d_31", (25, 50, 100), "D", "logistic max iterations"),
        _g("d_40", (1, 3, 5, 7, 9, 15), "D", "neighbours"),
        _g("d_41", ("euclidean", "manhattan"), "D", "distance metric"),
    )
}

# classifier hyperparameter genes: gene id -> (algorithms, parameter name)
CLASSIFIER_GENES: dict[str, tuple[tuple[str, ...], str]] = {
    "d_10": (("GB",), "n_estimators"),
    "d_11": (("GB",), "max_leaves"),
    "d_12": (("GB",), "learning_rate"),
    "d_13": (("GB",), "min_child_weight"),
    "d_20": (("RF", "ETC"), "n_trees"),
    "d_21": (("RF", "ETC"), "max_depth"),
    "d_22": (("RF", "ETC"), "min_samples_leaf"),
    "d_30": (("LogReg",), "l2"),
    "d_31": (("LogReg",), "max_iter"),
    "d_40": (("kNN",), "k"),
    "d_41": (("kNN",), "metric"),
}

# the default evolution domain; SFS and non-GB classifiers are opt-in
DEFAULT_DOMAINS: dict[str, tuple] = {
    "c_50": ("none", "PCA", "UFS", "mRMR"),
    "d_00": ("GB",),
}
DEFAULT_GENE_ORDER = (
    "a_10", "a_20", "a_40", "a_5", "a_50", "a_51",
    "b_10", "b_11", "b_2", "b_3", "b_4", "b_5",
    "c_10", "c_20", "c_3", "c_40", "c_50", "c_51",
    "d_00", "d_10", "d_11", "d_12", "d_13",
)


@dataclass(frozen=True)
class Chromosome:
    values: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def to_list(self) -> list:
        return list(self.values)


@dataclass(frozen=True)
class SearchSpace:
    genes: tuple[GeneSpec, ...]
    version: str = SPACE_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "genes", tuple(self.genes))
        ids = [g.id for g in self.genes]
        if len(set(ids)) != len(ids):
            raise SpaceError("gene ids must be unique")
        unknown = [i for i in ids if i not in GENE_LIBRARY]
        if unknown:
            raise SpaceError(f"unknown genes {unknown}")
        for g in self.genes:
            for v in g.domain:
                GENE_LIBRARY[g.id].index(v)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.genes)

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    def gene(self, gene_id: str) -> GeneSpec:
        for g in self.genes:
            if g.id == gene_id:
                return g
        raise SpaceError(f"gene {gene_id!r} not in the search space")

    def size(self) -> int:
        return int(np.prod([len(g.domain) for g in self.genes], dtype=object))

    def validate(self, c: Chromosome) -> None:
        if len(c) != self.n_genes:
            raise SpaceError(f"chromosome has {len(c)} genes, space has {self.n_genes}")
        for g, v in zip(self.genes, c.values):
            g.index(v)

    def indices(self, c: Chromosome) -> tuple[int, ...]:
        return tuple(g.index(v) for g, v in zip(self.genes, c.values))

    def from_indices(self, idx: Sequence[int]) -> Chromosome:
        return Chromosome(tuple(g.domain[int(i)] for g, i in zip(self.genes, idx)))

    def random_chromosome(self, rng: np.random.Generator) -> Chromosome:
        return self.from_indices([rng.integers(len(g.domain)) for g in self.genes])

    def as_mapping(self, c: Chromosome) -> dict[str, Any]:
        return dict(zip(self.ids, c.values))

    def with_domains(self, overrides: Mapping[str, Iterable]) -> "SearchSpace":
        """Replace the domains of listed genes, adding genes not yet present."""
        genes = list(self.genes)
        ids = [g.id for g in genes]
        for gid, dom in overrides.items():
            if gid not in GENE_LIBRARY:
                raise SpaceError(f"unknown gene {gid!r}")
            new = replace(GENE_LIBRARY[gid], domain=tuple(dom))
            if gid in ids:
                genes[ids.index(gid)] = new
            else:
                genes.append(new)
                ids.append(gid)
        return SearchSpace(tuple(genes), self.version)

    def fixed(self, values: Mapping[str, Any]) -> "SearchSpace":
        return self.with_domains({k: (v,) for k, v in values.items()})

    def to_dict(self) -> dict:
        return {"version": self.version, "genes": [g.to_dict() for g in self.genes]}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        genes = []
        for g in d["genes"]:
            lib = GENE_LIBRARY.get(g["id"])
            if lib is None:
                raise SpaceError(f"unknown gene {g['id']!r}")
            # JSON loses the int/float distinction only for whole floats; map back via the library
            domain = tuple(lib.domain[lib.index(v)] for v in g["domain"])
            genes.append(GeneSpec(g["id"], domain, g["stage"], g.get("description", "")))
        return cls(tuple(genes), d.get("version", SPACE_VERSION))


def default_space() -> SearchSpace:
    return SearchSpace(
        tuple(replace(GENE_LIBRARY[i], domain=DEFAULT_DOMAINS.get(i, GENE_LIBRARY[i].domain)) for i in DEFAULT_GENE_ORDER)
    )


def classifier_space(algorithm: str, preprocessing: Mapping[str, Any] | None = None) -> SearchSpace:
    """Pre-processing pinned (baseline values unless overridden), classifier genes open."""
    if algorithm not in ALGORITHMS:
        raise SpaceError(f"unknown algorithm {algorithm!r}")
    pinned = {**BASELINE_GENES, **(preprocessing or {})}
    genes = [replace(GENE_LIBRARY[i], domain=(pinned[i],)) for i in DEFAULT_GENE_ORDER if i[0] != "d"]
    genes.append(replace(GENE_LIBRARY["d_00"], domain=(algorithm,)))
    genes += [GENE_LIBRARY[g] for g, (algos, _) in CLASSIFIER_GENES.items() if algorithm in algos]
    return SearchSpace(tuple(genes))


# Values used for genes absent from a space: the reference (baseline) pipeline.
BASELINE_GENES: dict[str, Any] = {
    "a_10": 16.6, "a_20": 118.0, "a_40": "Raw", "a_5": False, "a_50": 5, "a_51": 2,
    "b_10": 1024, "b_11": 0, "b_2": False, "b_3": False, "b_4": False, "b_5": False,
    "c_10": "FFT", "c_20": True, "c_3": False, "c_40": "0...+1", "c_50": "none", "c_51": 24,
    "d_00": "GB", "d_10": 100, "d_11": 8, "d_12": 0.1, "d_13": 1,
    "d_20": 25, "d_21": None, "d_22": 1, "d_30": 1.0, "d_31": 50, "d_40": 5, "d_41": "euclidean",
}


def pseudo_shaft_freq_hz(a_20: float) -> float:
    """The pseudo shaft gene is read as a speed in rpm."""
    return float(a_20) / 60.0


@dataclass(frozen=True)
class PipelinePlan:
    """Decoded pipeline, stages A to D. Inactive gene values are kept so the plan re-encodes."""

    source_method: str = "Raw"
    notch_hz: float = 16.6
    pseudo_shaft: float = 118.0
    savgol: bool = False
    savgol_window: int = 5
    savgol_order: int = 2
    window_len: int = 1024
    overlap: int = 0
    normalize: bool = False
    detrend: bool = False
    envelope: bool = False
    taper: bool = False
    spectral: str = "FFT"
    time_features: bool = True
    low_variance: bool = False
    scaling: str = "0...+1"
    reducer: str = "none"
    reducer_k: int = 24
    classifier: ClassifierSpec = field(default_factory=lambda: ClassifierSpec("GB"))
    requested_source_method: str | None = None
    repairs: tuple[str, ...] = ()

    def stages(self) -> list[str]:
        """Executed steps in DAG order."""
        out = []
        if self.source_method != "Raw":
            out.append(self.source_method)
        if self.savgol:
            out.append("SavitzkyGolay")
        out.append("window")
        for flag, name in ((self.normalize, "normalize"), (self.detrend, "detrend"),
                           (self.envelope, "envelope"), (self.taper, "taper")):
            if flag:
                out.append(name)
        out.append(self.spectral)
        out.append("features")
        if self.low_variance:
            out.append("low_variance")
        out.append("scale")
        if self.reducer != "none":
            out.append(self.reducer)
        out.append(self.classifier.algorithm)
        return out

    def preprocessing_key(self) -> tuple:
        """Everything that determines the feature matrix, inactive values dropped."""
        return (
            self.source_method,
            self.notch_hz if self.source_method == "Notch" else None,
            self.pseudo_shaft if self.source_method == "RSFR" else None,
            (self.savgol_window, self.savgol_order) if self.savgol else None,
            self.window_len, self.overlap,
            self.normalize, self.detrend, self.envelope, self.taper,
            self.spectral, self.time_features,
        )

    def fit_key(self) -> tuple:
        return self.preprocessing_key() + (
            self.low_variance, self.scaling,
            (self.reducer, self.reducer_k) if self.reducer != "none" else None,
            json.dumps(self.classifier.to_dict(), sort_keys=True),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"] = self.classifier.to_dict()
        d["repairs"] = list(self.repairs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelinePlan":
        d = dict(d)
        d["classifier"] = ClassifierSpec.from_dict(d["classifier"])
        d["repairs"] = tuple(d.get("repairs", ()))
        return cls(**d)


def decode(space: SearchSpace, c: Chromosome, n_channels: int = 3) -> PipelinePlan:
    """Turn a chromosome into a plan; never rejects."""
    space.validate(c)
    g = {**BASELINE_GENES, **space.as_mapping(c)}
    repairs = []
    method = g["a_40"]
    requested = None
    if method == "Park" and n_channels < 3:
        requested = method
        method = "Raw"
        repairs.append("a_40: Park needs three phases, fell back to Raw")
    algo = g["d_00"]
    params = {name: g[gid] for gid, (algos, name) in CLASSIFIER_GENES.items() if algo in algos}
    return PipelinePlan(
        source_method=method,
        notch_hz=float(g["a_10"]),
        pseudo_shaft=float(g["a_20"]),
        savgol=bool(g["a_5"]),
        savgol_window=int(g["a_50"]),
        savgol_order=int(g["a_51"]),
        window_len=int(g["b_10"]),
        overlap=int(g["b_11"]),
        normalize=bool(g["b_2"]),
        detrend=bool(g["b_3"]),
        envelope=bool(g["b_4"]),
        taper=bool(g["b_5"]),
        spectral=g["c_10"],
        time_features=bool(g["c_20"]),
        low_variance=bool(g["c_3"]),
        scaling=g["c_40"],
        reducer=g["c_50"],
        reducer_k=int(g["c_51"]),
        classifier=ClassifierSpec(algo, params),
        requested_source_method=requested,
        repairs=tuple(repairs),
    )


def plan_genes(plan: PipelinePlan) -> dict[str, Any]:
    """Gene values describing ``plan`` (inverse of decode)."""
    out = {
        "a_10": plan.notch_hz, "a_20": plan.pseudo_shaft,
        "a_40": plan.requested_source_method or plan.source_method,
        "a_5": plan.savgol, "a_50": plan.savgol_window, "a_51": plan.savgol_order,
        "b_10": plan.window_len, "b_11": plan.overlap,
        "b_2": plan.normalize, "b_3": plan.detrend, "b_4": plan.envelope, "b_5": plan.taper,
        "c_10": plan.spectral, "c_20": plan.time_features, "c_3": plan.low_variance,
        "c_40": plan.scaling, "c_50": plan.reducer, "c_51": plan.reducer_k,
        "d_00": plan.classifier.algorithm,
    }
    params = plan.classifier.params
    for gid, (algos, name) in CLASSIFIER_GENES.items():
        out[gid] = params[name] if plan.classifier.algorithm in algos else BASELINE_GENES[gid]
    return out


def encode(space: SearchSpace, plan: PipelinePlan) -> Chromosome:
    genes = plan_genes(plan)
    values = []
    for g in space.genes:
        v = genes[g.id]
        values.append(g.domain[g.index(v)])
    return Chromosome(tuple(values))


def baseline_chromosome(space: SearchSpace | None = None) -> Chromosome:
    """Baseline gene values; genes whose domain excludes the baseline take their first value."""
    space = space or default_space()
    values = []
    for g in space.genes:
        try:
            values.append(g.domain[g.index(BASELINE_GENES[g.id])])
        except SpaceError:
            values.append(g.domain[0])
    return Chromosome(tuple(values))
