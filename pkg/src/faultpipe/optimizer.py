"""NSGA-II over pipeline chromosomes, solution selection and the pipeline artifact."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from faultpipe import __version__
from faultpipe.core import Dataset, GroupedSplit, make_grouped_folds
from faultpipe.pipeline import FeatureCache, FitnessRecord, FittedPipeline, evaluate
from faultpipe.rng import derive_rng, derive_seed
from faultpipe.space import Chromosome, PipelinePlan, SearchSpace, decode

log = logging.getLogger(__name__)

Point = Sequence[float]


def dominates(a: Point, b: Point) -> bool:
    """``a`` is no worse on every objective and better on one (minimisation)."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def _objectives(points) -> list[tuple[float, ...]]:
    return [tuple(p.objectives) if isinstance(p, FitnessRecord) else tuple(p) for p in points]


def non_dominated_sort(points) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as lists of indices into ``points``."""
    objs = _objectives(points)
    n = len(objs)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(objs[i], objs[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(objs[j], objs[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding_distance(front) -> list[float]:
    """Crowding distance of each member; objective extremes get infinity."""
    objs = _objectives(front)
    n = len(objs)
    if n == 0:
        return []
    dist = [0.0] * n
    for k in range(len(objs[0])):
        order = sorted(range(n), key=lambda i: (objs[i][k], i))
        lo, hi = objs[order[0]][k], objs[order[-1]][k]
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        span = hi - lo
        if span <= 0:
            continue
        for pos in range(1, n - 1):
            i = order[pos]
            if dist[i] != math.inf:
                dist[i] += (objs[order[pos + 1]][k] - objs[order[pos - 1]][k]) / span
    return dist


@dataclass(frozen=True)
class Member:
    chromosome: Chromosome
    fitness: FitnessRecord
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ParetoFront:
    members: tuple[Member, ...]

    def __post_init__(self) -> None:
        objs = [m.fitness.objectives for m in self.members]
        for i, a in enumerate(objs):
            for b in objs[i + 1:]:
                if dominates(a, b) or dominates(b, a):
                    raise ValueError("Pareto front members must be mutually non-dominated")

    def __len__(self) -> int:
        return len(self.members)

    @classmethod
    def from_members(cls, members: Sequence[Member]) -> "ParetoFront":
        """Non-dominated subset, duplicates (same chromosome) removed, sorted by error."""
        unique: dict[tuple, Member] = {}
        for m in members:
            unique.setdefault(m.indices, m)
        pool = list(unique.values())
        first = non_dominated_sort([m.fitness for m in pool])[0] if pool else []
        chosen = sorted((pool[i] for i in first), key=lambda m: (m.fitness.cv_error, m.fitness.cost, m.indices))
        return cls(tuple(chosen))


def select_solution(front: ParetoFront, criterion: str = "min_error") -> Member:
    """Pick one member using source CV results only."""
    if not front.members:
        raise ValueError("empty front")
    if criterion == "min_error":
        key = lambda m: (m.fitness.cv_error, m.fitness.cost, m.indices)  # noqa: E731
    elif criterion == "min_cost":
        key = lambda m: (m.fitness.cost, m.fitness.cv_error, m.indices)  # noqa: E731
    else:
        raise ValueError(f"unknown selection criterion {criterion!r}")
    return min(front.members, key=key)


@dataclass(frozen=True)
class EvolutionConfig:
    generations: int = 20
    pop_size: int = 10
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # default 1 / n_genes
    seed: int = 0
    cost_mode: str = "surrogate"
    n_folds: int = 5
    repeats: int = 3
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.pop_size < 4:
            raise ValueError("pop_size must be >= 4")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.cost_mode not in ("surrogate", "timing"):
            raise ValueError("cost_mode must be 'surrogate' or 'timing'")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_err: float
    median_err: float
    best_cost: float
    evaluations: int


@dataclass
class EvolutionResult:
    front: ParetoFront
    history: list[GenerationStats]
    population: list[Member]
    archive: list[Member] = field(default_factory=list)
    chromosome_history: list[list[tuple[int, ...]]] = field(default_factory=list)


class Evaluator:
    """Fitness of chromosomes on one source dataset, memoised by fitted plan."""

    def __init__(self, space: SearchSpace, source: Dataset, folds: list[GroupedSplit], seed: int,
                 cost_mode: str = "surrogate", jobs: int = 1) -> None:
        self.space = space
        self.source = source
        self.folds = folds
        self.seed = seed
        self.cost_mode = cost_mode
        self.jobs = jobs
        self.n_channels = source.n_channels
        self.data_key = source.fingerprint()
        self.cache = FeatureCache()
        self.memo: dict[tuple, FitnessRecord] = {}
        self.n_evaluations = 0

    def plan(self, c: Chromosome) -> PipelinePlan:
        return decode(self.space, c, self.n_channels)

    def __call__(self, chromosomes: Sequence[Chromosome]) -> list[FitnessRecord]:
        plans = [self.plan(c) for c in chromosomes]
        todo: dict[tuple, PipelinePlan] = {}
        for p in plans:
            key = p.fit_key()
            if key not in self.memo and key not in todo:
                todo[key] = p
        if todo:
            items = list(todo.items())
            if self.jobs > 1 and len(items) > 1:
                results = _parallel_evaluate([p for _, p in items], self)
            else:
                results = [
                    evaluate(p, self.source, self.folds, self.seed, cost_mode=self.cost_mode,
                             cache=self.cache, data_key=self.data_key)
                    for _, p in items
                ]
            for (key, _), rec in zip(items, results):
                self.memo[key] = rec
            self.n_evaluations += len(items)
        return [self.memo[p.fit_key()] for p in plans]


_WORKER: dict = {}


def _worker_init(source: Dataset, folds, seed: int, cost_mode: str) -> None:
    _WORKER.update(source=source, folds=folds, seed=seed, cost_mode=cost_mode,
                   cache=FeatureCache(), key=source.fingerprint())


def _worker_eval(plan: PipelinePlan) -> FitnessRecord:
    w = _WORKER
    return evaluate(plan, w["source"], w["folds"], w["seed"], cost_mode=w["cost_mode"],
                    cache=w["cache"], data_key=w["key"])


def _parallel_evaluate(plans: list[PipelinePlan], ev: Evaluator) -> list[FitnessRecord]:
    with ProcessPoolExecutor(
        max_workers=ev.jobs, initializer=_worker_init,
        initargs=(ev.source, ev.folds, ev.seed, ev.cost_mode),
    ) as pool:
        return list(pool.map(_worker_eval, plans))


def _rank_and_crowd(fits: list[FitnessRecord]) -> tuple[list[int], list[float]]:
    rank = [0] * len(fits)
    crowd = [0.0] * len(fits)
    for r, front in enumerate(non_dominated_sort(fits)):
        d = crowding_distance([fits[i] for i in front])
        for i, di in zip(front, d):
            rank[i] = r
            crowd[i] = di
    return rank, crowd


def _survivors(fits: list[FitnessRecord], size: int) -> list[int]:
    """Elitist truncation: whole fronts first, then the least crowded."""
    chosen: list[int] = []
    for front in non_dominated_sort(fits):
        if len(chosen) + len(front) <= size:
            chosen += front
            continue
        d = crowding_distance([fits[i] for i in front])
        order = sorted(range(len(front)), key=lambda j: (-d[j], front[j]))
        chosen += [front[j] for j in order[: size - len(chosen)]]
        break
    return chosen


def _tournament(rng, rank, crowd) -> int:
    i, j = (int(v) for v in rng.integers(0, len(rank), size=2))
    ki = (rank[i], -crowd[i], i)
    kj = (rank[j], -crowd[j], j)
    return i if ki <= kj else j


def _make_child(rng, space: SearchSpace, a: tuple[int, ...], b: tuple[int, ...], cx: float, mut: float) -> tuple[int, ...]:
    child = list(a)
    if rng.random() < cx:
        take_b = rng.random(len(a)) < 0.5
        child = [bi if t else ai for ai, bi, t in zip(a, b, take_b)]
    for g, gene in enumerate(space.genes):
        if rng.random() < mut and len(gene.domain) > 1:
            other = int(rng.integers(0, len(gene.domain) - 1))
            child[g] = other if other < child[g] else other + 1
    return tuple(child)


def _stats(gen: int, members: list[Member], evaluations: int) -> GenerationStats:
    errs = np.array([m.fitness.cv_error for m in members])
    best = min(members, key=lambda m: (m.fitness.cv_error, m.fitness.cost, m.indices))
    return GenerationStats(gen, float(errs.min()), float(np.median(errs)), float(best.fitness.cost), evaluations)


def evolve(
    space: SearchSpace,
    source: Dataset,
    cfg: EvolutionConfig,
    *,
    folds: list[GroupedSplit] | None = None,
    evaluator: Evaluator | None = None,
    on_generation: Callable[[GenerationStats], None] | None = None,
) -> EvolutionResult:
    """NSGA-II with binary tournament, uniform crossover, reset mutation and
    (mu + lambda) survival. Deterministic for a fixed seed in surrogate-cost mode."""
    if folds is None:
        folds = make_grouped_folds(source, cfg.n_folds, cfg.repeats, derive_seed(cfg.seed, "cv-folds"))
    ev = evaluator or Evaluator(space, source, folds, derive_seed(cfg.seed, "fit"), cfg.cost_mode, cfg.jobs)
    rng = derive_rng(cfg.seed, "evolve")
    mut = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / space.n_genes

    pop_idx = [space.indices(space.random_chromosome(rng)) for _ in range(cfg.pop_size)]
    pop_fit = ev([space.from_indices(i) for i in pop_idx])
    archive = [Member(space.from_indices(i), f, i) for i, f in zip(pop_idx, pop_fit)]
    population = list(archive)
    history = [_stats(0, population, ev.n_evaluations)]
    chromosome_history = [list(pop_idx)]
    if on_generation:
        on_generation(history[-1])

    for gen in range(1, cfg.generations + 1):
        fits = [m.fitness for m in population]
        rank, crowd = _rank_and_crowd(fits)
        offspring = []
        while len(offspring) < cfg.pop_size:
            a = population[_tournament(rng, rank, crowd)].indices
            b = population[_tournament(rng, rank, crowd)].indices
            offspring.append(_make_child(rng, space, a, b, cfg.crossover_rate, mut))
        off_fit = ev([space.from_indices(i) for i in offspring])
        children = [Member(space.from_indices(i), f, i) for i, f in zip(offspring, off_fit)]
        archive += children
        combined = population + children
        keep = _survivors([m.fitness for m in combined], cfg.pop_size)
        population = [combined[i] for i in sorted(keep)]
        history.append(_stats(gen, population, ev.n_evaluations))
        chromosome_history.append([m.indices for m in population])
        if on_generation:
            on_generation(history[-1])
        log.info("generation %d: best_err %.4f median_err %.4f", gen, history[-1].best_err, history[-1].median_err)

    return EvolutionResult(ParetoFront.from_members(population), history, population, archive, chromosome_history)


def write_history_csv(history: Sequence[GenerationStats], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_err", "median_err", "best_cost"])
        for h in history:
            w.writerow([h.generation, repr(h.best_err), repr(h.median_err), repr(h.best_cost)])


# ---------------------------------------------------------------- artifact

ARTIFACT_FORMAT = "faultpipe-pipeline-artifact"


class ArtifactError(ValueError):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def build_artifact(
    space: SearchSpace,
    selected: Member,
    plan: PipelinePlan,
    fitted: FittedPipeline,
    front: ParetoFront,
    provenance: dict,
    extra: dict | None = None,
) -> dict:
    body = {
        "format": ARTIFACT_FORMAT,
        "search_space_version": space.version,
        "search_space": space.to_dict(),
        "chromosome": selected.chromosome.to_list(),
        "plan": plan.to_dict(),
        "fitted": fitted.to_dict(),
        "fitness": selected.fitness.to_dict(),
        "front": [
            {"chromosome": m.chromosome.to_list(), "fitness": m.fitness.to_dict()} for m in front.members
        ],
        "provenance": {"tool_version": __version__, **provenance},
    }
    if extra:
        body.update(extra)
    body["integrity"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def write_artifact(artifact: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(artifact, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def read_artifact(path: str | Path) -> dict:
    try:
        art = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"artifact integrity: cannot read {path}: {exc}") from exc
    if not isinstance(art, dict) or art.get("format") != ARTIFACT_FORMAT:
        raise ArtifactError("artifact integrity: not a pipeline artifact")
    stored = art.pop("integrity", None)
    if stored != hashlib.sha256(_canonical(art).encode()).hexdigest():
        raise ArtifactError("artifact integrity: checksum mismatch")
    art["integrity"] = stored
    return art


def artifact_pipeline(art: dict) -> FittedPipeline:
    try:
        return FittedPipeline.from_dict(art["fitted"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"artifact integrity: malformed fitted pipeline ({exc})") from exc
