"""Command-line entry point: generate, optimize, evaluate, apply, report.

Exit codes: 0 success, 2 configuration or usage error, 3 data or artifact error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from faultpipe import __version__
from faultpipe.core import TABLE_CONDITIONS, Dataset, DatasetError, WorkingCondition, load_dataset, save_dataset
from faultpipe.harness import (
    ComparisonReport,
    TransferReport,
    compare_classifiers,
    compare_reducers,
    dumps,
    evaluate_transfer,
    holdout_split,
    optimize_source,
    render_comparison_table,
    render_transfer_table,
)
from faultpipe.optimizer import (
    ArtifactError,
    EvolutionConfig,
    artifact_pipeline,
    build_artifact,
    read_artifact,
    write_artifact,
    write_history_csv,
)
from faultpipe.pipeline import PipelineError, record_votes, window_accuracy
from faultpipe.space import PipelinePlan, SearchSpace, SpaceError, default_space
from faultpipe.synthgen import SynthConfig, generate_dataset
from faultpipe.transforms import TransformError

log = logging.getLogger("faultpipe")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(Exception):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Section):
    n_motors_per_class: int = Field(8, ge=2)
    conditions: list[tuple[float, float]] = [(c.speed_rpm, c.radial_force_n) for c in TABLE_CONDITIONS]
    record_len: int = Field(16384, ge=4)
    sample_rate_hz: float = Field(8192.0, gt=0)
    pole_pairs: int = Field(4, ge=1)
    n_channels: int = Field(3, ge=1, le=3)
    base_amplitude: float = Field(1.0, gt=0)
    amplitude_jitter: float = Field(0.15, ge=0, lt=1)
    noise_sigma: float = Field(0.02, ge=0)
    sideband_gain: float = Field(0.1, ge=0)
    roughness_gain: float = Field(0.5, ge=0)
    severity_range: tuple[float, float] = (0.2, 1.0)

    def to_config(self, seed: int) -> SynthConfig:
        return SynthConfig(
            n_motors_per_class=self.n_motors_per_class,
            conditions=tuple(WorkingCondition(s, f) for s, f in self.conditions),
            record_len=self.record_len,
            sample_rate_hz=self.sample_rate_hz,
            pole_pairs=self.pole_pairs,
            n_channels=self.n_channels,
            base_amplitude=self.base_amplitude,
            amplitude_jitter=self.amplitude_jitter,
            noise_sigma=self.noise_sigma,
            sideband_gain=self.sideband_gain,
            roughness_gain=self.roughness_gain,
            severity_range=self.severity_range,
            seed=seed,
        )


class SearchSection(_Section):
    generations: int = Field(20, ge=0)
    pop_size: int = Field(10, ge=4)
    crossover_rate: float = Field(0.9, ge=0, le=1)
    mutation_rate: Optional[float] = Field(None, ge=0, le=1)
    cost_mode: Literal["surrogate", "timing"] = "surrogate"
    criterion: Literal["min_error", "min_cost"] = "min_error"
    domains: dict[str, list[Any]] = {}
    n_folds: int = Field(5, ge=2)
    repeats: int = Field(3, ge=1)

    def space(self) -> SearchSpace:
        return default_space().with_domains(self.domains) if self.domains else default_space()


class EvalSection(_Section):
    source: str = TABLE_CONDITIONS[0].key
    settings: list[tuple[str, str]] = [
        (TABLE_CONDITIONS[0].key, TABLE_CONDITIONS[3].key),
        (TABLE_CONDITIONS[1].key, TABLE_CONDITIONS[2].key),
        (TABLE_CONDITIONS[2].key, TABLE_CONDITIONS[1].key),
        (TABLE_CONDITIONS[3].key, TABLE_CONDITIONS[0].key),
    ]
    holdout_fraction: float = Field(0.2, ge=0, lt=1)
    holdout_serials: Optional[list[str]] = None
    compare: list[Literal["reducers", "classifiers"]] = []
    reducer_ks: list[int] = list(range(2, 25))
    classifier_generations: int = Field(20, ge=0)

    @field_validator("reducer_ks")
    @classmethod
    def _ks(cls, v: list[int]) -> list[int]:
        if not v or any(not 1 <= k <= 24 for k in v):
            raise ValueError("reducer_ks must be a non-empty list of values in 1..24")
        return v


class IoSection(_Section):
    data_dir: str = "data"
    out_dir: str = "out"
    artifact: Optional[str] = None
    dataset: Optional[str] = None


class RunConfig(_Section):
    seed: int = 0
    jobs: int = Field(1, ge=1)
    synth: SynthSection = SynthSection()
    search: SearchSection = SearchSection()
    eval: EvalSection = EvalSection()
    io: IoSection = IoSection()


# ---------------------------------------------------------------- config plumbing


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise UsageError(f"--set: malformed key {key!r}")
        node = raw
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise UsageError(f"--set: {key!r} descends into a non-section")
            node = nxt
        node[parts[-1]] = _parse_value(value)
    return raw


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "invalid configuration: " + "; ".join(lines)


def load_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
    raw = apply_overrides(raw, args.set or [])
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.out is not None:
        raw.setdefault("io", {})["out_dir"] = args.out
    if getattr(args, "artifact", None):
        raw.setdefault("io", {})["artifact"] = args.artifact
    if getattr(args, "dataset", None):
        raw.setdefault("io", {})["dataset"] = args.dataset
    try:
        cfg = RunConfig.model_validate(raw)
        cfg.search.space()
    except ValidationError as exc:
        raise UsageError(_format_validation(exc)) from exc
    except SpaceError as exc:
        raise UsageError(f"invalid configuration: search.domains: {exc}") from exc
    return cfg


def _dataset_path(cfg: RunConfig, key: str) -> Path:
    return Path(cfg.io.data_dir) / f"{key}.ndjson"


def _load_condition(cfg: RunConfig, key: str) -> Dataset:
    path = _dataset_path(cfg, key)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    return load_dataset(path)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig) -> int:
    try:
        synth = cfg.synth.to_config(cfg.seed)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: synth: {exc}") from exc
    data_dir = Path(cfg.io.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": cfg.seed, "synth": cfg.synth.model_dump(mode="json"), "tool_version": __version__, "datasets": {}}
    for cond, d in generate_dataset(synth).items():
        path = data_dir / f"{cond.key}.ndjson"
        save_dataset(d, path)
        manifest["datasets"][cond.key] = {"file": path.name, "records": len(d), "fingerprint": d.fingerprint()}
        log.info("wrote %s (%d records)", path, len(d))
    _write(data_dir / "manifest.json", dumps(manifest))
    return EXIT_OK


def _train_split(cfg: RunConfig, source: Dataset) -> tuple[Dataset, list[str]]:
    if cfg.eval.holdout_serials is not None:
        held = sorted(cfg.eval.holdout_serials)
        keep = [s for s in source.serials() if s not in set(held)]
        return source.subset(keep, name=f"{source.name}/train"), held
    train, holdout = holdout_split(source, cfg.eval.holdout_fraction, cfg.seed)
    return train, sorted(holdout.serials())


def cmd_optimize(cfg: RunConfig) -> int:
    space = cfg.search.space()
    source = _load_condition(cfg, cfg.eval.source)
    train, held = _train_split(cfg, source)
    evo = EvolutionConfig(
        generations=cfg.search.generations,
        pop_size=cfg.search.pop_size,
        crossover_rate=cfg.search.crossover_rate,
        mutation_rate=cfg.search.mutation_rate,
        seed=cfg.seed,
        cost_mode=cfg.search.cost_mode,
        n_folds=cfg.search.n_folds,
        repeats=cfg.search.repeats,
        jobs=cfg.jobs,
    )

    def progress(h) -> None:
        print(f"generation {h.generation:3d}  best_err {h.best_err:.4f}  median_err {h.median_err:.4f}  "
              f"best_cost {h.best_cost:.4f}", flush=True)

    outcome = optimize_source(train, evo, space=space, criterion=cfg.search.criterion, on_generation=progress)
    provenance = {
        "seed": cfg.seed,
        "source_condition": cfg.eval.source,
        "train_fingerprint": train.fingerprint(),
        "sample_rate_hz": train.records[0].sample_rate_hz,
        "n_channels": train.n_channels,
        "train_serials": sorted(train.serials()),
        "holdout_serials": held,
        "search": cfg.search.model_dump(mode="json"),
        "evaluations": outcome.result.history[-1].evaluations,
    }
    extra = {
        "baseline_cv_accuracy": outcome.baseline_cv_accuracy,
        "train_accuracy": outcome.train_accuracy,
        "train_record_accuracy": outcome.train_record_accuracy,
    }
    art = build_artifact(space, outcome.selected, outcome.plan, outcome.fitted, outcome.result.front, provenance, extra)
    out = _out_dir(cfg)
    write_artifact(art, out / "artifact.json")
    write_history_csv(outcome.result.history, out / "history.csv")
    print(f"selected: {' -> '.join(outcome.plan.stages())}")
    print(f"source CV accuracy {outcome.selected.fitness.cv_accuracy:.4f} "
          f"(baseline {outcome.baseline_cv_accuracy:.4f})")
    return EXIT_OK


def _artifact(cfg: RunConfig) -> dict:
    if not cfg.io.artifact:
        raise UsageError("no artifact given (use --artifact or io.artifact)")
    path = Path(cfg.io.artifact)
    if not path.is_file():
        raise UsageError(f"artifact not found: {path}")
    return read_artifact(path)


def cmd_evaluate(cfg: RunConfig) -> int:
    art = _artifact(cfg)
    plan = artifact_pipeline(art).plan
    cache: dict[str, Dataset] = {}

    def get(key: str) -> Dataset:
        if key not in cache:
            cache[key] = _load_condition(cfg, key)
        return cache[key]

    reports = [
        evaluate_transfer(plan, get(s), get(t), cfg.seed, cfg.eval.holdout_fraction) for s, t in cfg.eval.settings
    ]
    out = _out_dir(cfg)
    _write(out / "transfer.json", dumps({"artifact": art["integrity"], "reports": [r.to_dict() for r in reports]}))
    table = render_transfer_table(reports)
    _write(out / "transfer.txt", table)
    print(table, end="")
    for kind in cfg.eval.compare:
        src = get(cfg.eval.source)
        if kind == "reducers":
            rep = compare_reducers(src, cfg.seed, ks=cfg.eval.reducer_ks, base=plan,
                                   holdout_fraction=cfg.eval.holdout_fraction)
        else:
            rep = compare_classifiers(src, cfg.seed, generations=cfg.eval.classifier_generations,
                                      pop_size=cfg.search.pop_size, holdout_fraction=cfg.eval.holdout_fraction)
        _write(out / f"{kind}.json", dumps(rep.to_dict()))
        text = render_comparison_table(rep)
        _write(out / f"{kind}.txt", text)
        print(text, end="")
    return EXIT_OK


PREDICTION_HEADER = ["record", "serial", "condition", "label", "window", "prediction", "score",
                     "record_prediction", "record_score"]


def _check_schema(art: dict, data: Dataset) -> None:
    prov = art.get("provenance", {})
    rate = prov.get("sample_rate_hz")
    need = 3 if art["plan"]["source_method"] == "Park" else 1
    for i, rec in enumerate(data.records):
        if rate is not None and rec.sample_rate_hz != rate:
            raise DatasetError(f"record {i}: sample rate {rec.sample_rate_hz:g} Hz, artifact expects {rate:g} Hz")
        if rec.channels.shape[0] < need:
            raise DatasetError(f"record {i}: {rec.channels.shape[0]} channel(s), the pipeline needs {need}")


def cmd_apply(cfg: RunConfig) -> int:
    art = _artifact(cfg)
    fitted = artifact_pipeline(art)
    if not cfg.io.dataset:
        raise UsageError("no dataset given (use --dataset or io.dataset)")
    path = Path(cfg.io.dataset)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    data = load_dataset(path, allow_empty=True)
    _check_schema(art, data)
    out = _out_dir(cfg)
    rows = []
    acc = float("nan")
    if len(data):
        m, pred, score = fitted.predict_dataset(data)
        votes = record_votes(m.record_ids, pred, score)
        window_idx: dict[int, int] = {}
        for i in range(len(m)):
            rid = int(m.record_ids[i])
            w = window_idx.get(rid, 0)
            window_idx[rid] = w + 1
            rows.append([rid, m.serials[i], m.conditions[i], int(m.labels[i]), w, int(pred[i]),
                         repr(float(score[i])), votes[rid][0], repr(votes[rid][1])])
        acc = window_accuracy(pred, m.labels)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        w.writerows(rows)
    print(f"{len(rows)} windows from {len(data)} records; window accuracy {acc:.6f}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.io.out_dir)
    printed = False
    if cfg.io.artifact:
        art = _artifact(cfg)
        plan = PipelinePlan.from_dict(art["plan"])
        fit = art["fitness"]
        print(f"artifact {Path(cfg.io.artifact).name}  integrity {art['integrity'][:16]}")
        print(f"  source {art['provenance'].get('source_condition')}  seed {art['provenance'].get('seed')}")
        print(f"  pipeline: {' -> '.join(plan.stages())}")
        print(f"  source CV accuracy {1 - fit['cv_error']:.4f}  cost {fit['cost']:.4f}  "
              f"baseline {art.get('baseline_cv_accuracy')}")
        print(f"  Pareto front: {len(art['front'])} members")
        for m in art["front"]:
            print(f"    cv_error {m['fitness']['cv_error']:.4f}  cost {m['fitness']['cost']:.4f}")
        printed = True
    tr = out / "transfer.json"
    if tr.is_file():
        data = json.loads(tr.read_text(encoding="utf-8"))
        print(render_transfer_table([TransferReport(**r) for r in data["reports"]]), end="")
        printed = True
    for kind in ("reducers", "classifiers"):
        p = out / f"{kind}.json"
        if p.is_file():
            d = json.loads(p.read_text(encoding="utf-8"))
            rows = [dict(r) for r in d["rows"]]
            print(render_comparison_table(ComparisonReport(d["kind"], d["metric"], tuple(rows), d["max_diff"],
                                                           d["seed"], d["source_fingerprint"])), end="")
            printed = True
    if not printed:
        raise UsageError(f"nothing to report: no artifact given and no reports in {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "apply": cmd_apply,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="parallel fitness evaluations")
    common.add_argument("--set", action="append", metavar="K=V", help="override a config key, e.g. search.generations=5")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="faultpipe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic datasets, one per working condition")
    sub.add_parser("optimize", parents=[common], help="search pipelines on the source condition")
    p = sub.add_parser("evaluate", parents=[common], help="transfer and comparison reports for an artifact")
    p.add_argument("--artifact", metavar="PATH")
    p = sub.add_parser("apply", parents=[common], help="predict a dataset with an artifact")
    p.add_argument("--artifact", metavar="PATH")
    p.add_argument("--dataset", metavar="PATH")
    p = sub.add_parser("report", parents=[common], help="render an artifact and saved reports")
    p.add_argument("--artifact", metavar="PATH")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DatasetError, PipelineError, TransformError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
