"""Staged, resumable evaluation runs with a hash-checked manifest."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import filelock

from . import __version__
from .calibration import LOG2_3, LogitRecord, fit_temperature
from .extract import ExtractionConfig, SupportingSubgraph, extract
from .graph import ReferenceGraph, Triple, parse_triples
from .judge import DEFAULT_RUBRIC, RemoteJudge, RubricConfig, agreement, rule_judge
from .metrics import EvalReport, GammaResult, LocRecord, TargetEvaluation, instance_score, sample_loc_neighbors
from .probe import (
    TEMPLATES,
    BeliefModelSpec,
    BeliefOracle,
    ProbeResult,
    RemoteOracle,
    SyntheticOracle,
    probe_many,
)
from .transport import JsonEndpoint
from .unlearn import ForgetSet, UnlearnOperatorSpec, apply_pipeline, sample_forget_set

logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "calibrate",
    "sample-targets",
    "extract-pre",
    "simulate",
    "extract-post",
    "judge",
    "evaluate",
    "report",
)
UPSTREAM: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "calibrate": (),
    "sample-targets": ("ingest", "calibrate"),
    "extract-pre": ("sample-targets",),
    "simulate": ("sample-targets",),
    "extract-post": ("simulate",),
    "judge": ("extract-pre", "extract-post"),
    "evaluate": ("judge",),
    "report": ("evaluate",),
}
ARTIFACTS: dict[str, tuple[str, ...]] = {
    "ingest": ("graph.tsv", "graph.json"),
    "calibrate": ("calibration.json",),
    "sample-targets": ("targets.json",),
    "extract-pre": ("subgraphs_pre.jsonl",),
    "simulate": ("beliefs_post.json",),
    "extract-post": ("subgraphs_post.jsonl",),
    "judge": ("verdicts.jsonl",),
    "evaluate": ("evaluation.json", "loc.jsonl"),
    "report": ("report.json", "per_target.csv", "confusion.csv", "score_shift.csv", "summary.txt"),
}
# config fields each stage reads directly; a stage's digest also covers its upstream stages' fields
STAGE_FIELDS: dict[str, tuple[str, ...]] = {
    "ingest": ("reference",),
    "calibrate": ("calibration_records", "temperature"),
    "sample-targets": ("beliefs", "endpoint", "template", "forget_n", "forget_bound", "forget_relations", "seed"),
    "extract-pre": ("beliefs", "endpoint", "template", "extraction"),
    "simulate": ("beliefs", "endpoint_post", "operators"),
    "extract-post": ("template", "extraction"),
    "judge": ("rubric", "extraction", "judge_backend", "judge_endpoint", "judge_samples"),
    "evaluate": ("beliefs", "endpoint", "loc_multiplier", "loc_hops", "gamma", "other_consistent", "seed"),
    "report": (),
}


class ConfigError(ValueError):
    pass


class DependencyError(RuntimeError):
    pass


class StalenessError(RuntimeError):
    pass


class RunLockedError(RuntimeError):
    pass


def transitive_upstream(stage: str) -> list[str]:
    seen: set[str] = set()
    stack = list(UPSTREAM[stage])
    while stack:
        s = stack.pop()
        if s not in seen:
            seen.add(s)
            stack.extend(UPSTREAM[s])
    return [s for s in STAGES if s in seen]


# --------------------------------------------------------------------------
# configuration


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunConfig:
    reference: Path
    beliefs: Path | None = None
    endpoint: str | None = None
    endpoint_post: str | None = None
    rubric: Path | None = None
    calibration_records: Path | None = None
    template: str = "qwen"
    temperature: float = 1.0
    max_in_flight: int = 8
    retries: int = 3
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    forget_n: int = 200
    forget_bound: float = 1.0
    forget_relations: tuple[str, ...] = ()
    operators: tuple[UnlearnOperatorSpec, ...] = (UnlearnOperatorSpec("instance_erase"),)
    loc_multiplier: int = 10
    loc_hops: int = 3
    gamma: float = 2.0
    other_consistent: bool = False
    judge_backend: str = "rule"
    judge_endpoint: str | None = None
    judge_samples: int = 3
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("reference", "beliefs", "rubric", "calibration_records"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")
        if (self.beliefs is None) == (self.endpoint is None):
            raise ConfigError("set exactly one of paths.beliefs (synthetic) or probe.endpoint (remote)")
        if not 0.0 < self.extraction.u_star <= LOG2_3 + 1e-12:
            raise ConfigError(f"u_star must lie in (0, log2 3], got {self.extraction.u_star}")
        if self.forget_n < 1:
            raise ConfigError("forget set must hold at least one target")
        if self.template not in TEMPLATES:
            raise ConfigError(f"unknown template {self.template!r}; choose from {sorted(TEMPLATES)}")
        if self.judge_backend not in ("rule", "remote"):
            raise ConfigError("judge.backend must be 'rule' or 'remote'")
        if self.judge_backend == "remote" and not self.judge_endpoint:
            raise ConfigError("judge.endpoint is required for the remote judge")
        if self.loc_multiplier < 1:
            raise ConfigError("loc_multiplier must be >= 1")
        if not 0.0 <= self.gamma <= 5.0:
            raise ConfigError("gamma must lie in [0, 5]")

    @classmethod
    def load(cls, path: str | os.PathLike, *, seed: int | None = None) -> "RunConfig":
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
        return cls.from_parser(parser, path.parent, seed=seed)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser, base: Path, *, seed: int | None = None) -> "RunConfig":
        def get(section: str, key: str, fallback: str | None = None) -> str | None:
            value = cp.get(section, key, fallback=fallback) if cp.has_section(section) else fallback
            return value.strip() if isinstance(value, str) and value.strip() else fallback

        def file(section: str, key: str) -> Path | None:
            value = get(section, key)
            return (base / value).resolve() if value else None

        try:
            reference = file("paths", "reference")
            if reference is None:
                raise ConfigError("paths.reference is required")
            ops_text = get("unlearn", "operators", "instance_erase strength=1") or ""
            extraction = ExtractionConfig(
                k=int(get("extraction", "k", "3")),
                u_star=float(get("extraction", "u_star", "1.0")),
                candidate_cap=int(get("extraction", "candidate_cap", "0")),
                directed=cp.getboolean("extraction", "directed", fallback=False) if cp.has_section("extraction") else False,
            )
            return cls(
                reference=reference,
                beliefs=file("paths", "beliefs"),
                endpoint=get("probe", "endpoint"),
                endpoint_post=get("probe", "endpoint_post"),
                rubric=file("paths", "rubric"),
                calibration_records=file("paths", "calibration_records"),
                template=get("probe", "template", "qwen") or "qwen",
                temperature=float(get("probe", "temperature", "1.0")),
                max_in_flight=int(get("probe", "max_in_flight", "8")),
                retries=int(get("probe", "retries", "3")),
                extraction=extraction,
                forget_n=int(get("forget", "n", "200")),
                forget_bound=float(get("forget", "bound", "1.0")),
                forget_relations=tuple((get("forget", "relations", "") or "").replace(",", " ").split()),
                operators=tuple(UnlearnOperatorSpec.parse(line) for line in ops_text.splitlines() if line.strip()),
                loc_multiplier=int(get("metrics", "loc_multiplier", "10")),
                loc_hops=int(get("metrics", "loc_hops", "3")),
                gamma=float(get("metrics", "gamma", "2")),
                other_consistent=(get("metrics", "other_consistent", "false") or "").lower() in ("1", "true", "yes"),
                judge_backend=get("judge", "backend", "rule") or "rule",
                judge_endpoint=get("judge", "endpoint"),
                judge_samples=int(get("judge", "samples", "3")),
                seed=seed if seed is not None else int(get("run", "seed", "42")),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def snapshot(self) -> dict:
        """Config as plain data, with content hashes of the input files."""
        data = asdict(self)
        for key in ("reference", "beliefs", "rubric", "calibration_records"):
            p = getattr(self, key)
            data[key] = None if p is None else {"name": Path(p).name, "sha256": _sha256_file(Path(p))}
        data["operators"] = [op.to_dict() for op in self.operators]
        data["forget_relations"] = list(self.forget_relations)
        return data

    def digest(self, stage: str | None = None) -> str:
        """Hash of the whole config, or of the fields ``stage`` and its upstream stages depend on."""
        snap = self.snapshot()
        if stage is not None:
            keys = {k for s in (*transitive_upstream(stage), stage) for k in STAGE_FIELDS[s]}
            snap = {k: snap[k] for k in sorted(keys)}
        return hashlib.sha256(json.dumps(snap, sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# persistence helpers


def atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


class Manifest:
    """Append-only JSON-lines log of config snapshots and stage completions."""

    def __init__(self, path: Path):
        self.path = path

    def entries(self) -> list[dict]:
        return _read_jsonl(self.path) if self.path.exists() else []

    def append(self, entry: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(_dump(entry) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def completions(self) -> dict[str, dict]:
        latest: dict[str, dict] = {}
        for e in self.entries():
            if e.get("event") == "stage":
                latest[e["stage"]] = e
        return latest

    def record_config(self, cfg: RunConfig) -> None:
        digest = cfg.digest()
        configs = [e for e in self.entries() if e.get("event") == "config"]
        if not configs or configs[-1]["config_hash"] != digest:
            self.append({"event": "config", "config_hash": digest, "config": cfg.snapshot(), "version": __version__})


# --------------------------------------------------------------------------
# runner


@dataclass
class StageOutcome:
    stage: str
    status: str  # "done" or "up-to-date"
    artifacts: dict[str, str] = field(default_factory=dict)


class Runner:
    def __init__(self, cfg: RunConfig, run_dir: str | os.PathLike, *, workers: int = 1):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.workers = max(1, workers)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.run_dir / "manifest.jsonl")
        self._lock = filelock.FileLock(str(self.run_dir / ".lock"))
        self._cache: dict[str, object] = {}

    # -- stage bookkeeping

    def _artifact_hashes(self, stage: str) -> dict[str, str] | None:
        hashes = {}
        for name in ARTIFACTS[stage]:
            p = self.run_dir / name
            if not p.exists():
                return None
            hashes[name] = _sha256_file(p)
        return hashes

    def stage_state(self, stage: str) -> str:
        """One of ``missing``, ``stale`` or ``complete``."""
        record = self.manifest.completions().get(stage)
        if record is None:
            return "missing"
        if record["config_hash"] != self.cfg.digest(stage) or self._artifact_hashes(stage) != record["artifacts"]:
            return "stale"
        return "complete"

    def check_upstream(self, stage: str) -> None:
        upstream = transitive_upstream(stage)
        states = {s: self.stage_state(s) for s in upstream}
        missing = [s for s in upstream if states[s] == "missing"]
        if missing:
            raise DependencyError(f"stage {stage!r} needs upstream stage(s) not yet run: {', '.join(missing)}")
        stale = [s for s in upstream if states[s] == "stale"]
        if stale:
            raise StalenessError(
                f"upstream stage(s) {', '.join(stale)} are stale (config or artifact changed); rerun them with --force"
            )

    def run_stage(self, stage: str, *, force: bool = False) -> StageOutcome:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        try:
            self._lock.acquire(timeout=0)
        except filelock.Timeout:
            raise RunLockedError(f"run directory {self.run_dir} is in use by another process") from None
        try:
            self.manifest.record_config(self.cfg)
            self.check_upstream(stage)
            state = self.stage_state(stage)
            if state == "complete" and not force:
                return StageOutcome(stage, "up-to-date", self.manifest.completions()[stage]["artifacts"])
            if state == "stale" and not force:
                raise StalenessError(f"stage {stage!r} is stale (config or artifact changed); rerun with --force")
            getattr(self, "_stage_" + stage.replace("-", "_"))()
            hashes = self._artifact_hashes(stage)
            assert hashes is not None, f"stage {stage} did not write all artifacts"
            self.manifest.append(
                {"event": "stage", "stage": stage, "config_hash": self.cfg.digest(stage), "artifacts": hashes, "version": __version__}
            )
            return StageOutcome(stage, "done", hashes)
        finally:
            self._lock.release()

    def run_all(self, *, force: bool = False, on_stage: Callable[[StageOutcome], None] | None = None) -> list[StageOutcome]:
        outcomes = []
        for stage in STAGES:
            outcome = self.run_stage(stage, force=force)
            outcomes.append(outcome)
            if on_stage:
                on_stage(outcome)
        return outcomes

    # -- shared inputs

    def _path(self, name: str) -> Path:
        return self.run_dir / name

    def graph(self) -> ReferenceGraph:
        if "graph" not in self._cache:
            self._cache["graph"] = parse_triples(self._path("graph.tsv"))
        return self._cache["graph"]  # type: ignore[return-value]

    def rubric(self) -> RubricConfig:
        return RubricConfig.load(self.cfg.rubric) if self.cfg.rubric else DEFAULT_RUBRIC

    def temperature(self) -> float:
        data = json.loads(self._path("calibration.json").read_text(encoding="utf-8"))
        return float(data["temperature"])

    def _remote(self, url: str) -> RemoteOracle:
        endpoint = JsonEndpoint(url, max_in_flight=self.cfg.max_in_flight, retries=self.cfg.retries)
        return RemoteOracle(endpoint, TEMPLATES[self.cfg.template], temperature=self.temperature())

    def pre_oracle(self) -> BeliefOracle:
        if self.cfg.beliefs is not None:
            return SyntheticOracle(BeliefModelSpec.load(self.cfg.beliefs))
        assert self.cfg.endpoint is not None
        return self._remote(self.cfg.endpoint)

    def post_oracle(self) -> BeliefOracle:
        data = json.loads(self._path("beliefs_post.json").read_text(encoding="utf-8"))
        if "endpoint" in data:
            return self._remote(data["endpoint"])
        return SyntheticOracle(BeliefModelSpec.from_dict(data))

    def targets(self) -> ForgetSet:
        return ForgetSet.load(self._path("targets.json"))

    # -- stages

    def _stage_ingest(self) -> None:
        graph = parse_triples(self.cfg.reference)
        self._cache["graph"] = graph
        atomic_write(self._path("graph.tsv"), graph.to_tsv())
        stats = {
            "entities": len(graph.entities),
            "relations": list(graph.relations),
            "triples": len(graph),
        }
        atomic_write(self._path("graph.json"), json.dumps(stats, indent=1, sort_keys=True) + "\n")

    def _stage_calibrate(self) -> None:
        if self.cfg.calibration_records is None:
            doc = {"fitted": False, "temperature": self.cfg.temperature}
        else:
            records = [LogitRecord(**row) for row in _read_jsonl(self.cfg.calibration_records)]
            report = fit_temperature(records)
            doc = {"fitted": True, **report.to_dict()}
            atomic_write(self._path("reliability.csv"), report.bins_csv())
        atomic_write(self._path("calibration.json"), json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def _stage_sample_targets(self) -> None:
        forget = sample_forget_set(
            self.pre_oracle(),
            self.graph(),
            self.cfg.forget_n,
            self.cfg.forget_bound,
            self.cfg.seed,
            relations=self.cfg.forget_relations or None,
            workers=self.workers,
        )
        atomic_write(self._path("targets.json"), json.dumps(forget.to_dict(), indent=1, sort_keys=True) + "\n")

    def _per_target(self, stage: str, name: str, compute: Callable[[Triple], dict]) -> None:
        """Compute one JSON line per target, resuming from a ``.partial`` file if present."""
        final = self._path(name)
        partial = self._path(name + ".partial")
        header = {"config_hash": self.cfg.digest(stage), "stage_file": name}
        targets = self.targets().targets
        done: list[dict] = []
        if partial.exists():
            lines = _read_jsonl(partial)
            if lines and lines[0] == header:
                done = lines[1:]
                expected = [t.as_dict() for t in targets[: len(done)]]
                if [row["target"] for row in done] != expected:
                    done = []
        if not done:
            partial.write_text(_dump(header) + "\n", encoding="utf-8")
        elif len(done):
            logger.info("%s: resuming after %d of %d targets", name, len(done), len(targets))
        with open(partial, "a", encoding="utf-8") as fh:
            for target in targets[len(done) :]:
                row = compute(target)
                fh.write(_dump(row) + "\n")
                fh.flush()
                done.append(row)
        atomic_write(final, "".join(_dump(row) + "\n" for row in done))
        partial.unlink()

    def _extract_with(self, oracle: BeliefOracle) -> Callable[[Triple], dict]:
        graph, cfg = self.graph(), self.cfg.extraction

        def compute(target: Triple) -> dict:
            sub = extract(oracle, graph, target, cfg, workers=self.workers)
            instance = oracle.probe(target)
            return {"target": target.as_dict(), "subgraph": sub.to_dict(), "instance": instance.to_dict()}

        return compute

    def _stage_extract_pre(self) -> None:
        self._per_target("extract-pre", "subgraphs_pre.jsonl", self._extract_with(self.pre_oracle()))

    def _stage_simulate(self) -> None:
        if self.cfg.beliefs is None:
            if not self.cfg.endpoint_post:
                raise ConfigError("remote runs need probe.endpoint_post for the unlearned model")
            doc = {"endpoint": self.cfg.endpoint_post}
        else:
            base = BeliefModelSpec.load(self.cfg.beliefs)
            doc = apply_pipeline(base, self.cfg.operators, self.targets(), self.graph()).to_dict()
        atomic_write(self._path("beliefs_post.json"), json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def _stage_extract_post(self) -> None:
        self._per_target("extract-post", "subgraphs_post.jsonl", self._extract_with(self.post_oracle()))

    def _stage_judge(self) -> None:
        pre = {Triple.from_dict(r["target"]): r for r in _read_jsonl(self._path("subgraphs_pre.jsonl"))}
        post = {Triple.from_dict(r["target"]): r for r in _read_jsonl(self._path("subgraphs_post.jsonl"))}
        rubric = self.rubric()
        remote = (
            RemoteJudge(
                JsonEndpoint(self.cfg.judge_endpoint, max_in_flight=self.cfg.max_in_flight, retries=self.cfg.retries),
                samples=self.cfg.judge_samples,
            )
            if self.cfg.judge_backend == "remote" and self.cfg.judge_endpoint
            else None
        )
        u_star = self.cfg.extraction.u_star

        def compute(target: Triple) -> dict:
            row: dict = {"target": target.as_dict()}
            for phase, rows in (("pre", pre), ("post", post)):
                sub = SupportingSubgraph.from_dict(rows[target]["subgraph"])
                verdict = rule_judge(sub, target, rubric)
                probe = ProbeResult.from_dict(rows[target]["instance"])
                row[phase] = {
                    "rule": verdict.to_dict(),
                    "instance_score": instance_score(target, probe, u_star, rubric),
                }
                if remote is not None:
                    samples = remote.score_samples(sub, target)
                    row[phase]["remote_samples"] = samples
                    row[phase]["remote_score"] = sorted(samples)[(len(samples) - 1) // 2]
            return row

        self._per_target("judge", "verdicts.jsonl", compute)

    def evaluations(self) -> list[TargetEvaluation]:
        pre = {Triple.from_dict(r["target"]): r for r in _read_jsonl(self._path("subgraphs_pre.jsonl"))}
        post = {Triple.from_dict(r["target"]): r for r in _read_jsonl(self._path("subgraphs_post.jsonl"))}
        use_remote = self.cfg.judge_backend == "remote"
        evals = []
        for row in _read_jsonl(self._path("verdicts.jsonl")):
            t = Triple.from_dict(row["target"])
            key = "remote_score" if use_remote else None

            def score(phase: str) -> int:
                return int(row[phase][key]) if key else int(row[phase]["rule"]["score"])

            evals.append(
                TargetEvaluation(
                    target=t,
                    pre_score=score("pre"),
                    post_score=score("post"),
                    pre_instance_score=row["pre"]["instance_score"],
                    post_instance_score=row["post"]["instance_score"],
                    pre_subgraph=SupportingSubgraph.from_dict(pre[t]["subgraph"]),
                    post_subgraph=SupportingSubgraph.from_dict(post[t]["subgraph"]),
                    pre_instance=ProbeResult.from_dict(pre[t]["instance"]),
                    post_instance=ProbeResult.from_dict(post[t]["instance"]),
                )
            )
        return evals

    def _stage_evaluate(self) -> None:
        evals = self.evaluations()
        scored = [ev for ev in evals if ev.pre_score > 0 and ev.pre_instance_score > 0]
        if len(scored) < len(evals):
            logger.warning("%d target(s) have a zero pre-unlearning score and are left out", len(evals) - len(scored))
        targets = [ev.target for ev in evals]
        exclusion = {t for ev in evals if ev.pre_subgraph for t in ev.pre_subgraph.triples()}
        neighbours = sample_loc_neighbors(
            self.graph(), targets, self.cfg.loc_multiplier, exclusion, self.cfg.seed, hops=self.cfg.loc_hops
        )
        pre = probe_many(self.pre_oracle(), neighbours, self.workers)
        post = probe_many(self.post_oracle(), neighbours, self.workers)
        records = [LocRecord(t, a.argmax_choice, b.argmax_choice) for t, a, b in zip(neighbours, pre, post)]
        atomic_write(
            self._path("loc.jsonl"),
            "".join(_dump({**r.triple.as_dict(), "pre": r.pre_label, "post": r.post_label}) + "\n" for r in records),
        )
        calibration = json.loads(self._path("calibration.json").read_text(encoding="utf-8"))
        report = EvalReport.build(
            scored,
            records,
            gamma=self.cfg.gamma,
            other_consistent=self.cfg.other_consistent,
            calibration={k: calibration[k] for k in ("fitted", "temperature", "ece_yes", "ece_no") if k in calibration},
        )
        doc = report.to_dict()
        doc["judge_backend"] = self.cfg.judge_backend
        if self.cfg.judge_backend == "remote":
            self._add_rule_columns(doc)
        doc["excluded_zero_pre"] = len(evals) - len(scored)
        atomic_write(self._path("evaluation.json"), json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def _add_rule_columns(self, doc: dict) -> None:
        """Attach rule-judge scores next to the remote ones, plus their agreement."""
        verdicts = {Triple.from_dict(r["target"]): r for r in _read_jsonl(self._path("verdicts.jsonl"))}
        rule, remote = [], []
        for row in doc["targets"]:
            v = verdicts[Triple(row["s"], row["r"], row["o"])]
            for phase in ("pre", "post"):
                row[f"{phase}_rule_score"] = v[phase]["rule"]["score"]
                rule.append([v[phase]["rule"]["score"]])
                remote.append(v[phase]["remote_samples"])
        doc["rule_vs_remote"] = agreement(rule, remote).to_dict() if rule else None

    def _stage_report(self) -> None:
        evaluation = json.loads(self._path("evaluation.json").read_text(encoding="utf-8"))
        report = load_report(evaluation)
        doc = {**evaluation, "summary": report.summary_line(), "version": __version__}
        atomic_write(self._path("report.json"), json.dumps(doc, indent=1, sort_keys=True) + "\n")
        atomic_write(self._path("per_target.csv"), report.per_target_csv())
        atomic_write(self._path("confusion.csv"), report.confusion_csv())
        atomic_write(self._path("score_shift.csv"), report.score_shift_csv())
        lines = [
            report.summary_line(),
            f"Recall={_fmt(evaluation['recall'])}, Loc={_fmt(evaluation['loc'])}",
            f"gamma={report.gamma.gamma:g}: {report.gamma.passed} pass, {report.gamma.failed} fail",
            f"judge={evaluation['judge_backend']}, targets={len(report.rows)}",
        ]
        atomic_write(self._path("summary.txt"), "\n".join(lines) + "\n")


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def load_report(doc: dict) -> EvalReport:
    """Rebuild an :class:`EvalReport` from its JSON form."""
    g = doc["gamma"]
    return EvalReport(
        ues_subgraph=doc["ues_subgraph"],
        ues_instance=doc["ues_instance"],
        recall=float("nan") if doc["recall"] is None else doc["recall"],
        loc=float("nan") if doc["loc"] is None else doc["loc"],
        confusion=doc["confusion"]["counts"],
        gamma=GammaResult(g["gamma"], g["passed"], g["failed"]),
        rows=doc["targets"],
        other_consistent=doc["loc_other_consistent"],
        calibration=doc.get("calibration"),
    )

