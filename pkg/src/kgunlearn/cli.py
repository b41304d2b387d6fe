"""Command-line entry point: ``kgunlearn <stage> --config run.ini --run-dir runs/x``."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import click

from . import __version__
from .judge import DEFAULT_RUBRIC, RubricConfig
from .pipeline import (
    ConfigError,
    DependencyError,
    RunConfig,
    RunLockedError,
    Runner,
    StageOutcome,
    StalenessError,
)
from .probe import (
    TEMPLATES,
    BeliefModelSpec,
    RemoteOracle,
    SyntheticOracle,
    load_labeled_triples,
    select_template,
)
from .toy import toy_config, toy_world
from .transport import ProtocolError, TransportError

EXIT_OK, EXIT_VALIDATION, EXIT_DEPENDENCY, EXIT_TRANSPORT = 0, 2, 3, 4


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _handle_errors(fn: Callable) -> Callable:
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DependencyError, StalenessError, RunLockedError) as exc:
            _fail(EXIT_DEPENDENCY, str(exc))
        except (TransportError, ProtocolError) as exc:
            _fail(EXIT_TRANSPORT, str(exc))
        except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
            _fail(EXIT_VALIDATION, str(exc))

    return wrapper


def run_options(fn: Callable) -> Callable:
    fn = click.option("--seed", type=int, default=None, help="Override [run] seed.")(fn)
    fn = click.option("--workers", type=int, default=1, show_default=True, help="Parallel probes per phase.")(fn)
    fn = click.option("--force", is_flag=True, help="Rerun even if the stage is up to date or stale.")(fn)
    fn = click.option("--run-dir", type=click.Path(file_okay=False, path_type=Path), required=True)(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True)(fn)
    return fn


def _runner(config_path: Path, run_dir: Path, workers: int, seed: int | None) -> Runner:
    return Runner(RunConfig.load(config_path, seed=seed), run_dir, workers=workers)


def _echo_outcome(outcome: StageOutcome) -> None:
    click.echo(f"{outcome.stage}: {outcome.status}")


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Evaluate knowledge unlearning through supporting-subgraph inference."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _stage_command(name: str, stage: str, help_text: str) -> None:
    @main.command(name, help=help_text)
    @run_options
    @_handle_errors
    def command(config_path: Path, run_dir: Path, force: bool, workers: int, seed: int | None) -> None:
        _echo_outcome(_runner(config_path, run_dir, workers, seed).run_stage(stage, force=force))


_stage_command("ingest", "ingest", "Parse the reference graph into the run directory.")
_stage_command("calibrate", "calibrate", "Fit the probe temperature (or record the configured one).")
_stage_command("sample-targets", "sample-targets", "Draw the forget set from believed reference triples.")
_stage_command("simulate", "simulate", "Build the post-unlearning belief model.")
_stage_command("judge", "judge", "Score pre- and post-unlearning subgraphs.")
_stage_command("evaluate", "evaluate", "Compute UES, Recall, Loc and gamma counts.")


@main.command(help="Extract supporting subgraphs before or after unlearning.")
@click.option("--phase", type=click.Choice(["pre", "post"]), required=True)
@run_options
@_handle_errors
def extract(phase: str, config_path: Path, run_dir: Path, force: bool, workers: int, seed: int | None) -> None:
    _echo_outcome(_runner(config_path, run_dir, workers, seed).run_stage(f"extract-{phase}", force=force))


@main.command(help="Write report.json, CSV exports and a summary.")
@run_options
@_handle_errors
def report(config_path: Path, run_dir: Path, force: bool, workers: int, seed: int | None) -> None:
    runner = _runner(config_path, run_dir, workers, seed)
    _echo_outcome(runner.run_stage("report", force=force))
    click.echo((run_dir / "summary.txt").read_text(encoding="utf-8"), nl=False)


@main.command(help="Run every stage in order, skipping those already up to date.")
@run_options
@_handle_errors
def run(config_path: Path, run_dir: Path, force: bool, workers: int, seed: int | None) -> None:
    runner = _runner(config_path, run_dir, workers, seed)
    runner.run_all(force=force, on_stage=_echo_outcome)
    click.echo((run_dir / "summary.txt").read_text(encoding="utf-8"), nl=False)


@main.command("validate-template", help="Score probe templates on a labelled triple file.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--labels", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True,
              help="TSV of subject, relation, object, positive|negative.")
@click.option("--template", "template_names", multiple=True, help="Template name(s); default: all.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write JSON results here.")
@_handle_errors
def validate_template_cmd(config_path: Path, labels: Path, template_names: tuple[str, ...], workers: int, out: Path | None) -> None:
    cfg = RunConfig.load(config_path)
    if cfg.beliefs is not None:
        oracle = SyntheticOracle(BeliefModelSpec.load(cfg.beliefs))
    else:
        oracle = RemoteOracle(cfg.endpoint, temperature=cfg.temperature)  # type: ignore[arg-type]
    names = template_names or tuple(TEMPLATES)
    unknown = [n for n in names if n not in TEMPLATES]
    if unknown:
        raise ConfigError(f"unknown template(s) {unknown}")
    best, results = select_template(oracle, [TEMPLATES[n] for n in names], load_labeled_triples(labels), workers=workers)
    for res in results:
        click.echo(f"{res.template}: accuracy={res.accuracy:.4f} ({res.n_correct}/{res.n_items})")
    click.echo(f"selected: {best.name}")
    if out is not None:
        out.write_text(json.dumps({"selected": best.name, "results": [r.to_dict() for r in results]}, indent=1) + "\n")


@main.command(help="Write the bundled toy world (graph, beliefs, config) to a directory.")
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--targets", "n_targets", type=int, default=20, show_default=True)
@click.option("--correlated", is_flag=True, help="Add correlated damage to the unlearning operators.")
def toy(out_dir: Path, n_targets: int, correlated: bool) -> None:
    paths = toy_world(n_targets).write(out_dir)
    paths["config"].write_text(toy_config(n_targets, correlated=correlated), encoding="utf-8")
    click.echo(f"wrote {', '.join(str(p) for p in paths.values())}")


@main.command(help="Serve the synthetic probe and rule judge over HTTP.")
@click.option("--beliefs", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--rubric", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None)
@click.option("--template", default="qwen", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(beliefs: Path, rubric: Path | None, template: str, host: str, port: int) -> None:
    import uvicorn

    from .service import create_app

    app = create_app(
        BeliefModelSpec.load(beliefs),
        rubric=RubricConfig.load(rubric) if rubric else DEFAULT_RUBRIC,
        template=TEMPLATES[template],
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
