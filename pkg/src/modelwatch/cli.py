"""Command line entry point.

Exit codes: 0 success / no drift, 2 drift detected (``analyze``), 1 error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from .config import load_config
from .core import HeaderMismatch, ValidationError, infer_schema, load_reference_set, read_csv_rows
from .drift.detector import DriftConfig, DriftDetector, InsufficientBatch
from .drift.preprocess import PreprocessorError

EXIT_DRIFT = 2


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _dump(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at INFO level.")
def main(verbose: bool) -> None:
    """Model monitoring sidecar: serve, analyze, replay and simulate."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(), envvar="MODELWATCH_CONFIG", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(config_path: str, host: str, port: int) -> None:
    """Run the gateway and all monitoring consumers."""
    import uvicorn

    from .service.app import create_app

    try:
        config = load_config(config_path)
    except FileNotFoundError:
        _fail(f"config file not found: {config_path}")
    except (ValueError, yaml.YAMLError) as exc:
        _fail(f"invalid config {config_path}: {exc}")
    ref_path = config.resolve(config.reference)
    if ref_path is None:
        _fail("config does not name a reference CSV")
    if not ref_path.exists():
        _fail(f"reference file not found: {ref_path}")
    try:
        app = create_app(config)
    except (HeaderMismatch, ValidationError, ValueError, OSError) as exc:
        _fail(f"cannot start service: {exc}")
    # uvicorn turns SIGTERM into a lifespan shutdown, which drains the broker and closes sinks
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command()
@click.option("--reference", "reference_path", type=click.Path(), required=True)
@click.option("--batch", "batch_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), help="Service config supplying schema and drift keys.")
@click.option("--method", type=click.Choice(["ks", "mmd"]))
@click.option("--preprocessor", type=click.Choice(["identity", "random_projection"]))
@click.option("--projection-dim", type=int)
@click.option("--alpha", type=float)
@click.option("--correction", type=click.Choice(["bonferroni", "fdr_bh"]))
@click.option("--min-batch", type=int)
@click.option("--n-permutations", type=int)
@click.option("--seed", type=int)
@click.option("--reference-cap", type=int)
def analyze(reference_path: str, batch_path: str, config_path: str | None, **flags) -> None:
    """Offline drift test of a batch CSV against a reference CSV."""
    try:
        if config_path:
            cfg = load_config(config_path)
            schema = cfg.feature_schema()
            base = cfg.drift.model_dump()
        else:
            schema = infer_schema(reference_path)
            base = {}
        base.pop("label", None)
        base.update({k: v for k, v in flags.items() if v is not None})
        drift_config = DriftConfig(**base)
        reference = load_reference_set(reference_path, schema)
        batch = read_csv_rows(batch_path, schema)
        report = DriftDetector(reference, drift_config).run(batch)
    except FileNotFoundError as exc:
        _fail(f"file not found: {exc.filename}")
    except (HeaderMismatch, ValidationError, InsufficientBatch, PreprocessorError, ValueError, TypeError) as exc:
        _fail(str(exc))
    _dump(report.to_dict())
    sys.exit(EXIT_DRIFT if report.drift_detected else 0)


@main.command()
@click.option("--events", "events_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), required=True)
def replay(events_path: str, config_path: str) -> None:
    """Feed a stored event log through the monitoring consumers and summarize."""
    from .pipeline import Monitor, load_reference, read_event_log

    try:
        config = load_config(config_path)
        # never append to the log being replayed
        config.sinks.events_path = None
        reference = load_reference(config)
        events = read_event_log(events_path)
    except FileNotFoundError as exc:
        _fail(f"file not found: {exc.filename or exc}")
    except (HeaderMismatch, ValidationError, ValueError, yaml.YAMLError) as exc:
        _fail(f"{events_path}: {exc}" if str(exc).startswith("line ") else str(exc))
    monitor = Monitor(config, reference)
    try:
        summary = monitor.replay(events)
    finally:
        monitor.close()
    _dump(summary)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def simulate(spec_path: str, out_dir: str) -> None:
    """Write a seeded reference CSV, a prediction stream and a ready-to-use config."""
    from .simulate import SimulationSpec, write_simulation

    try:
        text = Path(spec_path).read_text(encoding="utf-8")
        data = json.loads(text) if spec_path.endswith(".json") else yaml.safe_load(text)
        spec = SimulationSpec.from_dict(data)
    except FileNotFoundError:
        _fail(f"spec file not found: {spec_path}")
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        _fail(f"invalid simulation spec: {exc}")
    paths = write_simulation(spec, out_dir)
    _dump({k: str(v) for k, v in paths.items()})


if __name__ == "__main__":
    main()
