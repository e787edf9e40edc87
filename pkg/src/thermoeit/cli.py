import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import typer
from loguru import logger

from src.thermoeit import VERSION
from src.thermoeit._config import SettingsManager, load_environment
from src.thermoeit.errors import ConfigError, ThermoEitError
from src.thermoeit.experiment import ExperimentConfig, config_summary
from src.thermoeit.scenarios import (
    MEASUREMENTS_DIR,
    run_cgo_sweep,
    run_forward,
    run_halfspace,
    run_measure,
    run_reconstruct,
    run_spectrum,
)
from src.thermoeit.storage import ArtifactStore
from src.thermoeit.verification import run_checks, write_report

app = typer.Typer(add_completion=False, help="Thermal impedance tomography experiments.")

ConfigOption = typer.Option(None, "--config", "-c", help="Experiment TOML file.")
OutOption = typer.Option(None, "--out", "-o", help="Artifact directory.")
ThreadsOption = typer.Option(None, "--threads", help="Worker threads for independent probes.")
SeedOption = typer.Option(None, "--seed", help="Override the configured seed.")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Log at DEBUG.")


def patch_record(record):
    record["extra"]["service"] = 'thermoeit'
    record["extra"]["timestamp"] = datetime.now(timezone.utc).isoformat()
    record["extra"]["level"] = record['level'].name
    return True


def setup_logging(verbose: bool = False, log_file: Optional[str] = None):
    settings = SettingsManager.get_instance().get_settings()
    level = "DEBUG" if verbose else settings.LOG_LEVEL
    log_file = log_file or settings.LOG_FILE

    logger.remove()
    if log_file:
        logger.add(
            log_file,
            rotation="500 MB",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {message} | {extra}",
            level=level,
            filter=patch_record
        )

    logger.add(
        sys.stdout,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level}</level> | <blue>{message}</blue> | {extra}",
        level=level,
        filter=patch_record,
    )


def _load_config(config: Optional[Path], seed: Optional[int]) -> ExperimentConfig:
    settings = SettingsManager.get_instance().get_settings()
    path = config or (Path(settings.DEFAULT_CONFIG) if settings.DEFAULT_CONFIG else None)
    experiment = ExperimentConfig.load(path) if path else ExperimentConfig().check()
    if seed is not None:
        experiment = experiment.model_copy(update={"seed": seed})
    logger.info("Experiment loaded", **config_summary(experiment))
    return experiment


def _store(out: Optional[Path], experiment: Optional[ExperimentConfig], command: str) -> ArtifactStore:
    if out is not None:
        return ArtifactStore(out)
    if experiment is not None and experiment.output:
        return ArtifactStore(experiment.output)
    settings = SettingsManager.get_instance().get_settings()
    suffix = experiment.digest[:12] if experiment is not None else "run"
    return ArtifactStore(Path(settings.OUTPUT_ROOT) / f"{command}-{suffix}")


def _threads(threads: Optional[int]) -> int:
    return threads if threads is not None else SettingsManager.get_instance().get_settings().THREADS


def _run(command: str, verbose: bool, action):
    setup_logging(verbose)
    logger.info("Starting command", command=command, version=VERSION)
    try:
        code = action() or 0
    except ThermoEitError as e:
        logger.error(f"{command} failed: {e}", code=e.code, exit_code=e.exit_code)
        raise typer.Exit(code=e.exit_code)
    except typer.Exit:
        raise
    except Exception as e:
        logger.exception(f"{command} failed with an unexpected error: {e}")
        raise typer.Exit(code=1)
    raise typer.Exit(code=code)


@app.command()
def forward(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
            threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
            verbose: bool = VerboseOption):
    """Solve the conductivity and heat problems and dump fields and fluxes."""
    def action():
        experiment = _load_config(config, seed)
        run_forward(experiment, _store(out, experiment, "forward"), _threads(threads))
    _run("forward", verbose, action)


@app.command()
def measure(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
            threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
            mode: Optional[str] = typer.Option(None, "--mode", help="sigma (voltage probes) or xi (source probes)."),
            verbose: bool = VerboseOption):
    """Record boundary flux measurements of the configured body."""
    def action():
        if mode not in (None, "sigma", "xi"):
            raise ConfigError(f"--mode must be sigma or xi, got {mode!r}")
        experiment = _load_config(config, seed)
        outcome = run_measure(experiment, _store(out, experiment, "measure"), _threads(threads), mode)
        typer.echo(str(outcome.root / MEASUREMENTS_DIR))
    _run("measure", verbose, action)


@app.command()
def spectrum(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
             threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
             verbose: bool = VerboseOption):
    """Direct Dirichlet eigensolve of P."""
    def action():
        experiment = _load_config(config, seed)
        run_spectrum(experiment, _store(out, experiment, "spectrum"), _threads(threads))
    _run("spectrum", verbose, action)


@app.command()
def reconstruct(measurements: Path = typer.Argument(..., help="Directory written by measure."),
                out: Optional[Path] = OutOption, threads: Optional[int] = ThreadsOption,
                verbose: bool = VerboseOption):
    """Identify γ, the eigenvalues and κ from a measurement directory alone."""
    def action():
        store = ArtifactStore(out) if out is not None else ArtifactStore(measurements.parent / "reconstruction")
        outcome, result = run_reconstruct(measurements, store, _threads(threads))
        if result.failures:
            first = result.failures[0]
            logger.error("Identification stage failed", stage=first.stage, code=first.code)
            return first.exit_code
        typer.echo(str(outcome.root / "report.json"))
    _run("reconstruct", verbose, action)


@app.command()
def verify(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
           threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
           verbose: bool = VerboseOption):
    """Run the coarse property checks; exit 0 only if all pass."""
    def action():
        experiment = _load_config(config, seed)
        results = run_checks(experiment)
        write_report(experiment, _store(out, experiment, "verify"), results)
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error("Verification failed", checks=failed)
            return 4
        logger.info("All verification checks passed", checks=len(results))
    _run("verify", verbose, action)


@app.command()
def halfspace(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
              threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
              verbose: bool = VerboseOption):
    """Probe near-boundary decay on a slab and fit the boundary tensor."""
    def action():
        experiment = _load_config(config, seed)
        run_halfspace(experiment, _store(out, experiment, "halfspace"), _threads(threads))
    _run("halfspace", verbose, action)


@app.command("cgo-sweep")
def cgo_sweep(config: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption,
              threads: Optional[int] = ThreadsOption, seed: Optional[int] = SeedOption,
              verbose: bool = VerboseOption):
    """CGO remainder norms over |ρ| and the density Gram rank."""
    def action():
        experiment = _load_config(config, seed)
        run_cgo_sweep(experiment, _store(out, experiment, "cgo-sweep"), _threads(threads))
    _run("cgo-sweep", verbose, action)


@app.callback()
def main(env_file: Optional[str] = typer.Option(None, "--env-file", help="dotenv file with THERMOEIT_ settings.")):
    load_environment(env_file)
    SettingsManager.get_instance().reload()


if __name__ == "__main__":
    app()
