import logging
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from models.config import AttackMode, ExperimentConfig
from services.experiment_service import ExperimentService
from services.preset_service import PresetService
from tasks.dataset_io import dump_examples, load_splits
from tasks.generators import generate_task
from utils.errors import LabError
from utils.validators import validation_error_paths

__version__ = "1.0.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)

experiment_service = ExperimentService()
preset_service = PresetService()


def configure_logging(quiet: bool):
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format=LOG_FORMAT, force=True)


def load_config(config_path: Optional[Path], preset: Optional[str]) -> ExperimentConfig:
    """Experiment config from a JSON file or a named preset"""
    if (config_path is None) == (preset is None):
        raise click.UsageError("pass exactly one of --config or --preset")
    if preset is not None:
        try:
            return preset_service.build_config(preset)
        except LabError as e:
            raise click.ClickException(str(e)) from None
    try:
        return ExperimentConfig.model_validate_json(config_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        lines = "\n".join(f"  {line}" for line in validation_error_paths(e))
        raise click.ClickException(f"invalid config {config_path}:\n{lines}") from None
    except OSError as e:
        raise click.ClickException(f"cannot read config {config_path}: {e}") from None


def report_problems(response) -> None:
    for warning in response.warnings:
        click.echo(f"warning: {warning}", err=True)
    for error in response.errors:
        click.echo(f"error: {error}", err=True)


config_option = click.option(
    "--config", "config_path", type=click.Path(path_type=Path, dir_okay=False, exists=True),
    default=None, help="Experiment config (JSON)",
)
preset_option = click.option("--preset", default=None, help="Named preset instead of a config file")
out_option = click.option(
    "--out", "out_dir", type=click.Path(path_type=Path, file_okay=False), default=None,
    help="Output directory (defaults to the config's output_dir)",
)


@click.group()
@click.version_option(__version__, prog_name="creat-lab")
@click.option("--quiet", is_flag=True, help="Only log warnings and errors")
def cli(quiet: bool):
    """Adversarial training lab: train, compare, gradcheck and probe toy encoders."""
    configure_logging(quiet)


@cli.command()
@config_option
@preset_option
@out_option
@click.option("--seed", type=int, default=None, help="Override the training seed")
@click.option(
    "--data", "data_dir", type=click.Path(path_type=Path, file_okay=False, exists=True), default=None,
    help="Train on train.jsonl/eval.jsonl written by `dataset` instead of generating the task",
)
def train(config_path, preset, out_dir, seed, data_dir):
    """Train one run; writes metrics.csv, summary.json and checkpoint.bin."""
    config = load_config(config_path, preset)
    splits = None
    if data_dir is not None:
        try:
            splits = load_splits(data_dir, config.train.task)
        except (LabError, OSError) as e:
            raise click.ClickException(str(e)) from None
    response = experiment_service.run_training(config, out_dir, seed=seed, splits=splits)
    report_problems(response)
    if not response.success:
        raise SystemExit(1)
    summary = response.summary
    click.echo(response.run_dir)
    click.echo(
        f"mode={summary.mode} seed={summary.seed} train_acc={summary.final_train_accuracy:.4f} "
        f"eval_acc={summary.final_eval_accuracy:.4f} early_sim_lb={summary.early_sim_lb:.4f}"
    )


@cli.command()
@config_option
@preset_option
@out_option
def compare(config_path, preset, out_dir):
    """Run every mode over every seed and write the comparison report."""
    config = load_config(config_path, preset)
    response = experiment_service.run_comparison(config, out_dir)
    report_problems(response)
    for row in response.rows:
        if row.runs:
            click.echo(
                f"{row.mode:<12} runs={row.runs} failed={row.failed_runs} "
                f"eval_acc={row.eval_accuracy_mean:.4f}±{row.eval_accuracy_var:.2e} "
                f"early_benign={row.early_benign_loss:.4f} early_adv={row.early_adv_loss:.4f} "
                f"early_sim_lb={row.early_sim_lb:.4f}"
            )
        else:
            click.echo(f"{row.mode:<12} runs=0 failed={row.failed_runs}")
    if response.report_path:
        click.echo(response.report_path)
    if not response.success:
        raise SystemExit(1)


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the random test inputs")
def gradcheck(seed):
    """Finite-difference check of every primitive and the full toy model."""
    response = experiment_service.run_gradcheck(seed)
    for entry in response.entries:
        status = "ok" if entry.passed else "FAIL"
        click.echo(f"{entry.op:<32} {entry.max_relative_error:.3e} ({entry.checked_coordinates} coords) {status}")
    report_problems(response)
    if not response.success:
        raise SystemExit(1)


@cli.command()
@click.option(
    "--checkpoint", type=click.Path(path_type=Path, dir_okay=False, exists=True), required=True,
    help="Trained checkpoint to probe",
)
@config_option
@preset_option
@out_option
@click.option("--seed", type=int, default=None, help="Override the attack seed")
@click.option(
    "--mode", "modes", multiple=True, type=click.Choice([m.value for m in AttackMode]),
    help="Attack modes to probe (default: the config's modes, else all)",
)
def probe(checkpoint, config_path, preset, out_dir, seed, modes):
    """Layer-wise hidden similarity and attention KL under each attack."""
    config = load_config(config_path, preset)
    if modes:
        config.modes = [AttackMode(m) for m in modes]
    response = experiment_service.run_probe(checkpoint, config, out_dir, seed=seed)
    report_problems(response)
    if not response.success:
        raise SystemExit(1)
    for row in response.rows:
        sims = " ".join(f"{v:.4f}" for v in row.layer_sim)
        kls = " ".join(f"{v:.2e}" for v in row.attn_kl)
        click.echo(f"{row.mode:<12} sim [{sims}] kl [{kls}]")
    click.echo(response.report_path)


@cli.command()
@config_option
@preset_option
@out_option
def dataset(config_path, preset, out_dir):
    """Write the configured task's train/eval splits as JSON lines."""
    config = load_config(config_path, preset)
    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    try:
        splits = generate_task(config.train.task)
        for name, data in (("train", splits.train), ("eval", splits.eval)):
            click.echo(dump_examples(out_dir / f"{name}.jsonl", data))
    except LabError as e:
        raise click.ClickException(str(e)) from None


@cli.command()
@click.option("--category", default=None, help="Only presets of this category")
def presets(category):
    """List the named presets."""
    listed = preset_service.get_all_presets() if category is None else preset_service.get_presets_by_category(category)
    if not listed:
        raise click.ClickException(f"no presets in category {category!r}")
    for preset in listed:
        click.echo(f"{preset['name']:<20} {preset['category']:<12} {preset['description']}")


if __name__ == "__main__":
    cli()
