"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic EMBD/CSV dataset),
``schedule`` (emit a task schedule as JSON), ``run`` (execute an
experiment from a config file or flags), ``report`` (render a results
bundle). Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical error. ``FROZENCIL_THREADS`` caps per-seed parallelism.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from . import dataio, runner
from .errors import FrozencilError


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FrozencilError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
def main():
    """Replay-free class-incremental learning on frozen embeddings."""


@main.command()
@click.option("--classes", "n_classes", type=int, required=True, help="Number of classes.")
@click.option("--dim", type=int, required=True, help="Embedding dimension.")
@click.option("--samples-per-class", type=int, default=150, show_default=True)
@click.option("--mean-scale", type=float, default=10.0, show_default=True)
@click.option("--noise-std", type=float, default=1.0, show_default=True)
@click.option(
    "--split-fractions", nargs=3, type=float, default=(0.7, 0.15, 0.15), show_default=True
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["embd", "csv"]), default="embd", show_default=True)
@_handle_errors
def synth(n_classes, dim, samples_per_class, mean_scale, noise_std, split_fractions, seed, out, fmt):
    """Generate a synthetic Gaussian-cluster embedding dataset."""
    spec = dataio.SynthSpec(
        n_classes=n_classes,
        dim=dim,
        samples_per_class=samples_per_class,
        mean_scale=mean_scale,
        noise_std=noise_std,
        split_fractions=tuple(split_fractions),
        seed=seed,
    )
    dataset = dataio.generate_synthetic(spec)
    dataio.save_dataset(dataset, out, fmt)
    click.echo(f"wrote {len(dataset)} records ({n_classes} classes, d={dim}) to {out}")


@main.command()
@click.option("--classes", "n_classes", type=int, required=True)
@click.option("--tasks", "n_tasks", type=int, required=True)
@click.option("--order", type=click.Choice(["contiguous", "shuffled"]), default="contiguous", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write JSON here instead of stdout.")
@_handle_errors
def schedule(n_classes, n_tasks, order, seed, out):
    """Emit a task schedule as JSON."""
    sched = dataio.make_task_schedule(n_classes, n_tasks, order, seed)
    doc = json.dumps({"tasks": sched.to_lists()}, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(doc + "\n")
    else:
        click.echo(doc)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON experiment config (mirrors ExperimentConfig fields).")
@click.option("--data", type=click.Path(), default=None, help="Dataset path (EMBD or CSV).")
@click.option("--method", default=None, help="mlp, single, joint, or nmc:<variant>.")
@click.option("--tasks", "n_tasks", type=int, default=None)
@click.option("--order", type=click.Choice(["contiguous", "shuffled"]), default="contiguous", show_default=True)
@click.option("--seed", "seeds", type=int, multiple=True, help="Repeatable; default 0 1 2.")
@click.option("--out", type=click.Path(), default=None, help="Write the bundle JSON here.")
@_handle_errors
def run(config_path, data, method, n_tasks, order, seeds, out):
    """Run a class-incremental experiment and emit a results bundle."""
    if config_path:
        with open(config_path) as fh:
            config = runner.ExperimentConfig.from_dict(json.load(fh))
    else:
        if not data or not method:
            raise click.UsageError("provide --config, or both --data and --method")
        config = runner.ExperimentConfig(
            dataset_path=data,
            method=method,
            schedule=runner.ScheduleConfig(n_tasks=n_tasks, order=order),
        )
    if seeds:
        config.seeds = list(seeds)
    bundle = runner.run_experiment(config)
    doc = bundle.to_json()
    if out:
        with open(out, "w") as fh:
            fh.write(doc + "\n")
        click.echo(f"wrote bundle to {out}")
    else:
        click.echo(doc)


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["md", "csv", "json"]), default="md", show_default=True)
@_handle_errors
def report(bundle_path, fmt):
    """Render a results bundle as markdown, CSV, or JSON."""
    bundle = runner.load_bundle(bundle_path)
    click.echo(runner.render_report(bundle, fmt), nl=False)


if __name__ == "__main__":
    main()
