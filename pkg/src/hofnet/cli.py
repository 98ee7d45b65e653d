"""Command-line interface for the trajectory-network pipeline.

Stages share one output directory; ``manifest.json`` ties their artifacts
together.  Exit codes: 0 on success, 2 for configuration or input validation
problems, 1 for unexpected internal errors.
"""

from __future__ import annotations

import sys

import click

from . import pipeline as pl
from .backend import active_backend
from .config import ConfigError, parse_config
from .corpus import SequenceFormatError
from .fields import DomainError, FieldFormatError
from .networks import BundleFormatError

_USAGE_ERRORS = (ConfigError, pl.PipelineError, SequenceFormatError,
                 FieldFormatError, BundleFormatError, DomainError,
                 FileNotFoundError)


def _load(config_path: str):
    return parse_config(config_path)


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _USAGE_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


config_opt = click.option("--config", "config_path", required=True,
                          type=click.Path(), help="INI run configuration.")
out_opt = click.option("--out", "out_dir", default="out", show_default=True,
                       type=click.Path(), help="Output directory shared by all stages.")
seed_opt = click.option("--seed", type=int, default=None,
                        help="Override the corpus RNG seed from the config.")
kind_opt = click.option("--kind", type=str, default=None,
                        help="Restrict to one network kind (fon, fixed, variable, flowhon).")
order_opt = click.option("--order", type=int, default=None,
                         help="Restrict to one order (with --kind).")


@click.group()
@click.version_option(package_name="hofnet")
def main() -> None:
    """Higher-order trajectory networks for steady flow fields."""


@main.command()
@config_opt
@out_opt
@seed_opt
def trace(config_path, out_dir, seed):
    """Seed, trace, and write the block-sequence corpus."""
    cfg = _run(_load, config_path)
    info = _run(pl.stage_trace, cfg, out_dir, seed)
    click.echo(f"traced {info['sequences']} sequences "
               f"(corpus {info['corpus_hash'][:12]}, backend {active_backend()})")


@main.command()
@config_opt
@out_opt
@kind_opt
@order_opt
def build(config_path, out_dir, kind, order):
    """Construct (and where configured, optimize) networks from the corpus."""
    cfg = _run(_load, config_path)
    info = _run(pl.stage_build, cfg, out_dir, kind, order)
    for slug in info["built"]:
        click.echo(f"built {slug} ({info['timings'][slug]:.1f}s)")


@main.command("eval-density")
@config_opt
@out_opt
@kind_opt
@order_opt
def eval_density(config_path, out_dir, kind, order):
    """Evaluate particle-density estimation error on the test split."""
    cfg = _run(_load, config_path)
    reports = _run(pl.stage_eval_density, cfg, out_dir, kind, order)
    for r in reports:
        click.echo(f"{r.kind}: total {r.total:.6f} over {r.horizon} steps "
                   f"({r.nodes} nodes)")


@main.command("eval-communities")
@config_opt
@out_opt
@kind_opt
@order_opt
def eval_communities(config_path, out_dir, kind, order):
    """Sweep the Markov time and write partitions plus the trade-off curve."""
    cfg = _run(_load, config_path)
    results = _run(pl.stage_eval_communities, cfg, out_dir, kind, order)
    for slug, points in results.items():
        front = sum(1 for p in points if p.pareto)
        click.echo(f"{slug}: {len(points)} sweep points, {front} on the front")


@main.command("export-ui")
@config_opt
@out_opt
@kind_opt
@order_opt
@seed_opt
def export_ui(config_path, out_dir, kind, order, seed):
    """Write the interactive-exploration bundle (nodes, edges, streamlines)."""
    cfg = _run(_load, config_path)
    outputs = _run(pl.stage_export_ui, cfg, out_dir, kind, order, seed)
    for name in outputs:
        click.echo(f"wrote {name}")


@main.command("all")
@config_opt
@out_opt
@seed_opt
def run_all(config_path, out_dir, seed):
    """Run every stage in order: trace, build, eval, export."""
    cfg = _run(_load, config_path)
    _run(pl.run_all, cfg, out_dir, seed)
    click.echo("pipeline complete")


if __name__ == "__main__":  # pragma: no cover
    main()
