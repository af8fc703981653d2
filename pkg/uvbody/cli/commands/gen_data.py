#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Gen-data command."""
from pathlib import Path

import click

from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.cli.config import RunConfig
from uvbody.pipeline import PipelineContext, generate_sample
from uvbody.store import DirectorySampleStore


def generate(config: Config, run_config_path: str, out: str, count: int):
    """Build the model once and write ``count`` samples plus the run config."""

    logger = preflight_logger(config, "gen-data")
    if count <= 0:
        raise ValueError(f"--count must be positive, got {count}")
    run_config = RunConfig.from_file(run_config_path)
    ctx = PipelineContext.from_config(run_config, logger=logger)
    out_dir = Path(out)
    ctx.save(out_dir)
    store = DirectorySampleStore(out_dir)
    for index in range(count):
        store.put(generate_sample(ctx, index))
        logger.debug(f"Generated sample {index}")
    logger.info(f"Wrote {count} samples to {out_dir}")
    click.echo(f"Wrote {count} samples to {out_dir}")


@click.command()
@click.option("--config", "run_config", required=True, help="Run config file.")
@click.option("--out", required=True, help="Output data directory.")
@click.option("--count", default=1, show_default=True, help="Number of samples.")
@click.pass_context
@raise_click_errors
def cli(ctx, run_config, out, count):
    """
    Generate synthetic samples.

    Each sample holds pose, shape, camera, clean and occluded image maps and
    ground truth UV maps. The model, atlas and run config are saved too.
    """

    generate(ctx.obj, run_config, out, count)
