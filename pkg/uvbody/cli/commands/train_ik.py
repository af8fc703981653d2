#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Train-ik command."""
from dataclasses import replace

import click
from prettytable import PrettyTable

from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.cli.config import RunConfig
from uvbody.pipeline import PipelineContext, train_networks
from uvbody.store import save_checkpoint


def train(config: Config, run_config_path: str, data: str, out: str):
    """Train on the model stored with a data directory and save a checkpoint."""

    logger = preflight_logger(config, "train-ik")
    run_config = RunConfig.from_file(run_config_path)
    data_ctx = PipelineContext.from_dir(data, logger=logger)
    stored = data_ctx.run_config
    if (
        stored.model_config() != run_config.model_config()
        or stored.atlas_resolution != run_config.atlas_resolution
    ):
        raise ValueError(
            f"Model settings in {run_config_path} differ from the data in {data}"
        )
    ctx = replace(data_ctx, run_config=run_config)
    result = train_networks(ctx)
    ctx.save(out)
    save_checkpoint(out, result, dataset_size=run_config.mocap_count)

    table = PrettyTable()
    table.field_names = ["Epoch", "l_ji", "l_theta", "l_beta", "l_vi"]
    for row in result.curve:
        table.add_row(
            [
                row.epoch,
                f"{row.l_ji:.5f}",
                f"{row.l_theta:.5f}",
                f"{row.l_beta:.5f}",
                f"{row.l_vi:.5f}",
            ]
        )
    click.echo(table)


@click.command()
@click.option("--config", "run_config", required=True, help="Run config file.")
@click.option("--data", required=True, help="Directory written by gen-data.")
@click.option("--out", required=True, help="Checkpoint directory.")
@click.pass_context
@raise_click_errors
def cli(ctx, run_config, data, out):
    """
    Train the joint inpainting and GIK networks.

    Writes network weights, a manifest, the loss curve CSV and everything
    run-pipeline needs to rebuild the model.
    """

    train(ctx.obj, run_config, data, out)
