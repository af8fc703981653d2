#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Eval command."""
import typing as t

import click
import numpy as np
from prettytable import PrettyTable

from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.fsdata import write_csv
from uvbody.losses import mpjpe, mpve, pa_mpjpe
from uvbody.store import DirectorySampleStore

REPORT_FIELDS = ("sample", "mpjpe_mm", "pa_mpjpe_mm", "mpve_mm")


def evaluate(config: Config, pred: str, gt: str, out: str) -> t.List[t.Dict]:
    """Score every ground truth sample against its prediction."""

    logger = preflight_logger(config, "eval")
    pred_store = DirectorySampleStore(pred)
    gt_store = DirectorySampleStore(gt)
    indices = gt_store.all()
    if not indices:
        raise ValueError(f"No samples found in {gt}")

    rows = []
    for index in indices:
        predicted = pred_store.get_joints_and_mesh(index)
        truth = gt_store.get_joints_and_mesh(index)
        if predicted is None or truth is None:
            raise OSError(f"No prediction for sample {index} in {pred}")
        rows.append(
            {
                "sample": index,
                "mpjpe_mm": mpjpe(predicted[0], truth[0]),
                "pa_mpjpe_mm": pa_mpjpe(predicted[0], truth[0]),
                "mpve_mm": mpve(predicted[1], truth[1]),
            }
        )
    mean = {"sample": "mean"}
    for key in REPORT_FIELDS[1:]:
        mean[key] = float(np.mean([row[key] for row in rows]))
    rows.append(mean)
    write_csv(out, REPORT_FIELDS, rows)
    logger.info(f"Wrote report for {len(indices)} samples to {out}")
    return rows


@click.command()
@click.option("--pred", required=True, help="Directory written by run-pipeline.")
@click.option("--gt", required=True, help="Directory written by gen-data.")
@click.option("--out", required=True, help="Report CSV path.")
@click.pass_context
@raise_click_errors
def cli(ctx, pred, gt, out):
    """Report MPJPE, PA-MPJPE and MPVE in millimeters per sample and mean."""

    rows = evaluate(ctx.obj, pred, gt, out)
    table = PrettyTable()
    table.field_names = ["Sample", "MPJPE", "PA-MPJPE", "MPVE"]
    for row in rows:
        table.add_row(
            [row["sample"]] + [f"{row[key]:.2f}" for key in REPORT_FIELDS[1:]]
        )
    click.echo(table)
