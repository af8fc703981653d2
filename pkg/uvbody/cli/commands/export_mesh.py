#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Export-mesh command."""
from pathlib import Path

import click

from uvbody.body_model import Mesh
from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.fsdata import load_tensor, write_obj
from uvbody.store import load_model
from uvbody.vars import MESH_FILE, MODEL_DIR


def export(config: Config, model_dir: str, sample: str, out: str):
    """Pair stored vertices with the model's faces and write OBJ."""

    logger = preflight_logger(config, "export-mesh")
    model = load_model(Path(model_dir) / MODEL_DIR)
    mesh = Mesh(vertices=load_tensor(Path(sample) / MESH_FILE), faces=model.faces)
    write_obj(out, mesh)
    logger.info(f"Exported {len(mesh.vertices)} vertices to {out}")


@click.command()
@click.option(
    "--model",
    "model_dir",
    required=True,
    help="Directory holding a saved model (gen-data or train-ik output).",
)
@click.option("--sample", required=True, help="Sample or prediction directory.")
@click.option("--out", required=True, help="OBJ file to write.")
@click.pass_context
@raise_click_errors
def cli(ctx, model_dir, sample, out):
    """Write the mesh of a sample or prediction as Wavefront OBJ."""

    export(ctx.obj, model_dir, sample, out)
    click.echo(f"Wrote {out}")
