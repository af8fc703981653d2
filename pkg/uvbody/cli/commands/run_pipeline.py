#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Run-pipeline command."""
import typing as t
from pathlib import Path

import click

from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.fsdata import write_obj
from uvbody.pipeline import FUSION_MODES, IK_MODES, PipelineContext, run_pipeline
from uvbody.store import DirectorySampleStore, parse_sample_dir
from uvbody.vars import MESH_OBJ_FILE


def _sample_dirs(samples: t.Sequence[str], data: t.Optional[str]) -> t.List[Path]:
    dirs = [Path(s) for s in samples]
    if data is not None:
        store = DirectorySampleStore(data)
        dirs += [store.path_of(i) for i in store.all()]
    if not dirs:
        raise ValueError("Give at least one --sample or a --data directory")
    return dirs


def reconstruct(
    config: Config,
    ckpt: str,
    samples: t.Sequence[str],
    data: t.Optional[str],
    out: str,
    ik_mode: str,
    maps_kind: str,
    fusion_mode: str,
):
    """Run inference on every requested sample."""

    logger = preflight_logger(config, "run-pipeline")
    ctx = PipelineContext.from_dir(ckpt, with_nets=True, logger=logger)
    out_store = DirectorySampleStore(out)
    for directory in _sample_dirs(samples, data):
        root, index = parse_sample_dir(directory)
        sample = DirectorySampleStore(root).get(index, ctx.model.faces)
        if sample is None:
            raise OSError(f"Sample directory does not exist: {directory}")
        maps = sample.image_maps if maps_kind == "clean" else sample.image_maps_occluded
        result = run_pipeline(ctx, maps, ik_mode=ik_mode, fusion_mode=fusion_mode)
        out_store.put_prediction(result.to_prediction(index))
        write_obj(out_store.path_of(index) / MESH_OBJ_FILE, result.mesh)
        logger.info(
            f"Sample {index}: fused sources {result.fused.source_counts()}"
        )
        click.echo(f"Wrote {out_store.path_of(index)}")


@click.command()
@click.option("--ckpt", required=True, help="Checkpoint directory from train-ik.")
@click.option(
    "--sample", "samples", multiple=True, help="Sample directory, repeatable."
)
@click.option("--data", default=None, help="Run on every sample in a directory.")
@click.option("--out", required=True, help="Output directory.")
@click.option(
    "--ik",
    "ik_mode",
    type=click.Choice(IK_MODES),
    default="gik",
    show_default=True,
    help="Learned IK alone, or refined with numerical IK.",
)
@click.option(
    "--maps",
    "maps_kind",
    type=click.Choice(("clean", "occluded")),
    default="occluded",
    show_default=True,
    help="Which stored image maps to reconstruct from.",
)
@click.option(
    "--fusion",
    "fusion_mode",
    type=click.Choice(FUSION_MODES),
    default="full",
    show_default=True,
    help="Fuse both sources, or use one of them alone.",
)
@click.pass_context
@raise_click_errors
def cli(ctx, ckpt, samples, data, out, ik_mode, maps_kind, fusion_mode):
    """
    Reconstruct joints and mesh from stored image maps.

    Writes fused UV maps, joints, pose, shape and the mesh as container and OBJ.
    """

    reconstruct(
        ctx.obj, ckpt, samples, data, out, ik_mode, maps_kind, fusion_mode
    )
