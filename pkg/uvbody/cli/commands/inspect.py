#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Inspect command."""
import typing as t
from pathlib import Path

import click
import numpy as np
from prettytable import PrettyTable

from uvbody.cli.cli import Config, preflight_logger, raise_click_errors
from uvbody.dense_maps import warp_image_to_uv
from uvbody.fsdata import load_tensor, write_index_png, write_mask_png
from uvbody.pipeline import PipelineContext
from uvbody.store import DirectorySampleStore, parse_sample_dir
from uvbody.uv_fusion import FusedUVMaps, SourceTag
from uvbody.vars import (
    FUSED_FILE,
    IMAGE_MAPS_FILE,
    LSP_JOINT_NAMES,
    NUM_LSP_JOINTS,
    PALETTE,
)

PART_PNG = "part_segmentation.png"
MASK_PNG = "image_mask.png"
IMAGE_PARTS_PNG = "image_parts.png"
OCCLUDED_MASK_PNG = "image_mask_occluded.png"
SOURCE_PNG = "fused_source.png"


def _labels(part: np.ndarray) -> np.ndarray:
    """Background maps to palette entry 0, part k to k + 1."""

    return part + 1


def inspect_dirs(
    config: Config, model_dir: str, sample: t.Optional[str], out: str
) -> PrettyTable:
    """Write PNGs and build a per-part statistics table."""

    logger = preflight_logger(config, "inspect")
    ctx = PipelineContext.from_dir(model_dir, logger=logger)
    out_dir = Path(out)
    write_index_png(out_dir / PART_PNG, _labels(ctx.part_seg.assign), PALETTE)

    columns: t.Dict[str, np.ndarray] = {"Texels": ctx.part_seg.counts()}
    sample_dir = Path(sample) if sample is not None else None
    if sample_dir is not None and not sample_dir.is_dir():
        raise OSError(f"Sample directory does not exist: {sample_dir}")
    # predictions have no image maps
    if sample_dir is not None and (sample_dir / IMAGE_MAPS_FILE).is_file():
        root, index = parse_sample_dir(sample_dir)
        loaded = DirectorySampleStore(root).get(index, ctx.model.faces)
        if loaded is None:
            raise OSError(f"Sample directory does not exist: {sample_dir}")
        # image rows grow with y, flip so the body stands upright
        write_mask_png(out_dir / MASK_PNG, np.flipud(loaded.image_maps.mask))
        write_mask_png(
            out_dir / OCCLUDED_MASK_PNG,
            np.flipud(loaded.image_maps_occluded.mask),
        )
        write_index_png(
            out_dir / IMAGE_PARTS_PNG,
            np.flipud(_labels(loaded.image_maps.part)),
            PALETTE,
        )
        part = loaded.image_maps.part
        columns["Pixels"] = np.bincount(
            part[loaded.image_maps.mask & (part >= 0)], minlength=NUM_LSP_JOINTS
        )
        for name, maps in (
            ("Valid", loaded.image_maps),
            ("Valid occluded", loaded.image_maps_occluded),
        ):
            columns[name] = warp_image_to_uv(maps, ctx.atlas).part_counts(
                ctx.part_seg
            )

    fused_path = sample_dir / FUSED_FILE if sample_dir is not None else None
    if fused_path is not None and fused_path.is_file():
        fused = FusedUVMaps.unpack(load_tensor(fused_path))
        write_index_png(out_dir / SOURCE_PNG, fused.source, PALETTE)
        for tag in SourceTag:
            if tag == SourceTag.BACKGROUND:
                continue
            mask = (fused.source == tag) & (ctx.part_seg.assign >= 0)
            columns[f"Fused {tag.name.lower()}"] = np.bincount(
                ctx.part_seg.assign[mask], minlength=NUM_LSP_JOINTS
            )

    table = PrettyTable()
    table.field_names = ["Part"] + list(columns)
    for label, name in enumerate(LSP_JOINT_NAMES):
        table.add_row([name] + [int(values[label]) for values in columns.values()])
    logger.info(f"Wrote inspection images to {out_dir}")
    return table


@click.command()
@click.option(
    "--model",
    "model_dir",
    required=True,
    help="Directory holding a saved model (gen-data or train-ik output).",
)
@click.option("--sample", default=None, help="Sample or prediction directory.")
@click.option("--out", required=True, help="Directory for PNG images.")
@click.pass_context
@raise_click_errors
def cli(ctx, model_dir, sample, out):
    """
    Dump per-part statistics and indexed-color images.

    Always writes the UV part segmentation. With --sample, also writes image
    masks and parts, and the fusion source map of a prediction.
    """

    click.echo(inspect_dirs(ctx.obj, model_dir, sample, out))
