#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Wire the stages together: sample generation, IK training and inference.

Inference runs warp -> aggregate -> inpaint -> GIK (optionally refined by
numerical IK) -> repose -> distribute -> fuse -> infer joints and mesh.
"""
import logging
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from uvbody.body_model import (
    BodyModel,
    JointSet,
    Mesh,
    PoseParams,
    ShapeParams,
    build_synthetic_model,
    regress_joints,
    sample_pose,
    sample_shape_batch,
    skin,
)
from uvbody.cli.config import RunConfig
from uvbody.dense_maps import (
    ImageMaps,
    UVMaps,
    WarpDiagnostics,
    add_map_noise,
    apply_synthetic_occlusion,
    make_uv_ground_truth,
    render_dense_maps,
    warp_image_to_uv,
)
from uvbody.ik import (
    AggregationResult,
    IkTrainingResult,
    NumericalIkResult,
    aggregate_joints,
    numerical_ik,
    run_learned_ik,
    sample_mocap,
    train_ik_stage,
)
from uvbody.logging import DUMB_LOGGER
from uvbody.logging import get as get_logger
from uvbody.logging import stage
from uvbody.store import (
    Prediction,
    Sample,
    load_atlas,
    load_checkpoint,
    load_model,
    save_atlas,
    save_model,
)
from uvbody.uv_atlas import (
    FlipMap,
    PartSegmentation,
    UVAtlas,
    build_atlas,
    build_flip_map,
    build_island_labels,
    build_part_segmentation,
)
from uvbody.uv_fusion import (
    FusedUVMaps,
    distribute_joints_to_uv,
    dmp_only_uv_maps,
    fuse_uv_maps,
    ik_only_uv_maps,
    infer_joints_from_uv,
    infer_mesh_from_uv,
    repose_uv_from_ik,
)
from uvbody.vars import MODEL_DIR, RUN_CONFIG_NAME

IK_MODES = ("gik", "numerical")
FUSION_MODES = ("full", "ik-only", "dmp-only")


@dataclass
class PipelineContext:
    """
    Everything a run needs besides the per-sample inputs.

    ``nets`` is only set when a checkpoint was loaded or trained.
    """

    run_config: RunConfig
    model: BodyModel
    atlas: UVAtlas
    part_seg: PartSegmentation
    flip: FlipMap
    nets: t.Optional[IkTrainingResult] = None

    @classmethod
    def from_config(
        cls, run_config: RunConfig, logger: logging.Logger = DUMB_LOGGER
    ) -> "PipelineContext":
        """Build the model, atlas and segmentation from scratch."""

        with stage(logger, "body model"):
            model = build_synthetic_model(run_config.model_config())
        with stage(logger, "atlas"):
            atlas = build_atlas(model, run_config.atlas_resolution)
            part_seg = build_part_segmentation(model, atlas)
        logger.info(
            f"Built model with {model.num_vertices} vertices and a "
            f"{atlas.height}x{atlas.width} atlas"
        )
        return cls(
            run_config=run_config,
            model=model,
            atlas=atlas,
            part_seg=part_seg,
            flip=build_flip_map(atlas),
        )

    @classmethod
    def from_dir(
        cls,
        directory: t.Union[str, Path],
        with_nets: bool = False,
        logger: logging.Logger = DUMB_LOGGER,
    ) -> "PipelineContext":
        """
        Load a context saved by `save`, optionally with a checkpoint.

        Raises
        ------
        OSError
            if the run config or model files are missing.
        """

        directory = Path(directory).absolute()
        run_config = RunConfig.from_file(directory / RUN_CONFIG_NAME)
        model = load_model(directory / MODEL_DIR)
        atlas, part_seg = load_atlas(directory / MODEL_DIR, model)
        logger.info(f"Loaded model and atlas from {directory}")
        nets = load_checkpoint(directory) if with_nets else None
        return cls(
            run_config=run_config,
            model=model,
            atlas=atlas,
            part_seg=part_seg,
            flip=build_flip_map(atlas),
            nets=nets,
        )

    def save(self, directory: t.Union[str, Path]):
        """Write the run config, model and atlas under a directory."""

        directory = Path(directory)
        self.run_config.write(directory / RUN_CONFIG_NAME)
        save_model(directory / MODEL_DIR, self.model)
        save_atlas(directory / MODEL_DIR, self.atlas, self.part_seg)

    def require_nets(self) -> IkTrainingResult:
        """
        Return the trained networks.

        Raises
        ------
        ValueError
            if no checkpoint was loaded.
        """

        if self.nets is None:
            raise ValueError("No trained IK networks are loaded")
        return self.nets


def _sample_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def generate_sample(ctx: PipelineContext, index: int) -> Sample:
    """
    Draw and render one sample.

    Pose and shape come from ``data_seed``, occluders from
    ``occlusion_seed`` and map noise from ``noise_seed``, each combined with
    the sample index, so samples can be generated in any order.
    """

    cfg = ctx.run_config
    pose_seed, shape_seed = _sample_seed(cfg.data_seed, index).spawn(2)
    theta = sample_pose(pose_seed, cfg.pose_limits())
    beta = ShapeParams(beta=sample_shape_batch(shape_seed, 1, cfg.beta_sigma)[0])
    mesh = skin(ctx.model, theta, beta)
    joints = JointSet.all_visible(regress_joints(mesh, ctx.model.lsp_regressor))
    camera = cfg.camera()
    clean = render_dense_maps(
        mesh, ctx.model, ctx.atlas, ctx.part_seg, joints, camera, cfg.image_shape()
    )
    clean = add_map_noise(
        clean, _sample_seed(cfg.noise_seed, index), cfg.map_noise_sigma
    )
    occluded = apply_synthetic_occlusion(
        clean, _sample_seed(cfg.occlusion_seed, index), cfg.occlusion_config()
    )
    return Sample(
        index=index,
        theta=theta.theta,
        beta=beta.beta,
        camera=camera,
        joints=joints,
        mesh=mesh,
        image_maps=clean,
        image_maps_occluded=occluded,
        uv_gt=make_uv_ground_truth(mesh, ctx.model, ctx.part_seg, joints, ctx.atlas),
    )


def train_networks(ctx: PipelineContext) -> IkTrainingResult:
    """Train both IK networks on synthetic mocap drawn from ``train_seed``."""

    cfg = ctx.run_config
    mocap_seed, net_seed = np.random.SeedSequence(cfg.train_seed).spawn(2)
    theta, beta = sample_mocap(
        mocap_seed, cfg.mocap_count, cfg.pose_limits(), cfg.beta_sigma
    )
    result = train_ik_stage(
        ctx.model,
        theta,
        beta,
        cfg.train_config(),
        cfg.augment_config(),
        cfg.inpaint_spec(),
        cfg.gik_spec(),
        net_seed,
    )
    ctx.nets = result
    return result


@dataclass(frozen=True)
class PipelineResult:
    """Intermediate and final outputs of one inference run."""

    uv_dmp: UVMaps
    warp: WarpDiagnostics
    aggregation: AggregationResult
    j_refine: JointSet
    theta: PoseParams
    beta: ShapeParams
    numerical: t.Optional[NumericalIkResult]
    ik_maps: UVMaps
    fused: FusedUVMaps
    joints: JointSet
    mesh: Mesh

    def to_prediction(self, index: int) -> Prediction:
        """Storable subset for a sample index."""

        return Prediction(
            index=index,
            theta=self.theta.theta,
            beta=self.beta.beta,
            joints=self.joints,
            mesh=self.mesh,
            fused=self.fused,
        )


def run_pipeline(
    ctx: PipelineContext,
    maps: ImageMaps,
    ik_mode: str = "gik",
    fusion_mode: str = "full",
) -> PipelineResult:
    """
    Reconstruct joints and mesh from dense image maps.

    Parameters
    ----------
    ctx : PipelineContext
        Must hold trained networks.
    maps : ImageMaps
    ik_mode : str
        ``gik`` uses the regression network alone, ``numerical`` refines its
        estimate with Levenberg-Marquardt against the refined joints.
    fusion_mode : str
        ``full`` fuses dense and IK maps; ``ik-only`` and ``dmp-only`` are
        the single-source ablations.

    Raises
    ------
    ValueError
        for unknown modes or a context without networks.
    """

    if ik_mode not in IK_MODES:
        raise ValueError(f"Unknown IK mode {ik_mode!r}, expected one of {IK_MODES}")
    if fusion_mode not in FUSION_MODES:
        raise ValueError(
            f"Unknown fusion mode {fusion_mode!r}, expected one of {FUSION_MODES}"
        )
    logger = get_logger("Pipeline")
    nets = ctx.require_nets()
    fusion_cfg = ctx.run_config.fusion_config()

    diagnostics = WarpDiagnostics()
    with stage(logger, "warp"):
        uv_dmp = warp_image_to_uv(maps, ctx.atlas, diagnostics)
    agg = aggregate_joints(uv_dmp, ctx.part_seg, fusion_cfg.min_texels)
    logger.debug(f"{int(agg.j_initial.visible.sum())} of 14 parts visible")

    with stage(logger, "learned IK"):
        learned = run_learned_ik(nets.inpaint, nets.gik, agg)
    theta, beta = learned.theta, learned.beta
    numerical = None
    if ik_mode == "numerical":
        with stage(logger, "numerical IK"):
            numerical = numerical_ik(
                ctx.model,
                learned.j_refine,
                init=(theta, beta),
                config=ctx.run_config.lm_config(),
            )
        theta, beta = numerical.theta, numerical.beta

    with stage(logger, "fusion"):
        ik_maps = repose_uv_from_ik(ctx.model, ctx.atlas, ctx.part_seg, theta, beta)
        if fusion_mode == "ik-only":
            fused = ik_only_uv_maps(ik_maps)
        elif fusion_mode == "dmp-only":
            fused = dmp_only_uv_maps(uv_dmp, ctx.part_seg, ctx.atlas.inside)
        else:
            fused = fuse_uv_maps(
                uv_dmp,
                ik_maps,
                distribute_joints_to_uv(learned.j_refine, ctx.part_seg),
                fusion_cfg.band_width,
                islands=build_island_labels(ctx.atlas, ctx.model),
            )

    ik_mesh = skin(ctx.model, theta, beta)
    return PipelineResult(
        uv_dmp=uv_dmp,
        warp=diagnostics,
        aggregation=agg,
        j_refine=learned.j_refine,
        theta=theta,
        beta=beta,
        numerical=numerical,
        ik_maps=ik_maps,
        fused=fused,
        joints=infer_joints_from_uv(fused, ctx.part_seg),
        mesh=infer_mesh_from_uv(fused, ctx.atlas, ctx.model, fallback=ik_mesh),
    )
