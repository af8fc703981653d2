#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Completion of partial UV maps and final inference from UV space.

Texels with dense evidence keep it, occluded texels are filled from the
IK-reposed template after shifting each part so its IK joint lands on the
refined joint, and a narrow band along the evidence boundary is blended.
"""
import enum
import typing as t
from dataclasses import dataclass

import numpy as np
from pydantic import validator
from scipy import ndimage

from uvbody.body_model import (
    ArrayModel,
    BodyModel,
    JointSet,
    Mesh,
    PoseParams,
    ShapeParams,
    regress_joints,
    skin,
)
from uvbody.dense_maps import (
    Camera,
    ImageMaps,
    UVMaps,
    make_uv_ground_truth,
    project_weak_perspective,
)
from uvbody.ik import aggregate_joints
from uvbody.logging import get as get_logger
from uvbody.losses import (
    LossBreakdown,
    loss_consistency,
    loss_dismag,
    loss_j2d,
    loss_j3d,
    loss_map,
)
from uvbody.uv_atlas import (
    FlipMap,
    PartSegmentation,
    UVAtlas,
    sample_bilinear,
)
from uvbody.vars import BACKGROUND, NUM_LSP_JOINTS

FUSED_CHANNELS = 11
DEFAULT_BAND_WIDTH = 2


class SourceTag(enum.IntEnum):
    """Origin of a fused texel's location value."""

    BACKGROUND = 0
    DMP = 1
    IK = 2
    BLEND = 3


class FusionConfig(ArrayModel):
    """Joint aggregation threshold and blend band of the fusion stage."""

    min_texels: int = 1
    band_width: int = DEFAULT_BAND_WIDTH

    @validator("min_texels", "band_width")
    def validate_non_negative(cls, value):  # pylint: disable=no-self-argument
        """Both are texel counts."""

        if value < 0:
            raise ValueError(f"Must be >= 0, got {value}")
        return value


@dataclass(frozen=True)
class FusedUVMaps:
    """Completed UV maps with a per-texel source tag."""

    inside: np.ndarray
    joint: np.ndarray
    location: np.ndarray
    displacement: np.ndarray
    source: np.ndarray

    @property
    def resolution(self) -> t.Tuple[int, int]:
        """(height, width) in texels."""

        return self.inside.shape  # type: ignore

    def as_uv_maps(self) -> UVMaps:
        """View as UV maps with every inside texel valid."""

        return UVMaps(
            valid=self.inside,
            joint=self.joint,
            location=self.location,
            displacement=self.displacement,
        )

    def source_counts(self) -> t.Dict[str, int]:
        """Number of texels per source tag."""

        return {
            tag.name.lower(): int((self.source == tag).sum()) for tag in SourceTag
        }

    def pack(self) -> np.ndarray:
        """H x W x 11 ``[inside, joint, location, displacement, source]``."""

        return np.concatenate(
            [
                self.inside[..., None].astype(np.float64),
                self.joint,
                self.location,
                self.displacement,
                self.source[..., None].astype(np.float64),
            ],
            axis=-1,
        )

    @classmethod
    def unpack(cls, packed: np.ndarray) -> "FusedUVMaps":
        """
        Inverse of `pack`.

        Raises
        ------
        ValueError
            if the channel count is not 11.
        """

        packed = np.asarray(packed, dtype=np.float64)
        if packed.ndim != 3 or packed.shape[2] != FUSED_CHANNELS:
            raise ValueError(
                f"Expected H x W x {FUSED_CHANNELS} fused maps, got {packed.shape}"
            )
        return cls(
            inside=packed[..., 0] > 0.5,
            joint=packed[..., 1:4].copy(),
            location=packed[..., 4:7].copy(),
            displacement=packed[..., 7:10].copy(),
            source=np.rint(packed[..., 10]).astype(np.int64),
        )


def _check_resolution(*maps: t.Any):
    shapes = {m.shape[:2] if isinstance(m, np.ndarray) else m.resolution for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"UV map resolutions differ: {sorted(shapes)}")


def distribute_joints_to_uv(
    j_refine: JointSet, part_seg: PartSegmentation
) -> np.ndarray:
    """
    Write each refined joint to the texels of its part.

    Raises
    ------
    ValueError
        if any joint is invisible.
    """

    if not np.all(j_refine.visible):
        raise ValueError("Every joint must be visible to distribute it")
    return part_seg.paint(j_refine.joints)


def repose_uv_from_ik(
    model: BodyModel,
    atlas: UVAtlas,
    part_seg: PartSegmentation,
    theta: PoseParams,
    beta: ShapeParams,
) -> UVMaps:
    """Complete UV maps of the skinned body and its regressed joints."""

    mesh = skin(model, theta, beta)
    joints = regress_joints(mesh, model.lsp_regressor)
    return make_uv_ground_truth(
        mesh, model, part_seg, JointSet.all_visible(joints), atlas
    )


def _finish(
    inside: np.ndarray,
    joint: np.ndarray,
    location: np.ndarray,
    source: np.ndarray,
) -> FusedUVMaps:
    joint = np.where(inside[..., None], joint, 0.0)
    location = np.where(inside[..., None], location, 0.0)
    return FusedUVMaps(
        inside=inside.copy(),
        joint=joint,
        location=location,
        displacement=location - joint,
        source=np.where(inside, source, SourceTag.BACKGROUND).astype(np.int64),
    )


def _distance_to_missing(
    missing: np.ndarray, islands: t.Optional[np.ndarray]
) -> np.ndarray:
    """Euclidean texel distance to the nearest missing texel, inf if none."""

    distance = np.full(missing.shape, np.inf)
    if islands is None:
        if np.any(missing):
            distance = ndimage.distance_transform_edt(~missing)
        return distance
    for label in np.unique(islands[missing]):
        own = islands == label
        edt = ndimage.distance_transform_edt(~(missing & own))
        distance[own] = edt[own]
    return distance


def fuse_uv_maps(
    dmp: UVMaps,
    ik: UVMaps,
    uv_jrefine: np.ndarray,
    band_width: int = DEFAULT_BAND_WIDTH,
    islands: t.Optional[np.ndarray] = None,
) -> FusedUVMaps:
    """
    Combine partial dense maps with complete IK maps.

    Parameters
    ----------
    dmp : UVMaps
        Warped dense predictions; ``valid`` marks texels with evidence.
    ik : UVMaps
        Maps of the IK-reposed body; ``valid`` defines the surface.
    uv_jrefine : np.ndarray
        H x W x 3 refined joints distributed over the parts.
    band_width : int
        Valid texels closer than ``band_width + 1`` texels to an invalid
        surface texel blend linearly toward the aligned IK value.
    islands : np.ndarray, optional
        H x W island label per texel (see `build_island_labels`). When
        given, distances are measured within a texel's own island only.

    Returns
    -------
    FusedUVMaps

    Raises
    ------
    ValueError
        on resolution mismatch or negative band width.
    """

    _check_resolution(dmp, ik, uv_jrefine)
    if islands is not None:
        _check_resolution(dmp, islands)
    if band_width < 0:
        raise ValueError(f"band_width must be >= 0, got {band_width}")
    inside = ik.valid
    evidence = dmp.valid & inside
    missing = inside & ~evidence
    aligned = ik.location + (uv_jrefine - ik.joint)

    distance = _distance_to_missing(missing, islands)
    alpha = np.minimum(1.0, distance / (band_width + 1.0))
    blended = alpha[..., None] * dmp.location + (1.0 - alpha[..., None]) * aligned
    keep = evidence & (alpha >= 1.0)
    location = np.where(
        keep[..., None],
        dmp.location,
        np.where(evidence[..., None], blended, aligned),
    )
    source = np.select(
        [keep, evidence, missing],
        [SourceTag.DMP, SourceTag.BLEND, SourceTag.IK],
        SourceTag.BACKGROUND,
    )
    fused = _finish(inside, uv_jrefine, location, source)
    get_logger("Fusion").debug("Fused texel sources: %s", fused.source_counts())
    return fused


def ik_only_uv_maps(ik: UVMaps) -> FusedUVMaps:
    """Ablation without dense evidence: the IK maps as they are."""

    source = np.full(ik.resolution, SourceTag.IK, dtype=np.int64)
    return _finish(ik.valid, ik.joint, ik.location, source)


def dmp_only_uv_maps(
    dmp: UVMaps, part_seg: PartSegmentation, inside: np.ndarray
) -> FusedUVMaps:
    """
    Ablation without IK: fill missing texels with per-part means of evidence.

    Parts without any valid texel are filled with zeros.
    """

    _check_resolution(dmp, part_seg, inside)
    evidence = dmp.valid & inside & (part_seg.assign != BACKGROUND)
    labels = part_seg.assign[evidence]
    counts = np.bincount(labels, minlength=NUM_LSP_JOINTS)
    means = []
    for channel in (dmp.joint, dmp.location):
        sums = np.stack(
            [
                np.bincount(
                    labels, weights=channel[evidence][:, c], minlength=NUM_LSP_JOINTS
                )
                for c in range(3)
            ],
            axis=-1,
        )
        means.append(
            np.divide(
                sums,
                counts[:, None],
                out=np.zeros_like(sums),
                where=counts[:, None] > 0,
            )
        )
    joint_fill = part_seg.paint(means[0])
    location_fill = part_seg.paint(means[1])
    joint = np.where(evidence[..., None], dmp.joint, joint_fill)
    location = np.where(evidence[..., None], dmp.location, location_fill)
    source = np.full(inside.shape, SourceTag.DMP, dtype=np.int64)
    return _finish(inside, joint, location, source)


def infer_joints_from_uv(
    fused: FusedUVMaps, part_seg: PartSegmentation
) -> JointSet:
    """Per-part mean of the joint channel, every joint visible."""

    result = aggregate_joints(fused.as_uv_maps(), part_seg)
    return JointSet.all_visible(result.j_initial.joints)


def infer_mesh_from_uv(
    fused: FusedUVMaps,
    atlas: UVAtlas,
    model: BodyModel,
    fallback: t.Optional[Mesh] = None,
) -> Mesh:
    """
    Sample every vertex from the location channel at its UV coordinate.

    Vertices whose bilinear neighbourhood is entirely background are taken
    from ``fallback`` (usually the IK mesh) and reported.

    Raises
    ------
    ValueError
        if vertices are missing and no fallback is given.
    """

    _check_resolution(fused, atlas.inside)
    if atlas.num_vertices != model.num_vertices:
        raise ValueError(
            f"Atlas has {atlas.num_vertices} vertices, model has "
            f"{model.num_vertices}"
        )
    vertices, found = sample_bilinear(
        fused.location, fused.inside, atlas.uv_of_vertex
    )
    if not np.all(found):
        missing = int((~found).sum())
        if fallback is None:
            raise ValueError(f"{missing} vertices have no surface texel nearby")
        get_logger("Inference").warning(
            "Filled %d vertices from the fallback mesh", missing
        )
        vertices[~found] = fallback.vertices[~found]
    return Mesh(vertices=vertices, faces=model.faces)


def loss_uvi_terms(
    pred: FusedUVMaps,
    pred_joints: JointSet,
    camera: Camera,
    gt: UVMaps,
    gt_joints: JointSet,
    flip: FlipMap,
    image_maps: t.Optional[ImageMaps] = None,
) -> LossBreakdown:
    """
    UV inpainting losses of a completed prediction.

    2D joint targets are the ground truth joints projected with ``camera``.
    The consistency term needs the IUV image and is zero without it.
    """

    _check_resolution(pred, gt)
    if pred_joints.joints.shape != gt_joints.joints.shape:
        raise ValueError(
            f"Joint shapes differ: {pred_joints.joints.shape} vs "
            f"{gt_joints.joints.shape}"
        )
    gt_j2d = project_weak_perspective(gt_joints.joints, camera)
    l_con = 0.0
    if image_maps is not None:
        l_con = loss_consistency(pred.location, pred.inside, camera, image_maps)
    return LossBreakdown(
        l_dismag=loss_dismag(pred.displacement, flip, pred.inside),
        l_j2d=loss_j2d(pred_joints, gt_j2d, camera),
        l_j3d=loss_j3d(pred_joints, gt_joints),
        l_map=loss_map(pred.as_uv_maps(), gt, gt.valid),
        l_con=l_con,
    )
