#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Training losses over dense maps, joints and parameters, plus evaluation metrics."""
import typing as t

import numpy as np
from pydantic import BaseModel

from uvbody.body_model import JointSet, Mesh
from uvbody.dense_maps import Camera, ImageMaps, UVMaps, project_weak_perspective
from uvbody.logging import get as get_logger
from uvbody.uv_atlas import FlipMap, sample_bilinear

_BCE_CLAMP = 1e-7
_METERS_TO_MM = 1000.0

JointsLike = t.Union[JointSet, np.ndarray]


class DegenerateAlignmentError(ValueError):
    """Raised when a point set cannot define a similarity alignment."""


class LossBreakdown(BaseModel):
    """
    Named loss terms and their composite sums.

    Every term defaults to zero so partial breakdowns (only the image terms,
    only the IK terms) add up correctly.
    """

    l_mib: float = 0.0
    l_miuv: float = 0.0
    l_ml: float = 0.0
    l_mj: float = 0.0
    l_md: float = 0.0
    l_theta: float = 0.0
    l_beta: float = 0.0
    l_ji: float = 0.0
    l_vi: float = 0.0
    l_map: float = 0.0
    l_j3d: float = 0.0
    l_j2d: float = 0.0
    l_dismag: float = 0.0
    l_con: float = 0.0

    @property
    def l_mi(self) -> float:
        """Mask plus UV coordinate loss."""

        return self.l_mib + self.l_miuv

    @property
    def l_dmp(self) -> float:
        """Dense map prediction objective."""

        return self.l_mi + self.l_ml + self.l_mj + self.l_md

    @property
    def l_ik(self) -> float:
        """Inverse kinematics objective."""

        return self.l_theta + self.l_beta + self.l_ji + self.l_vi

    @property
    def l_uvi(self) -> float:
        """UV inpainting objective."""

        return self.l_dismag + self.l_j2d + self.l_j3d + self.l_map + self.l_con

    @property
    def l_all(self) -> float:
        """Sum of all three objectives."""

        return self.l_dmp + self.l_ik + self.l_uvi

    def merge(self, other: "LossBreakdown") -> "LossBreakdown":
        """Add the terms of two breakdowns."""

        mine, theirs = self.dict(), other.dict()
        return LossBreakdown(**{k: mine[k] + theirs[k] for k in mine})

    def summary(self) -> t.Dict[str, float]:
        """Terms and composites as a flat dict."""

        out = self.dict()
        out.update(
            l_dmp=self.l_dmp, l_ik=self.l_ik, l_uvi=self.l_uvi, l_all=self.l_all
        )
        return out


def _check_shapes(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise ValueError(
            f"Prediction shape {pred.shape} does not match target {gt.shape}"
        )


def _joints(value: JointsLike) -> np.ndarray:
    if isinstance(value, JointSet):
        return value.joints
    return np.asarray(value, dtype=np.float64)


def l1_masked(
    pred: np.ndarray, gt: np.ndarray, mask: t.Optional[np.ndarray] = None
) -> float:
    """
    Mean absolute error over masked elements.

    ``mask`` covers the leading dimensions of ``pred``; trailing channels are
    averaged too. An empty mask gives 0.

    Raises
    ------
    ValueError
        on shape mismatch.
    """

    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    diff = np.abs(pred - gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape[: mask.ndim]:
            raise ValueError(
                f"Mask shape {mask.shape} does not match values {pred.shape}"
            )
        diff = diff[mask]
    if diff.size == 0:
        return 0.0
    return float(diff.mean())


def bce_mask_loss(pred_prob: np.ndarray, gt_mask: np.ndarray) -> float:
    """Mean binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""

    pred = np.asarray(pred_prob, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    _check_shapes(pred, gt)
    pred = np.clip(pred, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    return float(-np.mean(gt * np.log(pred) + (1.0 - gt) * np.log(1.0 - pred)))


def loss_dismag(uv_d: np.ndarray, flip: FlipMap, valid: np.ndarray) -> float:
    """
    Mean absolute difference of displacement magnitudes between mirror texels.

    Only texels valid at both ends of the flip contribute.
    """

    magnitude = np.linalg.norm(uv_d, axis=-1)
    both = valid & flip.apply(valid)
    if not np.any(both):
        return 0.0
    return float(np.abs(magnitude - flip.apply(magnitude))[both].mean())


def loss_j3d(pred: JointsLike, gt: JointsLike) -> float:
    """Mean absolute 3D joint error."""

    return l1_masked(_joints(pred), _joints(gt))


def loss_j2d(pred_j3d: JointsLike, gt_j2d: np.ndarray, camera: Camera) -> float:
    """Mean absolute error of projected joints against 2D targets in pixels."""

    projected = project_weak_perspective(_joints(pred_j3d), camera)
    return l1_masked(projected, np.asarray(gt_j2d, dtype=np.float64))


def loss_consistency(
    uv_location: np.ndarray,
    uv_inside: np.ndarray,
    camera: Camera,
    maps: ImageMaps,
) -> float:
    """
    Reprojection consistency of a UV location map with an IUV image.

    Each foreground pixel samples the location map at its UV coordinate,
    projects the sample and is compared with its own pixel center. Pixels
    whose UV neighbourhood is entirely background are skipped.
    """

    rows, cols = np.nonzero(maps.mask)
    if len(rows) == 0:
        get_logger("Losses").warning("Consistency loss over empty foreground")
        return 0.0
    sampled, found = sample_bilinear(uv_location, uv_inside, maps.uv[rows, cols])
    if not np.any(found):
        get_logger("Losses").warning("Consistency loss found no UV samples")
        return 0.0
    projected = project_weak_perspective(sampled[found], camera)
    centers = np.stack([cols[found] + 0.5, rows[found] + 0.5], axis=-1)
    return float(np.abs(projected - centers).mean())


def loss_map(pred: UVMaps, gt: UVMaps, inside: np.ndarray) -> float:
    """Mean absolute error over the nine joint, location and displacement channels."""

    pred_values = pred.pack()[..., 1:]
    gt_values = gt.pack()[..., 1:]
    return l1_masked(pred_values, gt_values, inside)


def dmp_loss_terms(
    pred: ImageMaps,
    gt: ImageMaps,
    mask_prob: t.Optional[np.ndarray] = None,
) -> LossBreakdown:
    """
    Dense map prediction losses of a predicted view against ground truth.

    ``mask_prob`` is the predicted foreground probability; the binary
    predicted mask is used when omitted. Regression terms average over
    ground truth foreground.
    """

    if pred.resolution != gt.resolution:
        raise ValueError(
            f"Predicted maps {pred.resolution} do not match {gt.resolution}"
        )
    prob = pred.mask.astype(np.float64) if mask_prob is None else mask_prob
    return LossBreakdown(
        l_mib=bce_mask_loss(prob, gt.mask),
        l_miuv=l1_masked(pred.uv, gt.uv, gt.mask),
        l_ml=l1_masked(pred.location, gt.location, gt.mask),
        l_mj=l1_masked(pred.joint, gt.joint, gt.mask),
        l_md=l1_masked(pred.displacement, gt.displacement, gt.mask),
    )


def ik_loss_terms(
    pred_theta: np.ndarray,
    gt_theta: np.ndarray,
    pred_beta: np.ndarray,
    gt_beta: np.ndarray,
    pred_joints: np.ndarray,
    gt_joints: np.ndarray,
    pred_vertices: t.Optional[np.ndarray] = None,
    gt_vertices: t.Optional[np.ndarray] = None,
) -> LossBreakdown:
    """L1 pose, shape, joint and (optionally) vertex losses."""

    l_vi = 0.0
    if pred_vertices is not None and gt_vertices is not None:
        l_vi = l1_masked(pred_vertices, gt_vertices)
    return LossBreakdown(
        l_theta=l1_masked(pred_theta, gt_theta),
        l_beta=l1_masked(pred_beta, gt_beta),
        l_ji=l1_masked(pred_joints, gt_joints),
        l_vi=l_vi,
    )


def mpjpe(pred: JointsLike, gt: JointsLike) -> float:
    """Mean per joint position error in millimeters."""

    pred_arr, gt_arr = _joints(pred), _joints(gt)
    _check_shapes(pred_arr, gt_arr)
    return float(np.linalg.norm(pred_arr - gt_arr, axis=-1).mean() * _METERS_TO_MM)


def mpve(pred: t.Union[Mesh, np.ndarray], gt: t.Union[Mesh, np.ndarray]) -> float:
    """Mean per vertex error in millimeters."""

    pred_arr = pred.vertices if isinstance(pred, Mesh) else np.asarray(pred)
    gt_arr = gt.vertices if isinstance(gt, Mesh) else np.asarray(gt)
    _check_shapes(pred_arr, gt_arr)
    return float(np.linalg.norm(pred_arr - gt_arr, axis=-1).mean() * _METERS_TO_MM)


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """
    Similarity transform of ``pred`` that best matches ``gt``.

    Raises
    ------
    DegenerateAlignmentError
        if either point set has fewer than 3 points or is collinear.
    """

    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    if pred.shape[0] < 3:
        raise DegenerateAlignmentError(
            f"Need at least 3 points to align, got {pred.shape[0]}"
        )
    mu_pred, mu_gt = pred.mean(axis=0), gt.mean(axis=0)
    x, y = pred - mu_pred, gt - mu_gt
    for name, points in (("prediction", x), ("target", y)):
        spread = np.linalg.svd(points, compute_uv=False)
        if spread[1] <= 1e-12 * max(1.0, spread[0]):
            raise DegenerateAlignmentError(f"Collinear {name} points")

    u, sigma, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    correction = np.array([1.0, 1.0, d])
    rotation = vt.T @ np.diag(correction) @ u.T
    scale = float((sigma * correction).sum() / (x**2).sum())
    return scale * x @ rotation.T + mu_gt


def pa_mpjpe(pred: JointsLike, gt: JointsLike) -> float:
    """MPJPE after Procrustes alignment of the prediction, in millimeters."""

    pred_arr, gt_arr = _joints(pred), _joints(gt)
    return mpjpe(procrustes_align(pred_arr, gt_arr), gt_arr)
