#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dense image-space and UV-space maps.

Ground truth comes from a z-buffered rasterizer behind a weak perspective
camera. Image maps can be degraded with rectangular occluders and additive
noise before being warped into the UV atlas, which is how the pipeline stands
in for a learned dense predictor.
"""
import typing as t
from dataclasses import dataclass, replace

import numpy as np
from pydantic import validator

from uvbody.body_model import ArrayModel, BodyModel, JointSet, Mesh
from uvbody.logging import get as get_logger
from uvbody.uv_atlas import (
    PartSegmentation,
    UVAtlas,
    barycentric_2d,
    rasterize_vertex_attribute,
)
from uvbody.vars import (
    BACKGROUND,
    DEFAULT_CAMERA_OFFSET,
    DEFAULT_CAMERA_SCALE,
    DEFAULT_IMAGE_RESOLUTION,
)

SeedLike = t.Union[int, t.Sequence[int], np.random.SeedSequence]
Rect = t.Tuple[int, int, int, int]

IMAGE_CHANNELS = 13
UV_CHANNELS = 10
_MIN_COVERAGE = 0.5


class CameraCoverageError(ValueError):
    """Raised when the camera leaves too much of the mesh outside the image."""


class Camera(ArrayModel):
    """Weak perspective camera: pixels = scale * (x, y) + offset."""

    scale: float = DEFAULT_CAMERA_SCALE
    offset: t.Tuple[float, float] = DEFAULT_CAMERA_OFFSET

    @validator("scale")
    def validate_scale(cls, value):  # pylint: disable=no-self-argument
        """Scale must be a positive finite number."""

        if not np.isfinite(value) or value <= 0.0:
            raise ValueError(f"Camera scale must be positive, got {value}")
        return value

    def as_array(self) -> np.ndarray:
        """Pack as ``[scale, offset_x, offset_y]``."""

        return np.array([self.scale, *self.offset], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "Camera":
        """Inverse of `as_array`."""

        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(scale=float(values[0]), offset=(float(values[1]), float(values[2])))


class OcclusionConfig(ArrayModel):
    """
    Ranges for synthetic rectangular occluders.

    Sizes are fractions of the image height and width.
    """

    min_count: int = 1
    max_count: int = 3
    min_size: float = 0.1
    max_size: float = 0.4

    @validator("min_count", "max_count")
    def validate_count(cls, value):  # pylint: disable=no-self-argument
        """Counts are non-negative."""

        if value < 0:
            raise ValueError(f"Occluder count must be >= 0, got {value}")
        return value

    @validator("min_size", "max_size")
    def validate_size(cls, value):  # pylint: disable=no-self-argument
        """Sizes are fractions in [0, 1]."""

        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Occluder size must be in [0, 1], got {value}")
        return value

    @validator("max_count")
    def validate_count_order(cls, value, values):  # pylint: disable=no-self-argument
        """max_count may not be below min_count."""

        if "min_count" in values and value < values["min_count"]:
            raise ValueError("max_count must be >= min_count")
        return value

    @validator("max_size")
    def validate_size_order(cls, value, values):  # pylint: disable=no-self-argument
        """max_size may not be below min_size."""

        if "min_size" in values and value < values["min_size"]:
            raise ValueError("max_size must be >= min_size")
        return value


@dataclass(frozen=True)
class ImageMaps:
    """
    Per-pixel dense maps of one rendered view.

    Background pixels hold zeros and part ``BACKGROUND``.
    """

    mask: np.ndarray
    uv: np.ndarray
    joint: np.ndarray
    location: np.ndarray
    displacement: np.ndarray
    part: np.ndarray

    @property
    def resolution(self) -> t.Tuple[int, int]:
        """(height, width) in pixels."""

        return self.mask.shape  # type: ignore

    @classmethod
    def empty(cls, resolution: t.Tuple[int, int]) -> "ImageMaps":
        """All-background maps."""

        height, width = resolution
        return cls(
            mask=np.zeros((height, width), dtype=bool),
            uv=np.zeros((height, width, 2)),
            joint=np.zeros((height, width, 3)),
            location=np.zeros((height, width, 3)),
            displacement=np.zeros((height, width, 3)),
            part=np.full((height, width), BACKGROUND, dtype=np.int64),
        )

    def pack(self) -> np.ndarray:
        """H x W x 13 ``[mask, u, v, joint, location, displacement, part]``."""

        return np.concatenate(
            [
                self.mask[..., None].astype(np.float64),
                self.uv,
                self.joint,
                self.location,
                self.displacement,
                self.part[..., None].astype(np.float64),
            ],
            axis=-1,
        )

    @classmethod
    def unpack(cls, packed: np.ndarray) -> "ImageMaps":
        """
        Inverse of `pack`.

        Raises
        ------
        ValueError
            if the channel count is not 13.
        """

        packed = np.asarray(packed, dtype=np.float64)
        if packed.ndim != 3 or packed.shape[2] != IMAGE_CHANNELS:
            raise ValueError(
                f"Expected H x W x {IMAGE_CHANNELS} image maps, got {packed.shape}"
            )
        return cls(
            mask=packed[..., 0] > 0.5,
            uv=packed[..., 1:3].copy(),
            joint=packed[..., 3:6].copy(),
            location=packed[..., 6:9].copy(),
            displacement=packed[..., 9:12].copy(),
            part=np.rint(packed[..., 12]).astype(np.int64),
        )

    def masked(self, keep: np.ndarray) -> "ImageMaps":
        """Copy with pixels outside ``keep`` turned into background."""

        keep = keep & self.mask
        return ImageMaps(
            mask=keep,
            uv=np.where(keep[..., None], self.uv, 0.0),
            joint=np.where(keep[..., None], self.joint, 0.0),
            location=np.where(keep[..., None], self.location, 0.0),
            displacement=np.where(keep[..., None], self.displacement, 0.0),
            part=np.where(keep, self.part, BACKGROUND),
        )


@dataclass(frozen=True)
class UVMaps:
    """Joint, location and displacement maps over the UV atlas."""

    valid: np.ndarray
    joint: np.ndarray
    location: np.ndarray
    displacement: np.ndarray

    @property
    def resolution(self) -> t.Tuple[int, int]:
        """(height, width) in texels."""

        return self.valid.shape  # type: ignore

    def pack(self) -> np.ndarray:
        """H x W x 10 ``[valid, joint, location, displacement]``."""

        return np.concatenate(
            [
                self.valid[..., None].astype(np.float64),
                self.joint,
                self.location,
                self.displacement,
            ],
            axis=-1,
        )

    @classmethod
    def unpack(cls, packed: np.ndarray) -> "UVMaps":
        """
        Inverse of `pack`.

        Raises
        ------
        ValueError
            if the channel count is not 10.
        """

        packed = np.asarray(packed, dtype=np.float64)
        if packed.ndim != 3 or packed.shape[2] != UV_CHANNELS:
            raise ValueError(
                f"Expected H x W x {UV_CHANNELS} UV maps, got {packed.shape}"
            )
        return cls(
            valid=packed[..., 0] > 0.5,
            joint=packed[..., 1:4].copy(),
            location=packed[..., 4:7].copy(),
            displacement=packed[..., 7:10].copy(),
        )

    def part_counts(self, part_seg: PartSegmentation) -> np.ndarray:
        """Number of valid texels per part."""

        labels = part_seg.assign[self.valid & (part_seg.assign != BACKGROUND)]
        return np.bincount(labels, minlength=len(part_seg.sites))


@dataclass
class WarpDiagnostics:
    """Tallies collected while warping image maps to UV space."""

    scattered: int = 0
    clamped: int = 0
    off_atlas: int = 0
    collisions: int = 0


def project_weak_perspective(points: np.ndarray, camera: Camera) -> np.ndarray:
    """
    Project points with a weak perspective camera.

    Parameters
    ----------
    points : np.ndarray
        (..., 3) points in meters.
    camera : Camera

    Returns
    -------
    np.ndarray
        (..., 2) pixel coordinates, x along columns and y along rows.
    """

    points = np.asarray(points, dtype=np.float64)
    return camera.scale * points[..., :2] + np.asarray(camera.offset)


def _zbuffer(
    projected: np.ndarray,
    depth: np.ndarray,
    faces: np.ndarray,
    resolution: t.Tuple[int, int],
) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest face and barycentrics per pixel; the first face wins ties."""

    height, width = resolution
    pixel_face = np.full((height, width), BACKGROUND, dtype=np.int64)
    pixel_bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    skipped = 0
    for face, corner_ids in enumerate(faces):
        corners = projected[corner_ids]
        lo = np.floor(corners.min(axis=0) - 0.5).astype(int)
        hi = np.ceil(corners.max(axis=0) - 0.5).astype(int)
        cols = np.arange(max(lo[0], 0), min(hi[0], width - 1) + 1)
        rows = np.arange(max(lo[1], 0), min(hi[1], height - 1) + 1)
        if len(cols) == 0 or len(rows) == 0:
            continue
        grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
        bary = barycentric_2d(
            corners, np.stack([grid_c + 0.5, grid_r + 0.5], axis=-1)
        )
        if bary is None:
            skipped += 1
            continue
        z = bary @ depth[corner_ids]
        hit = np.all(bary >= -1e-9, axis=-1) & (z < zbuf[grid_r, grid_c])
        if not np.any(hit):
            continue
        rr, cc = grid_r[hit], grid_c[hit]
        weights = np.clip(bary[hit], 0.0, None)
        pixel_face[rr, cc] = face
        pixel_bary[rr, cc] = weights / weights.sum(axis=-1, keepdims=True)
        zbuf[rr, cc] = z[hit]
    if skipped:
        get_logger("Render").debug("Skipped %d zero-area faces", skipped)
    return pixel_face, pixel_bary, zbuf


def render_dense_maps(
    mesh: Mesh,
    model: BodyModel,
    atlas: UVAtlas,
    part_seg: PartSegmentation,
    joints_gt: JointSet,
    camera: Camera,
    resolution: t.Tuple[int, int] = (
        DEFAULT_IMAGE_RESOLUTION,
        DEFAULT_IMAGE_RESOLUTION,
    ),
) -> ImageMaps:
    """
    Rasterize a posed mesh into IUV, joint, location and displacement maps.

    The smaller camera-space z wins at every pixel. A pixel's part comes from
    the texel under its UV coordinate, or from the majority part of its face
    when that texel is background.

    Raises
    ------
    ValueError
        if the mesh does not match the model.
    CameraCoverageError
        if fewer than half of the vertices project inside the image.
    """

    logger = get_logger("Render")
    if mesh.vertices.shape[0] != model.num_vertices:
        raise ValueError(
            f"Mesh has {mesh.vertices.shape[0]} vertices, model has "
            f"{model.num_vertices}"
        )
    height, width = resolution
    projected = project_weak_perspective(mesh.vertices, camera)
    inside = (
        (projected[:, 0] >= 0)
        & (projected[:, 0] < width)
        & (projected[:, 1] >= 0)
        & (projected[:, 1] < height)
    )
    if inside.mean() < _MIN_COVERAGE:
        raise CameraCoverageError(
            f"Only {100.0 * inside.mean():.1f}% of vertices fall inside the "
            f"{height} x {width} image"
        )

    pixel_face, pixel_bary, _ = _zbuffer(
        projected, mesh.vertices[:, 2], mesh.faces, resolution
    )
    mask = pixel_face != BACKGROUND
    face = pixel_face[mask]
    bary = pixel_bary[mask]

    maps = ImageMaps.empty(resolution)
    uv = np.einsum("mi,mic->mc", bary, atlas.vertex_uv[face])
    location = np.einsum("mi,mic->mc", bary, mesh.vertices[mesh.faces[face]])
    rows, cols, _ = atlas.texel_of_uv(uv)
    part = part_seg.assign[rows, cols]
    part = np.where(part == BACKGROUND, part_seg.face_part[face], part)
    joint = joints_gt.joints[part]

    maps.mask[mask] = True
    maps.uv[mask] = uv
    maps.location[mask] = location
    maps.joint[mask] = joint
    maps.displacement[mask] = location - joint
    maps.part[mask] = part
    logger.debug(
        "Rendered %d x %d maps, %.1f%% foreground",
        height,
        width,
        100.0 * mask.mean(),
    )
    return maps


def sample_occluders(
    seed: SeedLike, resolution: t.Tuple[int, int], config: OcclusionConfig
) -> t.List[Rect]:
    """
    Draw occluder rectangles as ``(row0, col0, row1, col1)``, ends exclusive.

    Deterministic for a given seed.
    """

    height, width = resolution
    rng = np.random.default_rng(seed)
    count = int(rng.integers(config.min_count, config.max_count + 1))
    rects: t.List[Rect] = []
    for _ in range(count):
        rect_h = int(round(rng.uniform(config.min_size, config.max_size) * height))
        rect_w = int(round(rng.uniform(config.min_size, config.max_size) * width))
        row0 = int(rng.integers(0, height - rect_h + 1))
        col0 = int(rng.integers(0, width - rect_w + 1))
        rects.append((row0, col0, row0 + rect_h, col0 + rect_w))
    return rects


def occlusion_mask(
    resolution: t.Tuple[int, int], rects: t.Iterable[Rect]
) -> np.ndarray:
    """Boolean mask of pixels covered by any rectangle."""

    covered = np.zeros(resolution, dtype=bool)
    for row0, col0, row1, col1 in rects:
        covered[max(row0, 0) : max(row1, 0), max(col0, 0) : max(col1, 0)] = True
    return covered


def occlude_rectangles(maps: ImageMaps, rects: t.Iterable[Rect]) -> ImageMaps:
    """Turn every pixel under the rectangles into background."""

    return maps.masked(~occlusion_mask(maps.resolution, rects))


def apply_synthetic_occlusion(
    maps: ImageMaps, seed: SeedLike, config: OcclusionConfig
) -> ImageMaps:
    """
    Occlude seeded random rectangles.

    Parameters
    ----------
    maps : ImageMaps
    seed : int or SeedSequence
    config : OcclusionConfig

    Returns
    -------
    ImageMaps
        A new instance; the input is left untouched.
    """

    rects = sample_occluders(seed, maps.resolution, config)
    get_logger("Occlusion").debug("Occluding rectangles %s", rects)
    return occlude_rectangles(maps, rects)


def add_map_noise(maps: ImageMaps, seed: SeedLike, sigma: float) -> ImageMaps:
    """
    Add Gaussian noise to the joint and location channels of foreground pixels.

    Displacement is recomputed from the noisy channels.
    """

    if sigma < 0.0:
        raise ValueError(f"Noise sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return maps
    rng = np.random.default_rng(seed)
    count = int(maps.mask.sum())
    joint = maps.joint.copy()
    location = maps.location.copy()
    joint[maps.mask] += rng.normal(0.0, sigma, (count, 3))
    location[maps.mask] += rng.normal(0.0, sigma, (count, 3))
    displacement = np.where(maps.mask[..., None], location - joint, 0.0)
    return replace(
        maps, joint=joint, location=location, displacement=displacement
    )


def warp_image_to_uv(
    maps: ImageMaps,
    atlas: UVAtlas,
    diagnostics: t.Optional[WarpDiagnostics] = None,
) -> UVMaps:
    """
    Scatter foreground pixels to the texel under their UV coordinate.

    Colliding pixels are averaged (sum and count, order independent). UV
    coordinates outside [0, 1] are clamped; hits on background texels are
    dropped. Both are tallied in ``diagnostics`` when given.
    """

    logger = get_logger("Warp")
    height, width = atlas.resolution
    uv = maps.uv[maps.mask]
    values = np.concatenate(
        [maps.joint[maps.mask], maps.location[maps.mask]], axis=-1
    )
    rows, cols, clamped = atlas.texel_of_uv(uv)
    on_atlas = atlas.inside[rows, cols]
    flat = rows[on_atlas] * width + cols[on_atlas]

    sums = np.zeros((height * width, 6))
    counts = np.zeros(height * width, dtype=np.int64)
    np.add.at(sums, flat, values[on_atlas])
    np.add.at(counts, flat, 1)

    valid = (counts > 0).reshape(height, width)
    mean = np.zeros_like(sums)
    hit = counts > 0
    mean[hit] = sums[hit] / counts[hit, None]
    mean = mean.reshape(height, width, 6)
    joint = mean[..., :3]
    location = mean[..., 3:]
    displacement = np.where(valid[..., None], location - joint, 0.0)

    num_clamped = int(clamped.sum())
    num_off = int((~on_atlas).sum())
    if num_clamped:
        logger.warning("Clamped %d UV coordinates outside [0, 1]", num_clamped)
    if diagnostics is not None:
        diagnostics.scattered += int(on_atlas.sum())
        diagnostics.clamped += num_clamped
        diagnostics.off_atlas += num_off
        diagnostics.collisions += int(on_atlas.sum() - hit.sum())
    logger.debug(
        "Warped %d pixels to %d texels (%d off atlas)",
        len(uv),
        int(hit.sum()),
        num_off,
    )
    return UVMaps(
        valid=valid,
        joint=joint.copy(),
        location=location.copy(),
        displacement=displacement,
    )


def make_uv_ground_truth(
    mesh: Mesh,
    model: BodyModel,
    part_seg: PartSegmentation,
    joints_gt: JointSet,
    atlas: UVAtlas,
) -> UVMaps:
    """
    Complete UV maps of a mesh.

    Location is the rasterized vertex position, joint is each part's ground
    truth joint and every inside texel is valid.
    """

    if mesh.vertices.shape[0] != model.num_vertices:
        raise ValueError(
            f"Mesh has {mesh.vertices.shape[0]} vertices, model has "
            f"{model.num_vertices}"
        )
    location = rasterize_vertex_attribute(atlas, mesh.vertices)
    joint = part_seg.paint(joints_gt.joints)
    displacement = np.where(atlas.inside[..., None], location - joint, 0.0)
    return UVMaps(
        valid=atlas.inside.copy(),
        joint=joint,
        location=location,
        displacement=displacement,
    )

