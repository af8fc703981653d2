#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
UV parameterization of the body surface.

Every tube of the body model is unrolled to its own rectangular island. The
islands sit in five columns ``[L2 L1 M R1 R2]``: midline tubes in the middle
column, left tubes in the two left columns and right tubes in the column
reflected about the vertical center line. Reflecting a texel column
``c -> W - 1 - c`` therefore maps every surface point to its bilateral mirror.
"""
import typing as t
from dataclasses import dataclass

import numpy as np

from uvbody.body_model import BodyModel
from uvbody.logging import get as get_logger
from uvbody.vars import (
    BACKGROUND,
    KIN_JOINT_NAMES,
    LSP_MIRROR,
    NUM_LSP_JOINTS,
)

_NUM_COLUMNS = 5
_NUM_ROWS = 6
_BARY_EPS = 1e-9


class AtlasPackingError(ValueError):
    """Raised when the islands do not fit into the requested resolution."""


class EmptyPartError(ValueError):
    """Raised when a body part owns no texel after segmentation."""


@dataclass(frozen=True)
class UVAtlas:
    """
    Texel lookup tables of the unrolled body surface.

    Attributes
    ----------
    resolution : tuple of int
        (height, width) in texels.
    vertex_uv : np.ndarray
        F x 3 x 2 UV coordinate per face corner, in [0, 1].
    uv_of_vertex : np.ndarray
        N x 2 UV coordinate per vertex.
    faces : np.ndarray
        F x 3, shared with the body model.
    texel_face : np.ndarray
        H x W face index, ``BACKGROUND`` outside the surface.
    texel_bary : np.ndarray
        H x W x 3 barycentric weights of texel centers.
    inside : np.ndarray
        H x W booleans.
    island_box : np.ndarray
        24 x 4 ``(row, col, height, width)`` texel box of each tube's island.
    """

    resolution: t.Tuple[int, int]
    vertex_uv: np.ndarray
    uv_of_vertex: np.ndarray
    faces: np.ndarray
    texel_face: np.ndarray
    texel_bary: np.ndarray
    inside: np.ndarray
    island_box: np.ndarray

    @property
    def height(self) -> int:
        """Number of texel rows."""

        return self.resolution[0]

    @property
    def width(self) -> int:
        """Number of texel columns."""

        return self.resolution[1]

    @property
    def num_vertices(self) -> int:
        """Number of vertices the atlas was built for."""

        return self.uv_of_vertex.shape[0]

    def texel_of_uv(
        self, uv: np.ndarray
    ) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Texel containing each UV coordinate.

        Coordinates outside [0, 1] are clamped.

        Returns
        -------
        tuple of np.ndarray
            Row indices, column indices and a mask of clamped coordinates.
        """

        uv = np.asarray(uv, dtype=np.float64)
        clamped = np.any((uv < 0.0) | (uv > 1.0), axis=-1)
        uv = np.clip(uv, 0.0, 1.0)
        cols = np.minimum((uv[..., 0] * self.width).astype(np.int64), self.width - 1)
        rows = np.minimum(
            (uv[..., 1] * self.height).astype(np.int64), self.height - 1
        )
        return rows, cols, clamped


@dataclass(frozen=True)
class FlipMap:
    """
    Mirror texel of every texel.

    Attributes
    ----------
    rows, cols : np.ndarray
        H x W coordinates of the mirror texel.
    """

    rows: np.ndarray
    cols: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Return a map whose texel ``t`` holds ``values[flip(t)]``."""

        return values[self.rows, self.cols]

    def __call__(self, row: int, col: int) -> t.Tuple[int, int]:
        return int(self.rows[row, col]), int(self.cols[row, col])


@dataclass(frozen=True)
class PartSegmentation:
    """
    Assignment of texels to the 14 evaluation joints.

    Attributes
    ----------
    assign : np.ndarray
        H x W part id, ``BACKGROUND`` outside the surface.
    face_part : np.ndarray
        F majority part of each face, used where a lookup lands on background.
    vertex_part : np.ndarray
        N nearest joint site of each template vertex.
    sites : np.ndarray
        14 x 3 joint sites used for the assignment.
    """

    assign: np.ndarray
    face_part: np.ndarray
    vertex_part: np.ndarray
    sites: np.ndarray

    @property
    def resolution(self) -> t.Tuple[int, int]:
        """(height, width) of the assignment map."""

        return self.assign.shape  # type: ignore

    def counts(self) -> np.ndarray:
        """Number of texels owned by each part."""

        labels = self.assign[self.assign != BACKGROUND]
        return np.bincount(labels, minlength=NUM_LSP_JOINTS)

    def paint(self, values: np.ndarray) -> np.ndarray:
        """
        Write a per-part value to every texel of that part.

        Parameters
        ----------
        values : np.ndarray
            14 x C values.

        Returns
        -------
        np.ndarray
            H x W x C map, zero on background.
        """

        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != NUM_LSP_JOINTS:
            raise ValueError(
                f"Expected {NUM_LSP_JOINTS} part values, got {values.shape}"
            )
        out = np.zeros(self.assign.shape + values.shape[1:])
        mask = self.assign != BACKGROUND
        out[mask] = values[self.assign[mask]]
        return out


def _slot_order(model: BodyModel) -> t.Dict[int, t.Tuple[int, int]]:
    """(column, row) slot of each tube's island."""

    mirror = model.tree.mirror()
    slots: t.Dict[int, t.Tuple[int, int]] = {}
    midline = [j for j in range(len(mirror)) if mirror[j] == j]
    left = [j for j, name in enumerate(KIN_JOINT_NAMES) if name.startswith("l_")]
    if len(midline) > _NUM_ROWS or len(left) > 2 * _NUM_ROWS:
        raise AtlasPackingError("Too many tubes for the island grid")
    for row, joint in enumerate(midline):
        slots[joint] = (2, row)
    for i, joint in enumerate(left):
        column, row = (1, i) if i < _NUM_ROWS else (0, i - _NUM_ROWS)
        slots[joint] = (column, row)
        slots[int(mirror[joint])] = (_NUM_COLUMNS - 1 - column, row)
    return slots


def _rasterize_face(
    corners: np.ndarray,
    face: int,
    texel_face: np.ndarray,
    texel_bary: np.ndarray,
):
    """Assign uncovered texel centers inside a triangle given in texel units."""

    height, width = texel_face.shape
    lo = np.floor(corners.min(axis=0) - 0.5).astype(int)
    hi = np.ceil(corners.max(axis=0) - 0.5).astype(int)
    cols = np.arange(max(lo[0], 0), min(hi[0], width - 1) + 1)
    rows = np.arange(max(lo[1], 0), min(hi[1], height - 1) + 1)
    if len(cols) == 0 or len(rows) == 0:
        return
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    bary = barycentric_2d(
        corners, np.stack([grid_c + 0.5, grid_r + 0.5], axis=-1)
    )
    if bary is None:
        return
    hit = np.all(bary >= -_BARY_EPS, axis=-1) & (
        texel_face[grid_r, grid_c] == BACKGROUND
    )
    if not np.any(hit):
        return
    weights = np.clip(bary[hit], 0.0, None)
    weights /= weights.sum(axis=-1, keepdims=True)
    texel_face[grid_r[hit], grid_c[hit]] = face
    texel_bary[grid_r[hit], grid_c[hit]] = weights


def barycentric_2d(
    corners: np.ndarray, points: np.ndarray
) -> t.Optional[np.ndarray]:
    """
    Barycentric coordinates of 2D points in a triangle.

    Parameters
    ----------
    corners : np.ndarray
        3 x 2 triangle corners.
    points : np.ndarray
        (..., 2) query points.

    Returns
    -------
    np.ndarray or None
        (..., 3) weights, or None for a zero-area triangle.
    """

    a, b, c = corners
    ab, ac = b - a, c - a
    denom = ab[0] * ac[1] - ab[1] * ac[0]
    if abs(denom) < 1e-12:
        return None
    ap = points - a
    w_b = (ap[..., 0] * ac[1] - ap[..., 1] * ac[0]) / denom
    w_c = (ab[0] * ap[..., 1] - ab[1] * ap[..., 0]) / denom
    return np.stack([1.0 - w_b - w_c, w_b, w_c], axis=-1)


def build_atlas(
    model: BodyModel, resolution: t.Union[int, t.Tuple[int, int]] = 128
) -> UVAtlas:
    """
    Pack one island per tube and rasterize the texel lookup tables.

    Parameters
    ----------
    model : BodyModel
    resolution : int or tuple of int
        Atlas size, square if an int is given. The width must be even.

    Returns
    -------
    UVAtlas

    Raises
    ------
    ValueError
        if the resolution is below 32 x 32.
    AtlasPackingError
        if the islands do not fit or the width is odd.
    """

    logger = get_logger("UVAtlas")
    height, width = (
        (resolution, resolution) if isinstance(resolution, int) else resolution
    )
    if height < 32 or width < 32:
        raise ValueError(
            f"Atlas resolution must be at least 32 x 32, got {height} x {width}"
        )
    if width % 2:
        raise AtlasPackingError(f"Atlas width must be even, got {width}")

    layout = model.layout
    cell_u = (width - (_NUM_COLUMNS - 1)) // (_NUM_COLUMNS * layout.num_sides)
    cell_v = (height - (_NUM_ROWS - 1)) // (_NUM_ROWS * layout.num_rings)
    if cell_u < 1 or cell_v < 1:
        raise AtlasPackingError(
            f"Cannot pack {layout.num_sides} x {layout.num_rings} grids into "
            f"{height} x {width} texels"
        )
    island_w = layout.num_sides * cell_u
    island_h = layout.num_rings * cell_v
    margin_u = (width - (_NUM_COLUMNS * island_w + _NUM_COLUMNS - 1)) // 2
    margin_v = (height - (_NUM_ROWS * island_h + _NUM_ROWS - 1)) // 2

    slots = _slot_order(model)
    island_box = np.zeros((len(slots), 4), dtype=np.int64)
    for joint, (column, row) in slots.items():
        island_box[joint] = (
            margin_v + row * (island_h + 1),
            margin_u + column * (island_w + 1),
            island_h,
            island_w,
        )

    # texel-space coordinates; right tubes reflect their left partner
    segment = layout.vertex_segment
    tex = np.stack(
        [
            island_box[segment, 1] + layout.vertex_column * cell_u,
            island_box[segment, 0] + layout.vertex_ring * cell_v,
        ],
        axis=-1,
    ).astype(np.float64)
    right = np.array(
        [name.startswith("r_") for name in KIN_JOINT_NAMES]
    )[segment]
    tex[right, 0] = width - tex[model.mirror_vertex[right], 0]
    uv_of_vertex = tex / [width, height]

    texel_face = np.full((height, width), BACKGROUND, dtype=np.int64)
    texel_bary = np.zeros((height, width, 3))
    for face in range(layout.num_primary_faces):
        _rasterize_face(
            tex[model.faces[face]], face, texel_face, texel_bary
        )

    # right half from the left half through the mirror faces
    half = width // 2
    left_face = texel_face[:, :half]
    mirrored = np.where(
        left_face == BACKGROUND,
        BACKGROUND,
        layout.mirror_face[np.maximum(left_face, 0)],
    )
    texel_face[:, half:] = mirrored[:, ::-1]
    texel_bary[:, half:] = texel_bary[:, :half][:, ::-1]
    inside = texel_face != BACKGROUND

    covered = np.unique(texel_face[inside])
    if len(covered) < len(model.faces):
        logger.warning(
            "%d of %d faces cover no texel at %d x %d",
            len(model.faces) - len(covered),
            len(model.faces),
            height,
            width,
        )
    logger.info(
        "Packed atlas %d x %d: cells %d x %d texels, %.1f%% inside",
        height,
        width,
        cell_u,
        cell_v,
        100.0 * inside.mean(),
    )
    return UVAtlas(
        resolution=(height, width),
        vertex_uv=uv_of_vertex[model.faces],
        uv_of_vertex=uv_of_vertex,
        faces=model.faces,
        texel_face=texel_face,
        texel_bary=texel_bary,
        inside=inside,
        island_box=island_box,
    )


def rasterize_vertex_attribute(atlas: UVAtlas, values: np.ndarray) -> np.ndarray:
    """
    Interpolate per-vertex values to texels with barycentric weights.

    Parameters
    ----------
    atlas : UVAtlas
    values : np.ndarray
        N x C (or N) values.

    Returns
    -------
    np.ndarray
        H x W x C map (H x W for 1D input), zero on background.

    Raises
    ------
    ValueError
        if the number of rows differs from the vertex count.
    """

    values = np.asarray(values, dtype=np.float64)
    flat = values.ndim == 1
    if flat:
        values = values[:, None]
    if values.shape[0] != atlas.num_vertices:
        raise ValueError(
            f"Expected {atlas.num_vertices} vertex values, got {values.shape[0]}"
        )
    out = np.zeros(atlas.resolution + values.shape[1:])
    faces = atlas.texel_face[atlas.inside]
    corner_values = values[atlas.faces[faces]]
    out[atlas.inside] = np.einsum(
        "mi,mic->mc", atlas.texel_bary[atlas.inside], corner_values
    )
    return out[..., 0] if flat else out


def build_flip_map(atlas: UVAtlas) -> FlipMap:
    """
    Reflect texel columns about the atlas center line.

    Raises
    ------
    ValueError
        if the atlas surface is not mirror symmetric.
    """

    if not np.array_equal(atlas.inside, atlas.inside[:, ::-1]):
        raise ValueError("Atlas islands are not mirror placed")
    rows, cols = np.meshgrid(
        np.arange(atlas.height),
        atlas.width - 1 - np.arange(atlas.width),
        indexing="ij",
    )
    return FlipMap(rows=rows, cols=cols)


def build_island_labels(atlas: UVAtlas, model: BodyModel) -> np.ndarray:
    """H x W tube index of the island each texel lies on, ``BACKGROUND`` outside."""

    face_segment = model.layout.vertex_segment[atlas.faces[:, 0]]
    inside = atlas.texel_face != BACKGROUND
    labels = np.full(atlas.resolution, BACKGROUND, dtype=np.int64)
    labels[inside] = face_segment[atlas.texel_face[inside]]
    return labels


def nearest_site_labels(points: np.ndarray, sites: np.ndarray) -> np.ndarray:
    """Index of the closest site for each point, lowest index on ties."""

    dist = np.linalg.norm(points[:, None, :] - sites[None, :, :], axis=-1)
    return np.argmin(dist, axis=1)


def build_part_segmentation(model: BodyModel, atlas: UVAtlas) -> PartSegmentation:
    """
    Assign every texel to one of the 14 joints.

    Each template vertex picks its nearest joint site. The one-hot labels are
    rasterized to a 14 channel probability map, averaged with the mirrored
    map (mirror texel, mirror label) and reduced by argmax on the left half.
    The right half copies the mirrored labels of the left half.

    Raises
    ------
    EmptyPartError
        if a part owns no texel.
    """

    logger = get_logger("PartSegmentation")
    mirror = np.array(LSP_MIRROR)
    sites = model.lsp_regressor @ model.template_vertices
    vertex_part = nearest_site_labels(model.template_vertices, sites)
    onehot = np.eye(NUM_LSP_JOINTS)[vertex_part]

    flip = build_flip_map(atlas)
    probs = rasterize_vertex_attribute(atlas, onehot)
    symmetric = 0.5 * (probs + flip.apply(probs)[..., mirror])

    half = atlas.width // 2
    assign = np.full(atlas.resolution, BACKGROUND, dtype=np.int64)
    left_inside = atlas.inside[:, :half]
    left = np.argmax(symmetric[:, :half], axis=-1)
    assign[:, :half] = np.where(left_inside, left, BACKGROUND)
    assign[:, half:] = np.where(
        left_inside, mirror[left], BACKGROUND
    )[:, ::-1]

    face_part = np.argmax(onehot[model.faces].sum(axis=1), axis=-1)
    seg = PartSegmentation(
        assign=assign,
        face_part=face_part,
        vertex_part=vertex_part,
        sites=sites,
    )
    counts = seg.counts()
    if np.any(counts == 0):
        raise EmptyPartError(
            f"Parts {np.flatnonzero(counts == 0).tolist()} own no texel"
        )
    logger.debug("Texels per part: %s", counts.tolist())
    return seg


def sample_bilinear(
    values: np.ndarray, inside: np.ndarray, uv: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray]:
    """
    Bilinearly sample a texel map at UV coordinates, skipping background.

    Weights of background neighbours are dropped and the rest renormalized.

    Parameters
    ----------
    values : np.ndarray
        H x W x C map.
    inside : np.ndarray
        H x W mask of usable texels.
    uv : np.ndarray
        P x 2 coordinates.

    Returns
    -------
    tuple of np.ndarray
        P x C samples and a P mask of points with at least one usable
        neighbour. Points without one get zeros.
    """

    height, width = inside.shape
    uv = np.asarray(uv, dtype=np.float64)
    x = uv[:, 0] * width - 0.5
    y = uv[:, 1] * height - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0

    total = np.zeros(len(uv))
    acc = np.zeros((len(uv),) + values.shape[2:])
    for dy, dx, weight in (
        (0, 0, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    ):
        rows, cols = y0 + dy, x0 + dx
        valid = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        rows_c = np.clip(rows, 0, height - 1)
        cols_c = np.clip(cols, 0, width - 1)
        weight = np.where(valid & inside[rows_c, cols_c], weight, 0.0)
        total += weight
        acc += weight.reshape((-1,) + (1,) * (acc.ndim - 1)) * values[rows_c, cols_c]
    found = total > 1e-12
    out = np.zeros_like(acc)
    out[found] = acc[found] / total[found].reshape((-1,) + (1,) * (acc.ndim - 1))
    return out, found
