#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Parametric articulated body: a procedural symmetric template, shape blendshapes,
a 24 joint kinematic tree, linear blend skinning and joint regression.

The template is built from one open tube per joint. Each tube runs from its
joint to a child joint (or a fixed tip) and is sampled on a grid of
``num_rings + 1`` rings by ``num_sides + 1`` columns, the last column
duplicating the first so UV islands can be cut along a seam. Right side tubes
are exact x-reflections of the left side ones, so the body is bilaterally
symmetric for every shape vector.
"""
import typing as t
from dataclasses import dataclass

import numpy as np
import orjson
from pydantic import BaseModel, root_validator, validator

from uvbody.logging import get as get_logger
from uvbody.vars import (
    BETA_LIMIT,
    KIN_JOINT_NAMES,
    KIN_PARENTS,
    LSP_JOINT_NAMES,
    MIN_VERTEX_BUDGET,
    NUM_BETAS,
    NUM_KIN_JOINTS,
    NUM_LSP_JOINTS,
)

SeedLike = t.Union[int, t.Sequence[int], np.random.SeedSequence]

_SMALL_ANGLE = 1e-4


class ModelConfigError(ValueError):
    """Raised when a body model cannot be built from the given config."""


def _orjson_dumps(value, *_, default) -> str:
    """Wrap orjson.dumps to decode to str and accept numpy arrays."""

    return orjson.dumps(
        value, default=default, option=orjson.OPT_SERIALIZE_NUMPY
    ).decode()


class _ArrayModelConfig:
    """Default Config for uvbody BaseModels."""

    json_loads = orjson.loads
    json_dumps = _orjson_dumps
    # numpy arrays as fields
    arbitrary_types_allowed = True


class ArrayModel(BaseModel):
    """Pydantic BaseModel for value types that may hold numpy arrays."""

    class Config(_ArrayModelConfig):
        """Define pydantic configuration by subclassing base model config."""

        ...


# --- Rotations ---


def skew(vec: np.ndarray) -> np.ndarray:
    """Return the cross-product matrix of vectors with shape (..., 3)."""

    vec = np.asarray(vec, dtype=np.float64)
    out = np.zeros(vec.shape[:-1] + (3, 3))
    out[..., 0, 1] = -vec[..., 2]
    out[..., 0, 2] = vec[..., 1]
    out[..., 1, 0] = vec[..., 2]
    out[..., 1, 2] = -vec[..., 0]
    out[..., 2, 0] = -vec[..., 1]
    out[..., 2, 1] = vec[..., 0]
    return out


def _sinc_terms(
    angle: np.ndarray,
) -> t.Tuple[np.ndarray, np.ndarray]:
    """Return sin(a)/a and (1 - cos(a))/a^2, with series near zero."""

    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    sq = angle * angle
    first = np.where(small, 1.0 - sq / 6.0, np.sin(safe) / safe)
    second = np.where(
        small, 0.5 - sq / 24.0, (1.0 - np.cos(safe)) / (safe * safe)
    )
    return first, second


def rodrigues_batch(axis_angle: np.ndarray) -> np.ndarray:
    """
    Convert axis-angle vectors with shape (..., 3) to rotation matrices.

    Parameters
    ----------
    axis_angle : np.ndarray
        Rotation vectors, direction is the axis and norm the angle (radians).

    Returns
    -------
    np.ndarray
        Rotation matrices with shape (..., 3, 3).
    """

    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(axis_angle, axis=-1)
    first, second = _sinc_terms(angle)
    cross = skew(axis_angle)
    eye = np.broadcast_to(np.eye(3), cross.shape)
    return (
        eye
        + first[..., None, None] * cross
        + second[..., None, None] * (cross @ cross)
    )


def rodrigues(axis_angle: t.Sequence[float]) -> np.ndarray:
    """Convert one axis-angle 3-vector to a 3x3 rotation matrix."""

    vec = np.asarray(axis_angle, dtype=np.float64)
    if vec.shape != (3,):
        raise ValueError(f"Expected a 3-vector, got shape {vec.shape}")
    return rodrigues_batch(vec)


def so3_left_jacobian(axis_angle: np.ndarray) -> np.ndarray:
    """
    Left Jacobian of the SO(3) exponential for vectors with shape (..., 3).

    A perturbation ``d`` of the rotation vector changes the rotation by the
    left increment ``exp(skew(J @ d))``.
    """

    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(axis_angle, axis=-1)
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    sq = angle * angle
    first = np.where(
        small, 0.5 - sq / 24.0, (1.0 - np.cos(safe)) / (safe * safe)
    )
    second = np.where(
        small, 1.0 / 6.0 - sq / 120.0, (safe - np.sin(safe)) / safe**3
    )
    cross = skew(axis_angle)
    eye = np.broadcast_to(np.eye(3), cross.shape)
    return (
        eye
        + first[..., None, None] * cross
        + second[..., None, None] * (cross @ cross)
    )


def canonicalize_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """
    Map rotation vectors to the equivalent vector with norm at most pi.

    Works on arrays with shape (..., 3). Rotations by more than pi are
    rewritten as rotations by ``angle - 2 pi`` about the same axis.
    """

    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(axis_angle, axis=-1, keepdims=True)
    wrapped = np.mod(angle, 2.0 * np.pi)
    wrapped = np.where(wrapped > np.pi, wrapped - 2.0 * np.pi, wrapped)
    needs = angle > np.pi
    safe = np.where(angle > 0.0, angle, 1.0)
    return np.where(needs, axis_angle / safe * wrapped, axis_angle)


# --- Value types ---


@dataclass(frozen=True)
class KinematicTree:
    """
    Parent/child joint hierarchy, topologically ordered.

    Attributes
    ----------
    parent : np.ndarray
        Parent index per joint, ``-1`` for the single root at index 0.
    names : tuple of str
    """

    parent: np.ndarray
    names: t.Tuple[str, ...]

    def __post_init__(self):
        parent = np.asarray(self.parent)
        if parent.ndim != 1 or len(parent) != len(self.names):
            raise ValueError(
                f"Parent array shape {parent.shape} does not match "
                f"{len(self.names)} joint names"
            )
        if parent[0] != -1 or np.count_nonzero(parent < 0) != 1:
            raise ValueError("Kinematic tree must have exactly one root at 0")
        if np.any(parent[1:] >= np.arange(1, len(parent))):
            raise ValueError("Kinematic tree is not topologically ordered")

    @property
    def num_joints(self) -> int:
        """Number of joints in the tree."""

        return len(self.names)

    def mirror(self) -> np.ndarray:
        """Index of the bilateral partner of each joint (self on midline)."""

        lookup = {name: i for i, name in enumerate(self.names)}
        out = np.arange(self.num_joints)
        for i, name in enumerate(self.names):
            if name.startswith("l_"):
                out[i] = lookup["r_" + name[2:]]
            elif name.startswith("r_"):
                out[i] = lookup["l_" + name[2:]]
        return out


@dataclass(frozen=True)
class SurfaceLayout:
    """
    Grid structure of the template surface, consumed by the UV atlas.

    Segment ``j`` is the tube owned by kinematic joint ``j``.
    """

    num_sides: int
    num_rings: int
    vertex_segment: np.ndarray
    vertex_ring: np.ndarray
    vertex_column: np.ndarray
    mirror_face: np.ndarray
    num_primary_faces: int

    @property
    def vertices_per_segment(self) -> int:
        """Number of grid vertices in each tube."""

        return (self.num_rings + 1) * (self.num_sides + 1)

    def vertex_index(self, segment: int, ring: int, column: int) -> int:
        """Index of the grid vertex at (ring, column) of a segment."""

        return (
            segment * self.vertices_per_segment
            + ring * (self.num_sides + 1)
            + column
        )


@dataclass(frozen=True)
class BodyModel:
    """
    Procedural stand-in for a licensed parametric body.

    Attributes
    ----------
    template_vertices : np.ndarray
        N x 3 rest vertices in meters, root at origin.
    faces : np.ndarray
        F x 3 vertex indices.
    shape_dirs : np.ndarray
        N x 3 x B blendshape directions, meters per unit beta.
    skin_weights : np.ndarray
        N x K skinning weights, rows sum to one.
    kin_regressor : np.ndarray
        K x N regressor for the kinematic joints.
    lsp_regressor : np.ndarray
        14 x N regressor for the evaluation joints.
    mirror_vertex : np.ndarray
        Index of the bilateral mirror of each vertex.
    tree : KinematicTree
    layout : SurfaceLayout
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    skin_weights: np.ndarray
    kin_regressor: np.ndarray
    lsp_regressor: np.ndarray
    mirror_vertex: np.ndarray
    tree: KinematicTree
    layout: SurfaceLayout

    @property
    def num_vertices(self) -> int:
        """Number of mesh vertices."""

        return self.template_vertices.shape[0]

    @property
    def num_betas(self) -> int:
        """Number of shape coefficients."""

        return self.shape_dirs.shape[2]

    def check_invariants(self, atol: float = 1e-9):
        """
        Validate weights, regressors and symmetry of the model.

        Raises
        ------
        ModelConfigError
            if any invariant does not hold.
        """

        checks = (
            (
                "skin weight rows must be non-negative and sum to 1",
                np.all(self.skin_weights >= 0.0)
                and np.allclose(self.skin_weights.sum(axis=1), 1.0, atol=atol),
            ),
            (
                "kinematic regressor rows must sum to 1",
                np.allclose(self.kin_regressor.sum(axis=1), 1.0, atol=atol),
            ),
            (
                "LSP regressor rows must sum to 1",
                np.allclose(self.lsp_regressor.sum(axis=1), 1.0, atol=atol),
            ),
            (
                "template must be bilaterally symmetric",
                np.allclose(
                    self.template_vertices[self.mirror_vertex],
                    self.template_vertices * [-1.0, 1.0, 1.0],
                    atol=atol,
                    rtol=0.0,
                ),
            ),
        )
        for message, passed in checks:
            if not passed:
                raise ModelConfigError(message)


class PoseParams(ArrayModel):
    """Axis-angle pose, 24 x 3 radians with the root orientation first."""

    theta: np.ndarray

    @validator("theta", pre=True)
    def validate_theta(cls, value):  # pylint: disable=no-self-argument
        """Reshape to 24 x 3, reject non-finite values and canonicalize."""

        arr = np.array(value, dtype=np.float64)
        if arr.size != NUM_KIN_JOINTS * 3:
            raise ValueError(
                f"Expected {NUM_KIN_JOINTS * 3} pose values, got {arr.size}"
            )
        arr = arr.reshape(NUM_KIN_JOINTS, 3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Pose contains non-finite values")
        return canonicalize_axis_angle(arr)

    @classmethod
    def zero(cls) -> "PoseParams":
        """Rest pose."""

        return cls(theta=np.zeros((NUM_KIN_JOINTS, 3)))


class ShapeParams(ArrayModel):
    """Shape coefficients, each within [-5, 5]."""

    beta: np.ndarray

    @validator("beta", pre=True)
    def validate_beta(cls, value):  # pylint: disable=no-self-argument
        """Check length, finiteness and range."""

        arr = np.array(value, dtype=np.float64).reshape(-1)
        if arr.shape != (NUM_BETAS,):
            raise ValueError(
                f"Expected {NUM_BETAS} shape values, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("Shape contains non-finite values")
        if np.any(np.abs(arr) > BETA_LIMIT):
            raise ValueError(
                f"Shape coefficients must lie within +-{BETA_LIMIT}, "
                f"got max magnitude {np.abs(arr).max()}"
            )
        return arr

    @classmethod
    def zero(cls) -> "ShapeParams":
        """Mean shape."""

        return cls(beta=np.zeros(NUM_BETAS))

    @classmethod
    def clamped(cls, value: np.ndarray) -> "ShapeParams":
        """Build from arbitrary coefficients by clamping into range."""

        return cls(beta=np.clip(value, -BETA_LIMIT, BETA_LIMIT))


class JointSet(ArrayModel):
    """Root-relative LSP joints in meters with per-joint visibility."""

    joints: np.ndarray
    visible: np.ndarray

    @validator("joints", pre=True)
    def validate_joints(cls, value):  # pylint: disable=no-self-argument
        """Reshape to 14 x 3 and reject non-finite values."""

        arr = np.array(value, dtype=np.float64)
        if arr.size != NUM_LSP_JOINTS * 3:
            raise ValueError(
                f"Expected {NUM_LSP_JOINTS} x 3 joints, got shape {arr.shape}"
            )
        arr = arr.reshape(NUM_LSP_JOINTS, 3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Joints contain non-finite values")
        return arr

    @validator("visible", pre=True)
    def validate_visible(cls, value):  # pylint: disable=no-self-argument
        """Coerce to a boolean vector of length 14."""

        arr = np.array(value, dtype=bool).reshape(-1)
        if arr.shape != (NUM_LSP_JOINTS,):
            raise ValueError(
                f"Expected {NUM_LSP_JOINTS} visibility flags, got {arr.shape}"
            )
        return arr

    @root_validator(skip_on_failure=True)
    def zero_invisible(cls, values):  # pylint: disable=no-self-argument
        """Invisible joints carry the value 0."""

        joints = values["joints"]
        joints[~values["visible"]] = 0.0
        return values

    @classmethod
    def all_visible(cls, joints: np.ndarray) -> "JointSet":
        """Wrap a 14 x 3 array with every joint visible."""

        return cls(joints=joints, visible=np.ones(NUM_LSP_JOINTS, dtype=bool))


@dataclass(frozen=True)
class Mesh:
    """Root-relative posed vertices sharing faces with their model."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(
                f"Expected N x 3 vertices, got shape {self.vertices.shape}"
            )
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("Mesh contains non-finite vertices")


# --- Model construction ---

# Rest joint positions for the left side and the midline (meters, y up,
# +z forward); the right side is the x-reflection.
_REST_JOINTS: t.Dict[str, t.Tuple[float, float, float]] = {
    "pelvis": (0.0, 0.0, 0.0),
    "l_hip": (0.09, -0.09, 0.0),
    "spine1": (0.0, 0.10, 0.0),
    "l_knee": (0.10, -0.49, 0.0),
    "spine2": (0.0, 0.22, 0.0),
    "l_ankle": (0.10, -0.89, 0.0),
    "spine3": (0.0, 0.34, 0.0),
    "l_foot": (0.10, -0.95, 0.10),
    "neck": (0.0, 0.52, 0.0),
    "l_collar": (0.07, 0.46, 0.0),
    "head": (0.0, 0.62, 0.0),
    "l_shoulder": (0.18, 0.46, 0.0),
    "l_elbow": (0.44, 0.46, 0.0),
    "l_wrist": (0.68, 0.46, 0.0),
    "l_hand": (0.76, 0.46, 0.0),
}

# Where each tube ends: a joint name or a tip offset from the owning joint
_SEGMENT_END: t.Dict[str, t.Union[str, t.Tuple[float, float, float]]] = {
    "pelvis": "spine1",
    "l_hip": "l_knee",
    "spine1": "spine2",
    "l_knee": "l_ankle",
    "spine2": "spine3",
    "l_ankle": "l_foot",
    "spine3": "neck",
    "l_foot": (0.0, 0.0, 0.08),
    "neck": "head",
    "l_collar": "l_shoulder",
    "head": (0.0, 0.20, 0.0),
    "l_shoulder": "l_elbow",
    "l_elbow": "l_wrist",
    "l_wrist": "l_hand",
    "l_hand": (0.08, 0.0, 0.0),
}

DEFAULT_RADII: t.Dict[str, float] = {
    "pelvis": 0.13,
    "l_hip": 0.075,
    "spine1": 0.13,
    "l_knee": 0.055,
    "spine2": 0.135,
    "l_ankle": 0.045,
    "spine3": 0.14,
    "l_foot": 0.035,
    "neck": 0.055,
    "l_collar": 0.05,
    "head": 0.095,
    "l_shoulder": 0.05,
    "l_elbow": 0.04,
    "l_wrist": 0.035,
    "l_hand": 0.03,
}

# Blendshape groups, named by their left/midline joints
_LEG = ("l_knee", "l_ankle", "l_foot")
_ARM = ("l_elbow", "l_wrist", "l_hand")
_TORSO = ("spine1", "spine2", "spine3", "neck")
_SHOULDER = ("l_collar", "l_shoulder")
_HIP = ("l_hip",)
_LIMB_SEGMENTS = (
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_foot",
    "l_collar",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hand",
)
_TORSO_SEGMENTS = ("pelvis", "spine1", "spine2", "spine3")
_HEAD_SEGMENTS = ("neck", "head")
_ALL = tuple(_REST_JOINTS)

# Per component: (bone length groups, length rate, tip groups, girth groups,
# girth rate). Rates are relative change per unit beta.
_SHAPE_COMPONENTS: t.Tuple[
    t.Tuple[t.Tuple[str, ...], float, t.Tuple[str, ...], t.Tuple[str, ...], float],
    ...,
] = (
    (_ALL, 0.05, ("l_foot", "head", "l_hand"), _ALL, 0.05),  # stature
    ((), 0.0, (), _ALL, 0.06),  # girth
    (_LEG, 0.06, ("l_foot",), (), 0.0),  # leg length
    (_ARM, 0.06, ("l_hand",), (), 0.0),  # arm length
    (_TORSO, 0.06, (), (), 0.0),  # torso length
    (_SHOULDER, 0.08, (), (), 0.0),  # shoulder width
    (_HIP, 0.08, (), (), 0.0),  # hip width
    ((), 0.0, (), _LIMB_SEGMENTS, 0.05),  # limb girth
    ((), 0.0, (), _TORSO_SEGMENTS, 0.05),  # torso girth
    (("head",), 0.05, ("head",), _HEAD_SEGMENTS, 0.05),  # head size
)


class ModelConfig(ArrayModel):
    """
    Parameters for building the procedural body.

    Attributes
    ----------
    vertex_budget : int
        Upper bound on the vertex count, at least 500.
    radii : dict of str to float
        Tube radius per left/midline joint name, meters.
    radius_scale : float
        Uniform factor applied to every radius.
    num_betas : int
        Must be 10.
    """

    vertex_budget: int = 1500
    radii: t.Dict[str, float] = DEFAULT_RADII
    radius_scale: float = 1.0
    num_betas: int = NUM_BETAS

    @validator("radii")
    def validate_radii(cls, value):  # pylint: disable=no-self-argument
        """Every tube needs a positive radius."""

        missing = set(_REST_JOINTS) - set(value)
        if missing:
            raise ValueError(f"Missing radii for {sorted(missing)}")
        if any(radius <= 0.0 for radius in value.values()):
            raise ValueError("Radii must be positive")
        return value

    @validator("radius_scale")
    def validate_radius_scale(cls, value):  # pylint: disable=no-self-argument
        """Scale must be positive."""

        if value <= 0.0:
            raise ValueError("radius_scale must be positive")
        return value

    @validator("num_betas")
    def validate_num_betas(cls, value):  # pylint: disable=no-self-argument
        """Only the 10 coefficient shape space is supported."""

        if value != NUM_BETAS:
            raise ValueError(f"num_betas must be {NUM_BETAS}")
        return value


def _left_name(name: str) -> str:
    """Map a right side joint name to its left partner."""

    return "l_" + name[2:] if name.startswith("r_") else name


def _is_right(name: str) -> bool:
    return name.startswith("r_")


def _reflect(vec: t.Sequence[float]) -> np.ndarray:
    return np.array(vec, dtype=np.float64) * [-1.0, 1.0, 1.0]


def rest_joint_positions() -> np.ndarray:
    """Rest positions of the 24 kinematic joints."""

    out = np.zeros((NUM_KIN_JOINTS, 3))
    for j, name in enumerate(KIN_JOINT_NAMES):
        pos = _REST_JOINTS[_left_name(name)]
        out[j] = _reflect(pos) if _is_right(name) else pos
    return out


def _segment_end(name: str, joints: np.ndarray) -> np.ndarray:
    """End point of the tube owned by the named joint."""

    end = _SEGMENT_END[_left_name(name)]
    index = KIN_JOINT_NAMES.index(name)
    if isinstance(end, str):
        if _is_right(name):
            end = "r_" + end[2:] if end.startswith("l_") else end
        return joints[KIN_JOINT_NAMES.index(end)]
    tip = _reflect(end) if _is_right(name) else np.array(end)
    return joints[index] + tip


def _segment_child(name: str) -> t.Optional[int]:
    """Kinematic joint at the end of a tube, or None for a tip."""

    end = _SEGMENT_END[_left_name(name)]
    if not isinstance(end, str):
        return None
    if _is_right(name) and end.startswith("l_"):
        end = "r_" + end[2:]
    return KIN_JOINT_NAMES.index(end)


def _ring_tables(num_sides: int) -> t.Tuple[np.ndarray, np.ndarray]:
    """
    Cosine and sine of ``2 pi k / n`` for k in [0, n].

    Values are mirrored from the first quadrant so that ``k`` and ``n - k``
    are exact reflections and every full ring sums to exactly zero.
    """

    quarter = num_sides // 4
    angles = 2.0 * np.pi * np.arange(quarter + 1) / num_sides
    cos_q, sin_q = np.cos(angles), np.sin(angles)
    cos_q[0], sin_q[0] = 1.0, 0.0
    cos_q[quarter], sin_q[quarter] = 0.0, 1.0

    cos = np.empty(num_sides + 1)
    sin = np.empty(num_sides + 1)
    for k in range(num_sides + 1):
        if k <= quarter:
            cos[k], sin[k] = cos_q[k], sin_q[k]
        elif k <= 2 * quarter:
            m = 2 * quarter - k
            cos[k], sin[k] = -cos_q[m], sin_q[m]
        elif k <= 3 * quarter:
            m = k - 2 * quarter
            cos[k], sin[k] = -cos_q[m], -sin_q[m]
        else:
            m = num_sides - k
            cos[k], sin[k] = cos_q[m], -sin_q[m]
    return cos, sin


def _frame(direction: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors orthogonal to ``direction`` and to each other."""

    ref = (
        np.array([0.0, 0.0, 1.0])
        if abs(direction[2]) < 0.9
        else np.array([0.0, 1.0, 0.0])
    )
    first = ref - np.dot(ref, direction) * direction
    first /= np.linalg.norm(first)
    return first, np.cross(direction, first)


def radius_profile(ring_param: np.ndarray) -> np.ndarray:
    """Relative tube radius along the tube, open and slightly narrower at ends."""

    return 0.85 + 0.15 * np.sin(np.pi * ring_param)


def _grid_size(budget: int) -> t.Tuple[int, int]:
    """Number of sides and rings per tube for a vertex budget."""

    per_segment = budget // NUM_KIN_JOINTS
    num_sides = 8 if per_segment >= 45 else 4
    num_rings = per_segment // (num_sides + 1) - 1
    if num_rings < 2:
        raise ModelConfigError(
            f"Vertex budget {budget} too small for {NUM_KIN_JOINTS} tubes"
        )
    return num_sides, num_rings


def _shape_tables() -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bone length, tip length and girth rates with shape (24, B)."""

    bone = np.zeros((NUM_KIN_JOINTS, NUM_BETAS))
    tip = np.zeros((NUM_KIN_JOINTS, NUM_BETAS))
    girth = np.zeros((NUM_KIN_JOINTS, NUM_BETAS))
    for comp, (bones, rate, tips, girths, girth_rate) in enumerate(
        _SHAPE_COMPONENTS
    ):
        for j, name in enumerate(KIN_JOINT_NAMES):
            left = _left_name(name)
            if left in bones:
                bone[j, comp] = rate
            if left in tips:
                tip[j, comp] = rate
            if left in girths:
                girth[j, comp] = girth_rate
    return bone, tip, girth


def _build_faces(
    num_sides: int, num_rings: int, mirror_vertex: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray, int]:
    """
    Triangulate every tube grid.

    Primary faces cover left tubes and the left half of midline tubes; the
    remaining faces are their mirror images, so face ``f`` and
    ``f + num_primary`` are mirror partners.
    """

    per = (num_rings + 1) * (num_sides + 1)
    primary: t.List[t.Tuple[int, int, int]] = []
    for j, name in enumerate(KIN_JOINT_NAMES):
        if _is_right(name):
            continue
        midline = not name.startswith("l_")
        columns = range(num_sides // 2) if midline else range(num_sides)
        for ring in range(num_rings):
            for col in columns:
                v00 = j * per + ring * (num_sides + 1) + col
                v01 = v00 + 1
                v10 = v00 + num_sides + 1
                v11 = v10 + 1
                primary.append((v00, v10, v11))
                primary.append((v00, v11, v01))
    primary_arr = np.array(primary, dtype=np.int64)
    faces = np.concatenate([primary_arr, mirror_vertex[primary_arr]])
    num_primary = len(primary_arr)
    mirror_face = np.concatenate(
        [np.arange(num_primary) + num_primary, np.arange(num_primary)]
    )
    return faces, mirror_face, num_primary


def build_synthetic_model(config: t.Optional[ModelConfig] = None) -> BodyModel:
    """
    Build the procedural symmetric body for a config.

    Parameters
    ----------
    config : ModelConfig, optional
        Defaults to ``ModelConfig()``.

    Returns
    -------
    BodyModel

    Raises
    ------
    ModelConfigError
        if the vertex budget is below 500 or too small for the tube grid.
    """

    config = config or ModelConfig()
    logger = get_logger("BodyModel")
    if config.vertex_budget < MIN_VERTEX_BUDGET:
        raise ModelConfigError(
            f"Vertex budget must be at least {MIN_VERTEX_BUDGET}, "
            f"got {config.vertex_budget}"
        )

    num_sides, num_rings = _grid_size(config.vertex_budget)
    tree = KinematicTree(
        parent=np.array(KIN_PARENTS, dtype=np.int64), names=KIN_JOINT_NAMES
    )
    joint_mirror = tree.mirror()
    rest = rest_joint_positions()
    cos, sin = _ring_tables(num_sides)
    rings = np.arange(num_rings + 1) / num_rings
    profile = radius_profile(rings)
    bone_rate, tip_rate, girth_rate = _shape_tables()

    # joint displacement per unit beta, accumulated root to leaf
    joint_dirs = np.zeros((NUM_KIN_JOINTS, 3, NUM_BETAS))
    for j in range(1, NUM_KIN_JOINTS):
        parent = tree.parent[j]
        bone = rest[j] - rest[parent]
        joint_dirs[j] = joint_dirs[parent] + bone[:, None] * bone_rate[j]

    per = (num_rings + 1) * (num_sides + 1)
    num_vertices = per * NUM_KIN_JOINTS
    template = np.zeros((num_vertices, 3))
    shape_dirs = np.zeros((num_vertices, 3, NUM_BETAS))
    weights = np.zeros((num_vertices, NUM_KIN_JOINTS))
    segment = np.repeat(np.arange(NUM_KIN_JOINTS), per)
    ring_of = np.tile(
        np.repeat(np.arange(num_rings + 1), num_sides + 1), NUM_KIN_JOINTS
    )
    col_of = np.tile(np.arange(num_sides + 1), (num_rings + 1) * NUM_KIN_JOINTS)

    for j, name in enumerate(KIN_JOINT_NAMES):
        if _is_right(name):
            continue
        radius = config.radii[_left_name(name)] * config.radius_scale
        start = rest[j]
        end = _segment_end(name, rest)
        axis = end - start
        first, second = _frame(axis / np.linalg.norm(axis))
        radial = cos[None, :, None] * first + sin[None, :, None] * second
        radial = np.broadcast_to(radial, (num_rings + 1, num_sides + 1, 3))
        ring_radius = radius * profile[:, None, None]
        points = (
            start + rings[:, None, None] * axis + ring_radius * radial
        ).reshape(-1, 3)

        child = _segment_child(name)
        start_dir = joint_dirs[j]
        if child is None:
            tip = end - start
            end_dir = start_dir + tip[:, None] * tip_rate[j]
        else:
            end_dir = joint_dirs[child]
        blend = rings[:, None, None, None]
        dirs = (
            (1.0 - blend) * start_dir[None, None]
            + blend * end_dir[None, None]
            + (ring_radius * radial)[..., None] * girth_rate[j]
        ).reshape(-1, 3, NUM_BETAS)

        block = slice(j * per, (j + 1) * per)
        template[block] = points
        shape_dirs[block] = dirs
        mirror_j = joint_mirror[j]
        if mirror_j != j:
            mirror_block = slice(mirror_j * per, (mirror_j + 1) * per)
            template[mirror_block] = points * [-1.0, 1.0, 1.0]
            shape_dirs[mirror_block] = dirs * np.array([-1.0, 1.0, 1.0])[:, None]

    for j in range(NUM_KIN_JOINTS):
        block = slice(j * per, (j + 1) * per)
        parent = tree.parent[j]
        own = np.ones(per)
        if parent >= 0:
            ring_param = ring_of[block] / num_rings
            own = np.where(
                ring_param < 0.25, np.minimum(1.0, 0.5 + 2.0 * ring_param), 1.0
            )
            weights[block, parent] = 1.0 - own
        weights[block, j] = own

    # mirror vertex: same grid position on the partner tube, midline tubes
    # reflect their column index
    mirror_vertex = np.empty(num_vertices, dtype=np.int64)
    for j in range(NUM_KIN_JOINTS):
        block = np.arange(j * per, (j + 1) * per)
        if joint_mirror[j] == j:
            mirror_vertex[block] = (
                j * per + ring_of[block] * (num_sides + 1) + num_sides - col_of[block]
            )
        else:
            mirror_vertex[block] = block - j * per + joint_mirror[j] * per

    kin_regressor = np.zeros((NUM_KIN_JOINTS, num_vertices))
    ring_cols = np.arange(num_sides)
    for j in range(NUM_KIN_JOINTS):
        kin_regressor[j, j * per + ring_cols] = 1.0 / num_sides

    lsp_regressor = np.zeros((NUM_LSP_JOINTS, num_vertices))
    for k, name in enumerate(LSP_JOINT_NAMES):
        if name == "head_top":
            head = KIN_JOINT_NAMES.index("head")
            cols = head * per + num_rings * (num_sides + 1) + ring_cols
        else:
            cols = KIN_JOINT_NAMES.index(name) * per + ring_cols
        lsp_regressor[k, cols] = 1.0 / num_sides

    faces, mirror_face, num_primary = _build_faces(
        num_sides, num_rings, mirror_vertex
    )
    layout = SurfaceLayout(
        num_sides=num_sides,
        num_rings=num_rings,
        vertex_segment=segment,
        vertex_ring=ring_of,
        vertex_column=col_of,
        mirror_face=mirror_face,
        num_primary_faces=num_primary,
    )
    model = BodyModel(
        template_vertices=template,
        faces=faces,
        shape_dirs=shape_dirs,
        skin_weights=weights,
        kin_regressor=kin_regressor,
        lsp_regressor=lsp_regressor,
        mirror_vertex=mirror_vertex,
        tree=tree,
        layout=layout,
    )
    model.check_invariants()
    logger.info(
        "Built body model: %d vertices, %d faces, %d sides x %d rings per tube",
        num_vertices,
        len(faces),
        num_sides,
        num_rings,
    )
    return model


# --- Skinning ---


def _as_batch(
    theta: np.ndarray, beta: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, NUM_KIN_JOINTS, 3)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1, NUM_BETAS)
    if theta.shape[0] != beta.shape[0]:
        raise ValueError(
            f"Pose batch {theta.shape} does not match shape batch {beta.shape}"
        )
    return theta, beta


def _shaped(model: BodyModel, beta: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Shaped template vertices (B, len(index), 3)."""

    return model.template_vertices[index][None] + np.einsum(
        "nck,bk->bnc", model.shape_dirs[index], beta
    )


def forward_kinematics(
    parent: np.ndarray, rotations: np.ndarray, joints: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray]:
    """
    Compose local rotations root to leaf.

    Parameters
    ----------
    parent : np.ndarray
    rotations : np.ndarray
        Local rotations (B, K, 3, 3).
    joints : np.ndarray
        Rest joint positions (B, K, 3).

    Returns
    -------
    tuple of np.ndarray
        Global rotations (B, K, 3, 3) and posed joint positions (B, K, 3).
    """

    global_rot = np.empty_like(rotations)
    posed = np.empty_like(joints)
    global_rot[:, 0] = rotations[:, 0]
    posed[:, 0] = joints[:, 0]
    for j in range(1, len(parent)):
        par = parent[j]
        global_rot[:, j] = global_rot[:, par] @ rotations[:, j]
        posed[:, j] = posed[:, par] + np.einsum(
            "brc,bc->br", global_rot[:, par], joints[:, j] - joints[:, par]
        )
    return global_rot, posed


def _support(matrix: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.any(matrix != 0.0, axis=0))


def _pose_state(
    model: BodyModel, theta: np.ndarray, beta: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Local rotations, rest joints, global rotations and posed joints."""

    support = _support(model.kin_regressor)
    rotations = rodrigues_batch(theta)
    joints = np.einsum(
        "jn,bnc->bjc",
        model.kin_regressor[:, support],
        _shaped(model, beta, support),
    )
    global_rot, posed = forward_kinematics(model.tree.parent, rotations, joints)
    return rotations, joints, global_rot, posed


def _blend(
    weights: np.ndarray,
    global_rot: np.ndarray,
    posed: np.ndarray,
    joints: np.ndarray,
    vertices: np.ndarray,
) -> np.ndarray:
    """Linear blend of per-joint rigid transforms."""

    translation = posed - np.einsum("bjrc,bjc->bjr", global_rot, joints)
    blended_rot = np.einsum("nj,bjrc->bnrc", weights, global_rot)
    blended_trans = np.einsum("nj,bjc->bnc", weights, translation)
    return np.einsum("bnrc,bnc->bnr", blended_rot, vertices) + blended_trans


def _skin_subset(
    model: BodyModel, theta: np.ndarray, beta: np.ndarray, index: np.ndarray
) -> np.ndarray:
    """Root-relative skinned vertices for a subset of vertex indices."""

    _, joints, global_rot, posed = _pose_state(model, theta, beta)
    root_index = _support(model.kin_regressor[:1])
    both = np.concatenate([index, root_index])
    verts = _blend(
        model.skin_weights[both],
        global_rot,
        posed,
        joints,
        _shaped(model, beta, both),
    )
    root = np.einsum(
        "n,bnc->bc", model.kin_regressor[0, root_index], verts[:, len(index) :]
    )
    return verts[:, : len(index)] - root[:, None, :]


def skin_batch(
    model: BodyModel, theta: np.ndarray, beta: np.ndarray
) -> np.ndarray:
    """
    Linear blend skinning for a batch of raw parameter arrays.

    Parameters
    ----------
    model : BodyModel
    theta : np.ndarray
        Poses with shape (B, 24, 3) or (B, 72).
    beta : np.ndarray
        Shapes with shape (B, 10).

    Returns
    -------
    np.ndarray
        Root-relative vertices (B, N, 3).
    """

    theta, beta = _as_batch(theta, beta)
    return _skin_subset(model, theta, beta, np.arange(model.num_vertices))


def skin(model: BodyModel, theta: PoseParams, beta: ShapeParams) -> Mesh:
    """Pose and shape the template, translated so the root is at the origin."""

    verts = skin_batch(model, theta.theta[None], beta.beta[None])[0]
    return Mesh(vertices=verts, faces=model.faces)


def joint_positions_batch(
    model: BodyModel,
    theta: np.ndarray,
    beta: np.ndarray,
    regressor: t.Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Regressed joints for a batch, skinning only the regressor's vertices.

    Defaults to the LSP regressor. Returns (B, R, 3).
    """

    regressor = model.lsp_regressor if regressor is None else regressor
    theta, beta = _as_batch(theta, beta)
    support = _support(regressor)
    verts = _skin_subset(model, theta, beta, support)
    return np.einsum("rn,bnc->brc", regressor[:, support], verts)


def regress_joints(
    mesh: t.Union[Mesh, np.ndarray], regressor: np.ndarray
) -> np.ndarray:
    """
    Apply a linear joint regressor to mesh vertices.

    Raises
    ------
    ValueError
        if the regressor column count differs from the vertex count.
    """

    vertices = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh)
    if regressor.shape[1] != vertices.shape[-2]:
        raise ValueError(
            f"Regressor with shape {regressor.shape} does not match "
            f"{vertices.shape[-2]} vertices"
        )
    return regressor @ vertices


def skin_vjp(
    model: BodyModel,
    theta: np.ndarray,
    beta: np.ndarray,
    upstream: np.ndarray,
) -> t.Tuple[np.ndarray, np.ndarray]:
    """
    Vector-Jacobian product of `skin_batch`.

    Parameters
    ----------
    model : BodyModel
    theta : np.ndarray
        (B, 24, 3) poses; need not be canonical.
    beta : np.ndarray
        (B, 10) shapes; not clamped.
    upstream : np.ndarray
        Gradient of a scalar loss with respect to the skinned vertices,
        (B, N, 3).

    Returns
    -------
    tuple of np.ndarray
        Gradients with respect to theta (B, 24, 3) and beta (B, 10).
    """

    theta, beta = _as_batch(theta, beta)
    upstream = np.asarray(upstream, dtype=np.float64)
    weights = model.skin_weights
    kin = model.kin_regressor
    parent = model.tree.parent

    rotations, joints, global_rot, posed = _pose_state(model, theta, beta)
    shaped = _shaped(model, beta, np.arange(model.num_vertices))

    # undo root subtraction: v = v' - K0 v'
    grad = upstream - kin[0][None, :, None] * upstream.sum(axis=1)[:, None, :]

    lin = np.einsum("nj,bnc->bjc", weights, grad)
    grad_rot = np.einsum(
        "nj,bnr,bnc->bjrc", weights, grad, shaped, optimize=True
    )
    grad_rot -= np.einsum("bjr,bjc->bjrc", lin, joints)
    grad_pos = lin.copy()
    grad_joint = -np.einsum("bjrc,bjr->bjc", global_rot, lin)
    grad_local = np.empty_like(rotations)

    for j in range(len(parent) - 1, 0, -1):
        par = parent[j]
        # posed[j] = posed[par] + global_rot[par] (joints[j] - joints[par])
        grad_pos[:, par] += grad_pos[:, j]
        grad_rot[:, par] += np.einsum(
            "br,bc->brc", grad_pos[:, j], joints[:, j] - joints[:, par]
        )
        pulled = np.einsum("brc,br->bc", global_rot[:, par], grad_pos[:, j])
        grad_joint[:, j] += pulled
        grad_joint[:, par] -= pulled
        # global_rot[j] = global_rot[par] @ rotations[j]
        grad_local[:, j] = np.swapaxes(global_rot[:, par], 1, 2) @ grad_rot[:, j]
        grad_rot[:, par] += grad_rot[:, j] @ np.swapaxes(rotations[:, j], 1, 2)
    grad_local[:, 0] = grad_rot[:, 0]
    grad_joint[:, 0] += grad_pos[:, 0]

    mixed = rotations @ np.swapaxes(grad_local, 2, 3)
    grad_omega = np.stack(
        [
            mixed[..., 1, 2] - mixed[..., 2, 1],
            mixed[..., 2, 0] - mixed[..., 0, 2],
            mixed[..., 0, 1] - mixed[..., 1, 0],
        ],
        axis=-1,
    )
    grad_theta = np.einsum(
        "bjrc,bjr->bjc", so3_left_jacobian(theta), grad_omega
    )

    grad_shaped = np.einsum(
        "nj,bjrc,bnr->bnc", weights, global_rot, grad, optimize=True
    ) + np.einsum("jn,bjc->bnc", kin, grad_joint)
    grad_beta = np.einsum("bnc,nck->bk", grad_shaped, model.shape_dirs)
    return grad_theta, grad_beta


# --- Pose sampling ---

_MAX_POSE_REDRAWS = 100

# Left/midline limits as (low, high) per axis, radians
_LEFT_LIMITS: t.Dict[str, t.Tuple[t.Tuple[float, float], ...]] = {
    "pelvis": ((-0.3, 0.3), (-0.5, 0.5), (-0.2, 0.2)),
    "l_hip": ((-1.2, 0.3), (-0.4, 0.4), (-0.2, 0.6)),
    "spine1": ((-0.3, 0.4), (-0.3, 0.3), (-0.2, 0.2)),
    "l_knee": ((0.0, 1.2), (-0.05, 0.05), (-0.05, 0.05)),
    "spine2": ((-0.3, 0.4), (-0.3, 0.3), (-0.2, 0.2)),
    "l_ankle": ((-0.4, 0.4), (-0.2, 0.2), (-0.2, 0.2)),
    "spine3": ((-0.3, 0.4), (-0.3, 0.3), (-0.2, 0.2)),
    "l_foot": ((-0.2, 0.2), (0.0, 0.0), (0.0, 0.0)),
    "neck": ((-0.4, 0.4), (-0.5, 0.5), (-0.3, 0.3)),
    "l_collar": ((-0.1, 0.1), (-0.2, 0.2), (-0.2, 0.3)),
    "head": ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)),
    "l_shoulder": ((-0.5, 0.5), (-0.8, 0.8), (-1.3, -0.2)),
    "l_elbow": ((-0.3, 0.3), (-1.2, 0.0), (-0.1, 0.1)),
    "l_wrist": ((-0.5, 0.5), (-0.3, 0.3), (-0.5, 0.5)),
    "l_hand": ((-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2)),
}


def default_pose_limits(scale: float = 1.0) -> np.ndarray:
    """
    Per-joint axis-angle ranges with shape (24, 3, 2).

    Right side ranges reflect the left ones: x is kept, y and z are negated
    and swapped. ``scale`` shrinks or grows every range.
    """

    limits = np.zeros((NUM_KIN_JOINTS, 3, 2))
    for j, name in enumerate(KIN_JOINT_NAMES):
        left = np.array(_LEFT_LIMITS[_left_name(name)])
        if _is_right(name):
            left[1:] = -left[1:, ::-1]
        limits[j] = left * scale
    return limits


def validate_pose_limits(limits: np.ndarray) -> np.ndarray:
    """
    Check pose limits have shape (24, 3, 2), are ordered and lie in (-pi, pi).

    Every joint's box must also hold some rotation below pi.

    Raises
    ------
    ValueError
    """

    limits = np.asarray(limits, dtype=np.float64)
    if limits.shape != (NUM_KIN_JOINTS, 3, 2):
        raise ValueError(f"Pose limits must be 24 x 3 x 2, got {limits.shape}")
    if np.any(limits[..., 0] > limits[..., 1]):
        raise ValueError("Pose limits have low > high")
    if np.any(np.abs(limits) >= np.pi):
        raise ValueError("Pose limits must lie within (-pi, pi)")
    nearest = np.clip(0.0, limits[..., 0], limits[..., 1])
    if np.any(np.linalg.norm(nearest, axis=-1) >= np.pi):
        raise ValueError("Pose limits hold no rotation below pi for some joint")
    return limits


def sample_pose_batch(
    seed: SeedLike, count: int, limits: t.Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Draw ``count`` poses uniformly inside the limits, shape (count, 24, 3).

    Rotations of pi or more are redrawn, so samples are uniform over the part
    of each box below pi.

    Raises
    ------
    ValueError
        if the limits are invalid or redrawing does not settle.
    """

    limits = validate_pose_limits(
        default_pose_limits() if limits is None else limits
    )
    rng = np.random.default_rng(seed)
    low = limits[..., 0]
    span = limits[..., 1] - limits[..., 0]
    theta = low + rng.random((count, NUM_KIN_JOINTS, 3)) * span
    for _ in range(_MAX_POSE_REDRAWS):
        bad = np.linalg.norm(theta, axis=-1) >= np.pi
        if not bad.any():
            return theta
        joint = np.nonzero(bad)[1]
        theta[bad] = low[joint] + rng.random((len(joint), 3)) * span[joint]
    raise ValueError(
        f"Poses still reach pi after {_MAX_POSE_REDRAWS} redraws; "
        "the limits leave too little room below pi"
    )


def sample_pose(
    seed: SeedLike, limits: t.Optional[np.ndarray] = None
) -> PoseParams:
    """Draw one pose uniformly inside the limits; deterministic per seed."""

    return PoseParams(theta=sample_pose_batch(seed, 1, limits)[0])


def sample_shape_batch(
    seed: SeedLike, count: int, sigma: float = 1.0
) -> np.ndarray:
    """Gaussian shape coefficients clipped to the valid range."""

    rng = np.random.default_rng(seed)
    return np.clip(
        rng.normal(0.0, sigma, (count, NUM_BETAS)), -BETA_LIMIT, BETA_LIMIT
    )


def mirror_pose(model: BodyModel, theta: np.ndarray) -> np.ndarray:
    """Pose of the x-reflected body: partners swapped, y and z negated."""

    theta = np.asarray(theta, dtype=np.float64).reshape(-1, NUM_KIN_JOINTS, 3)
    out = theta[:, model.tree.mirror()] * [1.0, -1.0, -1.0]
    return out
