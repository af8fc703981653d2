#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Options for storing and retrieving samples, body models and checkpoints."""
import typing as t
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from uvbody.body_model import (
    ArrayModel,
    BodyModel,
    JointSet,
    KinematicTree,
    Mesh,
    SurfaceLayout,
)
from uvbody.dense_maps import Camera, ImageMaps, UVMaps
from uvbody.fsdata import load_tensor, read_csv, save_tensor, write_csv
from uvbody.ik import EpochLosses, IkTrainingResult
from uvbody.logging import get as get_logger
from uvbody.nn_core import EVAL, MlpSpec, MlpState
from uvbody.uv_atlas import PartSegmentation, UVAtlas
from uvbody.uv_fusion import FusedUVMaps
from uvbody.vars import (
    CAMERA_FILE,
    FUSED_FILE,
    GIK_DIR,
    IMAGE_MAPS_FILE,
    IMAGE_MAPS_OCCLUDED_FILE,
    INPAINT_DIR,
    JOINTS_FILE,
    KIN_JOINT_NAMES,
    LOSS_CURVE_FILE,
    MANIFEST_FILE,
    MESH_FILE,
    POSE_FILE,
    SAMPLE_PREFIX,
    SHAPE_FILE,
    UV_GT_FILE,
    VERSION,
)

LOSS_CURVE_FIELDS = ("epoch", "l_ji", "l_theta", "l_beta", "l_vi")
_EXT = ".uvb"


@dataclass(frozen=True)
class Sample:
    """One generated training or evaluation example."""

    index: int
    theta: np.ndarray
    beta: np.ndarray
    camera: Camera
    joints: JointSet
    mesh: Mesh
    image_maps: ImageMaps
    image_maps_occluded: ImageMaps
    uv_gt: UVMaps


@dataclass(frozen=True)
class Prediction:
    """Pipeline output for one sample."""

    index: int
    theta: np.ndarray
    beta: np.ndarray
    joints: JointSet
    mesh: Mesh
    fused: FusedUVMaps


def sample_dir_name(index: int) -> str:
    """Directory name of a sample index."""

    return f"{SAMPLE_PREFIX}{index:05d}"


def parse_sample_dir(path: t.Union[str, Path]) -> t.Tuple[Path, int]:
    """
    Split a sample directory path into its store root and index.

    Raises
    ------
    ValueError
        if the directory name is not ``sample_`` followed by digits.
    """

    path = Path(path)
    suffix = path.name[len(SAMPLE_PREFIX) :]
    if not path.name.startswith(SAMPLE_PREFIX) or not suffix.isdigit():
        raise ValueError(f"Not a sample directory: {path}")
    return path.parent, int(suffix)


class BaseSampleStore(ABC):
    """ABC for a sample storage utility."""

    @abstractmethod
    def put(self, sample: Sample):
        """Put the given sample into the store."""

    @abstractmethod
    def get(self, index: int, faces: np.ndarray) -> t.Optional[Sample]:
        """Get the sample with the given index, or None."""

    @abstractmethod
    def put_prediction(self, prediction: Prediction):
        """Put a pipeline prediction into the store."""

    @abstractmethod
    def get_joints_and_mesh(
        self, index: int
    ) -> t.Optional[t.Tuple[np.ndarray, np.ndarray]]:
        """
        Get the joints and mesh vertices stored for an index.

        Works on both samples and predictions.
        """

    @abstractmethod
    def all(self) -> t.List[int]:
        """Return the sorted indices in the store."""


class DirectorySampleStore(BaseSampleStore):
    """
    Store samples as one directory of tensor containers each.

    Parameters
    ----------
    root : Path or str
        Directory holding ``sample_NNNNN`` subdirectories.
    """

    def __init__(self, root: t.Union[str, Path]):
        self.root = Path(root)
        self.logger = get_logger("DirectorySampleStore")

    def path_of(self, index: int) -> Path:
        """Directory of a sample index."""

        return self.root / sample_dir_name(index)

    def put(self, sample: Sample):
        """Store the given sample, overwriting an existing one."""

        directory = self.path_of(sample.index)
        arrays = (
            (POSE_FILE, sample.theta),
            (SHAPE_FILE, sample.beta),
            (CAMERA_FILE, sample.camera.as_array()),
            (JOINTS_FILE, sample.joints.joints),
            (MESH_FILE, sample.mesh.vertices),
            (IMAGE_MAPS_FILE, sample.image_maps.pack()),
            (IMAGE_MAPS_OCCLUDED_FILE, sample.image_maps_occluded.pack()),
            (UV_GT_FILE, sample.uv_gt.pack()),
        )
        for name, array in arrays:
            save_tensor(directory / name, np.asarray(array, dtype=np.float64))
        self.logger.debug(f"Stored sample {sample.index} in {directory}")

    def get(self, index: int, faces: np.ndarray) -> t.Optional[Sample]:
        """
        Load a sample; ``faces`` comes from the body model.

        Raises
        ------
        ContainerError
            if a file exists but is corrupt.
        """

        directory = self.path_of(index)
        if not directory.is_dir():
            return None
        return Sample(
            index=index,
            theta=load_tensor(directory / POSE_FILE),
            beta=load_tensor(directory / SHAPE_FILE),
            camera=Camera.from_array(load_tensor(directory / CAMERA_FILE)),
            joints=JointSet.all_visible(load_tensor(directory / JOINTS_FILE)),
            mesh=Mesh(vertices=load_tensor(directory / MESH_FILE), faces=faces),
            image_maps=ImageMaps.unpack(load_tensor(directory / IMAGE_MAPS_FILE)),
            image_maps_occluded=ImageMaps.unpack(
                load_tensor(directory / IMAGE_MAPS_OCCLUDED_FILE)
            ),
            uv_gt=UVMaps.unpack(load_tensor(directory / UV_GT_FILE)),
        )

    def put_prediction(self, prediction: Prediction):
        """Store pipeline outputs under the sample's directory name."""

        directory = self.path_of(prediction.index)
        arrays = (
            (POSE_FILE, prediction.theta),
            (SHAPE_FILE, prediction.beta),
            (JOINTS_FILE, prediction.joints.joints),
            (MESH_FILE, prediction.mesh.vertices),
            (FUSED_FILE, prediction.fused.pack()),
        )
        for name, array in arrays:
            save_tensor(directory / name, np.asarray(array, dtype=np.float64))
        self.logger.debug(f"Stored prediction {prediction.index} in {directory}")

    def get_joints_and_mesh(
        self, index: int
    ) -> t.Optional[t.Tuple[np.ndarray, np.ndarray]]:
        """Joints (14 x 3) and vertices (N x 3) of a sample or prediction."""

        directory = self.path_of(index)
        if not directory.is_dir():
            return None
        return (
            load_tensor(directory / JOINTS_FILE),
            load_tensor(directory / MESH_FILE),
        )

    def all(self) -> t.List[int]:
        """Indices of every sample directory under the root."""

        if not self.root.is_dir():
            return []
        indices = []
        for child in self.root.iterdir():
            if not child.is_dir():
                continue
            try:
                indices.append(parse_sample_dir(child)[1])
            except ValueError:
                continue
        return sorted(indices)


# --- Body model and atlas ---

_MODEL_ARRAYS = (
    "template_vertices",
    "faces",
    "shape_dirs",
    "skin_weights",
    "kin_regressor",
    "lsp_regressor",
    "mirror_vertex",
)
_LAYOUT_ARRAYS = ("vertex_segment", "vertex_ring", "vertex_column", "mirror_face")


def save_model(directory: t.Union[str, Path], model: BodyModel):
    """Write every model array to its own container."""

    directory = Path(directory)
    for name in _MODEL_ARRAYS:
        save_tensor(directory / f"{name}{_EXT}", getattr(model, name))
    save_tensor(directory / f"parent{_EXT}", model.tree.parent.astype(np.int64))
    layout = model.layout
    for name in _LAYOUT_ARRAYS:
        save_tensor(directory / f"{name}{_EXT}", getattr(layout, name))
    save_tensor(
        directory / f"layout{_EXT}",
        np.array(
            [layout.num_sides, layout.num_rings, layout.num_primary_faces],
            dtype=np.int64,
        ),
    )


def load_model(directory: t.Union[str, Path]) -> BodyModel:
    """
    Read a model written by `save_model`.

    Raises
    ------
    OSError
        if a file is missing.
    ModelConfigError
        if the loaded arrays break a model invariant.
    """

    directory = Path(directory)
    arrays = {name: load_tensor(directory / f"{name}{_EXT}") for name in _MODEL_ARRAYS}
    layout_arrays = {
        name: load_tensor(directory / f"{name}{_EXT}") for name in _LAYOUT_ARRAYS
    }
    num_sides, num_rings, num_primary = load_tensor(directory / f"layout{_EXT}")
    model = BodyModel(
        tree=KinematicTree(
            parent=load_tensor(directory / f"parent{_EXT}"), names=KIN_JOINT_NAMES
        ),
        layout=SurfaceLayout(
            num_sides=int(num_sides),
            num_rings=int(num_rings),
            num_primary_faces=int(num_primary),
            **layout_arrays,
        ),
        **arrays,
    )
    model.check_invariants()
    return model


def save_atlas(
    directory: t.Union[str, Path], atlas: UVAtlas, part_seg: PartSegmentation
):
    """Write the atlas lookup tables and the part segmentation."""

    directory = Path(directory)
    arrays = (
        ("uv_of_vertex", atlas.uv_of_vertex),
        ("texel_face", atlas.texel_face),
        ("texel_bary", atlas.texel_bary),
        ("island_box", atlas.island_box),
        ("part_assign", part_seg.assign),
        ("face_part", part_seg.face_part),
        ("vertex_part", part_seg.vertex_part),
        ("part_sites", part_seg.sites),
    )
    for name, array in arrays:
        save_tensor(directory / f"{name}{_EXT}", array)


def load_atlas(
    directory: t.Union[str, Path], model: BodyModel
) -> t.Tuple[UVAtlas, PartSegmentation]:
    """Read an atlas and segmentation written by `save_atlas`."""

    directory = Path(directory)

    def read(name: str) -> np.ndarray:
        return load_tensor(directory / f"{name}{_EXT}")

    texel_face = read("texel_face")
    uv_of_vertex = read("uv_of_vertex")
    atlas = UVAtlas(
        resolution=texel_face.shape,  # type: ignore
        vertex_uv=uv_of_vertex[model.faces],
        uv_of_vertex=uv_of_vertex,
        faces=model.faces,
        texel_face=texel_face,
        texel_bary=read("texel_bary"),
        inside=texel_face >= 0,
        island_box=read("island_box"),
    )
    part_seg = PartSegmentation(
        assign=read("part_assign"),
        face_part=read("face_part"),
        vertex_part=read("vertex_part"),
        sites=read("part_sites"),
    )
    return atlas, part_seg


# --- Checkpoints ---


class CheckpointManifest(ArrayModel):
    """Metadata stored next to trained network weights."""

    version: str = VERSION
    inpaint_spec: MlpSpec
    gik_spec: MlpSpec
    inpaint_step: int
    gik_step: int
    epochs: int
    dataset_size: int


def save_mlp(directory: t.Union[str, Path], state: MlpState):
    """Write every parameter and buffer of a network."""

    directory = Path(directory)
    for name, array in {**state.params, **state.buffers}.items():
        save_tensor(directory / f"{name}{_EXT}", array)


def load_mlp(directory: t.Union[str, Path], spec: MlpSpec, step: int) -> MlpState:
    """Read a network written by `save_mlp`, in eval mode."""

    directory = Path(directory)
    names = ["head.w", "head.b"]
    buffers = []
    for layer in spec.hidden_layers():
        names += [f"{layer}.w", f"{layer}.b"]
        if spec.use_batchnorm:
            names += [f"{layer}.gamma", f"{layer}.beta"]
            buffers += [f"{layer}.mean", f"{layer}.var"]
    return MlpState(
        spec=spec,
        params={n: load_tensor(directory / f"{n}{_EXT}") for n in names},
        buffers={n: load_tensor(directory / f"{n}{_EXT}") for n in buffers},
        mode=EVAL,
        step=step,
    )


def write_loss_curve(path: t.Union[str, Path], curve: t.Sequence[EpochLosses]):
    """Write per-epoch losses as CSV."""

    write_csv(
        path,
        LOSS_CURVE_FIELDS,
        ({f: getattr(row, f) for f in LOSS_CURVE_FIELDS} for row in curve),
    )


def read_loss_curve(path: t.Union[str, Path]) -> t.List[EpochLosses]:
    """Read a CSV written by `write_loss_curve`."""

    return [
        EpochLosses(
            epoch=int(row["epoch"]),
            l_ji=float(row["l_ji"]),
            l_theta=float(row["l_theta"]),
            l_beta=float(row["l_beta"]),
            l_vi=float(row["l_vi"]),
        )
        for row in read_csv(path)
    ]


def save_checkpoint(
    directory: t.Union[str, Path], result: IkTrainingResult, dataset_size: int
) -> CheckpointManifest:
    """Write both networks, the manifest and the loss curve."""

    directory = Path(directory)
    manifest = CheckpointManifest(
        inpaint_spec=result.inpaint.spec,
        gik_spec=result.gik.spec,
        inpaint_step=result.inpaint.step,
        gik_step=result.gik.step,
        epochs=len(result.curve),
        dataset_size=dataset_size,
    )
    save_mlp(directory / INPAINT_DIR, result.inpaint)
    save_mlp(directory / GIK_DIR, result.gik)
    write_loss_curve(directory / LOSS_CURVE_FILE, result.curve)
    (directory / MANIFEST_FILE).write_text(manifest.json())
    get_logger("Checkpoint").info(f"Saved checkpoint to {directory}")
    return manifest


def load_checkpoint(directory: t.Union[str, Path]) -> IkTrainingResult:
    """
    Read networks and loss curve written by `save_checkpoint`.

    Raises
    ------
    OSError
        if the manifest is missing.
    """

    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.is_file():
        raise OSError(f"No checkpoint manifest at {manifest_path}")
    manifest = CheckpointManifest.parse_raw(manifest_path.read_text())
    curve_path = directory / LOSS_CURVE_FILE
    return IkTrainingResult(
        inpaint=load_mlp(
            directory / INPAINT_DIR, manifest.inpaint_spec, manifest.inpaint_step
        ),
        gik=load_mlp(directory / GIK_DIR, manifest.gik_spec, manifest.gik_step),
        curve=read_loss_curve(curve_path) if curve_path.is_file() else [],
    )
