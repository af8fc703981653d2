#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Describe configuration variables for runtime."""
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from configobj import ConfigObj, ConfigObjError
from pydantic import root_validator, validator

from uvbody.body_model import (
    ArrayModel,
    ModelConfig,
    default_pose_limits,
    validate_pose_limits,
)
from uvbody.dense_maps import Camera, OcclusionConfig
from uvbody.ik import AugmentConfig, LmConfig, TrainConfig, gik_spec, inpaint_spec
from uvbody.nn_core import MlpSpec
from uvbody.uv_fusion import FusionConfig


@dataclass
class Config:
    """Define config variables and help text."""

    verbose: bool = False
    verbose_help: str = "Enable verbose logging"
    quiet: bool = False
    quiet_help: str = "Disable printing logs to screen"
    log_dir: str = "/var/log/uvbody"
    log_dir_help: str = "Provide path to log directory. File rotation is used."
    persist_log: bool = False
    persist_log_help: str = "Persist logs to disk at given log dir."

    def __hash__(self):
        return hash(repr(self))


DEFAULT_CONFIG = Config()

# sub-config: (class, {sub-config field: run config key})
_SUB_CONFIGS: t.Dict[str, t.Tuple[t.Type[ArrayModel], t.Dict[str, str]]] = {
    "model": (
        ModelConfig,
        {"vertex_budget": "vertex_budget", "radius_scale": "radius_scale"},
    ),
    "occlusion": (
        OcclusionConfig,
        {
            "min_count": "occlusion_min_count",
            "max_count": "occlusion_max_count",
            "min_size": "occlusion_min_size",
            "max_size": "occlusion_max_size",
        },
    ),
    "augment": (
        AugmentConfig,
        {
            "noise_sigma": "augment_noise_sigma",
            "occlusion_prob": "augment_occlusion_prob",
        },
    ),
    "train": (
        TrainConfig,
        {
            "epochs": "epochs",
            "batch_size": "batch_size",
            "learning_rate": "learning_rate",
            "weight_theta": "weight_theta",
            "weight_beta": "weight_beta",
            "weight_ji": "weight_ji",
            "weight_vi": "weight_vi",
            "min_dataset_size": "min_dataset_size",
        },
    ),
    "fusion": (
        FusionConfig,
        {"min_texels": "min_texels", "band_width": "band_width"},
    ),
    "lm": (
        LmConfig,
        {
            "max_iterations": "lm_max_iterations",
            "initial_damping": "lm_initial_damping",
            "tolerance": "lm_tolerance",
        },
    ),
}


class RunConfig(ArrayModel):
    """
    Every knob and seed of a run, read from a flat ``key = value`` file.

    Unknown keys are rejected and the four seeds have no defaults.
    """

    data_seed: int
    train_seed: int
    occlusion_seed: int
    noise_seed: int

    vertex_budget: int = 1500
    radius_scale: float = 1.0
    atlas_resolution: int = 128
    image_resolution: int = 224
    camera_scale: float = 100.0
    camera_offset_x: float = 112.0
    camera_offset_y: float = 120.0
    pose_scale: float = 1.0
    beta_sigma: float = 1.0
    map_noise_sigma: float = 0.0

    occlusion_min_count: int = 1
    occlusion_max_count: int = 3
    occlusion_min_size: float = 0.1
    occlusion_max_size: float = 0.4

    mocap_count: int = 5000
    augment_noise_sigma: float = 0.01
    augment_occlusion_prob: float = 0.3
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    dropout_rate: float = 0.1
    hidden_dim: int = 256
    inpaint_blocks: int = 3
    gik_blocks: int = 4
    weight_theta: float = 1.0
    weight_beta: float = 1.0
    weight_ji: float = 1.0
    weight_vi: float = 1.0
    min_dataset_size: int = 1000

    min_texels: int = 1
    band_width: int = 2

    lm_max_iterations: int = 200
    lm_initial_damping: float = 1e-3
    lm_tolerance: float = 1e-12

    class Config(ArrayModel.Config):
        extra = "forbid"

    @validator("atlas_resolution", "image_resolution", "mocap_count")
    def validate_positive(cls, value):  # pylint: disable=no-self-argument
        """Sizes and counts must be positive."""

        if value <= 0:
            raise ValueError(f"Must be positive, got {value}")
        return value

    @validator("pose_scale", "beta_sigma", "map_noise_sigma")
    def validate_non_negative(cls, value):  # pylint: disable=no-self-argument
        """Scales and sigmas must be non-negative."""

        if not np.isfinite(value) or value < 0.0:
            raise ValueError(f"Must be non-negative, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def validate_sub_configs(cls, values):  # pylint: disable=no-self-argument
        """Build every sub-config once so bad groups fail at load time."""

        for model_cls, mapping in _SUB_CONFIGS.values():
            model_cls(**{field: values[key] for field, key in mapping.items()})
        Camera(scale=values["camera_scale"])
        validate_pose_limits(default_pose_limits(values["pose_scale"]))
        return values

    def _sub_config(self, name: str) -> t.Any:
        model_cls, mapping = _SUB_CONFIGS[name]
        return model_cls(
            **{field: getattr(self, key) for field, key in mapping.items()}
        )

    def model_config(self) -> ModelConfig:
        """Body model construction parameters."""

        return self._sub_config("model")

    def camera(self) -> Camera:
        """The weak perspective camera used for every sample."""

        return Camera(
            scale=self.camera_scale,
            offset=(self.camera_offset_x, self.camera_offset_y),
        )

    def occlusion_config(self) -> OcclusionConfig:
        """Synthetic occluder ranges."""

        return self._sub_config("occlusion")

    def augment_config(self) -> AugmentConfig:
        """Joint augmentation used during IK training."""

        return self._sub_config("augment")

    def train_config(self) -> TrainConfig:
        """IK training hyperparameters."""

        return self._sub_config("train")

    def fusion_config(self) -> FusionConfig:
        """Aggregation threshold and blend band."""

        return self._sub_config("fusion")

    def lm_config(self) -> LmConfig:
        """Numerical IK solver settings."""

        return self._sub_config("lm")

    def inpaint_spec(self) -> MlpSpec:
        """Joint inpainting network layout."""

        return inpaint_spec(
            hidden_dim=self.hidden_dim,
            num_blocks=self.inpaint_blocks,
            dropout_rate=self.dropout_rate,
        )

    def gik_spec(self) -> MlpSpec:
        """Pose and shape regression network layout."""

        return gik_spec(
            hidden_dim=self.hidden_dim,
            num_blocks=self.gik_blocks,
            dropout_rate=self.dropout_rate,
        )

    def pose_limits(self) -> np.ndarray:
        """Sampling ranges for synthetic poses."""

        return default_pose_limits(self.pose_scale)

    def image_shape(self) -> t.Tuple[int, int]:
        """(height, width) of rendered images."""

        return (self.image_resolution, self.image_resolution)

    def to_text(self) -> str:
        """Canonical ``key = value`` form, one key per line."""

        return "".join(f"{key} = {value!r}\n" for key, value in self.dict().items())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """
        Parse ``key = value`` lines.

        Raises
        ------
        ValueError
            for malformed lines, unknown keys or invalid values.
        """

        try:
            parsed = ConfigObj(text.splitlines())
        except ConfigObjError as err:
            raise ValueError(f"Malformed run config: {err}") from err
        if parsed.sections:
            raise ValueError(f"Run config must be flat, found {parsed.sections}")
        return cls.parse_obj(dict(parsed))

    @classmethod
    def from_file(cls, path: t.Union[str, Path]) -> "RunConfig":
        """
        Read a run config file.

        Raises
        ------
        OSError
            if the file cannot be read.
        ValueError
            for malformed content.
        """

        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def write(self, path: t.Union[str, Path]):
        """Write the canonical form to a file."""

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
