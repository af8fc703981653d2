#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Hold various uvbody variables.

Be sure to sync with version in pyproject.toml
"""
import typing as t

VERSION: str = "0.1.0"

# --- CLI ---
LOGFILE_NAME = "uvbody.log"
RUN_CONFIG_NAME = "run.conf"

# --- Body model ---
NUM_KIN_JOINTS = 24
NUM_BETAS = 10
NUM_LSP_JOINTS = 14
BETA_LIMIT = 5.0
MIN_VERTEX_BUDGET = 500

KIN_JOINT_NAMES: t.Tuple[str, ...] = (
    "pelvis",
    "l_hip",
    "r_hip",
    "spine1",
    "l_knee",
    "r_knee",
    "spine2",
    "l_ankle",
    "r_ankle",
    "spine3",
    "l_foot",
    "r_foot",
    "neck",
    "l_collar",
    "r_collar",
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hand",
    "r_hand",
)
KIN_PARENTS: t.Tuple[int, ...] = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18,
    19, 20, 21,
)  # fmt: skip

LSP_JOINT_NAMES: t.Tuple[str, ...] = (
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "neck",
    "head_top",
)
# Mirror partner of each LSP joint, used for left-right symmetric labels
LSP_MIRROR: t.Tuple[int, ...] = (5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 12, 13)

# Sentinel for texels/pixels without a part or face
BACKGROUND = -1

# --- Sample directory layout ---
POSE_FILE = "pose.uvb"
SHAPE_FILE = "shape.uvb"
CAMERA_FILE = "camera.uvb"
JOINTS_FILE = "joints.uvb"
IMAGE_MAPS_FILE = "image_maps.uvb"
IMAGE_MAPS_OCCLUDED_FILE = "image_maps_occluded.uvb"
UV_GT_FILE = "uv_gt.uvb"
MESH_FILE = "mesh.uvb"
FUSED_FILE = "fused_uv.uvb"
MESH_OBJ_FILE = "mesh.obj"
SAMPLE_PREFIX = "sample_"

MODEL_DIR = "model"

# --- Checkpoints ---
MANIFEST_FILE = "manifest.json"
LOSS_CURVE_FILE = "loss_curve.csv"
INPAINT_DIR = "inpaint"
GIK_DIR = "gik"

# --- Defaults ---
DEFAULT_ATLAS_RESOLUTION = 128
DEFAULT_IMAGE_RESOLUTION = 224
DEFAULT_CAMERA_SCALE = 100.0
DEFAULT_CAMERA_OFFSET = (112.0, 120.0)

# Indexed-color palette for part, mask and source images, RGB triplets
PALETTE: t.Tuple[t.Tuple[int, int, int], ...] = (
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
)
