#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# pylint: disable=redefined-outer-name,unused-argument
"""Test contents of uvbody.cli.config module."""
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from uvbody.cli.config import RunConfig

from .conftest import TEST_RUN_CONFIG, st_seed

SHIPPED_RUN_CONFIG = Path(__file__).parent.parent / "etc" / "uvbody" / "run.conf"
SEEDS = "data_seed = 1\ntrain_seed = 2\nocclusion_seed = 3\nnoise_seed = 4\n"


class TestRunConfig:
    """Test parsing and validation of run configs."""

    @staticmethod
    def test_shipped_config_parses():
        """Test the example config in etc is valid and matches the defaults."""

        parsed = RunConfig.from_file(SHIPPED_RUN_CONFIG)
        seeds = {"data_seed": 1, "train_seed": 2, "occlusion_seed": 3, "noise_seed": 4}
        assert parsed == RunConfig(**seeds)

    @staticmethod
    @given(
        seeds=st.tuples(st_seed, st_seed, st_seed, st_seed),
        band=st.integers(min_value=0, max_value=10),
        sigma=st.floats(min_value=0.0, max_value=0.1),
    )
    def test_text_form_parses_back(seeds, band, sigma):
        """Test the canonical text reads back to an equal config."""

        config = RunConfig(
            data_seed=seeds[0],
            train_seed=seeds[1],
            occlusion_seed=seeds[2],
            noise_seed=seeds[3],
            band_width=band,
            map_noise_sigma=sigma,
        )
        assert RunConfig.from_text(config.to_text()) == config

    @staticmethod
    def test_write_creates_directories(tmp_path):
        """Test configs are written under new directories."""

        config = RunConfig(**TEST_RUN_CONFIG)
        path = tmp_path / "ckpt" / "run.conf"
        config.write(path)
        assert RunConfig.from_file(path) == config

    @staticmethod
    def test_seeds_are_required():
        """Test a config without seeds is refused."""

        with pytest.raises(ValueError):
            RunConfig.from_text("data_seed = 1\n")

    @staticmethod
    def test_unknown_keys_are_refused():
        """Test typos do not pass silently."""

        with pytest.raises(ValueError):
            RunConfig.from_text(SEEDS + "band_widht = 3\n")

    @staticmethod
    def test_sections_are_refused():
        """Test the file must be flat."""

        with pytest.raises(ValueError):
            RunConfig.from_text(SEEDS + "[fusion]\nband_width = 3\n")

    @staticmethod
    def test_missing_file(tmp_path):
        """Test an unreadable path raises OSError."""

        with pytest.raises(OSError):
            RunConfig.from_file(tmp_path / "missing.conf")

    @staticmethod
    @pytest.mark.parametrize(
        "line",
        [
            "atlas_resolution = 0",
            "pose_scale = 4.0",
            "beta_sigma = -1",
            "occlusion_min_count = 3\nocclusion_max_count = 1",
            "augment_occlusion_prob = 1.0",
            "batch_size = 1",
            "band_width = -1",
            "camera_scale = 0",
        ],
    )
    def test_invalid_values(line):
        """Test values that would break a later stage fail at load time."""

        with pytest.raises(ValueError):
            RunConfig.from_text(SEEDS + line + "\n")

    @staticmethod
    def test_sub_configs_carry_values():
        """Test grouped settings are built from the flat keys."""

        config = RunConfig.from_text(
            SEEDS + "band_width = 5\nepochs = 3\nocclusion_max_count = 4\n"
        )
        assert config.fusion_config().band_width == 5
        assert config.train_config().epochs == 3
        assert config.occlusion_config().max_count == 4
        assert config.camera().offset == (112.0, 120.0)
        assert config.image_shape() == (224, 224)
        assert config.inpaint_spec().num_blocks == 3
        assert config.gik_spec().num_blocks == 4
        assert config.lm_config().max_iterations == 200
        assert config.pose_limits().shape == (24, 3, 2)
