#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Store shared fixtures for uvbody tests."""
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

import uvbody.logging
from uvbody.cli.config import Config, RunConfig
from uvbody.pipeline import PipelineContext, generate_sample, train_networks

# Building models and rendering samples is slow enough to trip the
# too_slow health check, and session fixtures are shared across examples.
settings.register_profile(
    "suppress_too_slow",
    suppress_health_check=(
        HealthCheck.too_slow,
        HealthCheck.function_scoped_fixture,
        HealthCheck.data_too_large,
    ),
    deadline=None,
    max_examples=15,
)
settings.load_profile("suppress_too_slow")

# Small networks and a small mocap set keep training in the seconds range.
TEST_RUN_CONFIG = {
    "data_seed": 1,
    "train_seed": 2,
    "occlusion_seed": 3,
    "noise_seed": 4,
    "hidden_dim": 16,
    "inpaint_blocks": 1,
    "gik_blocks": 1,
    "epochs": 2,
    "batch_size": 32,
    "mocap_count": 64,
    "min_dataset_size": 16,
    "lm_max_iterations": 5,
}

QUIET = Config(quiet=True)

st_seed = st.integers(min_value=0, max_value=2**32 - 1)
st_axis_angle = st.lists(
    st.floats(min_value=-3.0, max_value=3.0, allow_nan=False), min_size=3, max_size=3
).map(np.array)


@pytest.fixture()
def logfix():
    """Setup and teardown logging for each test."""

    uvbody.logging.setup(verbose=True, use_stream=True)
    yield
    uvbody.logging.teardown()


@pytest.fixture
def do_log_teardown():
    """
    Same as logfix, except we only perform the teardown step.

    Used when a test sets up its own logging.
    """

    yield
    uvbody.logging.teardown()


@pytest.fixture(scope="session")
def run_config() -> RunConfig:
    """Run config shared by every test."""

    return RunConfig(**TEST_RUN_CONFIG)


@pytest.fixture(scope="session")
def context(run_config) -> PipelineContext:
    """Model, atlas and segmentation built once per session."""

    return PipelineContext.from_config(run_config)


@pytest.fixture(scope="session")
def model(context):
    """Default procedural body."""

    return context.model


@pytest.fixture(scope="session")
def atlas(context):
    """Default 128 x 128 atlas."""

    return context.atlas


@pytest.fixture(scope="session")
def part_seg(context):
    """Part segmentation of the default atlas."""

    return context.part_seg


@pytest.fixture(scope="session")
def flip(context):
    """Flip map of the default atlas."""

    return context.flip


@pytest.fixture(scope="session")
def sample(context):
    """First generated sample."""

    return generate_sample(context, 0)


@pytest.fixture(scope="session")
def trained_context(context) -> PipelineContext:
    """Context holding networks trained with the tiny test config."""

    trained = replace(context)
    train_networks(trained)
    return trained
