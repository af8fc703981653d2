#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# pylint: disable=redefined-outer-name,unused-argument
"""Test contents of uvbody.pipeline module."""
from dataclasses import replace

import numpy as np
import pytest

from uvbody.body_model import JointSet, joint_positions_batch
from uvbody.cli.config import RunConfig
from uvbody.ik import (
    AugmentConfig,
    augment_joint_batch,
    gik_forward,
    inpaint_refine_joints,
    sample_mocap,
)
from uvbody.losses import mpjpe, mpve
from uvbody.pipeline import (
    FUSION_MODES,
    IK_MODES,
    PipelineContext,
    generate_sample,
    run_pipeline,
    train_networks,
)
from uvbody.uv_fusion import SourceTag
from uvbody.vars import NUM_BETAS, NUM_KIN_JOINTS, NUM_LSP_JOINTS

from .conftest import TEST_RUN_CONFIG

pytestmark = pytest.mark.usefixtures("logfix")


class TestContext:
    """Test building, saving and loading contexts."""

    @staticmethod
    def test_save_and_load(tmp_path, context):
        """Test a saved context loads with equal config, model and atlas."""

        context.save(tmp_path)
        loaded = PipelineContext.from_dir(tmp_path)
        assert loaded.run_config == context.run_config
        np.testing.assert_array_equal(
            loaded.model.template_vertices, context.model.template_vertices
        )
        np.testing.assert_array_equal(loaded.atlas.inside, context.atlas.inside)
        np.testing.assert_array_equal(loaded.part_seg.assign, context.part_seg.assign)
        assert loaded.nets is None

    @staticmethod
    def test_loading_nets_needs_a_checkpoint(tmp_path, context):
        """Test asking for networks in a directory without them raises."""

        context.save(tmp_path)
        with pytest.raises(OSError):
            PipelineContext.from_dir(tmp_path, with_nets=True)

    @staticmethod
    def test_missing_directory(tmp_path):
        """Test an empty directory is not a context."""

        with pytest.raises(OSError):
            PipelineContext.from_dir(tmp_path)

    @staticmethod
    def test_untrained_context_has_no_nets(context):
        """Test inference needs networks."""

        with pytest.raises(ValueError):
            context.require_nets()


class TestGenerateSample:
    """Test seeded sample generation."""

    @staticmethod
    def test_samples_are_deterministic(context, sample):
        """Test regenerating an index gives the same sample."""

        again = generate_sample(context, sample.index)
        np.testing.assert_array_equal(again.theta, sample.theta)
        np.testing.assert_array_equal(again.mesh.vertices, sample.mesh.vertices)
        np.testing.assert_array_equal(
            again.image_maps_occluded.mask, sample.image_maps_occluded.mask
        )

    @staticmethod
    def test_indices_differ(context, sample):
        """Test neighbouring indices draw different bodies."""

        other = generate_sample(context, sample.index + 1)
        assert not np.allclose(other.theta, sample.theta)
        assert other.index == sample.index + 1

    @staticmethod
    def test_sample_layers_agree(sample, model):
        """Test occluded maps are a subset and joints match the mesh."""

        assert np.all(sample.image_maps.mask[sample.image_maps_occluded.mask])
        assert sample.mesh.vertices.shape == (model.num_vertices, 3)
        np.testing.assert_allclose(
            sample.joints.joints, model.lsp_regressor @ sample.mesh.vertices
        )


class TestRunPipeline:
    """Test end to end inference."""

    @staticmethod
    @pytest.mark.parametrize("fusion_mode", FUSION_MODES)
    def test_fusion_modes(trained_context, sample, fusion_mode):
        """Test every fusion mode completes the surface."""

        result = run_pipeline(
            trained_context, sample.image_maps_occluded, fusion_mode=fusion_mode
        )
        inside = trained_context.atlas.inside
        counts = result.fused.source_counts()
        assert sum(counts.values()) == inside.size
        assert counts["background"] == (~inside).sum()
        assert result.joints.joints.shape == (NUM_LSP_JOINTS, 3)
        assert result.joints.visible.all()
        assert result.mesh.vertices.shape == (trained_context.model.num_vertices, 3)
        assert np.all(np.isfinite(result.mesh.vertices))
        assert result.numerical is None
        if fusion_mode == "ik-only":
            assert counts["ik"] == inside.sum()
        elif fusion_mode == "dmp-only":
            assert counts["dmp"] == inside.sum()
        else:
            assert counts["dmp"] > 0 and counts["ik"] > 0

    @staticmethod
    def test_full_fusion_keeps_visible_surface(trained_context, sample):
        """Test texels seen in the image keep the observed locations."""

        result = run_pipeline(trained_context, sample.image_maps)
        kept = result.fused.source == SourceTag.DMP
        np.testing.assert_array_equal(
            result.fused.location[kept], result.uv_dmp.location[kept]
        )
        assert result.warp.scattered > 0
        assert result.aggregation.j_initial.visible.any()

    @staticmethod
    def test_numerical_mode(trained_context, sample):
        """Test numerical refinement lowers its own objective."""

        result = run_pipeline(trained_context, sample.image_maps, ik_mode="numerical")
        assert result.numerical is not None
        history = np.array(result.numerical.history)
        assert np.all(np.diff(history) < 0.0)
        assert result.theta is result.numerical.theta

    @staticmethod
    def test_prediction_view(trained_context, sample):
        """Test the storable subset carries the run's outputs."""

        result = run_pipeline(trained_context, sample.image_maps)
        prediction = result.to_prediction(sample.index)
        assert prediction.index == sample.index
        np.testing.assert_array_equal(prediction.theta, result.theta.theta)
        assert prediction.mesh is result.mesh

    @staticmethod
    @pytest.mark.parametrize(
        "kwargs", [{"ik_mode": "analytic"}, {"fusion_mode": "average"}]
    )
    def test_unknown_modes(trained_context, sample, kwargs):
        """Test unknown modes are refused."""

        with pytest.raises(ValueError):
            run_pipeline(trained_context, sample.image_maps, **kwargs)

    @staticmethod
    def test_modes_are_listed():
        """Test the published mode names."""

        assert IK_MODES == ("gik", "numerical")
        assert FUSION_MODES == ("full", "ik-only", "dmp-only")


# Large enough for the learned stages to beat trivial baselines.
QUALITY_RUN_CONFIG = {
    **TEST_RUN_CONFIG,
    "hidden_dim": 128,
    "inpaint_blocks": 2,
    "gik_blocks": 2,
    "epochs": 20,
    "batch_size": 64,
    "mocap_count": 5000,
    "min_dataset_size": 1000,
}
QUALITY_SAMPLES = range(100, 108)


@pytest.fixture(scope="module")
def quality_context(context):
    """Context with networks trained on 5k mocap samples."""

    trained = replace(context, run_config=RunConfig(**QUALITY_RUN_CONFIG), nets=None)
    train_networks(trained)
    return trained


@pytest.fixture(scope="module")
def quality_runs(quality_context):
    """Pipeline results per fusion mode on clean and occluded renders."""

    runs = []
    for index in QUALITY_SAMPLES:
        sample = generate_sample(quality_context, index)
        runs.append(
            {
                "sample": sample,
                "clean": run_pipeline(quality_context, sample.image_maps),
                **{
                    mode: run_pipeline(
                        quality_context, sample.image_maps_occluded, fusion_mode=mode
                    )
                    for mode in FUSION_MODES
                },
            }
        )
    return runs


class TestReconstructionQuality:
    """Test the trained pipeline against baselines and its own ablations."""

    @staticmethod
    def test_learned_ik_beats_rest_pose(quality_context):
        """Test held-out joints are fit to under half the rest pose error."""

        cfg = quality_context.run_config
        model = quality_context.model
        nets = quality_context.require_nets()
        theta, beta = sample_mocap(12345, 100, cfg.pose_limits(), cfg.beta_sigma)
        targets = joint_positions_batch(model, theta, beta)
        rest = joint_positions_batch(
            model, np.zeros((1, NUM_KIN_JOINTS, 3)), np.zeros((1, NUM_BETAS))
        )[0]

        fitted, baseline = [], []
        for target in targets:
            refined = inpaint_refine_joints(nets.inpaint, JointSet.all_visible(target))
            pose, shape = gik_forward(nets.gik, refined)
            joints = joint_positions_batch(model, pose.theta[None], shape.beta[None])
            fitted.append(mpjpe(joints[0], target))
            baseline.append(mpjpe(rest, target))
        assert np.mean(fitted) < 0.5 * np.mean(baseline)

    @staticmethod
    def test_inpainting_beats_zero_fill(quality_context):
        """Test hidden joints are guessed better than left at the root."""

        cfg = quality_context.run_config
        nets = quality_context.require_nets()
        theta, beta = sample_mocap(54321, 100, cfg.pose_limits(), cfg.beta_sigma)
        targets = joint_positions_batch(quality_context.model, theta, beta)
        inputs, visible = augment_joint_batch(
            targets,
            np.ones(targets.shape[:2], bool),
            AugmentConfig(noise_sigma=0.0, occlusion_prob=0.3),
            6,
        )
        errors, zero_fill = [], []
        for joints, seen, target in zip(inputs, visible, targets):
            if seen.all():
                continue
            refined = inpaint_refine_joints(
                nets.inpaint, JointSet(joints=joints, visible=seen)
            )
            hidden = ~seen
            errors.append(mpjpe(refined.joints[hidden], target[hidden]))
            zero_fill.append(mpjpe(np.zeros_like(target[hidden]), target[hidden]))
        assert len(errors) > 50
        assert np.mean(errors) < np.mean(zero_fill)

    @staticmethod
    def test_occlusion_raises_joint_error(quality_runs):
        """Test occluded renders give larger joint errors than clean ones."""

        def error(key):
            return np.mean(
                [mpjpe(run[key].joints, run["sample"].joints) for run in quality_runs]
            )

        assert error("full") > error("clean")

    @staticmethod
    def test_fusion_beats_single_sources(quality_runs):
        """Test fused meshes are closer than IK-only and DMP-only meshes."""

        errors = {
            mode: np.mean(
                [mpve(run[mode].mesh, run["sample"].mesh) for run in quality_runs]
            )
            for mode in FUSION_MODES
        }
        assert errors["full"] <= errors["ik-only"]
        assert errors["full"] <= errors["dmp-only"]
