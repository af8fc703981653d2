#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# pylint: disable=redefined-outer-name,unused-argument
"""Test contents of uvbody.uv_fusion module."""
from dataclasses import replace

import numpy as np
import pytest

from uvbody.body_model import JointSet, Mesh, PoseParams, ShapeParams
from uvbody.dense_maps import UVMaps, warp_image_to_uv
from uvbody.losses import mpve
from uvbody.uv_atlas import build_island_labels
from uvbody.uv_fusion import (
    FusedUVMaps,
    FusionConfig,
    SourceTag,
    distribute_joints_to_uv,
    dmp_only_uv_maps,
    fuse_uv_maps,
    ik_only_uv_maps,
    infer_joints_from_uv,
    infer_mesh_from_uv,
    loss_uvi_terms,
    repose_uv_from_ik,
)
from uvbody.vars import BACKGROUND, NUM_LSP_JOINTS

pytestmark = pytest.mark.usefixtures("logfix")


@pytest.fixture(scope="module")
def ik_maps(context, sample):
    """IK maps of the sample's own pose and shape."""

    return repose_uv_from_ik(
        context.model,
        context.atlas,
        context.part_seg,
        PoseParams(theta=sample.theta),
        ShapeParams(beta=sample.beta),
    )


@pytest.fixture(scope="module")
def jrefine(sample, part_seg):
    """Ground truth joints spread over their parts."""

    return distribute_joints_to_uv(sample.joints, part_seg)


@pytest.fixture(scope="module")
def uv_dmp(sample, atlas):
    """Warped maps of the occluded view."""

    return warp_image_to_uv(sample.image_maps_occluded, atlas)


class TestRepose:
    """Test complete maps from body parameters."""

    @staticmethod
    def test_reposed_sample_matches_ground_truth(ik_maps, sample):
        """Test reposing the true parameters reproduces the true maps."""

        np.testing.assert_array_equal(ik_maps.valid, sample.uv_gt.valid)
        np.testing.assert_allclose(ik_maps.location, sample.uv_gt.location, atol=1e-9)
        np.testing.assert_allclose(ik_maps.joint, sample.uv_gt.joint, atol=1e-9)

    @staticmethod
    def test_distribution_needs_every_joint(sample, part_seg):
        """Test invisible joints cannot be distributed."""

        visible = np.ones(NUM_LSP_JOINTS, bool)
        visible[4] = False
        partial = JointSet(joints=sample.joints.joints, visible=visible)
        with pytest.raises(ValueError):
            distribute_joints_to_uv(partial, part_seg)


class TestFuse:
    """Test completion of partial maps."""

    @staticmethod
    def test_full_evidence_keeps_dense_values(sample, ik_maps, jrefine, atlas):
        """Test complete evidence is used everywhere without blending."""

        fused = fuse_uv_maps(sample.uv_gt, ik_maps, jrefine)
        counts = fused.source_counts()
        assert counts["dmp"] == atlas.inside.sum()
        assert counts["ik"] == counts["blend"] == 0
        np.testing.assert_array_equal(
            fused.location[atlas.inside], sample.uv_gt.location[atlas.inside]
        )

    @staticmethod
    def test_partial_evidence(uv_dmp, ik_maps, jrefine, atlas):
        """Test missing texels come from IK and a band is blended."""

        fused = fuse_uv_maps(uv_dmp, ik_maps, jrefine, band_width=2)
        missing = atlas.inside & ~uv_dmp.valid
        assert np.all(fused.source[missing] == SourceTag.IK)
        assert np.all(fused.source[~atlas.inside] == SourceTag.BACKGROUND)
        counts = fused.source_counts()
        assert counts["ik"] == missing.sum()
        assert counts["blend"] > 0
        assert counts["dmp"] + counts["blend"] == (uv_dmp.valid & atlas.inside).sum()
        keep = fused.source == SourceTag.DMP
        np.testing.assert_array_equal(fused.location[keep], uv_dmp.location[keep])
        np.testing.assert_array_equal(fused.joint[atlas.inside], jrefine[atlas.inside])

    @staticmethod
    def test_zero_band_never_blends(uv_dmp, ik_maps, jrefine):
        """Test band width 0 switches sharply between sources."""

        fused = fuse_uv_maps(uv_dmp, ik_maps, jrefine, band_width=0)
        assert fused.source_counts()["blend"] == 0

    @staticmethod
    def test_ik_parts_follow_refined_joints(uv_dmp, ik_maps, jrefine, sample):
        """Test IK texels are shifted so IK joints land on refined joints."""

        shifted = replace(
            ik_maps, location=ik_maps.location + 0.2, joint=ik_maps.joint + 0.2
        )
        fused = fuse_uv_maps(uv_dmp, shifted, jrefine)
        from_ik = fused.source == SourceTag.IK
        np.testing.assert_allclose(
            fused.location[from_ik], sample.uv_gt.location[from_ik], atol=1e-9
        )

    @staticmethod
    def test_bad_inputs(uv_dmp, ik_maps, jrefine):
        """Test negative bands and mismatched maps raise."""

        with pytest.raises(ValueError):
            fuse_uv_maps(uv_dmp, ik_maps, jrefine, band_width=-1)
        with pytest.raises(ValueError):
            fuse_uv_maps(uv_dmp, ik_maps, jrefine[:64])
        with pytest.raises(ValueError):
            FusionConfig(band_width=-1)

    @staticmethod
    def test_pack_layout(uv_dmp, ik_maps, jrefine):
        """Test the packed layout has 11 channels and keeps sources."""

        fused = fuse_uv_maps(uv_dmp, ik_maps, jrefine)
        packed = fused.pack()
        assert packed.shape[2] == 11
        np.testing.assert_array_equal(FusedUVMaps.unpack(packed).source, fused.source)
        with pytest.raises(ValueError):
            FusedUVMaps.unpack(packed[..., :10])


    @staticmethod
    def test_band_stays_on_its_island():
        """Test a hole on one island does not blend texels of its neighbour."""

        shape = (4, 8)
        valid = np.ones(shape, bool)
        valid[:, 4] = False
        dmp = UVMaps(
            valid=valid,
            joint=np.zeros(shape + (3,)),
            location=np.ones(shape + (3,)),
            displacement=np.zeros(shape + (3,)),
        )
        ik = UVMaps(
            valid=np.ones(shape, bool),
            joint=np.zeros(shape + (3,)),
            location=np.zeros(shape + (3,)),
            displacement=np.zeros(shape + (3,)),
        )
        islands = np.zeros(shape, np.int64)
        islands[:, 4:] = 1
        jrefine = np.zeros(shape + (3,))

        plain = fuse_uv_maps(dmp, ik, jrefine, band_width=2)
        split = fuse_uv_maps(dmp, ik, jrefine, band_width=2, islands=islands)
        assert np.all(plain.source[:, 3] == SourceTag.BLEND)
        assert np.all(split.source[:, :4] == SourceTag.DMP)
        np.testing.assert_array_equal(split.location[:, :4], dmp.location[:, :4])
        for fused in (plain, split):
            assert np.all(fused.source[:, 4] == SourceTag.IK)
            assert np.all(fused.source[:, 5] == SourceTag.BLEND)
            assert np.all(fused.source[:, 7] == SourceTag.DMP)
            np.testing.assert_allclose(fused.location[:, 5], 1.0 / 3.0)
        with pytest.raises(ValueError):
            fuse_uv_maps(dmp, ik, jrefine, islands=islands[:, :4])

    @staticmethod
    def test_atlas_islands(uv_dmp, ik_maps, jrefine, atlas, model):
        """Test island labels of the atlas only ever shrink the blend band."""

        islands = build_island_labels(atlas, model)
        assert np.all((islands != BACKGROUND) == atlas.inside)
        plain = fuse_uv_maps(uv_dmp, ik_maps, jrefine)
        split = fuse_uv_maps(uv_dmp, ik_maps, jrefine, islands=islands)
        np.testing.assert_array_equal(
            split.source == SourceTag.IK, plain.source == SourceTag.IK
        )
        assert split.source_counts()["blend"] <= plain.source_counts()["blend"]


class TestAblations:
    """Test single-source completions."""

    @staticmethod
    def test_ik_only(ik_maps, atlas):
        """Test IK-only maps are the IK maps tagged as IK."""

        fused = ik_only_uv_maps(ik_maps)
        assert fused.source_counts()["ik"] == atlas.inside.sum()
        np.testing.assert_array_equal(fused.location, ik_maps.location)

    @staticmethod
    def test_dmp_only_fills_part_means(uv_dmp, part_seg, atlas):
        """Test missing texels hold the mean evidence of their part."""

        fused = dmp_only_uv_maps(uv_dmp, part_seg, atlas.inside)
        assert fused.source_counts()["dmp"] == atlas.inside.sum()
        evidence = uv_dmp.valid & atlas.inside
        np.testing.assert_array_equal(
            fused.location[evidence], uv_dmp.location[evidence]
        )
        for part in range(NUM_LSP_JOINTS):
            owned = part_seg.assign == part
            seen = owned & evidence
            unseen = owned & ~evidence
            if not unseen.any():
                continue
            expected = (
                uv_dmp.location[seen].mean(axis=0) if seen.any() else np.zeros(3)
            )
            np.testing.assert_allclose(
                fused.location[unseen],
                np.broadcast_to(expected, (int(unseen.sum()), 3)),
                atol=1e-12,
            )


class TestInference:
    """Test joints and meshes read back from fused maps."""

    @staticmethod
    def test_joints_from_fused_maps(sample, ik_maps, jrefine, part_seg):
        """Test the joint channel averages back to the refined joints."""

        fused = fuse_uv_maps(sample.uv_gt, ik_maps, jrefine)
        joints = infer_joints_from_uv(fused, part_seg)
        assert joints.visible.all()
        np.testing.assert_allclose(joints.joints, sample.joints.joints, atol=1e-12)

    @staticmethod
    def test_mesh_from_ground_truth_maps(sample, ik_maps, jrefine, atlas, model):
        """Test sampling complete maps recovers the mesh closely."""

        fused = fuse_uv_maps(sample.uv_gt, ik_maps, jrefine)
        mesh = infer_mesh_from_uv(fused, atlas, model)
        assert mpve(mesh, sample.mesh) < 30.0
        np.testing.assert_array_equal(mesh.faces, model.faces)

    @staticmethod
    def test_missing_surface_needs_fallback(sample, ik_maps, jrefine, atlas, model):
        """Test an empty surface raises unless a fallback mesh is given."""

        fused = fuse_uv_maps(sample.uv_gt, ik_maps, jrefine)
        empty = replace(fused, inside=np.zeros_like(fused.inside))
        with pytest.raises(ValueError):
            infer_mesh_from_uv(empty, atlas, model)
        mesh = infer_mesh_from_uv(empty, atlas, model, fallback=sample.mesh)
        np.testing.assert_array_equal(mesh.vertices, sample.mesh.vertices)
        assert isinstance(mesh, Mesh)

    @staticmethod
    def test_uvi_losses_at_ground_truth(sample, ik_maps, jrefine, flip):
        """Test a perfect completion has no map or joint error."""

        fused = fuse_uv_maps(sample.uv_gt, ik_maps, jrefine)
        terms = loss_uvi_terms(
            fused, sample.joints, sample.camera, sample.uv_gt, sample.joints, flip
        )
        assert terms.l_map == pytest.approx(0.0, abs=1e-12)
        assert terms.l_j3d == 0.0
        assert terms.l_j2d == 0.0
        assert terms.l_con == 0.0
        assert terms.l_dismag >= 0.0

        with_image = loss_uvi_terms(
            fused,
            sample.joints,
            sample.camera,
            sample.uv_gt,
            sample.joints,
            flip,
            image_maps=sample.image_maps,
        )
        assert with_image.l_con > 0.0
