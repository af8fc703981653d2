#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# pylint: disable=redefined-outer-name,unused-argument
"""Test contents of uvbody.dense_maps module."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uvbody.body_model import Mesh
from uvbody.dense_maps import (
    Camera,
    CameraCoverageError,
    ImageMaps,
    OcclusionConfig,
    UVMaps,
    WarpDiagnostics,
    _zbuffer,
    add_map_noise,
    apply_synthetic_occlusion,
    make_uv_ground_truth,
    occlude_rectangles,
    occlusion_mask,
    project_weak_perspective,
    render_dense_maps,
    sample_occluders,
    warp_image_to_uv,
)
from uvbody.vars import BACKGROUND, NUM_LSP_JOINTS

from .conftest import st_seed

pytestmark = pytest.mark.usefixtures("logfix")


class TestCamera:
    """Test the weak perspective camera."""

    @staticmethod
    def test_projection_is_scale_and_offset():
        """Test pixels = scale * (x, y) + offset, ignoring depth."""

        camera = Camera(scale=50.0, offset=(10.0, 20.0))
        projected = project_weak_perspective(np.array([[1.0, -1.0, 3.0]]), camera)
        np.testing.assert_allclose(projected, [[60.0, -30.0]])

    @staticmethod
    @pytest.mark.parametrize("scale", [0.0, -1.0, float("nan")])
    def test_scale_must_be_positive(scale):
        """Test degenerate scales are rejected."""

        with pytest.raises(ValueError):
            Camera(scale=scale)

    @staticmethod
    def test_array_form():
        """Test the packed form is scale followed by offset."""

        camera = Camera(scale=80.0, offset=(1.0, 2.0))
        np.testing.assert_array_equal(camera.as_array(), [80.0, 1.0, 2.0])
        assert Camera.from_array(camera.as_array()) == camera


class TestRender:
    """Test rasterized ground truth maps."""

    @staticmethod
    def test_foreground_is_consistent(sample):
        """Test background is empty and displacement is location - joint."""

        maps = sample.image_maps
        assert maps.resolution == (224, 224)
        assert maps.mask.sum() > 1000
        background = ~maps.mask
        assert np.all(maps.part[background] == BACKGROUND)
        assert np.all(maps.location[background] == 0.0)
        assert np.all(maps.uv[background] == 0.0)
        fg_part = maps.part[maps.mask]
        assert fg_part.min() >= 0 and fg_part.max() < NUM_LSP_JOINTS
        np.testing.assert_allclose(
            maps.displacement[maps.mask],
            maps.location[maps.mask] - maps.joint[maps.mask],
        )

    @staticmethod
    def test_joint_channel_holds_part_joints(sample):
        """Test every pixel carries the ground truth joint of its part."""

        maps = sample.image_maps
        np.testing.assert_allclose(
            maps.joint[maps.mask], sample.joints.joints[maps.part[maps.mask]]
        )

    @staticmethod
    def test_locations_project_to_pixel_centers(sample):
        """Test each visible surface point lies under its own pixel."""

        maps = sample.image_maps
        rows, cols = np.nonzero(maps.mask)
        projected = project_weak_perspective(maps.location[rows, cols], sample.camera)
        np.testing.assert_allclose(
            projected, np.stack([cols + 0.5, rows + 0.5], axis=-1), atol=1e-6
        )

    @staticmethod
    def test_rows_grow_with_height(sample):
        """Test the head renders at larger row indices than the ankles."""

        maps = sample.image_maps
        rows = np.nonzero(maps.mask)[0]
        parts = maps.part[maps.mask]
        head = rows[parts == 13].mean()
        ankles = rows[(parts == 0) | (parts == 5)].mean()
        assert head > ankles

    @staticmethod
    def test_nearest_surface_wins():
        """Test the smaller depth owns overlapping pixels."""

        projected = np.array(
            [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [0.0, 0.0], [8.0, 0.0], [0.0, 8.0]]
        )
        depth = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        pixel_face, pixel_bary, zbuf = _zbuffer(projected, depth, faces, (8, 8))
        covered = pixel_face != BACKGROUND
        assert covered.sum() > 20
        assert np.all(pixel_face[covered] == 1)
        np.testing.assert_allclose(zbuf[covered], -1.0)
        np.testing.assert_allclose(pixel_bary[covered].sum(axis=-1), 1.0)

    @staticmethod
    def test_zbuffer_matches_exhaustive_depth_test():
        """Test every pixel against every triangle of a random soup."""

        rng = np.random.default_rng(5)
        num_faces, size = 25, 16
        projected = rng.uniform(0.0, size, (3 * num_faces, 2))
        depth = rng.uniform(-1.0, 1.0, 3 * num_faces)
        faces = np.arange(3 * num_faces).reshape(num_faces, 3)
        pixel_face, _, zbuf = _zbuffer(projected, depth, faces, (size, size))

        checked = 0
        for row in range(size):
            for col in range(size):
                point = np.array([col + 0.5, row + 0.5])
                hits, ambiguous = [], False
                for face, ids in enumerate(faces):
                    a, b, c = projected[ids]
                    m = np.stack([b - a, c - a], axis=-1)
                    if abs(np.linalg.det(m)) < 1e-9:
                        continue
                    w_b, w_c = np.linalg.solve(m, point - a)
                    weights = np.array([1.0 - w_b - w_c, w_b, w_c])
                    if np.all(weights > 1e-6):
                        hits.append((weights @ depth[ids], face))
                    elif np.all(weights > -1e-6):
                        ambiguous = True
                if ambiguous:
                    continue
                checked += 1
                if not hits:
                    assert pixel_face[row, col] == BACKGROUND
                    continue
                z, face = min(hits)
                assert pixel_face[row, col] == face
                assert zbuf[row, col] == pytest.approx(z)
        assert checked > 0.9 * size * size

    @staticmethod
    def test_camera_far_away_is_rejected(model, atlas, part_seg, sample):
        """Test a camera that misses the body raises."""

        with pytest.raises(CameraCoverageError):
            render_dense_maps(
                sample.mesh,
                model,
                atlas,
                part_seg,
                sample.joints,
                Camera(offset=(5000.0, 5000.0)),
            )

    @staticmethod
    def test_mesh_must_match_model(model, atlas, part_seg, sample):
        """Test meshes of another size are rejected."""

        mesh = Mesh(vertices=np.zeros((3, 3)), faces=np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            render_dense_maps(mesh, model, atlas, part_seg, sample.joints, Camera())

    @staticmethod
    def test_pack_keeps_every_channel(sample):
        """Test the packed layout has 13 channels and unpacks to the same maps."""

        packed = sample.image_maps.pack()
        assert packed.shape == (224, 224, 13)
        unpacked = ImageMaps.unpack(packed)
        np.testing.assert_array_equal(unpacked.mask, sample.image_maps.mask)
        np.testing.assert_array_equal(unpacked.part, sample.image_maps.part)
        with pytest.raises(ValueError):
            ImageMaps.unpack(packed[..., :12])


class TestOcclusion:
    """Test synthetic occluders."""

    @staticmethod
    @given(
        seed=st_seed,
        height=st.integers(min_value=8, max_value=64),
        width=st.integers(min_value=8, max_value=64),
    )
    def test_rectangles_fit_the_image(seed, height, width):
        """Test rectangles are within bounds and within the size range."""

        config = OcclusionConfig()
        rects = sample_occluders(seed, (height, width), config)
        assert config.min_count <= len(rects) <= config.max_count
        for row0, col0, row1, col1 in rects:
            assert 0 <= row0 <= row1 <= height
            assert 0 <= col0 <= col1 <= width
        assert rects == sample_occluders(seed, (height, width), config)

    @staticmethod
    def test_occlusion_only_removes_pixels(sample):
        """Test occluded maps are a subset of the clean maps."""

        clean, occluded = sample.image_maps, sample.image_maps_occluded
        assert np.all(clean.mask[occluded.mask])
        np.testing.assert_array_equal(
            occluded.location[occluded.mask], clean.location[occluded.mask]
        )
        assert np.all(occluded.part[~occluded.mask] == BACKGROUND)

    @staticmethod
    def test_occlusion_leaves_input_untouched(sample):
        """Test the input maps are not modified."""

        before = sample.image_maps.mask.copy()
        apply_synthetic_occlusion(sample.image_maps, 99, OcclusionConfig())
        np.testing.assert_array_equal(sample.image_maps.mask, before)

    @staticmethod
    def test_zero_occluders_keep_the_mask(sample):
        """Test a zero count leaves the maps as they are."""

        config = OcclusionConfig(min_count=0, max_count=0)
        out = apply_synthetic_occlusion(sample.image_maps, 5, config)
        np.testing.assert_array_equal(out.mask, sample.image_maps.mask)

    @staticmethod
    def test_rectangles_cover_expected_pixels(sample):
        """Test an explicit rectangle clears exactly its pixels."""

        rect = (100, 90, 140, 130)
        covered = occlusion_mask((224, 224), [rect])
        assert covered.sum() == 40 * 40
        out = occlude_rectangles(sample.image_maps, [rect])
        assert not out.mask[100:140, 90:130].any()
        np.testing.assert_array_equal(
            out.mask[~covered], sample.image_maps.mask[~covered]
        )

    @staticmethod
    def test_config_checks_ordering():
        """Test max values may not be below min values."""

        with pytest.raises(ValueError):
            OcclusionConfig(min_count=3, max_count=1)
        with pytest.raises(ValueError):
            OcclusionConfig(min_size=0.5, max_size=0.2)
        with pytest.raises(ValueError):
            OcclusionConfig(max_size=1.5)


class TestNoise:
    """Test additive map noise."""

    @staticmethod
    def test_zero_sigma_returns_same_maps(sample):
        """Test sigma 0 is a no-op."""

        assert add_map_noise(sample.image_maps, 1, 0.0) is sample.image_maps

    @staticmethod
    def test_negative_sigma_is_rejected(sample):
        """Test sigma must be non-negative."""

        with pytest.raises(ValueError):
            add_map_noise(sample.image_maps, 1, -0.1)

    @staticmethod
    def test_noise_touches_foreground_only(sample):
        """Test background stays zero and displacement stays consistent."""

        noisy = add_map_noise(sample.image_maps, 3, 0.01)
        mask = sample.image_maps.mask
        assert np.all(noisy.location[~mask] == 0.0)
        assert not np.allclose(noisy.location[mask], sample.image_maps.location[mask])
        np.testing.assert_allclose(
            noisy.displacement[mask], noisy.location[mask] - noisy.joint[mask]
        )
        again = add_map_noise(sample.image_maps, 3, 0.01)
        np.testing.assert_array_equal(again.location, noisy.location)


class TestWarp:
    """Test scattering image maps into the atlas."""

    @staticmethod
    def test_warp_fills_inside_texels_only(sample, atlas):
        """Test valid texels are on the surface and diagnostics add up."""

        diagnostics = WarpDiagnostics()
        uv = warp_image_to_uv(sample.image_maps, atlas, diagnostics)
        assert uv.resolution == atlas.resolution
        assert uv.valid.any()
        assert np.all(atlas.inside[uv.valid])
        assert np.all(uv.location[~uv.valid] == 0.0)
        fg = int(sample.image_maps.mask.sum())
        assert diagnostics.scattered + diagnostics.off_atlas == fg
        assert diagnostics.scattered - diagnostics.collisions == uv.valid.sum()
        assert diagnostics.clamped == 0

    @staticmethod
    def test_warped_joints_are_part_joints(sample, atlas, part_seg):
        """Test each valid texel holds the joint of its part."""

        uv = warp_image_to_uv(sample.image_maps, atlas)
        expected = sample.joints.joints[part_seg.assign[uv.valid]]
        np.testing.assert_allclose(uv.joint[uv.valid], expected, atol=1e-12)

    @staticmethod
    def test_occluded_maps_cover_fewer_texels(sample, atlas, part_seg):
        """Test occlusion lowers valid counts per part."""

        clean = warp_image_to_uv(sample.image_maps, atlas).part_counts(part_seg)
        occluded = warp_image_to_uv(sample.image_maps_occluded, atlas).part_counts(
            part_seg
        )
        assert np.all(occluded <= clean)

    @staticmethod
    def test_empty_maps_warp_to_nothing(atlas):
        """Test all-background maps give no valid texel."""

        uv = warp_image_to_uv(ImageMaps.empty((32, 32)), atlas)
        assert not uv.valid.any()


class TestGroundTruth:
    """Test complete UV maps of a mesh."""

    @staticmethod
    def test_every_inside_texel_is_valid(sample, atlas, part_seg):
        """Test ground truth covers the whole surface."""

        uv = sample.uv_gt
        np.testing.assert_array_equal(uv.valid, atlas.inside)
        np.testing.assert_allclose(
            uv.joint[atlas.inside], sample.joints.joints[part_seg.assign[atlas.inside]]
        )
        assert np.all(uv.displacement[~atlas.inside] == 0.0)
        assert UVMaps.unpack(uv.pack()).valid.sum() == atlas.inside.sum()

    @staticmethod
    def test_mesh_must_match_model(model, atlas, part_seg, sample):
        """Test meshes of another size are rejected."""

        mesh = Mesh(vertices=np.zeros((3, 3)), faces=np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            make_uv_ground_truth(mesh, model, part_seg, sample.joints, atlas)
