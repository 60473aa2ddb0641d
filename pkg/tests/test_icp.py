"""Tests for the point-to-point ICP baseline."""

import numpy as np
import pytest

from regkit.icp import icp_pt2pt, svd_alignment
from regkit.lie import RigidTransform, apply, euler_xyz_to_matrix, inverse
from regkit.metrics import iso_error
from regkit.pairs import base_shape


def random_transform(seed: int, angle_scale: float = 0.3,
                     trans_scale: float = 0.2) -> RigidTransform:
    rng = np.random.default_rng(seed)
    return RigidTransform(
        euler_xyz_to_matrix(rng.uniform(-angle_scale, angle_scale, 3)),
        rng.uniform(-trans_scale, trans_scale, 3),
    )


class TestSvdAlignment:
    def test_recovers_an_exact_rigid_motion(self):
        cloud = np.random.default_rng(0).normal(size=(60, 3))
        g = random_transform(1)
        est = svd_alignment(cloud, apply(g, cloud))
        np.testing.assert_allclose(est.R, g.R, atol=1e-12)
        np.testing.assert_allclose(est.t, g.t, atol=1e-12)

    def test_planar_clouds_still_yield_a_proper_rotation(self):
        rng = np.random.default_rng(2)
        flat = np.column_stack([rng.normal(size=(50, 2)), np.zeros(50)])
        g = random_transform(3)
        est = svd_alignment(flat, apply(g, flat))
        assert np.linalg.det(est.R) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(est.R, g.R, atol=1e-9)

    def test_mirrored_correspondences_never_produce_a_reflection(self):
        cloud = np.random.default_rng(4).normal(size=(40, 3))
        mirrored = cloud * np.array([-1.0, 1.0, 1.0])
        est = svd_alignment(cloud, mirrored)
        assert np.linalg.det(est.R) == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="paired clouds"):
            svd_alignment(np.zeros((4, 3)), np.zeros((5, 3)))


class TestIcp:
    def test_identical_clouds_converge_immediately_to_identity(self):
        cloud = base_shape("box", 200, seed=1)
        result = icp_pt2pt(cloud, cloud)
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_allclose(result.G.R, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(result.G.t, 0.0, atol=1e-9)

    def test_pure_translation_with_exact_correspondences_recovers_in_one_step(self):
        # A lattice keeps every point 0.2 apart, so a 0.01-scale shift maps
        # each point to its own (exact) correspondence.
        grid = np.mgrid[0:5, 0:5, 0:5].reshape(3, -1).T * 0.2
        shift = np.array([0.01, -0.008, 0.005])
        result = icp_pt2pt(grid, grid + shift, max_iters=5)
        np.testing.assert_allclose(result.transforms[0].t, shift, atol=1e-12)
        np.testing.assert_allclose(result.transforms[0].R, np.eye(3), atol=1e-12)

    def test_small_motion_same_point_set_recovers_exactly(self):
        cloud = base_shape("table", 300, seed=3)
        g_star = random_transform(5, angle_scale=0.1, trans_scale=0.05)
        result = icp_pt2pt(cloud, apply(g_star, cloud), max_iters=100, tol=1e-15)
        rot_err, trans_err = iso_error(result.G, g_star)
        assert result.converged
        assert rot_err < 1e-5
        assert trans_err < 1e-7

    def test_result_bookkeeping_is_consistent(self):
        cloud = base_shape("box", 100, seed=4)
        target = apply(random_transform(6), cloud)
        result = icp_pt2pt(cloud, target, max_iters=7, tol=0.0)
        assert result.iterations == len(result.history) == len(result.transforms)
        assert result.iterations <= 7
        # With tol = 0 the improvement test (strict <) can only stop the
        # loop once the error is bit-for-bit stationary.
        if result.converged:
            assert result.history[-1] >= result.history[-2] - 0.0

    def test_recovered_inverse_matches_the_perturbation(self):
        # Registering source onto template estimates template = G source.
        cloud = base_shape("sphere", 120, seed=7)
        g = random_transform(8, angle_scale=0.15, trans_scale=0.1)
        result = icp_pt2pt(apply(inverse(g), cloud), cloud, max_iters=60)
        rot_err, trans_err = iso_error(result.G, g)
        assert rot_err < 1e-4
        assert trans_err < 1e-6

    def test_rejects_bad_arguments(self):
        cloud = np.zeros((4, 3))
        with pytest.raises(ValueError):
            icp_pt2pt(cloud, cloud, max_iters=0)
        with pytest.raises(ValueError):
            icp_pt2pt(np.zeros((0, 3)), cloud)
