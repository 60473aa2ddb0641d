"""Tests for synthetic pair generation and cloud file I/O."""

import numpy as np
import pytest

from regkit.lie import apply
from regkit.pairs import (
    SHAPE_NAMES,
    PairSpec,
    base_shape,
    gen_pair,
    load_cloud,
    save_cloud,
)


class TestBaseShapes:
    @pytest.mark.parametrize("name", SHAPE_NAMES)
    def test_shapes_are_centered_unit_sphere_clouds(self, name):
        cloud = base_shape(name, n_points=512, seed=3)
        assert cloud.shape == (512, 3)
        np.testing.assert_allclose(cloud.mean(axis=0), 0.0, atol=1e-12)
        radii = np.linalg.norm(cloud, axis=1)
        assert radii.max() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("name", SHAPE_NAMES)
    def test_same_seed_is_bitwise_identical(self, name):
        np.testing.assert_array_equal(
            base_shape(name, 256, seed=9), base_shape(name, 256, seed=9)
        )

    def test_different_seeds_differ(self):
        assert not np.array_equal(base_shape("sphere", 64, 0), base_shape("sphere", 64, 1))

    def test_unknown_shape_is_rejected(self):
        with pytest.raises(ValueError, match="unknown shape"):
            base_shape("torus", 64)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            base_shape("sphere", 3)


class TestPairSpec:
    def test_validates_its_ranges(self):
        with pytest.raises(ValueError):
            PairSpec(n_points=3)
        with pytest.raises(ValueError):
            PairSpec(n_points=16, theta_max_deg=200.0)
        with pytest.raises(ValueError):
            PairSpec(n_points=16, t_max=-0.1)
        with pytest.raises(ValueError):
            PairSpec(n_points=16, r_std=0.1, r_clip=0.05)

    def test_defaults_follow_the_standard_regime(self):
        spec = PairSpec(n_points=64)
        assert spec.theta_max_deg == 45.0
        assert spec.t_max == 0.5
        assert (spec.r_std, spec.r_clip) == (0.01, 0.05)


class TestGenPair:
    BASE = base_shape("box", 1024, seed=0)

    def test_same_seed_is_bitwise_identical(self):
        spec = PairSpec(n_points=128, seed=21)
        s1, t1, g1 = gen_pair(spec, self.BASE)
        s2, t2, g2 = gen_pair(spec, self.BASE)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(g1.R, g2.R)
        np.testing.assert_array_equal(g1.t, g2.t)

    def test_different_seeds_give_different_pairs(self):
        spec_a = PairSpec(n_points=128, seed=1)
        spec_b = PairSpec(n_points=128, seed=2)
        sa, _, _ = gen_pair(spec_a, self.BASE)
        sb, _, _ = gen_pair(spec_b, self.BASE)
        assert not np.array_equal(sa, sb)

    def test_degenerate_spec_returns_identity_and_equal_clouds(self):
        # Subsampling all points sorts indices back to the full cloud, so
        # with zero rotation, translation, and jitter the pair is trivial.
        base = base_shape("sphere", 64, seed=4)
        spec = PairSpec(n_points=64, theta_max_deg=0.0, t_max=0.0, r_std=0.0,
                        r_clip=0.0, seed=11)
        source, template, g_star = gen_pair(spec, base)
        np.testing.assert_allclose(g_star.R, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(g_star.t, 0.0, atol=1e-15)
        np.testing.assert_allclose(source, template, atol=1e-15)
        np.testing.assert_array_equal(source, base)

    def test_ground_truth_maps_source_onto_template_without_jitter(self):
        base = base_shape("table", 96, seed=5)
        spec = PairSpec(n_points=96, theta_max_deg=40.0, t_max=0.4, r_std=0.0,
                        r_clip=0.0, seed=33)
        source, template, g_star = gen_pair(spec, base)
        np.testing.assert_allclose(apply(g_star, source), template, atol=1e-12)

    def test_jitter_is_bounded_and_only_perturbs_the_clouds(self):
        base = self.BASE
        noisy_spec = PairSpec(n_points=200, r_std=0.01, r_clip=0.02, seed=8)
        clean_spec = PairSpec(n_points=200, r_std=0.0, r_clip=0.0, seed=8)
        noisy_s, noisy_t, noisy_g = gen_pair(noisy_spec, base)
        clean_s, clean_t, clean_g = gen_pair(clean_spec, base)
        np.testing.assert_array_equal(noisy_g.R, clean_g.R)
        np.testing.assert_array_equal(noisy_g.t, clean_g.t)
        # Recovering the noise by subtraction rounds at the coordinate scale,
        # so allow an ulp beyond the clip bound.
        assert np.abs(noisy_s - clean_s).max() <= 0.02 + 1e-14
        assert np.abs(noisy_t - clean_t).max() <= 0.02 + 1e-14
        assert np.abs(noisy_s - clean_s).max() > 0.0

    def test_subsamples_are_independent(self):
        spec = PairSpec(n_points=100, theta_max_deg=0.0, t_max=0.0, r_std=0.0,
                        r_clip=0.0, seed=3)
        source, template, _ = gen_pair(spec, self.BASE)
        assert not np.array_equal(source, template)

    def test_insufficient_base_points_rejected(self):
        with pytest.raises(ValueError, match="need at least"):
            gen_pair(PairSpec(n_points=2048), self.BASE)

    def test_malformed_base_rejected(self):
        with pytest.raises(ValueError, match=r"\(N, 3\)"):
            gen_pair(PairSpec(n_points=4), np.zeros((4, 2)))


class TestCloudFiles:
    def test_round_trip_is_exact(self, tmp_path):
        cloud = np.random.default_rng(7).normal(size=(50, 3))
        path = tmp_path / "cloud.xyz"
        save_cloud(path, cloud)
        np.testing.assert_array_equal(load_cloud(path), cloud)

    def test_rewriting_a_loaded_file_is_byte_identical(self, tmp_path):
        path = tmp_path / "cloud.xyz"
        save_cloud(path, base_shape("box", 32, seed=1))
        again = tmp_path / "again.xyz"
        save_cloud(again, load_cloud(path))
        assert path.read_bytes() == again.read_bytes()

    def test_first_line_is_the_count(self, tmp_path):
        path = tmp_path / "cloud.xyz"
        save_cloud(path, np.zeros((5, 3)))
        assert path.read_text().splitlines()[0] == "5"

    def test_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("3\n0 0 0\n1 1 1\n")
        with pytest.raises(ValueError, match="count line says 3"):
            load_cloud(path)

    def test_non_numeric_and_malformed_rows_rejected(self, tmp_path):
        bad_token = tmp_path / "token.xyz"
        bad_token.write_text("1\n0 zero 0\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_cloud(bad_token)
        bad_cols = tmp_path / "cols.xyz"
        bad_cols.write_text("1\n0 0\n")
        with pytest.raises(ValueError, match="expected 'x y z'"):
            load_cloud(bad_cols)
        bad_count = tmp_path / "count.xyz"
        bad_count.write_text("many\n0 0 0\n")
        with pytest.raises(ValueError, match="expected a point count"):
            load_cloud(bad_count)
        with pytest.raises(ValueError, match="empty"):
            empty = tmp_path / "empty.xyz"
            empty.write_text("")
            load_cloud(empty)
