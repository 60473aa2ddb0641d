"""Tests for the feature-space alignment solver and its Jacobian machinery."""

from __future__ import annotations

import numpy as np
import pytest

from regkit.lie import RigidTransform, Twist, apply, exp_se3
from regkit.oracle import MomentFeatureConfig, moment_feature, moment_jacobian_analytic
from regkit.pointlk import (
    JACOBIAN_CALLS,
    JACOBIAN_METHODS,
    LkOptions,
    NonFiniteFeatureError,
    SingularJacobianError,
    build_jacobian,
    numerical_jacobian,
    pinv6,
    register,
)


def random_cloud(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, 3))


def moments(cloud: np.ndarray) -> np.ndarray:
    return moment_feature(cloud)


def rotation_error_degrees(R_est: np.ndarray, R_true: np.ndarray) -> float:
    cos = (np.trace(R_est @ R_true.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


class CountingExtractor:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, cloud):
        self.calls += 1
        return self.fn(cloud)


# ---------------------------------------------------------------------------
# numerical_jacobian
# ---------------------------------------------------------------------------

def test_constant_feature_gives_zero_jacobian_for_every_method():
    cloud = random_cloud(16, seed=0)
    constant = lambda pts: np.ones(5)
    for method in JACOBIAN_METHODS:
        J = numerical_jacobian(cloud, constant, method=method)
        np.testing.assert_array_equal(J, np.zeros((5, 6)))


def test_all_methods_agree_on_linear_translation_columns():
    # The mean block is linear in translation, so every difference scheme is
    # exact there and they all agree with the analytic value -I.
    cloud = random_cloud(64, seed=1)
    blocks = {}
    for method in JACOBIAN_METHODS:
        J = numerical_jacobian(cloud, moments, method=method, step=0.05)
        blocks[method] = J[:3, 3:6]
        np.testing.assert_allclose(J[:3, 3:6], -np.eye(3), atol=1e-12)
    for method in JACOBIAN_METHODS[1:]:
        np.testing.assert_allclose(blocks[method], blocks["forward"], atol=1e-12)


def test_central_close_to_analytic_backward_coarser():
    cloud = random_cloud(64, seed=2)
    cfg = MomentFeatureConfig(max_order=2)
    extractor = lambda pts: moment_feature(pts, cfg)
    exact = moment_jacobian_analytic(cloud, cfg)
    scale = np.linalg.norm(exact)

    central = numerical_jacobian(cloud, extractor, method="central", step=0.01)
    backward = numerical_jacobian(cloud, extractor, method="backward", step=0.01)
    assert np.linalg.norm(central - exact) / scale < 1e-3
    assert np.linalg.norm(backward - exact) / scale < 2e-1


def test_error_slopes_match_scheme_orders():
    cloud = random_cloud(64, seed=3)
    exact = moment_jacobian_analytic(cloud)
    scale = np.linalg.norm(exact)
    ts = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])

    slopes = {}
    for method in JACOBIAN_METHODS:
        errors = []
        for t in ts:
            J = numerical_jacobian(cloud, moments, method=method, step=float(t))
            errors.append(np.linalg.norm(J - exact) / scale)
        slopes[method] = np.polyfit(np.log(ts), np.log(errors), 1)[0]

    assert slopes["forward"] == pytest.approx(1.0, abs=0.4)
    assert slopes["backward"] == pytest.approx(1.0, abs=0.4)
    assert slopes["central"] == pytest.approx(2.0, abs=0.4)
    assert slopes["five_point"] == pytest.approx(4.0, abs=0.6)


def test_extractor_call_counts_per_method():
    cloud = random_cloud(8, seed=4)
    base = moments(cloud)
    for method, expected in JACOBIAN_CALLS.items():
        counter = CountingExtractor(moments)
        numerical_jacobian(cloud, counter, method=method, base_feature=base)
        assert counter.calls == expected
    # One-sided schemes without a shared base feature extract it themselves.
    counter = CountingExtractor(moments)
    numerical_jacobian(cloud, counter, method="backward")
    assert counter.calls == 7


def test_per_axis_step_vector_is_honored():
    cloud = random_cloud(16, seed=5)
    steps = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06]
    J = numerical_jacobian(cloud, moments, method="central", step=steps)
    J_scalar = numerical_jacobian(cloud, moments, method="central", step=0.01)
    np.testing.assert_allclose(J[:, 0], J_scalar[:, 0], atol=1e-12)
    assert not np.allclose(J[:, 2], J_scalar[:, 2], atol=1e-9)


def test_numerical_jacobian_rejects_bad_arguments():
    cloud = random_cloud(8, seed=6)
    with pytest.raises(ValueError):
        numerical_jacobian(cloud, moments, method="secant")
    with pytest.raises(ValueError):
        numerical_jacobian(cloud, moments, step=0.0)
    with pytest.raises(ValueError):
        numerical_jacobian(np.zeros((0, 3)), moments)


# ---------------------------------------------------------------------------
# pinv6
# ---------------------------------------------------------------------------

def test_pinv6_of_identity_columns_is_the_transpose():
    J = np.eye(8)[:, :6]
    np.testing.assert_array_equal(pinv6(J), J.T)


def test_pinv6_left_inverse_property_over_seeds():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        J = rng.normal(size=(1024, 6))
        np.testing.assert_allclose(pinv6(J) @ J, np.eye(6), atol=1e-8)


def test_pinv6_matches_lstsq_solution():
    rng = np.random.default_rng(7)
    J = rng.normal(size=(50, 6))
    r = rng.normal(size=50)
    expected, *_ = np.linalg.lstsq(J, r, rcond=None)
    np.testing.assert_allclose(pinv6(J) @ r, expected, atol=1e-10)


def test_pinv6_duplicate_columns_raise_singular_error():
    rng = np.random.default_rng(8)
    J = rng.normal(size=(32, 6))
    J[:, 1] = J[:, 0]
    with pytest.raises(SingularJacobianError):
        pinv6(J)


def test_pinv6_ridge_recovers_duplicate_column_case():
    rng = np.random.default_rng(9)
    J = rng.normal(size=(32, 6))
    J[:, 1] = J[:, 0]
    ridge = 1e-9 * float(np.trace(J.T @ J))
    out = pinv6(J, ridge=ridge)
    assert out.shape == (6, 32)
    assert np.all(np.isfinite(out))


def test_pinv6_rejects_wrong_shapes():
    with pytest.raises(ValueError):
        pinv6(np.zeros((4, 6)))
    with pytest.raises(ValueError):
        pinv6(np.zeros((8, 5)))


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

def test_identical_clouds_converge_immediately():
    cloud = random_cloud(32, seed=10)
    result = register(cloud, cloud, moments)
    assert result.converged
    assert result.iterations == 1
    assert len(result.history) == 1
    np.testing.assert_allclose(result.G.matrix(), np.eye(4), atol=1e-12)


def small_motion_pair(seed: int, n: int = 256, angle_deg: float = 10.0, shift: float = 0.1):
    rng = np.random.default_rng(seed)
    source = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = rng.normal(size=3)
    omega = axis / np.linalg.norm(axis) * np.radians(angle_deg)
    rho = rng.normal(size=3)
    rho = rho / np.linalg.norm(rho) * shift
    g_star = exp_se3(Twist(omega=omega, rho=rho))
    return source, apply(g_star, source), g_star


def test_register_recovers_small_motion():
    source, template, g_star = small_motion_pair(seed=11)
    result = register(source, template, moments, LkOptions(max_iters=20))
    assert rotation_error_degrees(result.G.R, g_star.R) < 0.1
    assert np.all(np.isfinite(result.history))
    # Once near the optimum the update magnitudes settle monotonically.
    tail = result.history[-3:]
    assert all(tail[i + 1] <= tail[i] for i in range(len(tail) - 1))


def test_register_counts_extractor_invocations():
    source, template, _ = small_motion_pair(seed=12, n=64)
    for method in ("central", "five_point"):
        counter = CountingExtractor(moments)
        result = register(source, template, counter, LkOptions(method=method))
        assert counter.calls == 1 + JACOBIAN_CALLS[method] + result.iterations


def test_register_stops_extracting_after_convergence():
    cloud = random_cloud(32, seed=13)
    counter = CountingExtractor(moments)
    result = register(cloud, cloud, counter, LkOptions(max_iters=20, method="central"))
    assert result.converged and result.iterations == 1
    assert counter.calls == 1 + JACOBIAN_CALLS["central"] + 1


def test_register_respects_iteration_budget():
    source, template, _ = small_motion_pair(seed=14, angle_deg=25.0, shift=0.3)
    result = register(source, template, moments, LkOptions(max_iters=3, epsilon=1e-15))
    assert result.iterations == 3
    assert not result.converged
    assert len(result.transforms) == 3


def test_register_aborts_on_non_finite_features():
    cloud = random_cloud(32, seed=15)

    calls = {"n": 0}

    def flaky(pts):
        calls["n"] += 1
        out = moments(pts)
        if calls["n"] > 13:  # after the base feature and the central stencil
            out = out.copy()
            out[0] = np.nan
        return out

    with pytest.raises(NonFiniteFeatureError, match="iteration 1"):
        register(cloud, apply(exp_se3(Twist.from_vector(np.r_[0.1, 0, 0, 0, 0, 0])), cloud),
                 flaky, LkOptions(method="central"))


def test_register_propagates_singular_jacobian():
    # A single repeated point makes every moment gradient field collinear.
    cloud = np.tile(np.array([[0.5, -0.2, 0.1]]), (16, 1))
    with pytest.raises(SingularJacobianError):
        register(cloud, cloud, moments)


def test_options_validation():
    with pytest.raises(ValueError):
        LkOptions(max_iters=0)
    with pytest.raises(ValueError):
        LkOptions(epsilon=0.0)
    with pytest.raises(ValueError):
        LkOptions(method="newton")
    with pytest.raises(ValueError):
        LkOptions(step=-0.01)


def test_central_not_worse_than_backward_on_median_error():
    central_errors = []
    backward_errors = []
    for seed in range(20):
        source, template, g_star = small_motion_pair(seed=100 + seed, n=128)
        for method, sink in (("central", central_errors), ("backward", backward_errors)):
            result = register(source, template, moments,
                              LkOptions(max_iters=20, method=method))
            sink.append(rotation_error_degrees(result.G.R, g_star.R))
    assert np.median(central_errors) <= np.median(backward_errors) + 1e-6


def test_build_jacobian_bundle_invariant():
    cloud = random_cloud(64, seed=16)
    bundle = build_jacobian(cloud, moments, LkOptions(method="central"))
    np.testing.assert_allclose(bundle.Jdag @ bundle.J, np.eye(6), atol=1e-5)
    assert bundle.method == "central"
    np.testing.assert_array_equal(bundle.steps, np.full(6, 0.01))
