import math

import numpy as np
import pytest

from scrloc.geometry import PinholeCamera, RigidTransform, Twist, se3_exp
from scrloc.pnp import (
    DegenerateConfiguration,
    NoConsensus,
    RansacConfig,
    TooFewCorrespondences,
    classify_inliers,
    pnp_minimal,
    ransac_pnp,
)

CAM = PinholeCamera(fx=520.0, fy=520.0, cx=320.0, cy=240.0, width=640, height=480)


def random_pose(rng) -> RigidTransform:
    return se3_exp(Twist(rho=rng.normal(size=3) * 2.0, phi=rng.uniform(-1.0, 1.0, 3)))


def projected_fixture(rng, pose, n, depth_range=(2.0, 12.0)):
    """Forward-project random camera-frame points so every pixel is exact."""
    z = rng.uniform(*depth_range, n)
    u = rng.uniform(40, CAM.width - 40, n)
    v = rng.uniform(40, CAM.height - 40, n)
    pc = np.stack([(u - CAM.cx) / CAM.fx * z, (v - CAM.cy) / CAM.fy * z, z], axis=1)
    pw = pc @ pose.rotation.T + pose.translation
    return np.stack([u, v], axis=1), pw


def pose_errors(estimate, truth):
    dt = np.linalg.norm(estimate.translation - truth.translation)
    cosang = (np.trace(truth.rotation.T @ estimate.rotation) - 1.0) / 2.0
    dr = math.acos(min(1.0, max(-1.0, cosang)))
    return dt, dr


class TestPnpMinimal:
    def test_recovers_pose_from_exact_projections(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            truth = random_pose(rng)
            px, pw = projected_fixture(rng, truth, 6)
            est = pnp_minimal(px, pw, CAM)
            dt, dr = pose_errors(est, truth)
            assert dt < 1e-6 and dr < 1e-6

    def test_collinear_points_degenerate(self):
        t = np.linspace(0, 1, 8)
        pts = np.outer(t, [1.0, 0.5, 0.2]) + [0.0, 0.0, 5.0]
        px = np.stack([520.0 * pts[:, 0] / pts[:, 2] + 320.0, 520.0 * pts[:, 1] / pts[:, 2] + 240.0], axis=1)
        with pytest.raises(DegenerateConfiguration):
            pnp_minimal(px, pts, CAM)

    def test_three_points_rejected(self):
        with pytest.raises(TooFewCorrespondences):
            pnp_minimal(np.zeros((3, 2)), np.zeros((3, 3)), CAM)

    def test_five_points_underdetermined(self):
        rng = np.random.default_rng(1)
        truth = random_pose(rng)
        px, pw = projected_fixture(rng, truth, 5)
        with pytest.raises(DegenerateConfiguration):
            pnp_minimal(px, pw, CAM)

    def test_least_squares_over_many_points(self):
        rng = np.random.default_rng(2)
        truth = random_pose(rng)
        px, pw = projected_fixture(rng, truth, 200)
        px_noisy = px + rng.normal(0.0, 0.5, px.shape)
        est = pnp_minimal(px_noisy, pw, CAM)
        dt, dr = pose_errors(est, truth)
        assert dt < 0.01 and dr < math.radians(0.1)


class TestClassifyInliers:
    def test_point_on_ray_is_inlier(self):
        mask, mean = classify_inliers(
            np.array([[320.0, 240.0]]), np.array([[0.0, 0.0, 5.0]]), RigidTransform.identity(), CAM, 1.0
        )
        assert mask[0] and mean < 1e-9

    def test_threshold_boundary_is_outlier(self):
        # point projecting exactly 10 px away from its pixel
        mask, mean = classify_inliers(
            np.array([[320.0, 240.0]]),
            np.array([[10.0 / 520.0 * 5.0, 0.0, 5.0]]),
            RigidTransform.identity(),
            CAM,
            10.0,
        )
        assert not mask[0]
        assert mean == np.inf

    def test_behind_camera_is_outlier(self):
        mask, _ = classify_inliers(
            np.array([[320.0, 240.0]]), np.array([[0.0, 0.0, -5.0]]), RigidTransform.identity(), CAM, 1e9
        )
        assert not mask[0]


class TestRansac:
    def corrupted_fixture(self, rng, truth, n=100, outlier_frac=0.3, noise=0.5):
        px, pw = projected_fixture(rng, truth, n)
        px = px + rng.normal(0.0, noise, px.shape)
        n_out = int(round(outlier_frac * n))
        out_idx = rng.choice(n, n_out, replace=False)
        px[out_idx] = rng.uniform([0, 0], [CAM.width, CAM.height], (n_out, 2))
        return px, pw

    def test_clean_case_all_inliers(self):
        rng = np.random.default_rng(3)
        truth = random_pose(rng)
        px, pw = projected_fixture(rng, truth, 60)
        est = ransac_pnp(px, pw, CAM, RansacConfig(seed=1))
        assert est.inlier_count == 60
        dt, dr = pose_errors(est.pose, truth)
        assert dt < 1e-6 and dr < 1e-6

    def test_recovery_under_outliers(self):
        successes = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            truth = random_pose(rng)
            px, pw = self.corrupted_fixture(rng, truth)
            est = ransac_pnp(px, pw, CAM, RansacConfig(seed=seed))
            dt, dr = pose_errors(est.pose, truth)
            if dt < 0.01 and dr < math.radians(0.1):
                successes += 1
        assert successes >= 95

    def test_all_outliers_no_consensus(self):
        failures = 0
        for seed in range(100):
            rng = np.random.default_rng(5000 + seed)
            pw = rng.uniform(-5, 5, (100, 3)) + [0, 0, 8.0]
            px = rng.uniform([0, 0], [CAM.width, CAM.height], (100, 2))
            try:
                ransac_pnp(px, pw, CAM, RansacConfig(seed=seed))
            except NoConsensus:
                failures += 1
        assert failures == 100

    def test_determinism(self):
        rng = np.random.default_rng(6)
        truth = random_pose(rng)
        px, pw = self.corrupted_fixture(rng, truth)
        a = ransac_pnp(px, pw, CAM, RansacConfig(seed=42))
        b = ransac_pnp(px, pw, CAM, RansacConfig(seed=42))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.translation, b.pose.translation)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.mean_inlier_error == b.mean_inlier_error

    def test_consensus_validity(self):
        rng = np.random.default_rng(8)
        truth = random_pose(rng)
        cfg = RansacConfig(seed=3)
        px, pw = self.corrupted_fixture(rng, truth)
        est = ransac_pnp(px, pw, CAM, cfg)
        mask, _ = classify_inliers(px, pw, est.pose, CAM, cfg.inlier_threshold)
        assert np.array_equal(mask, est.inlier_mask)
        assert est.inlier_count == int(est.inlier_mask.sum())

    def test_refinement_does_not_worsen_mean_error(self):
        from scrloc.geometry import project_many

        for seed in range(40):
            rng = np.random.default_rng(200 + seed)
            truth = random_pose(rng)
            px, pw = self.corrupted_fixture(rng, truth)
            refined = ransac_pnp(px, pw, CAM, RansacConfig(seed=seed))
            raw = ransac_pnp(px, pw, CAM, RansacConfig(seed=seed, refine_iterations=0))
            # raw best hypothesis measured on the final inlier set
            final_idx = refined.inlier_mask
            uv, z = project_many(pw[final_idx], raw.pose, CAM)
            errs = np.where(z > 0, np.linalg.norm(uv - px[final_idx], axis=1), np.inf)
            assert refined.mean_inlier_error <= errs.mean() + 1e-12

    def test_too_few_correspondences(self):
        with pytest.raises(TooFewCorrespondences):
            ransac_pnp(np.zeros((3, 2)), np.zeros((3, 3)), CAM, RansacConfig())

    def test_recovery_statistics_many_trials(self):
        # statistical guarantee: <=50% outliers, >=50 correspondences; the
        # harder regime warrants more hypotheses than the default 256
        failures = 0
        trials = 1000
        cfg_iters = 1024
        for seed in range(trials):
            rng = np.random.default_rng(9000 + seed)
            truth = random_pose(rng)
            px, pw = self.corrupted_fixture(rng, truth, n=50, outlier_frac=0.5)
            try:
                est = ransac_pnp(px, pw, CAM, RansacConfig(seed=seed, max_iterations=cfg_iters))
            except NoConsensus:
                failures += 1
                continue
            dt, dr = pose_errors(est.pose, truth)
            if not (dt < 0.05 and dr < math.radians(0.5)):
                failures += 1
        assert failures / trials <= 0.02
