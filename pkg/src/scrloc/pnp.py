"""Robust camera pose from 2D-3D correspondences: DLT resection + RANSAC.

Correspondence sets are passed as parallel arrays: ``pixels`` with shape
(N, 2) and ``points`` with shape (N, 3). The minimal solver is a normalized
direct linear transform over the 3x4 projection matrix; RANSAC draws
6-point samples with a counter-keyed deterministic generator, so results
are bit-reproducible for a fixed seed and input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    BEHIND_CAMERA_EPS,
    PinholeCamera,
    RigidTransform,
    nearest_rotation,
    project_many,
)

MINIMAL_SAMPLE_SIZE = 6          # DLT needs 11 DOF -> 6 points
CONDITION_RATIO_MIN = 1e-10      # smallest/largest singular value of the DLT system


class TooFewCorrespondences(Exception):
    """Fewer correspondences than the solver's minimum of 4."""


class DegenerateConfiguration(Exception):
    """The DLT system is rank-deficient (collinear/coplanar or too few points)."""


class NoConsensus(Exception):
    """No RANSAC hypothesis reached the minimum inlier count."""


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 10.0   # px
    max_iterations: int = 256
    min_inliers: int = 6
    refine_iterations: int = 8
    seed: int = 0
    confidence: float = 0.999        # adaptive stop once this is reached

    def __post_init__(self) -> None:
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0, 1)")


@dataclass
class PoseEstimate:
    pose: RigidTransform
    inlier_count: int
    inlier_mask: np.ndarray
    mean_inlier_error: float


def _as_arrays(pixels, points) -> tuple[np.ndarray, np.ndarray]:
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    pt = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if px.shape[0] != pt.shape[0]:
        raise ValueError("pixels and points must have equal length")
    return px, pt


def _solve_dlt(px: np.ndarray, pt: np.ndarray, cam: PinholeCamera) -> RigidTransform:
    n = px.shape[0]

    # Hartley normalization of both point sets
    c2 = px.mean(axis=0)
    d2 = np.linalg.norm(px - c2, axis=1).mean()
    c3 = pt.mean(axis=0)
    d3 = np.linalg.norm(pt - c3, axis=1).mean()
    if d2 < 1e-12 or d3 < 1e-12:
        raise DegenerateConfiguration("correspondences are coincident")
    s2 = np.sqrt(2.0) / d2
    s3 = np.sqrt(3.0) / d3
    u = (px - c2) * s2
    x = (pt - c3) * s3

    A = np.zeros((2 * n, 12))
    xh = np.hstack([x, np.ones((n, 1))])
    A[0::2, 0:4] = xh
    A[0::2, 8:12] = -u[:, 0:1] * xh
    A[1::2, 4:8] = xh
    A[1::2, 8:12] = -u[:, 1:2] * xh

    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    # unique solution needs rank 11: 11 well-separated singular values
    if len(sv) < 11 or sv[10] < CONDITION_RATIO_MIN * sv[0]:
        raise DegenerateConfiguration("rank-deficient DLT system")
    Pn = Vt[-1].reshape(3, 4)

    # undo normalization: P = T2^-1 @ Pn @ T3
    T2inv = np.array([[1.0 / s2, 0.0, c2[0]], [0.0, 1.0 / s2, c2[1]], [0.0, 0.0, 1.0]])
    T3 = np.eye(4)
    T3[:3, :3] *= s3
    T3[:3, 3] = -s3 * c3
    Pm = T2inv @ Pn @ T3

    # factor out intrinsics: M = K^-1 P = s [R_cw | t_cw]
    M = np.linalg.inv(cam.matrix()) @ Pm
    M3 = M[:, :3]
    det = np.linalg.det(M3)
    if abs(det) < 1e-18:
        raise DegenerateConfiguration("singular rotation block")
    if det < 0.0:
        M = -M
        det = -det
    M /= det ** (1.0 / 3.0)
    R_cw = nearest_rotation(M[:, :3])
    t_cw = M[:, 3]
    return RigidTransform(R_cw.T.copy(), -R_cw.T @ t_cw)


def pnp_minimal(pixels, points, cam: PinholeCamera) -> RigidTransform:
    """Normalized DLT resection. Requires >= 4 correspondences; raises
    DegenerateConfiguration when the system cannot pin down a unique pose
    (fewer than 6 points, collinear/coplanar geometry)."""
    px, pt = _as_arrays(pixels, points)
    if px.shape[0] < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {px.shape[0]}")
    return _solve_dlt(px, pt, cam)


def _refine_object_space(
    px: np.ndarray, pt: np.ndarray, cam: PinholeCamera, init: RigidTransform, iters: int = 10
) -> RigidTransform:
    """Orthogonal iteration on the object-space (line-of-sight) error.

    Alternates the closed-form optimal translation with a Procrustes solve
    for the rotation; converges in a few iterations from a DLT initial pose
    and needs no projection Jacobians."""
    n = px.shape[0]
    v = np.column_stack(
        [(px[:, 0] - cam.cx) / cam.fx, (px[:, 1] - cam.cy) / cam.fy, np.ones(n)]
    )
    # line-of-sight projectors V_i = v v^T / (v^T v)
    V = v[:, :, None] @ v[:, None, :] / (v * v).sum(axis=1)[:, None, None]
    try:
        lhs = np.linalg.inv(np.eye(3) - V.mean(axis=0))
    except np.linalg.LinAlgError:
        return init
    R_cw = init.rotation.T.copy()
    pbar = pt.mean(axis=0)
    pc = pt - pbar
    for _ in range(iters):
        Rp = pt @ R_cw.T
        t_cw = lhs @ ((V - np.eye(3)) @ Rp[:, :, None]).squeeze(-1).mean(axis=0)
        q = (V @ (Rp + t_cw)[:, :, None]).squeeze(-1)
        H = (q - q.mean(axis=0)).T @ pc
        U, _, Vt = np.linalg.svd(H)
        d = np.sign(np.linalg.det(U @ Vt))
        R_cw = U @ np.diag([1.0, 1.0, d]) @ Vt
    Rp = pt @ R_cw.T
    t_cw = lhs @ ((V - np.eye(3)) @ Rp[:, :, None]).squeeze(-1).mean(axis=0)
    return RigidTransform(R_cw.T.copy(), -R_cw.T @ t_cw)


def classify_inliers(
    pixels, points, pose: RigidTransform, cam: PinholeCamera, threshold: float
) -> tuple[np.ndarray, float]:
    """Strict-threshold inlier mask and the mean error over inliers.

    Points behind the camera are outliers. Returns mean error +inf when
    there is no inlier."""
    px, pt = _as_arrays(pixels, points)
    uv, z = project_many(pt, pose, cam)
    err = np.full(px.shape[0], np.inf)
    ok = z > BEHIND_CAMERA_EPS
    err[ok] = np.linalg.norm(uv[ok] - px[ok], axis=1)
    mask = err < threshold
    mean = float(err[mask].mean()) if mask.any() else np.inf
    return mask, mean


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    # counter-keyed stream: deterministic regardless of evaluation order
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, iteration])


def ransac_pnp(pixels, points, cam: PinholeCamera, cfg: RansacConfig) -> PoseEstimate:
    """Best-consensus pose over seeded minimal samples, followed by
    iterative refinement (re-solve on all inliers, re-classify).

    Tie-breaking is total: higher inlier count, then lower mean inlier
    error, then earlier iteration index."""
    px, pt = _as_arrays(pixels, points)
    n = px.shape[0]
    if n < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {n}")

    best: PoseEstimate | None = None
    if n >= MINIMAL_SAMPLE_SIZE:
        needed = cfg.max_iterations
        for it in range(cfg.max_iterations):
            if it >= needed:
                break
            idx = _iteration_rng(cfg.seed, it).choice(n, MINIMAL_SAMPLE_SIZE, replace=False)
            try:
                pose = pnp_minimal(px[idx], pt[idx], cam)
            except DegenerateConfiguration:
                continue
            mask, mean = classify_inliers(px, pt, pose, cam, cfg.inlier_threshold)
            count = int(mask.sum())
            if best is None or count > best.inlier_count or (
                count == best.inlier_count and mean < best.mean_inlier_error
            ):
                best = PoseEstimate(pose, count, mask, mean)
                # adaptive stopping: iterations needed to hit an all-inlier
                # sample with the configured confidence
                w = count / n
                miss = 1.0 - w ** MINIMAL_SAMPLE_SIZE
                if miss <= 0.0:
                    needed = it + 1
                elif miss < 1.0:
                    needed = min(
                        cfg.max_iterations,
                        int(np.ceil(np.log(1.0 - cfg.confidence) / np.log(miss))),
                    )

    if best is None or best.inlier_count < cfg.min_inliers:
        raise NoConsensus(
            "best consensus "
            f"{0 if best is None else best.inlier_count} < min_inliers {cfg.min_inliers}"
        )

    for _ in range(cfg.refine_iterations):
        inl_px = px[best.inlier_mask]
        inl_pt = pt[best.inlier_mask]
        if inl_px.shape[0] < 4:
            break
        pose = _refine_object_space(inl_px, inl_pt, cam, best.pose)
        mask, mean = classify_inliers(px, pt, pose, cam, cfg.inlier_threshold)
        count = int(mask.sum())
        if count > best.inlier_count or (
            count == best.inlier_count and mean < best.mean_inlier_error
        ):
            best = PoseEstimate(pose, count, mask, mean)
        else:
            break
    return best
