"""SE(3) rigid transforms, pinhole projection, and viewing-ray geometry.

Conventions used throughout the package:

* Frames are right-handed. In the camera frame x points right in the image,
  y down, z forward along the optical axis.
* A pose is the camera-to-world transform: ``P_w = R @ P_c + t`` for a
  camera-frame point ``P_c``. Rotations are stored as full 3x3 matrices.
* Pixels are continuous ``(u, v)`` arrays with u along the image width.
* Scene points are ``(3,)`` world-frame arrays in meters.
* Twist (tangent) coordinates are ordered ``(rho, phi)``: translational part
  first, rotational part second, both 3-vectors.

All functions are pure; batched variants (``project_many`` and friends) never
raise on invalid points and report validity through masks/sentinels instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BEHIND_CAMERA_EPS = 1e-9   # minimum camera-frame depth for a projectable point
SMALL_ANGLE_EPS = 1e-8     # below this rotation angle, use series expansions
ROT_DRIFT_TOL = 1e-7       # re-orthonormalize when ||R^T R - I||_F exceeds this


class AngleNearPi(Exception):
    """Rotation is too close to the logarithm's cut locus (angle ~ pi)."""


class BehindCamera(Exception):
    """Point has non-positive depth in the camera frame."""


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula; series expansion below SMALL_ANGLE_EPS."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    K = _skew(phi)
    K2 = K @ K
    if theta < SMALL_ANGLE_EPS:
        return np.eye(3) + K + 0.5 * K2
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K2


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R. Raises AngleNearPi within 1e-6 of the cut locus."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = math.acos(cos_theta)
    if theta > math.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE_EPS:
        return w
    return (theta / math.sin(theta)) * w


def _so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    # V in exp((rho, phi)) = (exp(phi), V @ rho)
    theta = float(np.linalg.norm(phi))
    K = _skew(phi)
    K2 = K @ K
    if theta < SMALL_ANGLE_EPS:
        return np.eye(3) + 0.5 * K + K2 / 6.0
    t2 = theta * theta
    a = (1.0 - math.cos(theta)) / t2
    b = (theta - math.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * K + b * K2


def _so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = _skew(phi)
    K2 = K @ K
    if theta < SMALL_ANGLE_EPS:
        return np.eye(3) - 0.5 * K + K2 / 12.0
    half = 0.5 * theta
    cot_term = (1.0 - half / math.tan(half)) / (theta * theta)
    return np.eye(3) - 0.5 * K + cot_term * K2


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal projection of M onto SO(3)."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


@dataclass(frozen=True)
class Twist:
    """se(3) tangent coordinates: translational rho (m), rotational phi (rad)."""

    rho: np.ndarray
    phi: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @staticmethod
    def from_vector(xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64)
        return Twist(rho=xi[:3].copy(), phi=xi[3:].copy())


@dataclass(frozen=True)
class RigidTransform:
    """Camera-to-world pose: rotation 3x3, translation (3,) in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_parts(rotation: np.ndarray, translation: np.ndarray) -> "RigidTransform":
        return RigidTransform(
            np.asarray(rotation, dtype=np.float64).reshape(3, 3).copy(),
            np.asarray(translation, dtype=np.float64).reshape(3).copy(),
        )

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        # drift control for long chains of compositions
        if np.linalg.norm(R.T @ R - np.eye(3)) > ROT_DRIFT_TOL:
            R = nearest_rotation(R)
        return RigidTransform(R, t)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt.copy(), -Rt @ self.translation)

    def transform_point(self, p_local: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p_local, dtype=np.float64) + self.translation

    def rotation_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return (
            np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def flat(self) -> np.ndarray:
        """Row-major 3x4 [R | t] as a flat 12-vector (pose text format order)."""
        return np.hstack([self.rotation, self.translation.reshape(3, 1)]).ravel()

    @staticmethod
    def from_flat(values: np.ndarray) -> "RigidTransform":
        m = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return RigidTransform(m[:, :3].copy(), m[:, 3].copy())


@dataclass(frozen=True)
class PinholeCamera:
    """Rectified pinhole intrinsics. Focal lengths and principal point in px."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        """Boolean mask of pixels inside [0, width) x [0, height)."""
        p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        return (
            (p[:, 0] >= 0.0)
            & (p[:, 0] < self.width)
            & (p[:, 1] >= 0.0)
            & (p[:, 1] < self.height)
        )


def se3_exp(xi: Twist) -> RigidTransform:
    """Closed-form exponential: Rodrigues rotation plus the SE(3) V-matrix."""
    R = so3_exp(xi.phi)
    t = _so3_left_jacobian(xi.phi) @ np.asarray(xi.rho, dtype=np.float64)
    return RigidTransform(R, t)


def se3_log(T: RigidTransform) -> Twist:
    """Inverse of se3_exp. Raises AngleNearPi near the rotation cut locus."""
    phi = so3_log(T.rotation)
    rho = _so3_left_jacobian_inv(phi) @ T.translation
    return Twist(rho=rho, phi=phi)


def camera_frame_points(points: np.ndarray, T_wc: RigidTransform) -> np.ndarray:
    """World points (N,3) expressed in the camera frame: R^T (P - t)."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return (P - T_wc.translation) @ T_wc.rotation


def project_many(
    points: np.ndarray, T_wc: RigidTransform, cam: PinholeCamera
) -> tuple[np.ndarray, np.ndarray]:
    """Batched projection. Returns (pixels (N,2), depths (N,)); entries with
    depth <= BEHIND_CAMERA_EPS hold NaN pixels instead of raising."""
    pc = camera_frame_points(points, T_wc)
    z = pc[:, 2]
    ok = z > BEHIND_CAMERA_EPS
    uv = np.full((pc.shape[0], 2), np.nan)
    zz = np.where(ok, z, 1.0)
    uv[:, 0] = np.where(ok, cam.fx * pc[:, 0] / zz + cam.cx, np.nan)
    uv[:, 1] = np.where(ok, cam.fy * pc[:, 1] / zz + cam.cy, np.nan)
    return uv, z


def project(P: np.ndarray, T_wc: RigidTransform, cam: PinholeCamera) -> np.ndarray:
    """Project one world point to a pixel. Raises BehindCamera for depth <= eps."""
    pc = T_wc.rotation.T @ (np.asarray(P, dtype=np.float64) - T_wc.translation)
    if pc[2] <= BEHIND_CAMERA_EPS:
        raise BehindCamera(f"camera-frame depth {pc[2]:.3e}")
    return np.array([cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy])


def backproject_at_depth(
    p: np.ndarray, depth: float, T_wc: RigidTransform, cam: PinholeCamera
) -> np.ndarray:
    """World point on the viewing ray of pixel p at the given camera-frame depth."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    u, v = float(p[0]), float(p[1])
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return T_wc.transform_point(pc)


def reprojection_error(
    p: np.ndarray, P: np.ndarray, T_wc: RigidTransform, cam: PinholeCamera
) -> float:
    """Pixel distance between p and the projection of P; +inf if P is behind."""
    try:
        q = project(P, T_wc, cam)
    except BehindCamera:
        return math.inf
    return float(np.linalg.norm(q - np.asarray(p, dtype=np.float64)))


def pixel_ray_direction(
    p: np.ndarray, T_wc: RigidTransform, cam: PinholeCamera
) -> np.ndarray:
    """Unit world-frame direction of the viewing ray through pixel p."""
    u, v = float(p[0]), float(p[1])
    d = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d /= np.linalg.norm(d)
    return T_wc.rotation @ d


def perpendicular_foot(
    P: np.ndarray, p: np.ndarray, T_wn: RigidTransform, cam: PinholeCamera
) -> np.ndarray:
    """Foot of the perpendicular from P onto the viewing ray of pixel p.

    The ray starts at the camera center t_wn with unit direction
    v = R_wn K^-1 p~ / ||K^-1 p~||; the foot is t_wn + ((P - t_wn)^T v) v.
    """
    v = pixel_ray_direction(p, T_wn, cam)
    d = np.asarray(P, dtype=np.float64) - T_wn.translation
    return T_wn.translation + float(d @ v) * v


# -- pose text format ---------------------------------------------------------
# One pose per line: 12 whitespace-separated decimals, row-major 3x4 [R | t].
# Lines starting with '#' are comments.


def write_pose_file(path, poses) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("# row-major 3x4 [R | t], one pose per line\n")
        for T in poses:
            f.write(" ".join(repr(float(v)) for v in T.flat()) + "\n")


def read_pose_file(path) -> list[RigidTransform]:
    poses = []
    with open(path, "r", encoding="ascii") as f:
        for line_no, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 12:
                raise ValueError(f"{path}:{line_no}: expected 12 values, got {len(parts)}")
            poses.append(RigidTransform.from_flat(np.array([float(x) for x in parts])))
    return poses
