"""Camera poses as unit quaternion + translation.

Conventions
-----------
* Quaternions are ``(w, x, y, z)`` Hamilton quaternions.
* A pose maps world points into the camera frame (COLMAP style)::

      p_cam = R(q) @ p_world + t

  so the camera center in world coordinates is ``-R(q).T @ t``.
* ``q`` and ``-q`` are the same rotation. Every pose is stored with
  ``w >= 0``; when ``w == 0`` the first nonzero component is made positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median_low
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError

__all__ = [
    "Pose",
    "PoseError",
    "StepLevel",
    "StepSchedule",
    "DEFAULT_SCHEDULE",
    "quat_multiply",
    "quat_conjugate",
    "quat_to_rotmat",
    "rotmat_to_quat",
    "axis_angle_quat",
    "canonicalize_quat",
    "compose",
    "inverse",
    "neighbors",
    "inject_noise",
    "pose_error",
    "median_errors",
    "look_at",
    "read_pose_file",
    "write_pose_file",
]


def quat_multiply(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product ``a ⊗ b``; ``R(a ⊗ b) = R(a) @ R(b)``."""
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: ArrayLike) -> NDArray[np.float64]:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([w, -x, -y, -z])


def canonicalize_quat(q: ArrayLike) -> NDArray[np.float64]:
    """Pick the representative of ``{q, -q}`` with ``w >= 0``."""
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q.copy()
    return q.copy()


def quat_to_rotmat(q: ArrayLike) -> NDArray[np.float64]:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(R: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`quat_to_rotmat` (Shepperd's method), canonicalized."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return canonicalize_quat(q / np.linalg.norm(q))


def axis_angle_quat(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def _frozen(a: NDArray[np.float64]) -> NDArray[np.float64]:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform.

    The quaternion is normalized and sign-canonicalized on construction, and
    both arrays are made read-only so a ``Pose`` behaves as a value.
    """

    q: NDArray[np.float64] = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.array(self.q, dtype=np.float64).reshape(4)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"quaternion {q} cannot be normalized")
        if not np.all(np.isfinite(t)):
            raise ValueError(f"translation {t} is not finite")
        # an already-unit quaternion is kept bit-exact
        if n != 1.0:
            q = q / n
        object.__setattr__(self, "q", _frozen(canonicalize_quat(q)))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @property
    def rotation(self) -> NDArray[np.float64]:
        return quat_to_rotmat(self.q)

    @property
    def center(self) -> NDArray[np.float64]:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.t

    def matrix(self) -> NDArray[np.float64]:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.t
        return m

    def as_array(self) -> NDArray[np.float64]:
        """``(qw, qx, qy, qz, tx, ty, tz)``."""
        return np.concatenate([self.q, self.t])

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.q, other.q, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.q)
        t = ", ".join(f"{v:.6g}" for v in self.t)
        return f"Pose(q=[{q}], t=[{t}])"


def compose(a: Pose, b: Pose) -> Pose:
    """Transform that applies ``b`` first, then ``a``."""
    return Pose(quat_multiply(a.q, b.q), a.rotation @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return Pose(quat_conjugate(p.q), -p.rotation.T @ p.t)


_AXES = np.eye(3)


def neighbors(p: Pose, dq: float, dt: float) -> list[Pose]:
    """The 12 single-axis lattice moves around ``p``.

    Order is fixed: translations ``+x, -x, +y, -y, +z, -z`` along the camera
    axes (``t ± dt·e_i``), then rotations in the same axis order. A rotation
    move right-multiplies ``q`` by an axis-angle quaternion of angle
    ``2·dq``, which shifts each quaternion component by about ``dq``.
    """
    if dq <= 0 or dt <= 0:
        raise ValueError("neighbor steps must be positive")
    out = []
    for axis in _AXES:
        out.append(Pose(p.q, p.t + dt * axis))
        out.append(Pose(p.q, p.t - dt * axis))
    for axis in _AXES:
        out.append(Pose(quat_multiply(p.q, axis_angle_quat(axis, 2.0 * dq)), p.t))
        out.append(Pose(quat_multiply(p.q, axis_angle_quat(axis, -2.0 * dq)), p.t))
    return out


def inject_noise(p: Pose, q_scale: float, t_scale: float, rng_seed: int) -> Pose:
    """Perturb every pose component by independent uniform noise.

    Each of the four quaternion components gets ``U(-q_scale, q_scale)`` and
    each translation component ``U(-t_scale, t_scale)``; the quaternion is
    then renormalized. The noise grid ``q2, t1`` of the evaluation protocol
    corresponds to ``q_scale=1e-2, t_scale=1e-1``.
    """
    if q_scale < 0 or t_scale < 0:
        raise ValueError("noise scales must be nonnegative")
    if q_scale == 0 and t_scale == 0:
        return p
    rng = np.random.default_rng(rng_seed)
    dq = rng.uniform(-q_scale, q_scale, size=4)
    dt = rng.uniform(-t_scale, t_scale, size=3)
    q = p.q + dq
    if np.linalg.norm(q) < 1e-12:
        return inject_noise(p, q_scale, t_scale, rng_seed + 1)
    return Pose(q, p.t + dt)


@dataclass(frozen=True)
class PoseError:
    """Translation error in scene units, rotation error in degrees."""

    translation_error: float
    rotation_error: float


def pose_error(estimate: Pose, gt: Pose) -> PoseError:
    dc = float(np.linalg.norm(estimate.center - gt.center))
    # 2*arccos(|<a, b>|) evaluated as a vector angle; exact at zero
    a = estimate.q
    b = gt.q if np.dot(estimate.q, gt.q) >= 0 else -gt.q
    half = 2.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))
    return PoseError(dc, math.degrees(2.0 * half))


def median_errors(pairs: Iterable[tuple[Pose, Pose]]) -> PoseError:
    """Componentwise median of ``pose_error(est, gt)``; lower median for even counts."""
    errs = [pose_error(est, gt) for est, gt in pairs]
    if not errs:
        raise ValueError("median of an empty pose list")
    return PoseError(
        median_low([e.translation_error for e in errs]),
        median_low([e.rotation_error for e in errs]),
    )


@dataclass(frozen=True)
class StepLevel:
    dq: float
    dt: float
    budget: int


@dataclass(frozen=True)
class StepSchedule:
    """Coarse-to-fine lattice resolutions, one search level each."""

    levels: tuple[StepLevel, ...]

    def __post_init__(self) -> None:
        levels = tuple(lv if isinstance(lv, StepLevel) else StepLevel(*lv) for lv in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ConfigError("step schedule has no levels")
        for lv in levels:
            if lv.dq <= 0 or lv.dt <= 0:
                raise ConfigError(f"nonpositive step in {lv}")
            if int(lv.budget) != lv.budget or lv.budget < 1:
                raise ConfigError(f"budget must be a positive integer in {lv}")
        for a, b in zip(levels, levels[1:]):
            if not (b.dq < a.dq and b.dt < a.dt):
                raise ConfigError("step schedule must strictly decrease in both dq and dt")

    @classmethod
    def from_list(cls, rows: Iterable[Sequence[float]]) -> StepSchedule:
        return cls(tuple(StepLevel(float(dq), float(dt), int(b)) for dq, dt, b in rows))

    def to_list(self) -> list[list[float]]:
        return [[lv.dq, lv.dt, lv.budget] for lv in self.levels]

    @property
    def total_budget(self) -> int:
        return sum(lv.budget for lv in self.levels)


DEFAULT_SCHEDULE = StepSchedule(
    (
        StepLevel(8e-3, 8e-2, 200),
        StepLevel(2e-3, 2e-2, 100),
        StepLevel(5e-4, 5e-3, 100),
    )
)


def look_at(eye: ArrayLike, target: ArrayLike = (0.0, 0.0, 0.0), up: ArrayLike = (0.0, -1.0, 0.0)) -> Pose:
    """Pose of a camera at ``eye`` looking at ``target``.

    Camera axes follow the OpenCV convention: +z forward, +x right, +y down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # rows: camera axes in world
    return Pose(rotmat_to_quat(R), -R @ eye)


def read_pose_file(path: str | Path) -> dict[str, Pose]:
    """Parse ``image_name qw qx qy qz tx ty tz`` lines; ``#`` lines are comments."""
    poses: dict[str, Pose] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            vals = [float(v) for v in parts[1:]]
            poses[parts[0]] = Pose(vals[:4], vals[4:])
    return poses


def write_pose_file(path: str | Path, poses: dict[str, Pose]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# image_name qw qx qy qz tx ty tz\n")
        for name, p in poses.items():
            vals = " ".join(repr(float(v)) for v in p.as_array())
            fh.write(f"{name} {vals}\n")
