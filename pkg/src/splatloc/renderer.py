"""Software Gaussian splatting rasterizer.

Images are ``(H, W, 3)`` float64 arrays of linear RGB in ``[0, 1]``. Pixel
``(row, col)`` is sampled at its center ``(col + 0.5, row + 0.5)``.

Each primitive is projected with the affine (EWA) approximation
``Σ' = J W Σ Wᵀ Jᵀ + 0.3 I``, sorted by camera depth (ties by primitive
index) and composited front to back::

    C = Σ_i c_i p_i α_i Π_{j<i} (1 - p_j α_j) + background · Π_i (1 - p_i α_i)

Contributions with ``p·α < 1/255`` are skipped and a pixel stops
accumulating once its transmittance falls below ``1e-4``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np
from numpy.typing import NDArray

if "NUMBA_THREADING_LAYER" not in os.environ:
    try:
        from numba.np.ufunc import omppool  # noqa: F401

        # OpenMP is safe for renders issued from several Python threads
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        pass

from . import _kernels  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .pose import Pose  # noqa: E402
from .scene import GaussianPrimitive, Scene, covariance3d  # noqa: E402

__all__ = [
    "Camera",
    "ProjectedGaussian",
    "OpacityMode",
    "effective_alpha",
    "project",
    "gaussian_weight",
    "render",
    "render_with_stats",
    "set_threads",
    "LOWPASS",
    "MIN_CONTRIBUTION",
    "MIN_TRANSMITTANCE",
]

LOWPASS = _kernels.LOWPASS
MIN_CONTRIBUTION = _kernels.MIN_CONTRIBUTION
MIN_TRANSMITTANCE = _kernels.MIN_TRANSMITTANCE

OpacityMode = Literal["direct", "volume"]
_MODES = ("direct", "volume")


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics in pixels plus image size and near plane."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise ConfigError("image size must be positive integers")
        if self.near <= 0:
            raise ConfigError("near plane must be positive")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float, near: float = 0.01) -> Camera:
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, near)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, 3)

    def downscaled(self, factor: int) -> Camera:
        """Camera covering the same view at ``1/factor`` resolution."""
        if factor == 1:
            return self
        if self.width % factor or self.height % factor:
            raise ConfigError(f"image size {self.width}x{self.height} not divisible by {factor}")
        return Camera(self.fx / factor, self.fy / factor, self.cx / factor, self.cy / factor,
                      self.width // factor, self.height // factor, self.near)


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: NDArray[np.float64]
    cov2d: NDArray[np.float64]
    depth: float
    alpha: float
    color: NDArray[np.float64]


def effective_alpha(g: GaussianPrimitive, mode: OpacityMode = "direct") -> float:
    """Per-primitive opacity fed to compositing.

    ``direct`` uses the stored (activated) opacity. ``volume`` treats it as a
    density and converts with ``1 - exp(-opacity / sqrt(det Σ))``.
    """
    if mode == "direct":
        return g.opacity
    if mode == "volume":
        return 1.0 - math.exp(-g.opacity / math.sqrt(np.linalg.det(covariance3d(g))))
    raise ConfigError(f"unknown opacity mode {mode!r}")


def project(g: GaussianPrimitive, cam: Camera, pose: Pose, mode: OpacityMode = "direct") -> ProjectedGaussian | None:
    """Screen-space footprint of one primitive, or ``None`` when culled.

    Culled when the camera-space depth is not beyond ``cam.near`` or the
    projected mean lies outside the image grown by ``3σ`` (σ² the larger
    eigenvalue of the 2D covariance).
    """
    R = pose.rotation
    x, y, z = R @ np.asarray(g.mean) + pose.t
    if not z > cam.near:
        return None
    J = np.array([
        [cam.fx / z, 0.0, -cam.fx * x / z**2],
        [0.0, cam.fy / z, -cam.fy * y / z**2],
    ])
    JW = J @ R
    cov = JW @ covariance3d(g) @ JW.T + LOWPASS * np.eye(2)
    mean = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    r = 3.0 * math.sqrt(np.linalg.eigvalsh(cov)[-1])
    if mean[0] + r < 0 or mean[0] - r > cam.width or mean[1] + r < 0 or mean[1] - r > cam.height:
        return None
    return ProjectedGaussian(mean, cov, float(z), effective_alpha(g, mode), np.asarray(g.color))


def gaussian_weight(pg: ProjectedGaussian, x) -> float:
    d = np.asarray(x, dtype=np.float64) - pg.mean2d
    return float(math.exp(-0.5 * d @ np.linalg.solve(pg.cov2d, d)))


def set_threads(n: int | None = None) -> int:
    """Set the rasterizer thread count (default: ``$SPLATLOC_THREADS`` or all)."""
    if n is None:
        env = os.environ.get("SPLATLOC_THREADS")
        n = int(env) if env else numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ConfigError(f"unknown opacity mode {mode!r}")


def render_with_stats(
    scene: Scene, cam: Camera, pose: Pose, mode: OpacityMode = "direct"
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Render and also return per-pixel final transmittance and accumulated alpha."""
    _check_mode(mode)
    h, w = cam.height, cam.width
    out = np.empty((h, w, 3))
    trans = np.empty((h, w))
    accum = np.empty((h, w))
    if len(scene) == 0:
        out[:] = scene.background
        trans[:] = 1.0
        accum[:] = 0.0
        return out, trans, accum
    proj, valid = _kernels.preprocess(
        scene.means, scene.rots, scene.scales, scene.opacities,
        np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.t),
        float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy),
        w, h, float(cam.near), mode == "volume",
    )
    idx = np.flatnonzero(valid)
    # idx is ascending, so a stable sort on depth breaks ties by primitive index
    order = idx[np.argsort(proj[idx, 5], kind="stable")]
    offsets, items = _kernels.bin_tiles(proj, order, w, h)
    _kernels.rasterize(proj, scene.colors, offsets, items, scene.background, w, h, out, trans, accum)
    return out, trans, accum


def render(scene: Scene, cam: Camera, pose: Pose, mode: OpacityMode = "direct") -> NDArray[np.float64]:
    return render_with_stats(scene, cam, pose, mode)[0]
