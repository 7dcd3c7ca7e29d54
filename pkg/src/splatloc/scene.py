"""Explicit Gaussian scene: storage, JSON format and a synthetic generator.

A :class:`Scene` keeps its primitives as parallel numpy arrays (one row per
Gaussian) because that is what the rasterizer consumes. Individual
:class:`GaussianPrimitive` values are available by indexing.

JSON schema::

    {"background": [r, g, b],
     "primitives": [{"mean": [x, y, z], "rot": [w, x, y, z],
                     "scale": [sx, sy, sz], "opacity": o, "color": [r, g, b]}, ...]}

``opacity`` is the activated opacity in ``[0, 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError
from .pose import quat_to_rotmat

__all__ = [
    "GaussianPrimitive",
    "Scene",
    "SyntheticSpec",
    "covariance3d",
    "generate_synthetic",
    "load_scene_json",
    "save_scene_json",
    "load_scene",
]


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: tuple[float, float, float]
    rot: tuple[float, float, float, float]
    scale: tuple[float, float, float]
    opacity: float
    color: tuple[float, float, float]

    def __post_init__(self) -> None:
        rot = np.asarray(self.rot, dtype=np.float64)
        n = np.linalg.norm(rot)
        if n < 1e-12:
            raise ValueError("primitive rotation has zero norm")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "rot", tuple(float(v) for v in rot / n))
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "color", tuple(float(v) for v in self.color))
        if min(self.scale) <= 0:
            raise ValueError(f"scales must be positive, got {self.scale}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity {self.opacity} outside [0, 1]")
        if min(self.color) < 0.0 or max(self.color) > 1.0:
            raise ValueError(f"color {self.color} outside [0, 1]")


def covariance3d(g: GaussianPrimitive) -> NDArray[np.float64]:
    """``R S Sᵀ Rᵀ`` for one primitive."""
    R = quat_to_rotmat(g.rot)
    M = R * np.asarray(g.scale)  # R @ diag(s)
    return M @ M.T


class Scene:
    """Immutable set of Gaussian primitives plus a background color.

    Parameters
    ----------
    means, rots, scales, opacities, colors
        Arrays of shape ``(N, 3)``, ``(N, 4)``, ``(N, 3)``, ``(N,)`` and
        ``(N, 3)``. Rotations are normalized on construction.
    background
        RGB in ``[0, 1]``.
    """

    def __init__(
        self,
        means: ArrayLike,
        rots: ArrayLike,
        scales: ArrayLike,
        opacities: ArrayLike,
        colors: ArrayLike,
        background: ArrayLike = (0.0, 0.0, 0.0),
    ) -> None:
        means = np.array(means, dtype=np.float64).reshape(-1, 3)
        n = len(means)
        rots = np.array(rots, dtype=np.float64).reshape(n, 4)
        scales = np.array(scales, dtype=np.float64).reshape(n, 3)
        opacities = np.array(opacities, dtype=np.float64).reshape(n)
        colors = np.array(colors, dtype=np.float64).reshape(n, 3)
        background = np.array(background, dtype=np.float64).reshape(3)

        norms = np.linalg.norm(rots, axis=1)
        if n and norms.min() < 1e-12:
            raise ValueError(f"primitive {int(norms.argmin())} has a zero rotation quaternion")
        # rows already unit to within rounding are kept bit-exact so rebuilding is idempotent
        unit = np.abs(norms - 1.0) <= 8 * np.finfo(np.float64).eps
        rots = np.where(unit[:, None], rots, rots / norms[:, None]) if n else rots
        for name, arr in (("means", means), ("scales", scales), ("opacities", opacities), ("colors", colors)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contain non-finite values")
        if n and scales.min() <= 0:
            raise ValueError("scales must be positive")
        if n and (opacities.min() < 0 or opacities.max() > 1):
            raise ValueError("opacities must lie in [0, 1]")
        if n and (colors.min() < 0 or colors.max() > 1):
            raise ValueError("colors must lie in [0, 1]")
        if background.min() < 0 or background.max() > 1:
            raise ValueError("background must lie in [0, 1]")

        for arr in (means, rots, scales, opacities, colors, background):
            arr.setflags(write=False)
        self.means = means
        self.rots = rots
        self.scales = scales
        self.opacities = opacities
        self.colors = colors
        self.background = background
        self._cov: NDArray[np.float64] | None = None

    @classmethod
    def empty(cls, background: ArrayLike = (0.0, 0.0, 0.0)) -> Scene:
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), background)

    @classmethod
    def from_primitives(cls, prims: Iterable[GaussianPrimitive], background: ArrayLike = (0.0, 0.0, 0.0)) -> Scene:
        prims = list(prims)
        if not prims:
            return cls.empty(background)
        return cls(
            [p.mean for p in prims],
            [p.rot for p in prims],
            [p.scale for p in prims],
            [p.opacity for p in prims],
            [p.color for p in prims],
            background,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.means[i], self.rots[i], self.scales[i], self.opacities[i], self.colors[i])

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [self[i] for i in range(len(self))]

    @property
    def covariances(self) -> NDArray[np.float64]:
        """``(N, 3, 3)`` world-space covariances, computed once."""
        if self._cov is None:
            w, x, y, z = self.rots.T
            R = np.empty((len(self), 3, 3))
            R[:, 0, 0] = 1 - 2 * (y * y + z * z)
            R[:, 0, 1] = 2 * (x * y - w * z)
            R[:, 0, 2] = 2 * (x * z + w * y)
            R[:, 1, 0] = 2 * (x * y + w * z)
            R[:, 1, 1] = 1 - 2 * (x * x + z * z)
            R[:, 1, 2] = 2 * (y * z - w * x)
            R[:, 2, 0] = 2 * (x * z - w * y)
            R[:, 2, 1] = 2 * (y * z + w * x)
            R[:, 2, 2] = 1 - 2 * (x * x + y * y)
            M = R * self.scales[:, None, :]
            cov = M @ M.transpose(0, 2, 1)
            cov.setflags(write=False)
            self._cov = cov
        return self._cov

    def permuted(self, order: Sequence[int]) -> Scene:
        order = np.asarray(order)
        return Scene(
            self.means[order], self.rots[order], self.scales[order],
            self.opacities[order], self.colors[order], self.background,
        )

    def translated(self, offset: ArrayLike) -> Scene:
        return Scene(self.means + np.asarray(offset, dtype=np.float64), self.rots, self.scales,
                     self.opacities, self.colors, self.background)

    def with_opacities(self, opacities: ArrayLike) -> Scene:
        return Scene(self.means, self.rots, self.scales, opacities, self.colors, self.background)

    def __repr__(self) -> str:
        return f"Scene({len(self)} primitives, background={self.background.tolist()})"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for :func:`generate_synthetic`.

    Means are uniform in the cube ``[-extent, extent]^3``; scales are
    log-uniform in ``scale_range``; opacities uniform in ``opacity_range``.
    """

    count: int = 500
    extent: float = 1.0
    scale_range: tuple[float, float] = (0.01, 0.05)
    opacity_range: tuple[float, float] = (0.5, 1.0)
    seed: int = 0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if int(self.count) != self.count or self.count < 1:
            raise ConfigError(f"count must be a positive integer, got {self.count}")
        if self.extent <= 0:
            raise ConfigError(f"extent must be positive, got {self.extent}")
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise ConfigError(f"invalid scale_range {self.scale_range}")
        lo, hi = self.opacity_range
        if lo <= 0 or hi < lo or hi > 1:
            raise ConfigError(f"invalid opacity_range {self.opacity_range}")


def generate_synthetic(spec: SyntheticSpec) -> Scene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(spec.count)
    means = rng.uniform(-spec.extent, spec.extent, size=(n, 3))
    rots = rng.normal(size=(n, 4))
    rots /= np.linalg.norm(rots, axis=1, keepdims=True)
    lo, hi = np.log(spec.scale_range)
    scales = np.clip(np.exp(rng.uniform(lo, hi, size=(n, 3))), *spec.scale_range)
    opacities = rng.uniform(*spec.opacity_range, size=n)
    colors = rng.uniform(0.0, 1.0, size=(n, 3))
    return Scene(means, rots, scales, opacities, colors, spec.background)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "background": scene.background.tolist(),
        "primitives": [
            {
                "mean": scene.means[i].tolist(),
                "rot": scene.rots[i].tolist(),
                "scale": scene.scales[i].tolist(),
                "opacity": float(scene.opacities[i]),
                "color": scene.colors[i].tolist(),
            }
            for i in range(len(scene))
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    prims = data.get("primitives", [])
    background = data.get("background", [0.0, 0.0, 0.0])
    if not prims:
        return Scene.empty(background)
    try:
        return Scene(
            [p["mean"] for p in prims],
            [p["rot"] for p in prims],
            [p["scale"] for p in prims],
            [p["opacity"] for p in prims],
            [p["color"] for p in prims],
            background,
        )
    except KeyError as exc:
        raise ConfigError(f"scene primitive lacks field {exc}") from None


def save_scene_json(scene: Scene, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh)


def load_scene_json(path: str | Path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def load_scene(path: str | Path) -> Scene:
    """Load a scene by file extension (``.ply`` or ``.json``)."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        from .ply import load_ply

        return load_ply(path)
    return load_scene_json(path)
