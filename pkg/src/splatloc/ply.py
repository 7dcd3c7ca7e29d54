"""Reader and writer for the binary PLY layout exported by 3DGS trainers.

Per vertex the standard export stores ``x y z nx ny nz f_dc_0..2
f_rest_0..44 opacity scale_0..2 rot_0..3`` as little-endian float32, with
pre-activation values: opacity is a logit, scales are logs, and color is the
DC spherical-harmonic coefficient. Higher SH bands (``f_rest_*``) are
accepted and dropped.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PlyDataError, PlyFormatError
from .scene import Scene

SH_C0 = 0.28209479177387814

REQUIRED = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

# opacities of exactly 0 or 1 have no finite logit
_OPACITY_EPS = 1e-7


def _parse_header(fh) -> tuple[str, list[tuple[str, int, list[tuple[str, str]]]]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise PlyFormatError("missing 'ply' magic line")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyFormatError("header ended before 'end_header'")
        line = raw.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyFormatError("property declared before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                if parts[1] not in _TYPES:
                    raise PlyFormatError(f"unknown property type {parts[1]!r}")
                elements[-1][2].append((parts[2], parts[1]))
    if fmt is None:
        raise PlyFormatError("missing format line")
    return fmt, elements


def _dtype(props: list[tuple[str, str]], endian: str, element: str) -> np.dtype:
    fields = []
    for name, kind in props:
        if kind == "list":
            raise PlyFormatError(f"list property {name!r} in element {element!r} is not supported")
        fields.append((name, endian + _TYPES[kind]))
    return np.dtype(fields)


def load_ply(path: str | Path, background=(0.0, 0.0, 0.0)) -> Scene:
    """Load a Gaussian splat PLY into a :class:`Scene` (activations applied)."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        if fmt == "binary_little_endian":
            endian = "<"
        elif fmt == "binary_big_endian":
            endian = ">"
        else:
            raise PlyFormatError(f"unsupported PLY format {fmt!r}; binary is required")
        payload = fh.read()

    offset = 0
    vertices = None
    for name, count, props in elements:
        dt = _dtype(props, endian, name)
        nbytes = dt.itemsize * count
        if name == "vertex":
            if len(payload) < offset + nbytes:
                raise PlyDataError(f"{path}: vertex data truncated ({len(payload) - offset} of {nbytes} bytes)")
            vertices = np.frombuffer(payload, dtype=dt, count=count, offset=offset)
            break
        offset += nbytes
    if vertices is None:
        raise PlyFormatError(f"{path}: no 'vertex' element")

    names = vertices.dtype.names or ()
    for prop in REQUIRED:
        if prop not in names:
            raise PlyFormatError(f"{path}: missing vertex property {prop!r}")

    cols = np.stack([vertices[p].astype(np.float64) for p in REQUIRED], axis=1)
    bad = ~np.isfinite(cols).all(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise PlyDataError(f"{path}: non-finite value in vertex {idx}")

    means = cols[:, 0:3]
    colors = np.clip(0.5 + SH_C0 * cols[:, 3:6], 0.0, 1.0)
    opacities = 1.0 / (1.0 + np.exp(-cols[:, 6]))
    scales = np.exp(cols[:, 7:10])
    rots = cols[:, 10:14]
    if len(rots) and np.linalg.norm(rots, axis=1).min() < 1e-12:
        idx = int(np.linalg.norm(rots, axis=1).argmin())
        raise PlyDataError(f"{path}: zero rotation quaternion in vertex {idx}")
    return Scene(means, rots, scales, opacities, colors, background)


def write_ply(scene: Scene, path: str | Path, n_rest: int = 45) -> None:
    """Write ``scene`` in the standard splat layout (normals and SH rest zeroed)."""
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(n_rest)]
    props += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    dt = np.dtype([(p, "<f4") for p in props])
    n = len(scene)
    data = np.zeros(n, dtype=dt)
    for i, axis in enumerate("xyz"):
        data[axis] = scene.means[:, i]
    for i in range(3):
        data[f"f_dc_{i}"] = (scene.colors[:, i] - 0.5) / SH_C0
        data[f"scale_{i}"] = np.log(scene.scales[:, i])
    o = np.clip(scene.opacities, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    data["opacity"] = np.log(o / (1.0 - o))
    for i in range(4):
        data[f"rot_{i}"] = scene.rots[:, i]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())
