"""Numba kernels behind :func:`splatloc.renderer.render`.

Everything here works per primitive or per pixel with scalar arithmetic, so
a primitive's projection does not depend on its position in the arrays and a
pixel's color does not depend on how pixels are split across threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

LOWPASS = 0.3
MIN_CONTRIBUTION = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4
TILE = 16


@njit(cache=True)
def preprocess(means, rots, scales, opacities, R, t, fx, fy, cx, cy, width, height, near, volume_norm):
    """Project every primitive.

    Returns ``(proj, valid)`` where ``proj[i]`` holds
    ``mx, my, conic_a, conic_b, conic_c, depth, alpha, cull_radius, reach,
    min_power``. ``reach`` is the pixel radius beyond which ``p * alpha``
    drops under the contribution cutoff; it bounds the tile binning.
    ``min_power`` is a slightly loosened ``log(1 / (255 alpha))`` so the
    rasterizer can reject a pixel before calling ``exp``.
    """
    n = means.shape[0]
    proj = np.zeros((n, 10))
    valid = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        mx, my, mz = means[i, 0], means[i, 1], means[i, 2]
        x = R[0, 0] * mx + R[0, 1] * my + R[0, 2] * mz + t[0]
        y = R[1, 0] * mx + R[1, 1] * my + R[1, 2] * mz + t[1]
        z = R[2, 0] * mx + R[2, 1] * my + R[2, 2] * mz + t[2]
        if not z > near:
            continue

        qw, qx, qy, qz = rots[i, 0], rots[i, 1], rots[i, 2], rots[i, 3]
        g = np.empty((3, 3))
        g[0, 0] = 1 - 2 * (qy * qy + qz * qz)
        g[0, 1] = 2 * (qx * qy - qw * qz)
        g[0, 2] = 2 * (qx * qz + qw * qy)
        g[1, 0] = 2 * (qx * qy + qw * qz)
        g[1, 1] = 1 - 2 * (qx * qx + qz * qz)
        g[1, 2] = 2 * (qy * qz - qw * qx)
        g[2, 0] = 2 * (qx * qz - qw * qy)
        g[2, 1] = 2 * (qy * qz + qw * qx)
        g[2, 2] = 1 - 2 * (qx * qx + qy * qy)
        # M = R_cam @ R_prim @ diag(s); camera-space covariance is M @ M.T
        m = np.empty((3, 3))
        for r in range(3):
            for c in range(3):
                m[r, c] = (R[r, 0] * g[0, c] + R[r, 1] * g[1, c] + R[r, 2] * g[2, c]) * scales[i, c]
        # rows of J @ M, J the perspective Jacobian at the camera-space mean
        iz = 1.0 / z
        u0 = fx * iz * m[0, 0] - fx * x * iz * iz * m[2, 0]
        u1 = fx * iz * m[0, 1] - fx * x * iz * iz * m[2, 1]
        u2 = fx * iz * m[0, 2] - fx * x * iz * iz * m[2, 2]
        v0 = fy * iz * m[1, 0] - fy * y * iz * iz * m[2, 0]
        v1 = fy * iz * m[1, 1] - fy * y * iz * iz * m[2, 1]
        v2 = fy * iz * m[1, 2] - fy * y * iz * iz * m[2, 2]
        a = u0 * u0 + u1 * u1 + u2 * u2 + LOWPASS
        b = u0 * v0 + u1 * v1 + u2 * v2
        c = v0 * v0 + v1 * v1 + v2 * v2 + LOWPASS
        det = a * c - b * b
        if not det > 0:
            continue

        px = fx * x * iz + cx
        py = fy * y * iz + cy
        mid = 0.5 * (a + c)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))
        sigma = math.sqrt(lam)
        cull = 3.0 * sigma
        if px + cull < 0 or px - cull > width or py + cull < 0 or py - cull > height:
            continue

        if volume_norm:
            vol = scales[i, 0] * scales[i, 1] * scales[i, 2]
            alpha = 1.0 - math.exp(-opacities[i] / vol)
        else:
            alpha = opacities[i]

        reach = -1.0
        min_power = 0.0
        if alpha * 255.0 > 1.0:
            reach = sigma * math.sqrt(2.0 * math.log(alpha * 255.0)) + 1.0
            min_power = -math.log(alpha * 255.0) - 1e-6

        proj[i, 0] = px
        proj[i, 1] = py
        proj[i, 2] = c / det
        proj[i, 3] = -b / det
        proj[i, 4] = a / det
        proj[i, 5] = z
        proj[i, 6] = alpha
        proj[i, 7] = cull
        proj[i, 8] = reach
        proj[i, 9] = min_power
        valid[i] = True
    return proj, valid


@njit(cache=True)
def _tile_span(lo, hi, limit):
    # pixel centers sit at k + 0.5
    k0 = int(math.ceil(lo - 0.5))
    k1 = int(math.floor(hi - 0.5))
    if k0 < 0:
        k0 = 0
    if k1 > limit - 1:
        k1 = limit - 1
    return k0, k1


@njit(cache=True)
def bin_tiles(proj, order, width, height):
    """CSR lists of primitive slots per tile, each list in depth order."""
    tx = (width + TILE - 1) // TILE
    ty = (height + TILE - 1) // TILE
    counts = np.zeros(tx * ty + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        r = proj[i, 8]
        if r < 0:
            continue
        x0, x1 = _tile_span(proj[i, 0] - r, proj[i, 0] + r, width)
        y0, y1 = _tile_span(proj[i, 1] - r, proj[i, 1] + r, height)
        if x0 > x1 or y0 > y1:
            continue
        for by in range(y0 // TILE, y1 // TILE + 1):
            for bx in range(x0 // TILE, x1 // TILE + 1):
                counts[by * tx + bx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    items = np.empty(offsets[-1], dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        r = proj[i, 8]
        if r < 0:
            continue
        x0, x1 = _tile_span(proj[i, 0] - r, proj[i, 0] + r, width)
        y0, y1 = _tile_span(proj[i, 1] - r, proj[i, 1] + r, height)
        if x0 > x1 or y0 > y1:
            continue
        for by in range(y0 // TILE, y1 // TILE + 1):
            for bx in range(x0 // TILE, x1 // TILE + 1):
                slot = by * tx + bx
                items[fill[slot]] = i
                fill[slot] += 1
    return offsets, items


@njit(cache=True, parallel=True, nogil=True)
def rasterize(proj, colors, offsets, items, background, width, height, out, trans, accum):
    """Composite each tile primitive-major.

    For every primitive and tile row the pixel span where ``p * alpha`` can
    reach the cutoff is solved from the conic, and only that span is
    visited. Each pixel still sees its contributions in global depth order
    with the same arithmetic as a per-pixel loop, and is frozen once its
    transmittance drops below the threshold.
    """
    tx = (width + TILE - 1) // TILE
    ntiles = tx * ((height + TILE - 1) // TILE)
    for tile in prange(ntiles):
        x0 = (tile % tx) * TILE
        y0 = (tile // tx) * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        T = np.ones((TILE, TILE))
        acc = np.zeros((TILE, TILE))
        rgb = np.zeros((TILE, TILE, 3))
        done = np.zeros((TILE, TILE), dtype=np.bool_)
        remaining = (x1 - x0) * (y1 - y0)
        for k in range(offsets[tile], offsets[tile + 1]):
            if remaining == 0:
                break
            i = items[k]
            mx = proj[i, 0]
            my = proj[i, 1]
            ca = proj[i, 2]
            cb = proj[i, 3]
            cc = proj[i, 4]
            alpha = proj[i, 6]
            min_power = proj[i, 9]
            limit = -2.0 * min_power
            for row in range(y0, y1):
                dy = row + 0.5 - my
                disc = cb * cb * dy * dy - ca * (cc * dy * dy - limit)
                if disc < 0:
                    continue
                sq = math.sqrt(disc)
                lo = mx + (-cb * dy - sq) / ca
                hi = mx + (-cb * dy + sq) / ca
                c0 = max(x0, int(math.floor(lo - 0.5)))
                c1 = min(x1 - 1, int(math.ceil(hi - 0.5)))
                ly = row - y0
                for col in range(c0, c1 + 1):
                    lx = col - x0
                    if done[ly, lx]:
                        continue
                    dx = col + 0.5 - mx
                    power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
                    if power < min_power:
                        continue
                    w = alpha * math.exp(power)
                    if w < MIN_CONTRIBUTION:
                        continue
                    t = T[ly, lx]
                    wt = w * t
                    rgb[ly, lx, 0] += colors[i, 0] * wt
                    rgb[ly, lx, 1] += colors[i, 1] * wt
                    rgb[ly, lx, 2] += colors[i, 2] * wt
                    acc[ly, lx] += wt
                    t = t * (1.0 - w)
                    T[ly, lx] = t
                    if t < MIN_TRANSMITTANCE:
                        done[ly, lx] = True
                        remaining -= 1
        for row in range(y0, y1):
            for col in range(x0, x1):
                ly = row - y0
                lx = col - x0
                t = T[ly, lx]
                for ch in range(3):
                    out[row, col, ch] = min(max(rgb[ly, lx, ch] + background[ch] * t, 0.0), 1.0)
                trans[row, col] = t
                accum[row, col] = acc[ly, lx]
