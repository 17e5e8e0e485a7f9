"""Pure-numpy rasterization kernels: the fallback backend.

Splat-major over per-splat pixel bounding boxes with a persistent per-pixel
transmittance plane. Per-pixel contribution order and arithmetic match the
compiled backend's front-to-back loop; the tile decomposition only restricts
which splats a pixel ever sees, so it is ignored here (the in-footprint test
already decides).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"

# Blending constants shared with the compiled backend (cross-checked in tests).
ALPHA_CLAMP = 0.99
T_EPS = 1e-4
Q_MAX = 9.0  # 3-sigma footprint: d^T conic d <= 9


def render_forward(centers, conics, depths, opacities, colors, bboxes,
                   tile_offsets, tile_items, height, width, tile_size, n_threads):
    H, W = height, width
    rgb = np.zeros((H, W, 3))
    depth_raw = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))
    T = np.ones((H, W))
    for i in range(centers.shape[0]):
        x0, x1, y0, y1 = bboxes[i]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = (np.arange(x0, x1) + 0.5) - centers[i, 0]
        dy = (np.arange(y0, y1) + 0.5) - centers[i, 1]
        ca, cb, cc = conics[i]
        q = ca * dx[None, :] ** 2 + 2.0 * cb * dx[None, :] * dy[:, None] + cc * dy[:, None] ** 2
        Tb = T[y0:y1, x0:x1]
        m = (q <= Q_MAX) & (Tb >= T_EPS)
        if not m.any():
            continue
        a = np.minimum(opacities[i] * np.exp(-0.5 * q), ALPHA_CLAMP)
        w = np.where(m, a * Tb, 0.0)
        rgb[y0:y1, x0:x1] += w[:, :, None] * colors[i]
        depth_raw[y0:y1, x0:x1] += w * depths[i]
        alpha_acc[y0:y1, x0:x1] += w
        T[y0:y1, x0:x1] = np.where(m, Tb * (1.0 - a), Tb)
    return rgb, depth_raw, alpha_acc


def render_backward(centers, conics, depths, opacities, colors, bboxes,
                    tile_offsets, tile_items, height, width, tile_size,
                    rgb_tot, draw_tot, alpha_tot,
                    grad_rgb, grad_draw, grad_alpha):
    n = centers.shape[0]
    g_centers = np.zeros((n, 2))
    g_conics = np.zeros((n, 3))
    g_depths = np.zeros(n)
    g_opac = np.zeros(n)
    g_colors = np.zeros((n, 3))

    H, W = height, width
    T = np.ones((H, W))
    c_pre = np.zeros((H, W, 3))
    d_pre = np.zeros((H, W))
    a_pre = np.zeros((H, W))

    for i in range(n):
        x0, x1, y0, y1 = bboxes[i]
        if x0 >= x1 or y0 >= y1:
            continue
        dx = (np.arange(x0, x1) + 0.5) - centers[i, 0]
        dy = (np.arange(y0, y1) + 0.5) - centers[i, 1]
        dX = np.broadcast_to(dx[None, :], (y1 - y0, x1 - x0))
        dY = np.broadcast_to(dy[:, None], (y1 - y0, x1 - x0))
        ca, cb, cc = conics[i]
        q = ca * dX**2 + 2.0 * cb * dX * dY + cc * dY**2
        Tb = T[y0:y1, x0:x1]
        m = (q <= Q_MAX) & (Tb >= T_EPS)
        if not m.any():
            continue
        G = np.exp(-0.5 * q)
        a_raw = opacities[i] * G
        clamped = a_raw > ALPHA_CLAMP
        a = np.where(clamped, ALPHA_CLAMP, a_raw)
        w = np.where(m, a * Tb, 0.0)

        cp = c_pre[y0:y1, x0:x1]
        dp = d_pre[y0:y1, x0:x1]
        ap = a_pre[y0:y1, x0:x1]
        cp += w[:, :, None] * colors[i]
        dp += w * depths[i]
        ap += w

        one_m = 1.0 - a
        gC = grad_rgb[y0:y1, x0:x1]
        gD = grad_draw[y0:y1, x0:x1]
        gA = grad_alpha[y0:y1, x0:x1]
        s_c = rgb_tot[y0:y1, x0:x1] - cp
        s_d = draw_tot[y0:y1, x0:x1] - dp
        s_a = alpha_tot[y0:y1, x0:x1] - ap

        dL_da = np.sum(gC * (colors[i][None, None, :] * Tb[:, :, None] - s_c / one_m[:, :, None]), axis=2)
        dL_da += gD * (depths[i] * Tb - s_d / one_m)
        dL_da += gA * (Tb - s_a / one_m)

        g_colors[i] = np.sum(np.where(m[:, :, None], gC * w[:, :, None], 0.0), axis=(0, 1))
        g_depths[i] = np.sum(np.where(m, gD * w, 0.0))

        live = m & ~clamped
        dL_da = np.where(live, dL_da, 0.0)
        g_opac[i] = np.sum(dL_da * G)
        gq = -0.5 * G * (dL_da * opacities[i])
        g_conics[i, 0] = np.sum(gq * dX**2)
        g_conics[i, 1] = np.sum(gq * 2.0 * dX * dY)
        g_conics[i, 2] = np.sum(gq * dY**2)
        g_centers[i, 0] = np.sum(-2.0 * gq * (ca * dX + cb * dY))
        g_centers[i, 1] = np.sum(-2.0 * gq * (cb * dX + cc * dY))

        T[y0:y1, x0:x1] = np.where(m, Tb * one_m, Tb)

    return g_centers, g_conics, g_depths, g_opac, g_colors
