# cython: language_level=3
"""Compiled rasterization kernels.

Per-pixel front-to-back traversal of tile candidate lists. Forward pass is
parallel over tiles (disjoint output writes), backward is sequential so that
per-splat gradient accumulation order is deterministic.
"""

import numpy as np

cimport cython
cimport openmp
from cython.parallel cimport prange
from libc.math cimport exp

BACKEND = "cython"

ALPHA_CLAMP = 0.99
T_EPS = 1e-4
Q_MAX = 9.0

cdef double C_ALPHA_CLAMP = 0.99
cdef double C_T_EPS = 1e-4
cdef double C_Q_MAX = 9.0


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _forward_tile(double[:, ::1] centers, double[:, ::1] conics,
                        double[::1] depths, double[::1] opacities,
                        double[:, ::1] colors, long long[::1] items,
                        long long k0, long long k1,
                        int y0, int y1, int x0, int x1,
                        double[:, :, ::1] rgb, double[:, ::1] draw,
                        double[:, ::1] acc) noexcept nogil:
    cdef int py, px
    cdef long long k, i
    cdef double fx, fy, dx, dy, q, a, w, T
    cdef double r, g, b, d, s
    for py in range(y0, y1):
        fy = py + 0.5
        for px in range(x0, x1):
            fx = px + 0.5
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            d = 0.0
            s = 0.0
            for k in range(k0, k1):
                if T < C_T_EPS:
                    break
                i = items[k]
                dx = fx - centers[i, 0]
                dy = fy - centers[i, 1]
                q = conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * dx * dy + conics[i, 2] * dy * dy
                if q > C_Q_MAX:
                    continue
                a = opacities[i] * exp(-0.5 * q)
                if a > C_ALPHA_CLAMP:
                    a = C_ALPHA_CLAMP
                w = a * T
                r = r + w * colors[i, 0]
                g = g + w * colors[i, 1]
                b = b + w * colors[i, 2]
                d = d + w * depths[i]
                s = s + w
                T = T * (1.0 - a)
            rgb[py, px, 0] = r
            rgb[py, px, 1] = g
            rgb[py, px, 2] = b
            draw[py, px] = d
            acc[py, px] = s


@cython.boundscheck(False)
@cython.wraparound(False)
def render_forward(double[:, ::1] centers, double[:, ::1] conics,
                   double[::1] depths, double[::1] opacities,
                   double[:, ::1] colors, int[:, ::1] bboxes,
                   long long[::1] tile_offsets, long long[::1] tile_items,
                   int height, int width, int tile_size, int n_threads):
    rgb = np.zeros((height, width, 3))
    draw = np.zeros((height, width))
    acc = np.zeros((height, width))
    cdef double[:, :, ::1] rgb_v = rgb
    cdef double[:, ::1] draw_v = draw
    cdef double[:, ::1] acc_v = acc

    cdef int ntx = (width + tile_size - 1) // tile_size
    cdef int nty = (height + tile_size - 1) // tile_size
    cdef int ntiles = ntx * nty
    cdef int t, tx, ty, x0, x1, y0, y1
    cdef int nt = n_threads
    if nt <= 0:
        nt = openmp.omp_get_max_threads()

    for t in prange(ntiles, num_threads=nt, schedule="static", nogil=True):
        ty = t // ntx
        tx = t - ty * ntx
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        _forward_tile(centers, conics, depths, opacities, colors,
                      tile_items, tile_offsets[t], tile_offsets[t + 1],
                      y0, y1, x0, x1, rgb_v, draw_v, acc_v)
    return rgb, draw, acc


@cython.boundscheck(False)
@cython.wraparound(False)
def render_backward(double[:, ::1] centers, double[:, ::1] conics,
                    double[::1] depths, double[::1] opacities,
                    double[:, ::1] colors, int[:, ::1] bboxes,
                    long long[::1] tile_offsets, long long[::1] tile_items,
                    int height, int width, int tile_size,
                    double[:, :, ::1] rgb_tot, double[:, ::1] draw_tot,
                    double[:, ::1] alpha_tot,
                    double[:, :, ::1] grad_rgb, double[:, ::1] grad_draw,
                    double[:, ::1] grad_alpha):
    cdef long long n = centers.shape[0]
    g_centers = np.zeros((n, 2))
    g_conics = np.zeros((n, 3))
    g_depths = np.zeros(n)
    g_opac = np.zeros(n)
    g_colors = np.zeros((n, 3))
    cdef double[:, ::1] g_centers_v = g_centers
    cdef double[:, ::1] g_conics_v = g_conics
    cdef double[::1] g_depths_v = g_depths
    cdef double[::1] g_opac_v = g_opac
    cdef double[:, ::1] g_colors_v = g_colors

    cdef int ntx = (width + tile_size - 1) // tile_size
    cdef int nty = (height + tile_size - 1) // tile_size
    cdef int ntiles = ntx * nty
    cdef int t, tx, ty, x0, x1, y0, y1, py, px
    cdef long long k, i
    cdef double fx, fy, dx, dy, q, G, a_raw, a, w, T, one_m
    cdef double cp0, cp1, cp2, dp, ap, sc, sd, sa, dl_da, gq, gc0, gc1, gc2, gd, ga
    cdef bint clamped

    with nogil:
        for t in range(ntiles):
            ty = t // ntx
            tx = t - ty * ntx
            x0 = tx * tile_size
            y0 = ty * tile_size
            x1 = min(x0 + tile_size, width)
            y1 = min(y0 + tile_size, height)
            for py in range(y0, y1):
                fy = py + 0.5
                for px in range(x0, x1):
                    fx = px + 0.5
                    T = 1.0
                    cp0 = 0.0
                    cp1 = 0.0
                    cp2 = 0.0
                    dp = 0.0
                    ap = 0.0
                    gc0 = grad_rgb[py, px, 0]
                    gc1 = grad_rgb[py, px, 1]
                    gc2 = grad_rgb[py, px, 2]
                    gd = grad_draw[py, px]
                    ga = grad_alpha[py, px]
                    for k in range(tile_offsets[t], tile_offsets[t + 1]):
                        if T < C_T_EPS:
                            break
                        i = tile_items[k]
                        dx = fx - centers[i, 0]
                        dy = fy - centers[i, 1]
                        q = conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * dx * dy + conics[i, 2] * dy * dy
                        if q > C_Q_MAX:
                            continue
                        G = exp(-0.5 * q)
                        a_raw = opacities[i] * G
                        clamped = a_raw > C_ALPHA_CLAMP
                        a = C_ALPHA_CLAMP if clamped else a_raw
                        w = a * T
                        cp0 = cp0 + w * colors[i, 0]
                        cp1 = cp1 + w * colors[i, 1]
                        cp2 = cp2 + w * colors[i, 2]
                        dp = dp + w * depths[i]
                        ap = ap + w
                        one_m = 1.0 - a
                        sc = rgb_tot[py, px, 0] - cp0
                        dl_da = gc0 * (colors[i, 0] * T - sc / one_m)
                        sc = rgb_tot[py, px, 1] - cp1
                        dl_da = dl_da + gc1 * (colors[i, 1] * T - sc / one_m)
                        sc = rgb_tot[py, px, 2] - cp2
                        dl_da = dl_da + gc2 * (colors[i, 2] * T - sc / one_m)
                        sd = draw_tot[py, px] - dp
                        dl_da = dl_da + gd * (depths[i] * T - sd / one_m)
                        sa = alpha_tot[py, px] - ap
                        dl_da = dl_da + ga * (T - sa / one_m)

                        g_colors_v[i, 0] += gc0 * w
                        g_colors_v[i, 1] += gc1 * w
                        g_colors_v[i, 2] += gc2 * w
                        g_depths_v[i] += gd * w
                        if not clamped:
                            g_opac_v[i] += dl_da * G
                            gq = -0.5 * G * (dl_da * opacities[i])
                            g_conics_v[i, 0] += gq * dx * dx
                            g_conics_v[i, 1] += gq * 2.0 * dx * dy
                            g_conics_v[i, 2] += gq * dy * dy
                            g_centers_v[i, 0] += -2.0 * gq * (conics[i, 0] * dx + conics[i, 1] * dy)
                            g_centers_v[i, 1] += -2.0 * gq * (conics[i, 1] * dx + conics[i, 2] * dy)
                        T = T * one_m
    return g_centers, g_conics, g_depths, g_opac, g_colors
