# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled alpha-compositing kernels.

Same contract and arithmetic as ``_composite_py``; see that module for the
algorithm description.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double ALPHA_MAX = 0.999
cdef double ALPHA_CUT = 1.0 / 255.0


def composite_forward(double[:, ::1] mean2d, double[:, ::1] conic,
                      double[::1] opacity, double[:, ::1] color,
                      double[::1] depth, long[::1] order, long[:, ::1] bbox,
                      int height, int width, double[::1] background,
                      double background_depth):
    out_c_arr = np.zeros((height, width, 3))
    out_d_arr = np.zeros((height, width))
    trans_arr = np.ones((height, width))
    cdef double[:, :, ::1] out_c = out_c_arr
    cdef double[:, ::1] out_d = out_d_arr
    cdef double[:, ::1] trans = trans_arr

    cdef Py_ssize_t k, i, px, py
    cdef long x0, x1, y0, y1
    cdef double mx, my, pxx, pxy, pyy, op, ci0, ci1, ci2, di
    cdef double dx, dy, e, a, t, w

    for k in range(order.shape[0]):
        i = order[k]
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        mx = mean2d[i, 0]; my = mean2d[i, 1]
        pxx = conic[i, 0]; pxy = conic[i, 1]; pyy = conic[i, 2]
        op = opacity[i]
        ci0 = color[i, 0]; ci1 = color[i, 1]; ci2 = color[i, 2]
        di = depth[i]
        for py in range(y0, y1):
            dy = py - my
            for px in range(x0, x1):
                dx = px - mx
                e = -0.5 * (pxx * dx * dx + 2.0 * pxy * dx * dy + pyy * dy * dy)
                a = op * exp(e)
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                if a < ALPHA_CUT:
                    continue
                t = trans[py, px]
                w = a * t
                out_c[py, px, 0] += w * ci0
                out_c[py, px, 1] += w * ci1
                out_c[py, px, 2] += w * ci2
                out_d[py, px] += w * di
                trans[py, px] = t * (1.0 - a)

    cdef double b0 = background[0], b1 = background[1], b2 = background[2]
    for py in range(height):
        for px in range(width):
            t = trans[py, px]
            out_c[py, px, 0] += t * b0
            out_c[py, px, 1] += t * b1
            out_c[py, px, 2] += t * b2
            out_d[py, px] += t * background_depth
    return out_c_arr, out_d_arr, trans_arr


def composite_backward(double[:, ::1] mean2d, double[:, ::1] conic,
                       double[::1] opacity, double[:, ::1] color,
                       double[::1] depth, long[::1] order, long[:, ::1] bbox,
                       int height, int width, double[::1] background,
                       double background_depth, double[:, ::1] trans,
                       double[:, :, ::1] g_color, double[:, ::1] g_depth,
                       double[:, ::1] g_alpha):
    cdef Py_ssize_t n = mean2d.shape[0]
    g_m2_arr = np.zeros((n, 2))
    g_con_arr = np.zeros((n, 3))
    g_op_arr = np.zeros(n)
    g_c_arr = np.zeros((n, 3))
    g_d_arr = np.zeros(n)
    cdef double[:, ::1] g_m2 = g_m2_arr
    cdef double[:, ::1] g_con = g_con_arr
    cdef double[::1] g_op = g_op_arr
    cdef double[:, ::1] g_c = g_c_arr
    cdef double[::1] g_d = g_d_arr

    suffix_arr = np.empty((height, width))
    t_after_arr = np.array(trans, copy=True)
    cdef double[:, ::1] suffix = suffix_arr
    cdef double[:, ::1] t_after = t_after_arr

    cdef double b0 = background[0], b1 = background[1], b2 = background[2]
    cdef Py_ssize_t k, i, px, py
    cdef long x0, x1, y0, y1
    cdef double mx, my, pxx, pxy, pyy, op, ci0, ci1, ci2, di
    cdef double dx, dy, e, gauss, a_raw, a, t_here, w, v_i, g_a, g_gauss, vbg

    for py in range(height):
        for px in range(width):
            vbg = (g_color[py, px, 0] * b0 + g_color[py, px, 1] * b1
                   + g_color[py, px, 2] * b2 + g_depth[py, px] * background_depth)
            suffix[py, px] = trans[py, px] * vbg

    for k in range(order.shape[0] - 1, -1, -1):
        i = order[k]
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        mx = mean2d[i, 0]; my = mean2d[i, 1]
        pxx = conic[i, 0]; pxy = conic[i, 1]; pyy = conic[i, 2]
        op = opacity[i]
        ci0 = color[i, 0]; ci1 = color[i, 1]; ci2 = color[i, 2]
        di = depth[i]
        for py in range(y0, y1):
            dy = py - my
            for px in range(x0, x1):
                dx = px - mx
                e = -0.5 * (pxx * dx * dx + 2.0 * pxy * dx * dy + pyy * dy * dy)
                gauss = exp(e)
                a_raw = op * gauss
                a = a_raw if a_raw < ALPHA_MAX else ALPHA_MAX
                if a < ALPHA_CUT:
                    continue
                t_here = t_after[py, px] / (1.0 - a)
                w = a * t_here

                g_c[i, 0] += w * g_color[py, px, 0]
                g_c[i, 1] += w * g_color[py, px, 1]
                g_c[i, 2] += w * g_color[py, px, 2]
                g_d[i] += w * g_depth[py, px]

                v_i = (g_color[py, px, 0] * ci0 + g_color[py, px, 1] * ci1
                       + g_color[py, px, 2] * ci2 + g_depth[py, px] * di
                       + g_alpha[py, px])
                if a_raw < ALPHA_MAX:
                    g_a = t_here * v_i - suffix[py, px] / (1.0 - a)
                    g_op[i] += g_a * gauss
                    g_gauss = g_a * op * gauss
                    g_m2[i, 0] += g_gauss * (pxx * dx + pxy * dy)
                    g_m2[i, 1] += g_gauss * (pxy * dx + pyy * dy)
                    g_con[i, 0] += g_gauss * (-0.5 * dx * dx)
                    g_con[i, 1] += g_gauss * (-dx * dy)
                    g_con[i, 2] += g_gauss * (-0.5 * dy * dy)

                suffix[py, px] += w * v_i
                t_after[py, px] = t_here

    return g_m2_arr, g_con_arr, g_op_arr, g_c_arr, g_d_arr
