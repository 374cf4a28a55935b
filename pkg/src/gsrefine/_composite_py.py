"""Pure-NumPy alpha-compositing kernels (fallback backend).

Splats arrive pre-projected and pre-sorted; each kernel walks them
front-to-back (forward) or back-to-front (backward) over per-splat pixel
bounding boxes, maintaining whole-image transmittance / suffix buffers.
The compiled backend in ``_composite_cy`` implements the same arithmetic
per pixel; both must agree to floating-point noise.
"""

import numpy as np

ALPHA_MAX = 0.999
ALPHA_CUT = 1.0 / 255.0


def composite_forward(mean2d, conic, opacity, color, depth, order, bbox,
                      height, width, background, background_depth):
    """Front-to-back compositing.

    Parameters are per-splat arrays over ALL splats; `order` holds the
    indices of the visible splats sorted by ascending depth. `conic` rows
    are (pxx, pxy, pyy) of the inverse 2D covariance; `bbox` rows are
    (x0, x1, y0, y1) half-open pixel ranges.

    Returns (color HxWx3, depth HxW, trans HxW) where trans is the final
    per-pixel transmittance.
    """
    out_c = np.zeros((height, width, 3))
    out_d = np.zeros((height, width))
    trans = np.ones((height, width))

    for i in order:
        x0, x1, y0, y1 = bbox[i]
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1, dtype=np.float64) - mean2d[i, 0]
        ys = np.arange(y0, y1, dtype=np.float64) - mean2d[i, 1]
        dx = xs[None, :]
        dy = ys[:, None]
        pxx, pxy, pyy = conic[i]
        e = -0.5 * (pxx * dx * dx + 2.0 * pxy * dx * dy + pyy * dy * dy)
        a = opacity[i] * np.exp(e)
        np.minimum(a, ALPHA_MAX, out=a)
        a[a < ALPHA_CUT] = 0.0
        t_patch = trans[y0:y1, x0:x1]
        w = a * t_patch
        out_c[y0:y1, x0:x1] += w[:, :, None] * color[i]
        out_d[y0:y1, x0:x1] += w * depth[i]
        trans[y0:y1, x0:x1] = t_patch * (1.0 - a)

    out_c += trans[:, :, None] * np.asarray(background)
    out_d += trans * background_depth
    return out_c, out_d, trans


def composite_backward(mean2d, conic, opacity, color, depth, order, bbox,
                       height, width, background, background_depth, trans,
                       g_color, g_depth, g_alpha):
    """Backward pass for :func:`composite_forward`.

    `trans` is the forward pass's final transmittance. Upstream gradients
    are dense images. Returns per-splat gradients
    (g_mean2d Nx2, g_conic Nx3, g_opacity N, g_splat_color Nx3, g_splat_depth N).
    """
    n = len(mean2d)
    g_m2 = np.zeros((n, 2))
    g_con = np.zeros((n, 3))
    g_op = np.zeros(n)
    g_c = np.zeros((n, 3))
    g_d = np.zeros(n)

    bg = np.asarray(background)
    # per-pixel scalar upstream for the background contribution
    v_bg = g_color @ bg + g_depth * background_depth
    suffix = trans * v_bg
    t_after = trans.copy()

    for i in order[::-1]:
        x0, x1, y0, y1 = bbox[i]
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1, dtype=np.float64) - mean2d[i, 0]
        ys = np.arange(y0, y1, dtype=np.float64) - mean2d[i, 1]
        dx = np.broadcast_to(xs[None, :], (y1 - y0, x1 - x0))
        dy = np.broadcast_to(ys[:, None], (y1 - y0, x1 - x0))
        pxx, pxy, pyy = conic[i]
        e = -0.5 * (pxx * dx * dx + 2.0 * pxy * dx * dy + pyy * dy * dy)
        gauss = np.exp(e)
        a_raw = opacity[i] * gauss
        a = np.minimum(a_raw, ALPHA_MAX)
        active = a >= ALPHA_CUT
        a_eff = np.where(active, a, 0.0)

        t_patch = t_after[y0:y1, x0:x1]
        t_here = t_patch / (1.0 - a_eff)
        w = a_eff * t_here

        gc_patch = g_color[y0:y1, x0:x1]
        gd_patch = g_depth[y0:y1, x0:x1]
        ga_patch = g_alpha[y0:y1, x0:x1]
        sfx = suffix[y0:y1, x0:x1]

        g_c[i] += np.einsum("yx,yxc->c", w, gc_patch)
        g_d[i] += float(np.sum(w * gd_patch))

        v_i = gc_patch @ color[i] + gd_patch * depth[i] + ga_patch
        g_a = np.where(active, t_here * v_i - sfx / (1.0 - a_eff), 0.0)
        # clamp subgradient: no flow where the 0.999 ceiling is active
        unclamped = active & (a_raw < ALPHA_MAX)
        g_a = np.where(unclamped, g_a, 0.0)

        g_op[i] += float(np.sum(g_a * gauss))
        g_gauss = g_a * opacity[i] * gauss  # dA/de with e the exponent
        # exponent gradients
        g_m2[i, 0] += float(np.sum(g_gauss * (pxx * dx + pxy * dy)))
        g_m2[i, 1] += float(np.sum(g_gauss * (pxy * dx + pyy * dy)))
        g_con[i, 0] += float(np.sum(g_gauss * (-0.5 * dx * dx)))
        g_con[i, 1] += float(np.sum(g_gauss * (-dx * dy)))
        g_con[i, 2] += float(np.sum(g_gauss * (-0.5 * dy * dy)))

        suffix[y0:y1, x0:x1] = sfx + w * v_i
        t_after[y0:y1, x0:x1] = t_here

    return g_m2, g_con, g_op, g_c, g_d
