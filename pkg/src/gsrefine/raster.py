"""Differentiable splat rasterizer: projection + sorted alpha compositing.

The per-pixel compositing loops are the hot path; at import time we pick
the compiled Cython kernels when available and fall back to the NumPy
implementation otherwise. Set GSREFINE_BACKEND=python|cython to force one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _composite_py
from .field import (SplatField, ProjectedSplats, project_splats,
                    project_splats_backward, sigmoid)

_FORCED = os.environ.get("GSREFINE_BACKEND", "").lower()
if _FORCED == "python":
    _kernels = _composite_py
    BACKEND = "python"
else:
    try:
        from . import _composite_cy as _kernels  # type: ignore
        BACKEND = "cython"
    except ImportError:
        if _FORCED == "cython":
            raise
        _kernels = _composite_py
        BACKEND = "python"


def get_kernels(backend: str | None = None):
    """Kernel module for an explicit backend name (used by the benchmark)."""
    if backend in (None, BACKEND):
        return _kernels
    if backend == "python":
        return _composite_py
    if backend == "cython":
        from . import _composite_cy
        return _composite_cy
    raise ValueError(f"unknown backend {backend!r}")


DEFAULT_BACKGROUND_DEPTH = 100.0


@dataclass
class RenderOutput:
    color: np.ndarray   # (H, W, 3)
    depth: np.ndarray   # (H, W) alpha-weighted expected depth
    alpha: np.ndarray   # (H, W) accumulated opacity
    record: "ForwardRecord"


@dataclass
class ForwardRecord:
    """Everything the backward pass needs from the forward pass."""
    proj: ProjectedSplats
    order: np.ndarray
    bbox: np.ndarray
    conic: np.ndarray
    opacity: np.ndarray
    trans: np.ndarray
    cam: object
    n_splats: int
    background_depth: float


@dataclass
class FieldGradients:
    mu: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    background: np.ndarray

    @staticmethod
    def zeros(n: int) -> "FieldGradients":
        return FieldGradients(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                              np.zeros(n), np.zeros((n, 3)), np.zeros(3))

    def __iadd__(self, other):
        self.mu += other.mu
        self.log_scale += other.log_scale
        self.quat += other.quat
        self.opacity_logit += other.opacity_logit
        self.color += other.color
        self.background += other.background
        return self


def _conic_and_bbox(proj: ProjectedSplats, width: int, height: int):
    """Inverse 2D covariances plus clipped 3-sigma pixel bounding boxes."""
    cov = proj.cov2d
    a = cov[:, 0, 0]
    b = cov[:, 0, 1]
    c = cov[:, 1, 1]
    det = a * c - b * b
    det = np.maximum(det, 1e-12)
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    # largest eigenvalue of each 2x2 covariance; the box radius is chosen so
    # every excluded pixel is guaranteed below the 1/255 alpha cutoff, making
    # the truncation exact rather than approximate
    half_tr = 0.5 * (a + c)
    lam = half_tr + np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    cut_sigma = np.sqrt(2.0 * np.log(255.0))
    radius = np.ceil(cut_sigma * np.sqrt(np.maximum(lam, 0.0)))

    u, v = proj.mean2d[:, 0], proj.mean2d[:, 1]
    x0 = np.clip(np.floor(u - radius), 0, width).astype(np.int64)
    x1 = np.clip(np.floor(u + radius) + 1, 0, width).astype(np.int64)
    y0 = np.clip(np.floor(v - radius), 0, height).astype(np.int64)
    y1 = np.clip(np.floor(v + radius) + 1, 0, height).astype(np.int64)
    bbox = np.stack([x0, x1, y0, y1], axis=1)
    return conic, bbox


def rasterize(field: SplatField, cam,
              background_depth: float = DEFAULT_BACKGROUND_DEPTH) -> RenderOutput:
    """Render color, expected depth and accumulated alpha for one view."""
    proj = project_splats(field, cam)
    conic, bbox = _conic_and_bbox(proj, cam.width, cam.height)
    visible = proj.valid & (bbox[:, 0] < bbox[:, 1]) & (bbox[:, 2] < bbox[:, 3])
    idx = np.nonzero(visible)[0]
    # stable sort on depth keeps index order for exact ties
    order = idx[np.argsort(proj.depth[idx], kind="stable")]

    opacity = sigmoid(field.opacity_logit)
    color, depth, trans = _kernels.composite_forward(
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(conic),
        np.ascontiguousarray(opacity), np.ascontiguousarray(field.color),
        np.ascontiguousarray(proj.depth), np.ascontiguousarray(order),
        np.ascontiguousarray(bbox), cam.height, cam.width,
        np.ascontiguousarray(field.background), float(background_depth))

    rec = ForwardRecord(proj=proj, order=order, bbox=bbox, conic=conic,
                        opacity=opacity, trans=trans, cam=cam,
                        n_splats=len(field), background_depth=float(background_depth))
    return RenderOutput(color=color, depth=depth, alpha=1.0 - trans, record=rec)


def rasterize_backward(field: SplatField, cam, out: RenderOutput,
                       g_color=None, g_depth=None, g_alpha=None) -> FieldGradients:
    """Per-splat parameter gradients from upstream image-space gradients."""
    rec = out.record
    if rec.n_splats != len(field) or rec.cam is not cam:
        raise ValueError("forward record does not match this field/camera pair")
    h, w = cam.height, cam.width
    if g_color is None:
        g_color = np.zeros((h, w, 3))
    if g_depth is None:
        g_depth = np.zeros((h, w))
    if g_alpha is None:
        g_alpha = np.zeros((h, w))
    for name, g, shape in (("color", g_color, (h, w, 3)), ("depth", g_depth, (h, w)),
                           ("alpha", g_alpha, (h, w))):
        if g.shape != shape:
            raise ValueError(f"upstream {name} gradient has shape {g.shape}, expected {shape}")

    proj = rec.proj
    g_m2, g_con, g_op, g_c, g_d = _kernels.composite_backward(
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(rec.conic),
        np.ascontiguousarray(rec.opacity), np.ascontiguousarray(field.color),
        np.ascontiguousarray(proj.depth), np.ascontiguousarray(rec.order),
        np.ascontiguousarray(rec.bbox), h, w,
        np.ascontiguousarray(field.background), rec.background_depth,
        np.ascontiguousarray(rec.trans),
        np.ascontiguousarray(g_color), np.ascontiguousarray(g_depth),
        np.ascontiguousarray(g_alpha))

    # conic (inverse covariance) -> covariance: dP = -P dM P
    n = rec.n_splats
    gP = np.empty((n, 2, 2))
    gP[:, 0, 0] = g_con[:, 0]
    gP[:, 0, 1] = gP[:, 1, 0] = 0.5 * g_con[:, 1]
    gP[:, 1, 1] = g_con[:, 2]
    P = np.empty((n, 2, 2))
    P[:, 0, 0] = rec.conic[:, 0]
    P[:, 0, 1] = P[:, 1, 0] = rec.conic[:, 1]
    P[:, 1, 1] = rec.conic[:, 2]
    g_cov2d = -P @ gP @ P

    g_mu, g_ls, g_quat = project_splats_backward(field, cam, proj, g_m2, g_cov2d, g_d)
    g_opacity_logit = g_op * rec.opacity * (1.0 - rec.opacity)
    g_background = np.einsum("yx,yxc->c", rec.trans, g_color)
    return FieldGradients(mu=g_mu, log_scale=g_ls, quat=g_quat,
                          opacity_logit=g_opacity_logit, color=g_c,
                          background=g_background)
