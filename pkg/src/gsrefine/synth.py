"""Seeded synthetic scenes: a toy splat world with known geometry, ground
truth renders, and controlled per-view corruptions.

Serves as the test oracle for distractor localization: corrupted regions
are known exactly, so predictor masks and recovery quality can be scored
against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .camera import CameraView, arc_trajectory
from .field import SplatField, logit
from .raster import rasterize


@dataclass
class CorruptionSpec:
    view_indices: list
    rects: list                # (x0, y0, w, h) per corrupted view
    mode: str = "recolor"      # recolor | shuffle

    def validate(self, width: int, height: int, n_views: int):
        if len(set(self.view_indices)) >= n_views and n_views > 0:
            raise ValueError("corrupted views must be a strict subset of all views")
        for x0, y0, w, h in self.rects:
            if x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
                raise ValueError(f"corruption region ({x0},{y0},{w},{h}) exceeds "
                                 f"{width}x{height} bounds")


@dataclass
class SyntheticScene:
    field: SplatField
    cams: list
    gt_frames: list
    gt_depths: list
    corrupted_frames: list
    corruption: CorruptionSpec
    corruption_masks: list = dc_field(default_factory=list)  # per-view bool maps


def make_scene_field(rng, n_splats: int = 200, background=(0.05, 0.05, 0.1)) -> SplatField:
    """Colored blobs scattered over two wall planes and a floor."""
    n_back = n_splats // 2
    n_side = n_splats // 4
    n_floor = n_splats - n_back - n_side

    mu = np.empty((n_splats, 3))
    color = np.empty((n_splats, 3))
    # back wall at z = 6
    mu[:n_back] = np.stack([rng.uniform(-3, 3, n_back), rng.uniform(-2, 2, n_back),
                            rng.normal(6.0, 0.05, n_back)], axis=1)
    color[:n_back] = rng.uniform(0.1, 1.0, (n_back, 3))
    # side wall at x = -3
    s = slice(n_back, n_back + n_side)
    mu[s] = np.stack([rng.normal(-3.0, 0.05, n_side), rng.uniform(-2, 2, n_side),
                      rng.uniform(2, 6, n_side)], axis=1)
    color[s] = rng.uniform(0.1, 1.0, (n_side, 3))
    # floor at y = 2
    s = slice(n_back + n_side, n_splats)
    mu[s] = np.stack([rng.uniform(-3, 3, n_floor), rng.normal(2.0, 0.05, n_floor),
                      rng.uniform(2, 6, n_floor)], axis=1)
    color[s] = rng.uniform(0.1, 1.0, (n_floor, 3))

    quat = rng.normal(size=(n_splats, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    log_scale = rng.uniform(np.log(0.15), np.log(0.45), (n_splats, 3))
    opacity_logit = np.full(n_splats, float(logit(0.85)))
    return SplatField(mu=mu, log_scale=log_scale, quat=quat,
                      opacity_logit=opacity_logit, color=color,
                      background=np.asarray(background, dtype=np.float64))


def default_corruption(rng, n_views: int, n_corrupted: int, width: int, height: int,
                       area_fraction: float = 0.10, mode: str = "recolor") -> CorruptionSpec:
    """Corrupt a consecutive run of non-reference views with near-identical
    rectangles of ~area_fraction pixels each.

    Real refiner artifacts are correlated across neighbouring frames, not
    independent per view, so the rectangles share one base placement with a
    small per-view jitter. A view-consistent blemish is also the harder
    case downstream: plain multi-view averaging cannot vote it away."""
    start = int(rng.integers(1, n_views - n_corrupted + 1))
    views = list(range(start, start + n_corrupted))
    w = int(round(np.sqrt(area_fraction) * width))
    h = int(round(area_fraction * width * height / max(w, 1)))
    x0 = int(rng.integers(0, width - w + 1))
    y0 = int(rng.integers(0, height - h + 1))
    rects = []
    for _ in views:
        jx = int(rng.integers(-2, 3))
        jy = int(rng.integers(-2, 3))
        rects.append((min(max(x0 + jx, 0), width - w),
                      min(max(y0 + jy, 0), height - h), w, h))
    return CorruptionSpec(view_indices=views, rects=rects, mode=mode)


def apply_corruption(frames, spec: CorruptionSpec, rng):
    """Return (corrupted copies, per-view boolean corruption masks)."""
    out = [f.copy() for f in frames]
    masks = [np.zeros(f.shape[:2], dtype=bool) for f in frames]
    tint = rng.uniform(0.0, 1.0, 3)   # one blemish color shared across views
    for vi, (x0, y0, w, h) in zip(spec.view_indices, spec.rects):
        masks[vi][y0:y0 + h, x0:x0 + w] = True
        patch = out[vi][y0:y0 + h, x0:x0 + w]
        if spec.mode == "recolor":
            out[vi][y0:y0 + h, x0:x0 + w] = 0.2 * patch + 0.8 * tint
        elif spec.mode == "shuffle":
            flat = patch.reshape(-1, 3)
            out[vi][y0:y0 + h, x0:x0 + w] = flat[rng.permutation(len(flat))].reshape(patch.shape)
        else:
            raise ValueError(f"unknown corruption mode {spec.mode!r}")
    return out, masks


def generate_scene(seed: int, n_splats: int = 200, n_views: int = 12,
                   width: int = 64, height: int = 64, n_corrupted: int = 3,
                   corruption_fraction: float = 0.10, mode: str = "recolor",
                   angle_span_deg: float = 25.0,
                   background_depth: float = 100.0) -> SyntheticScene:
    """Fully seeded scene + trajectory + ground truth + corruptions."""
    rng = np.random.default_rng((seed, 0x5C))
    gt_field = make_scene_field(rng, n_splats)
    ref_cam = CameraView(fx=0.9 * width, fy=0.9 * width,
                         cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                         width=width, height=height,
                         rotation=np.eye(3), translation=np.zeros(3))
    cams = arc_trajectory(ref_cam, n_views, target=np.array([0.0, 0.0, 4.5]),
                          angle_span_deg=angle_span_deg)

    gt_frames, gt_depths = [], []
    for c in cams:
        out = rasterize(gt_field, c, background_depth)
        gt_frames.append(out.color)
        # surface depth: remove the background contribution from the blended
        # expectation, and mark barely-covered pixels as empty so downstream
        # lifting does not place points on the background plane
        with np.errstate(invalid="ignore"):
            surf = (out.depth - (1.0 - out.alpha) * background_depth) / out.alpha
        depth = np.where(out.alpha >= 0.5, surf, np.inf)
        gt_depths.append(depth)

    if n_corrupted > 0:
        spec = default_corruption(rng, n_views, n_corrupted, width, height,
                                  corruption_fraction, mode)
        spec.validate(width, height, n_views)
        corrupted, masks = apply_corruption(gt_frames, spec, rng)
    else:
        spec = CorruptionSpec(view_indices=[], rects=[], mode=mode)
        corrupted = [f.copy() for f in gt_frames]
        masks = [np.zeros((height, width), dtype=bool) for _ in gt_frames]

    return SyntheticScene(field=gt_field, cams=cams, gt_frames=gt_frames,
                          gt_depths=gt_depths, corrupted_frames=corrupted,
                          corruption=spec, corruption_masks=masks)
