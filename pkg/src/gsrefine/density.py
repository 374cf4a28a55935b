"""Density maintenance for the splat field: pruning plus clone/split.

Standard 3DGS housekeeping, kept deterministic: splitting draws offsets from
a generator seeded by the caller.
"""

from __future__ import annotations

import numpy as np

from .field import SplatField, logit, sigmoid

PRUNE_OPACITY = 0.005
CLONE_GRAD_THRESHOLD = 2e-4
SPLIT_SCALE_THRESHOLD = 0.05  # world-space scale above which we split, not clone
SPLIT_SCALE_SHRINK = 1.6


class GradStats:
    """Running mean of positional gradient norms between density steps."""

    def __init__(self, n: int):
        self.accum = np.zeros(n)
        self.count = np.zeros(n)

    def update(self, g_mu: np.ndarray):
        self.accum += np.linalg.norm(g_mu, axis=1)
        self.count += 1.0

    def mean_norm(self) -> np.ndarray:
        return self.accum / np.maximum(self.count, 1.0)


def density_control(field: SplatField, mean_grad_norm: np.ndarray, rng,
                    prune_opacity: float = PRUNE_OPACITY,
                    clone_threshold: float = CLONE_GRAD_THRESHOLD,
                    split_scale: float = SPLIT_SCALE_THRESHOLD,
                    max_splats: int | None = None):
    """Prune low-opacity splats, then clone small / split large splats whose
    mean positional gradient exceeds the threshold.

    Returns (new_field, keep_mask) where keep_mask maps surviving original
    splats for optimizer-state carry-over; appended splats follow in order.
    """
    opacity = sigmoid(field.opacity_logit)
    keep = opacity >= prune_opacity
    grow = keep & (mean_grad_norm > clone_threshold)
    if max_splats is not None and int(keep.sum()) >= max_splats:
        grow[:] = False

    max_scale = np.exp(field.log_scale).max(axis=1)
    clone = grow & (max_scale <= split_scale)
    split = grow & (max_scale > split_scale)

    parts = {name: [getattr(field, name)[keep]] for name in
             ("mu", "log_scale", "quat", "opacity_logit", "color")}

    if clone.any():
        for name in parts:
            parts[name].append(getattr(field, name)[clone])

    if split.any():
        # each split splat becomes two shrunken copies offset along its axes
        idx = np.nonzero(split)[0]
        scales = np.exp(field.log_scale[idx])
        offsets = rng.normal(0.0, 1.0, (len(idx), 3)) * scales
        from .field import quat_to_rot
        R = quat_to_rot(field.quat[idx] /
                        np.linalg.norm(field.quat[idx], axis=1, keepdims=True))
        world_off = np.einsum("nij,nj->ni", R, offsets)
        new_ls = field.log_scale[idx] - np.log(SPLIT_SCALE_SHRINK)
        # replace the original (already kept) with its shrunken twin in place
        for name, extra in (("mu", field.mu[idx] + world_off),
                            ("log_scale", new_ls),
                            ("quat", field.quat[idx]),
                            ("opacity_logit", field.opacity_logit[idx]),
                            ("color", field.color[idx])):
            parts[name].append(extra)
        # shrink the kept originals of split splats
        kept_pos = np.cumsum(keep) - 1
        parts["log_scale"][0] = parts["log_scale"][0].copy()
        parts["log_scale"][0][kept_pos[idx]] = new_ls

    new_field = SplatField(
        mu=np.concatenate(parts["mu"]),
        log_scale=np.concatenate(parts["log_scale"]),
        quat=np.concatenate(parts["quat"]),
        opacity_logit=np.concatenate(parts["opacity_logit"]),
        color=np.concatenate(parts["color"]),
        background=field.background.copy(),
    )
    return new_field, keep


def init_field_from_points(positions, colors, background,
                           opacity: float = 0.5, max_splats: int | None = None,
                           rng=None) -> SplatField:
    """Seed a field with one isotropic splat per point.

    Scales start at the mean nearest-neighbor distance; subsampling (when
    over max_splats) uses the provided generator.
    """
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = len(positions)
    if max_splats is not None and n > max_splats:
        sel = (rng or np.random.default_rng(0)).choice(n, size=max_splats, replace=False)
        sel.sort()
        positions, colors = positions[sel], colors[sel]
        n = max_splats

    from scipy.spatial import cKDTree
    if n > 1:
        tree = cKDTree(positions)
        dists, _ = tree.query(positions, k=2)
        nn = np.maximum(dists[:, 1], 1e-4)
    else:
        nn = np.full(n, 0.1)

    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return SplatField(
        mu=positions.copy(),
        log_scale=np.log(nn)[:, None].repeat(3, axis=1),
        quat=quat,
        opacity_logit=np.full(n, float(logit(opacity))),
        color=np.clip(colors, 1e-4, 1 - 1e-4).copy(),
        background=np.asarray(background, dtype=np.float64),
    )
