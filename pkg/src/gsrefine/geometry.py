"""Scene initialization geometry: depth lifting, point rendering, occlusion
volume construction and the view-expansion mask logic.

Depth maps use +inf as the "nothing here" sentinel. Points carry an origin
tag so later stages can separate reference-derived content from inpainted
content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEPTH_SENTINEL = np.inf

TAG_REFERENCE = "reference"
TAG_INPAINTED = "inpainted"
_TAG_CODES = {TAG_REFERENCE: 0, TAG_INPAINTED: 1}
_TAG_NAMES = {v: k for k, v in _TAG_CODES.items()}


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    """World-space points with colors and an origin tag per point.

    tags: uint8 array, 0 = reference-derived, 1 = inpainted.
    """

    positions: np.ndarray  # (N, 3)
    colors: np.ndarray     # (N, 3) in [0, 1]
    tags: np.ndarray       # (N,) uint8

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.tags = np.asarray(self.tags, dtype=np.uint8).reshape(n)

    def __len__(self):
        return len(self.positions)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))

    def append(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(np.concatenate([self.positions, other.positions]),
                          np.concatenate([self.colors, other.colors]),
                          np.concatenate([self.tags, other.tags]))

    def validate(self):
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("point positions must be finite")
        if self.colors.min(initial=0.0) < 0.0 or self.colors.max(initial=0.0) > 1.0:
            raise GeometryError("point colors must lie in [0, 1]")


def save_pointcloud(path, pc: PointCloud) -> None:
    """One point per line: x y z r g b tag."""
    with open(path, "w") as f:
        for p, c, t in zip(pc.positions, pc.colors, pc.tags):
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                    f"{float(c[0])!r} {float(c[1])!r} {float(c[2])!r} "
                    f"{_TAG_NAMES[int(t)]}\n")


def load_pointcloud(path) -> PointCloud:
    pos, col, tags = [], [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise GeometryError(f"{path}:{ln}: expected 7 fields, got {len(parts)}")
            pos.append([float(v) for v in parts[0:3]])
            col.append([float(v) for v in parts[3:6]])
            if parts[6] not in _TAG_CODES:
                raise GeometryError(f"{path}:{ln}: unknown origin tag {parts[6]!r}")
            tags.append(_TAG_CODES[parts[6]])
    if not pos:
        return PointCloud.empty()
    return PointCloud(np.array(pos), np.array(col), np.array(tags, dtype=np.uint8))


@dataclass
class PosedRender:
    """Point-render of one view: color, depth and a hole mask."""

    color: np.ndarray     # (H, W, 3)
    depth: np.ndarray     # (H, W), DEPTH_SENTINEL where empty
    pix_mask: np.ndarray  # (H, W) bool, True = no point projects here
    point_index: np.ndarray  # (H, W) winning point index, -1 where empty


@dataclass
class UnprojectReport:
    lifted: int
    skipped_nonpositive: int


def unproject(image: np.ndarray, depth: np.ndarray, cam,
              tag: str = TAG_REFERENCE, mask: np.ndarray | None = None):
    """Lift pixels of a posed RGB-D image to a world-space point cloud.

    Pixels with non-positive or non-finite depth are skipped and counted in
    the report. `mask`, when given, restricts lifting to True pixels.
    Returns (PointCloud, UnprojectReport).
    """
    image = np.asarray(image, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if image.shape[:2] != (cam.height, cam.width) or depth.shape != (cam.height, cam.width):
        raise GeometryError(
            f"image/depth dimensions {image.shape[:2]}/{depth.shape} do not match "
            f"camera {cam.height}x{cam.width}")
    sel = np.isfinite(depth) & (depth > 0)
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    skipped = int(np.count_nonzero(~sel if mask is None else np.asarray(mask, dtype=bool) & ~sel))
    vs, us = np.nonzero(sel)
    uv = np.stack([us.astype(np.float64), vs.astype(np.float64)], axis=-1)
    pts = cam.unproject_pixels(uv, depth[vs, us])
    colors = image[vs, us]
    tags = np.full(len(pts), _TAG_CODES[tag], dtype=np.uint8)
    return PointCloud(pts, colors, tags), UnprojectReport(len(pts), skipped)


def _zbuffer(uv, z, cam):
    """Nearest-depth winner per pixel; ties broken by lowest input index.

    Returns (depth HxW, winner-index HxW with -1 for empty).
    """
    h, w = cam.height, cam.width
    depth = np.full((h, w), DEPTH_SENTINEL)
    winner = np.full((h, w), -1, dtype=np.int64)
    if len(z) == 0:
        return depth, winner
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    ok = (z > 0) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return depth, winner
    pix = v[idx] * w + u[idx]
    # sort by (pixel, depth, index); the first entry per pixel wins
    order = np.lexsort((idx, z[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = idx[order][first]
    pw = pix_sorted[first]
    depth.reshape(-1)[pw] = z[win]
    winner.reshape(-1)[pw] = win
    return depth, winner


def render_points(pc: PointCloud, cam, background=(0.0, 0.0, 0.0)) -> PosedRender:
    """Z-buffered nearest-point splatting (1-pixel footprint)."""
    uv, z = cam.project(pc.positions) if len(pc) else (np.zeros((0, 2)), np.zeros(0))
    depth, winner = _zbuffer(uv, z, cam)
    color = np.broadcast_to(np.asarray(background, dtype=np.float64),
                            (cam.height, cam.width, 3)).copy()
    hit = winner >= 0
    color[hit] = pc.colors[winner[hit]]
    return PosedRender(color=color, depth=depth, pix_mask=~hit, point_index=winner)


# -- occlusion volume -------------------------------------------------------

@dataclass
class OcclusionVolume:
    """Voxel grid marking space hidden from the reference camera."""

    origin: np.ndarray     # (3,) world position of the grid corner
    voxel_size: float
    dims: tuple            # (nx, ny, nz)
    occupancy: np.ndarray  # dims-shaped bool

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.voxel_size <= 0:
            raise GeometryError("voxel_size must be positive")
        if min(self.dims) < 1:
            raise GeometryError("volume dims must be >= 1")

    def centers(self) -> np.ndarray:
        """(N, 3) world coordinates of all voxel centers (x fastest... z-major)."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size


def pointcloud_bounds(pc: PointCloud, inflate: float = 0.2):
    """Axis-aligned box around the cloud, inflated symmetrically."""
    lo = pc.positions.min(axis=0)
    hi = pc.positions.max(axis=0)
    half = (hi - lo) / 2.0
    center = (hi + lo) / 2.0
    half = half * (1.0 + inflate) + 1e-6
    return center - half, center + half


def build_occlusion_volume(ref_depth: np.ndarray, cam_ref, bounds,
                           voxel_size: float, eps_occ: float = 0.0) -> OcclusionVolume:
    """Mark voxels hidden from the reference camera.

    A voxel is occupied iff its center projects into the reference view with
    depth greater than the observed depth by more than eps_occ, or lies
    outside the reference frustum entirely (unseen space is assumed filled).
    """
    lo, hi = np.asarray(bounds[0], dtype=np.float64), np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise GeometryError("bounds box is degenerate")
    dims = tuple(int(np.ceil((hi[i] - lo[i]) / voxel_size)) for i in range(3))
    vol = OcclusionVolume(origin=lo, voxel_size=voxel_size, dims=dims,
                          occupancy=np.zeros(dims, dtype=bool))
    centers = vol.centers()
    uv, z = cam_ref.project(centers)
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    inside = (z > 0) & (u >= 0) & (u < cam_ref.width) & (v >= 0) & (v < cam_ref.height)
    occ = ~inside
    ui = np.clip(u, 0, cam_ref.width - 1)
    vi = np.clip(v, 0, cam_ref.height - 1)
    ref_d = np.asarray(ref_depth, dtype=np.float64)[vi, ui]
    behind = inside & np.isfinite(ref_d) & (z > ref_d + eps_occ)
    occ |= behind
    vol.occupancy = occ.reshape(dims)
    return vol


def render_occlusion_depth(vol: OcclusionVolume, cam) -> np.ndarray:
    """Minimum depth of any occupied voxel center per pixel; sentinel elsewhere."""
    centers = vol.centers()[vol.occupancy.reshape(-1)]
    if len(centers) == 0:
        return np.full((cam.height, cam.width), DEPTH_SENTINEL)
    uv, z = cam.project(centers)
    depth, _ = _zbuffer(uv, z, cam)
    return depth


def occlusion_mask(pix_mask: np.ndarray, depth: np.ndarray,
                   occ_depth: np.ndarray) -> np.ndarray:
    """Inpainting mask: holes plus geometry behind the occlusion surface."""
    pix_mask = np.asarray(pix_mask, dtype=bool)
    if not (pix_mask.shape == depth.shape == occ_depth.shape):
        raise GeometryError("mask/depth map dimensions differ")
    # sentinel occ_depth compares as +inf, so the comparison is simply False
    return pix_mask | (depth > occ_depth)


def depth_consistency_add_mask(add_mask: np.ndarray, est_depth: np.ndarray,
                               cam_new, pc: PointCloud, prior_cams,
                               eps_add: float = 0.01) -> np.ndarray:
    """Keep candidate pixels whose lifted 3D point occludes nothing in any
    prior view.

    For each candidate, its point is projected into every prior camera and
    compared against the rendered depth of the existing cloud there; points
    closer than (rendered - eps_add) are rejected. Points falling outside a
    prior frustum (or onto empty pixels) pass that view.
    """
    add_mask = np.asarray(add_mask, dtype=bool)
    vs, us = np.nonzero(add_mask)
    accepted = np.zeros_like(add_mask)
    if len(vs) == 0:
        return accepted
    d = np.asarray(est_depth, dtype=np.float64)[vs, us]
    usable = np.isfinite(d) & (d > 0)
    vs, us, d = vs[usable], us[usable], d[usable]
    if len(vs) == 0:
        return accepted
    uv = np.stack([us.astype(np.float64), vs.astype(np.float64)], axis=-1)
    pts = cam_new.unproject_pixels(uv, d)
    ok = np.ones(len(pts), dtype=bool)
    for cam in prior_cams:
        rendered = render_points(pc, cam)
        puv, pz = cam.project(pts)
        u = np.rint(puv[:, 0]).astype(np.int64)
        v = np.rint(puv[:, 1]).astype(np.int64)
        inside = (pz > 0) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        ui = np.clip(u, 0, cam.width - 1)
        vi = np.clip(v, 0, cam.height - 1)
        surf = rendered.depth[vi, ui]
        occludes = inside & np.isfinite(surf) & (pz < surf - eps_add)
        ok &= ~occludes
    accepted[vs[ok], us[ok]] = True
    return accepted


# -- progressive view expansion ---------------------------------------------

class HandleError(RuntimeError):
    """An external inpainter/depth-estimator handle failed."""

    def __init__(self, message, view_index=None):
        super().__init__(message)
        self.view_index = view_index


def sort_by_offset(cams, ref_cam):
    """Order cameras by translation distance from the reference, rotation
    angle as tie-break, input index as final tie-break."""
    keys = []
    for i, c in enumerate(cams):
        dt, ang = c.offset_from(ref_cam)
        keys.append((dt, ang, i))
    return [cams[i] for _, _, i in sorted(keys)]


def progressive_view_expansion(ref_image, ref_depth, cam_ref, aux_cams,
                               trajectory_cams, inpainter, depth_estimator,
                               eps_occ=0.0, eps_add=0.01, voxel_size=None,
                               volume_resolution=128, background=(0.0, 0.0, 0.0)):
    """Grow the reference point cloud through auxiliary viewpoints.

    Auxiliary views are processed from small to large camera offset; at each
    one the current cloud is rendered, the occlusion-aware mask is inpainted
    through the external handle, depths are estimated, and only
    depth-consistent points are added (tagged as inpainted).

    Returns (PointCloud, refine_masks) with one refine mask per trajectory
    view: True where the rendered content is not reference-derived.
    """
    pc, _ = unproject(ref_image, ref_depth, cam_ref, tag=TAG_REFERENCE)
    lo, hi = pointcloud_bounds(pc)
    if voxel_size is None:
        voxel_size = float(np.max(hi - lo)) / volume_resolution
    vol = build_occlusion_volume(ref_depth, cam_ref, (lo, hi), voxel_size, eps_occ)

    aux_sorted = sort_by_offset(list(aux_cams), cam_ref)
    prior_cams = [cam_ref]
    for vi, cam in enumerate(aux_sorted):
        rendered = render_points(pc, cam, background)
        occ_depth = render_occlusion_depth(vol, cam)
        m_occ = occlusion_mask(rendered.pix_mask, rendered.depth, occ_depth)
        try:
            inpainted = inpainter.inpaint(rendered.color, m_occ, cam)
            est_depth = depth_estimator.estimate(inpainted, cam)
        except HandleError:
            raise
        except Exception as exc:  # surface the failing view
            raise HandleError(f"external handle failed at auxiliary view {vi}: {exc}",
                              view_index=vi) from exc
        inpainted = np.asarray(inpainted, dtype=np.float64)
        est_depth = np.asarray(est_depth, dtype=np.float64)
        if inpainted.shape != (cam.height, cam.width, 3) or est_depth.shape != (cam.height, cam.width):
            raise HandleError(f"handle returned wrong dimensions at auxiliary view {vi}",
                              view_index=vi)
        add = depth_consistency_add_mask(m_occ, est_depth, cam, pc, prior_cams, eps_add)
        new_pts, _ = unproject(inpainted, est_depth, cam, tag=TAG_INPAINTED, mask=add)
        pc = pc.append(new_pts)
        prior_cams.append(cam)

    refine_masks = []
    for cam in trajectory_cams:
        rendered = render_points(pc, cam, background)
        inpainted_hit = (rendered.point_index >= 0) & \
            (pc.tags[np.maximum(rendered.point_index, 0)] == _TAG_CODES[TAG_INPAINTED])
        refine_masks.append(inpainted_hit | rendered.pix_mask)
    return pc, refine_masks
