"""End-to-end pipeline stages behind the CLI subcommands.

Each stage reads only files written by the previous one, so every on-disk
format doubles as a stable interface (and is exercised as such in tests).
"""

from __future__ import annotations

import numpy as np
from pathlib import Path

from . import imgio
from .camera import load_trajectory, save_trajectory
from .config import PipelineConfig
from .density import init_field_from_points
from .field import load_field, save_field
from .geometry import (PointCloud, load_pointcloud, progressive_view_expansion,
                       render_points, save_pointcloud, unproject)
from .metrics import depth_pearson, mask_iou, psnr
from .predictor import build_features, load_predictor, mlp_mask, predict
from .raster import rasterize
from .refine import (DirectoryRefiner, OracleDepthEstimator, OracleInpainter,
                     OracleRefiner, RefineRequest, refine)
from .synth import generate_scene
from .train import TrainState, train
from .predictor import init_predictor

DEPTH_SCALE = 0.002  # 16-bit depth unit, meters


class MissingInputError(FileNotFoundError):
    category = "missing-input"


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"{what} not found: {p}")
    return p


# -- synth ------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> Path:
    """Generate a seeded synthetic dataset on disk."""
    scene = generate_scene(cfg.seed, n_splats=cfg.n_splats, n_views=cfg.n_views,
                           width=cfg.width, height=cfg.height,
                           n_corrupted=cfg.n_corrupted,
                           corruption_fraction=cfg.corruption_fraction,
                           mode=cfg.corruption_mode,
                           angle_span_deg=cfg.angle_span_deg,
                           background_depth=cfg.train.background_depth)
    d = Path(cfg.dataset_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_trajectory(d / "trajectory.txt", scene.cams)
    save_field(d / "field_gt.txt", scene.field)
    for i in range(len(scene.cams)):
        imgio.save_rgb(d / f"gt_{i:04d}.png", scene.gt_frames[i])
        imgio.save_depth(d / f"gtdepth_{i:04d}.png", scene.gt_depths[i], DEPTH_SCALE)
        imgio.save_rgb(d / f"corrupt_{i:04d}.png", scene.corrupted_frames[i])
        imgio.save_mask(d / f"cmask_{i:04d}.png", scene.corruption_masks[i])
    with open(d / "corruption.txt", "w") as f:
        f.write(f"mode {scene.corruption.mode}\n")
        for vi, (x0, y0, w, h) in zip(scene.corruption.view_indices,
                                      scene.corruption.rects):
            f.write(f"{vi} {x0} {y0} {w} {h}\n")
    return d


def load_dataset(dataset_dir):
    d = _require(dataset_dir, "dataset directory")
    cams = load_trajectory(_require(d / "trajectory.txt", "trajectory file"))
    n = len(cams)
    gt_frames = [imgio.load_rgb(d / f"gt_{i:04d}.png") for i in range(n)]
    gt_depths = [imgio.load_depth(d / f"gtdepth_{i:04d}.png", DEPTH_SCALE)
                 for i in range(n)]
    corrupt = [imgio.load_rgb(d / f"corrupt_{i:04d}.png") for i in range(n)]
    cmasks = [imgio.load_mask(d / f"cmask_{i:04d}.png") for i in range(n)]
    return cams, gt_frames, gt_depths, corrupt, cmasks


# -- init -------------------------------------------------------------------

def _aux_indices(n_views: int, n_aux: int):
    if n_aux <= 0 or n_views < 2:
        return []
    idx = np.unique(np.linspace(1, n_views - 1, min(n_aux, n_views - 1))
                    .round().astype(int))
    return idx.tolist()


def cmd_init(cfg: PipelineConfig) -> Path:
    """Build the coarse scene: lifted cloud, per-view masks and initial video."""
    cams, gt_frames, gt_depths, corrupt, _ = load_dataset(cfg.dataset_dir)
    ref_cam = cams[0]
    ref_image = gt_frames[0]          # reference view is observed, not generated
    ref_depth = gt_depths[0]

    finite = ref_depth[np.isfinite(ref_depth)]
    depth_range = float(finite.max() - finite.min()) if len(finite) else 1.0
    eps_occ = cfg.eps_occ if cfg.eps_occ > 0 else 0.01 * depth_range
    eps_add = cfg.eps_add if cfg.eps_add > 0 else 0.01 * depth_range

    aux_idx = _aux_indices(len(cams), cfg.n_aux_views)
    aux_cams = [cams[i] for i in aux_idx]
    # the oracle inpainter hallucinates from the observed (possibly corrupted)
    # frames, standing in for a diffusion inpainter with its artifacts
    inpainter = OracleInpainter(cams=cams, ground_truth=corrupt)
    depth_est = OracleDepthEstimator(cams=cams, ground_truth=gt_depths,
                                     seed=cfg.seed)

    pc, refine_masks = progressive_view_expansion(
        ref_image, ref_depth, ref_cam, aux_cams, cams, inpainter, depth_est,
        eps_occ=eps_occ, eps_add=eps_add, volume_resolution=cfg.voxel_resolution)

    out = Path(cfg.output_dir) / "init"
    out.mkdir(parents=True, exist_ok=True)
    save_pointcloud(out / "points.txt", pc)

    # occlusion volume artifacts for the per-view M^occ maps
    from .geometry import (build_occlusion_volume, occlusion_mask,
                           pointcloud_bounds, render_occlusion_depth)
    ref_pc, _ = unproject(ref_image, ref_depth, ref_cam)
    lo, hi = pointcloud_bounds(ref_pc)
    voxel_size = float(np.max(hi - lo)) / cfg.voxel_resolution
    vol = build_occlusion_volume(ref_depth, ref_cam, (lo, hi), voxel_size, eps_occ)

    renders = []
    for i, cam in enumerate(cams):
        r = render_points(pc, cam)
        renders.append(r)
        occ_depth = render_occlusion_depth(vol, cam)
        m_occ = occlusion_mask(r.pix_mask, r.depth, occ_depth)
        imgio.save_rgb(out / f"render_{i:04d}.png", r.color)
        imgio.save_depth(out / f"renderdepth_{i:04d}.png",
                         np.where(np.isfinite(r.depth), r.depth, 0.0), DEPTH_SCALE)
        imgio.save_mask(out / f"mpix_{i:04d}.png", r.pix_mask)
        imgio.save_mask(out / f"mocc_{i:04d}.png", m_occ)
        imgio.save_mask(out / f"mrefine_{i:04d}.png", refine_masks[i])

    # initial video: full generation pass conditioned on the point renders
    # (change weight 1 everywhere); generation artifacts land in the video,
    # which is exactly what the refinement loop later has to detect
    frames = [r.color for r in renders]
    full = [np.ones((cam.height, cam.width)) for cam in cams]
    depths = [np.where(np.isfinite(r.depth), r.depth, 0.0) for r in renders]
    refiner = _make_refiner(cfg, ground_truth=corrupt)
    request = RefineRequest(frames=frames, change_maps=full, depth_maps=depths,
                            text_prompt=cfg.train.text_prompt, noise_level=1.0,
                            total_steps=cfg.train.diffusion_steps)
    response = refine(request, refiner)
    for i, frame in enumerate(response.frames):
        imgio.save_rgb(out / f"init_{i:04d}.png", frame)
    return out


def _make_refiner(cfg: PipelineConfig, ground_truth):
    if cfg.exchange_dir:
        return DirectoryRefiner(cfg.exchange_dir)
    return OracleRefiner(ground_truth=ground_truth, seed=cfg.seed, noise_sigma=0.0)


# -- train ------------------------------------------------------------------

def build_train_state(cfg: PipelineConfig):
    """Assemble a TrainState from the init artifacts."""
    cams, gt_frames, gt_depths, corrupt, cmasks = load_dataset(cfg.dataset_dir)
    init_dir = _require(Path(cfg.output_dir) / "init", "init outputs")
    n = len(cams)
    pc = load_pointcloud(_require(init_dir / "points.txt", "init point cloud"))
    init_frames = [imgio.load_rgb(_require(init_dir / f"init_{i:04d}.png",
                                           "initial video frame")) for i in range(n)]
    m_refine = [imgio.load_mask(init_dir / f"mrefine_{i:04d}.png") for i in range(n)]
    m_occ = [imgio.load_mask(init_dir / f"mocc_{i:04d}.png") for i in range(n)]

    rng = np.random.default_rng((cfg.seed, 0xF1E1D))
    field = init_field_from_points(pc.positions, pc.colors,
                                   background=np.zeros(3),
                                   max_splats=cfg.max_init_splats, rng=rng)
    extent = float(np.linalg.norm(pc.positions.max(0) - pc.positions.min(0))) \
        if len(pc) else 1.0
    cfg.train.scene_extent = extent

    phi = init_predictor((cfg.seed, 0))
    eval_mask = np.any(np.stack(cmasks), axis=0) if n else None
    state = TrainState(field=field, phi=phi, cams=cams,
                       video=[f.copy() for f in init_frames],
                       init_frames=init_frames, m_refine=m_refine, m_occ=m_occ,
                       gt_frames=gt_frames, eval_mask=eval_mask)
    depth_est = OracleDepthEstimator(cams=cams, ground_truth=gt_depths,
                                     seed=cfg.seed)
    return state, depth_est, gt_frames, gt_depths, corrupt


def cmd_train(cfg: PipelineConfig) -> Path:
    state, depth_est, gt_frames, gt_depths, corrupt = build_train_state(cfg)
    refiner = _make_refiner(cfg, ground_truth=gt_frames)
    out = Path(cfg.output_dir) / "train"
    out.mkdir(parents=True, exist_ok=True)
    cfg.train.seed = cfg.seed
    state = train(state, cfg.train, refiner, depth_est, checkpoint_dir=out)

    save_field(out / "final_field.txt", state.field)
    from .predictor import save_predictor
    save_predictor(out / "final_predictor.txt", state.phi)
    (out / "metrics.csv").write_text("\n".join(state.metric_lines) + "\n")
    for i, cam in enumerate(state.cams):
        o = rasterize(state.field, cam, cfg.train.background_depth)
        imgio.save_rgb(out / f"render_{i:04d}.png", o.color)
        imgio.save_depth(out / f"depth_{i:04d}.png", o.depth, DEPTH_SCALE)
    # final predictor masks for offline evaluation
    for round_idx, masks in enumerate(state.mask_history, 1):
        for i, m in enumerate(masks):
            imgio.save_mask(out / f"mask_r{round_idx:02d}_{i:04d}.png", m)
    return out


# -- eval -------------------------------------------------------------------

def cmd_eval(cfg: PipelineConfig) -> dict:
    """Score a trained checkpoint against the dataset; returns the report."""
    cams, gt_frames, gt_depths, corrupt, cmasks = load_dataset(cfg.dataset_dir)
    train_dir = _require(Path(cfg.output_dir) / "train", "train outputs")
    field = load_field(_require(train_dir / "final_field.txt", "field checkpoint"))

    report = {"views": []}
    pearsons, psnrs, masked_psnrs = [], [], []
    corrupted_any = np.any(np.stack(cmasks), axis=0)
    for i, cam in enumerate(cams):
        o = rasterize(field, cam, cfg.train.background_depth)
        r, flag = depth_pearson(o.depth, gt_depths[i])
        full = psnr(o.color, gt_frames[i])
        masked = psnr(o.color, gt_frames[i], cmasks[i]) if cmasks[i].any() else None
        report["views"].append({"view": i, "depth_pearson": r,
                                "zero_variance": flag, "psnr": full,
                                "masked_psnr": masked})
        pearsons.append(r)
        psnrs.append(full)
        if masked is not None:
            masked_psnrs.append(masked)
    report["mean_depth_pearson"] = float(np.mean(pearsons))
    report["mean_psnr"] = float(np.mean(psnrs))
    report["mean_masked_psnr"] = float(np.mean(masked_psnrs)) if masked_psnrs else None

    # predictor-mask IoU against corruption rectangles. The first round's
    # masks are the final pre-refinement state: later rounds see a video the
    # refiner has already healed, so the flags legitimately fade there.
    rounds = sorted({p.name.split("_")[1] for p in train_dir.glob("mask_r*_*.png")})
    if rounds and any(m.any() for m in cmasks):
        tag = rounds[0]
        inter_masks = [imgio.load_mask(train_dir / f"mask_{tag}_{i:04d}.png")
                       for i in range(len(cams))]
        ious = [mask_iou(inter_masks[i], cmasks[i])
                for i in range(len(cams)) if cmasks[i].any()]
        report["mask_iou"] = float(np.mean(ious))
        report["mask_round"] = tag
    return report


def format_report(report: dict) -> str:
    lines = []
    for v in report["views"]:
        flag = " zero-variance" if v["zero_variance"] else ""
        masked = f" masked_psnr={v['masked_psnr']:.4f}" if v["masked_psnr"] is not None else ""
        lines.append(f"view {v['view']}: depth_pearson={v['depth_pearson']:.6f}"
                     f"{flag} psnr={v['psnr']:.4f}{masked}")
    lines.append(f"mean_depth_pearson = {report['mean_depth_pearson']:.6f}")
    lines.append(f"mean_psnr = {report['mean_psnr']:.4f}")
    if report.get("mean_masked_psnr") is not None:
        lines.append(f"mean_masked_psnr = {report['mean_masked_psnr']:.4f}")
    if "mask_iou" in report:
        lines.append(f"mask_iou = {report['mask_iou']:.6f} ({report['mask_round']})")
    return "\n".join(lines) + "\n"


# -- render -----------------------------------------------------------------

def cmd_render(cfg: PipelineConfig, checkpoint=None) -> Path:
    cams = load_trajectory(_require(Path(cfg.dataset_dir) / "trajectory.txt",
                                    "trajectory file"))
    ckpt = Path(checkpoint) if checkpoint else Path(cfg.output_dir) / "train" / "final_field.txt"
    field = load_field(_require(ckpt, "field checkpoint"))
    out = Path(cfg.output_dir) / "render"
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cams):
        o = rasterize(field, cam, cfg.train.background_depth)
        imgio.save_rgb(out / f"render_{i:04d}.png", o.color)
        imgio.save_depth(out / f"depth_{i:04d}.png", o.depth, DEPTH_SCALE)
    return out
