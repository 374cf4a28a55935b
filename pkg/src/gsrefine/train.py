"""Outer optimization loop: composite field loss, predictor co-training,
refinement cadence, annealing and bookkeeping.

Determinism contract: given the same config, seed and oracle handles, two
runs produce byte-identical checkpoints and metric logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import predictor as pred
from .density import GradStats, density_control
from .field import SplatField, save_field
from .raster import FieldGradients, rasterize, rasterize_backward
from .refine import RefineRequest, change_map, refine


@dataclass
class TrainConfig:
    total_iterations: int = 3000
    refine_interval: int = 500
    s_start: float = 0.6
    s_end: float = 0.3
    tau_low_start: float = pred.TAU_LOW_START
    tau_low_end: float = pred.TAU_LOW_END
    tau_high: float = pred.TAU_HIGH
    lambda_prior: float = 1.0
    lambda_discard: float = 0.1
    w_max: float = 1.0
    w_mid: float = 0.6
    w_min: float = 0.15
    weight_l2: float = 1.0
    weight_l1: float = 1.0
    weight_pearson: float = 1.0
    lr_mu: float = 1.6e-4
    lr_mu_final: float = 1.6e-6
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_quat: float = 1e-3
    lr_predictor: float = 1e-2
    scene_extent: float = 1.0
    densify_interval: int = 300
    densify_start: int = 300
    densify_stop_fraction: float = 0.6
    max_splats: int = 20000
    diffusion_steps: int = 20
    text_prompt: str = ""
    background_depth: float = 100.0
    log_interval: int = 100
    predictor_enabled: bool = True  # False = plain distractor-unaware ablation
    seed: int = 0

    def validate(self):
        if self.refine_interval > self.total_iterations:
            raise ValueError("refine_interval must be <= total_iterations")
        if not (0.0 < self.s_end <= self.s_start <= 1.0):
            raise ValueError("need 0 < s_end <= s_start <= 1")


def anneal_noise_level(iteration: int, total: int, start: float, end: float) -> float:
    return start + (end - start) * (iteration / total if total else 1.0)


# -- statistics -------------------------------------------------------------

def pearson(x, y):
    """Sample Pearson correlation; (0.0, True) flags zero variance."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    a = x - x.mean()
    b = y - y.mean()
    sxx = float(a @ a)
    syy = float(b @ b)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    return float(a @ b / np.sqrt(sxx * syy)), False


def pearson_grad_x(x, y):
    """d pearson(x, y) / dx; zero when either input is degenerate."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    a = x - x.mean()
    b = y - y.mean()
    sxx = float(a @ a)
    syy = float(b @ b)
    if sxx == 0.0 or syy == 0.0:
        return np.zeros_like(x)
    sxy = float(a @ b)
    return (b - a * (sxy / sxx)) / np.sqrt(sxx * syy)


# -- composite field loss ----------------------------------------------------

def gs_loss(render, refined, initial, m_mlp, m_refine, render_depth, cond_depth,
            weight_l2: float = 1.0, weight_l1: float = 1.0,
            weight_pearson: float = 1.0, valid_depth=None):
    """Refinement-vs-preservation loss.

    L2 pulls the render toward the refined video inside the union mask, L1
    preserves the initial frames outside it, and the negative Pearson term
    couples rendered depth to the conditioned depth. All image terms are
    means over every pixel, so empty/full masks reduce to plain L1/L2.

    Returns (loss, terms, g_color, g_depth).
    """
    render = np.asarray(render, dtype=np.float64)
    union = (np.asarray(m_mlp, dtype=bool) | np.asarray(m_refine, dtype=bool))
    u3 = union[:, :, None].astype(np.float64)
    npix = render.size

    diff_ref = render - np.asarray(refined, dtype=np.float64)
    l2 = float(np.sum(u3 * diff_ref**2) / npix)
    g_color = weight_l2 * 2.0 * u3 * diff_ref / npix

    diff_init = render - np.asarray(initial, dtype=np.float64)
    l1 = float(np.sum((1.0 - u3) * np.abs(diff_init)) / npix)
    g_color += weight_l1 * (1.0 - u3) * np.sign(diff_init) / npix

    rd = np.asarray(render_depth, dtype=np.float64)
    cd = np.asarray(cond_depth, dtype=np.float64)
    if valid_depth is None:
        valid_depth = np.isfinite(rd) & np.isfinite(cd)
    vs = np.nonzero(valid_depth.reshape(-1))[0]
    g_depth = np.zeros_like(rd)
    if len(vs) >= 2:
        r, degenerate = pearson(rd.reshape(-1)[vs], cd.reshape(-1)[vs])
        if not degenerate:
            gvec = pearson_grad_x(rd.reshape(-1)[vs], cd.reshape(-1)[vs])
            g_depth.reshape(-1)[vs] = -weight_pearson * gvec
    else:
        r = 0.0
    loss = weight_l2 * l2 + weight_l1 * l1 - weight_pearson * r
    terms = {"l2": l2, "l1": l1, "pearson": r}
    return loss, terms, g_color, g_depth


# -- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, shapes: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lrs: dict):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            params[k] -= lrs[k] * mhat / (np.sqrt(vhat) + self.eps)

    def remap(self, keep_mask: np.ndarray, n_new: int):
        """Carry state across a density-control rebuild."""
        for store in (self.m, self.v):
            for k, arr in store.items():
                kept = arr[keep_mask]
                pad = np.zeros((n_new - len(kept),) + arr.shape[1:])
                store[k] = np.concatenate([kept, pad])


# -- training state ----------------------------------------------------------

@dataclass
class TrainState:
    field: SplatField
    phi: pred.PredictorParams
    cams: list
    video: list          # current per-view frames (refined as rounds pass)
    init_frames: list    # frozen coarse-initialization frames
    m_refine: list       # per-view refinement masks (bool)
    m_occ: list          # per-view occlusion masks (bool); prior = inverse
    iteration: int = 0
    metric_lines: list = dc_field(default_factory=list)
    refinement_rounds: int = 0
    phi_resets: int = 0
    mask_history: list = dc_field(default_factory=list)  # per-round M^mlp stacks
    gt_frames: list | None = None  # optional, enables masked-psnr logging
    eval_mask: np.ndarray | None = None


class RefinementFailure(RuntimeError):
    category = "refiner-failure"


def _field_params(f: SplatField) -> dict:
    return {"mu": f.mu, "log_scale": f.log_scale, "quat": f.quat,
            "opacity_logit": f.opacity_logit, "color": f.color}


def _masked_psnr(frames, gt_frames, mask) -> float:
    err = 0.0
    cnt = 0
    for f, g in zip(frames, gt_frames):
        m = mask if mask.ndim == 2 else mask
        err += float(np.sum(((f - g)[m]) ** 2))
        cnt += int(np.count_nonzero(m)) * 3
    if cnt == 0:
        return float("inf")
    mse = err / cnt
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def train(state: TrainState, config: TrainConfig, refiner, depth_estimator,
          checkpoint_dir=None) -> TrainState:
    """Run the full optimization schedule.

    Per iteration: round-robin view, rasterize, predictor step on the mask
    loss, field step on the composite loss. Every refine_interval
    iterations: render every view, build change maps from the predictor
    masks at the current noise level, invoke the refiner, swap the video in
    and reset the predictor.
    """
    config.validate()
    nviews = len(state.cams)
    total = config.total_iterations
    rng = np.random.default_rng((config.seed, 0xD5))

    opt = Adam({k: v.shape for k, v in _field_params(state.field).items()})
    phi_opt = Adam({"w": state.phi.weights.shape, "b": ()})
    stats = GradStats(len(state.field))

    # conditioned depths are a function of the current video; refresh per round
    cond_depth = [np.asarray(depth_estimator.estimate(state.video[i], state.cams[i]),
                             dtype=np.float64) for i in range(nviews)]

    if not state.metric_lines:
        state.metric_lines.append("iteration,l2,l1,pearson,mask_loss,masked_psnr")

    def log(it, terms, mask_l):
        psnr = ""
        if state.gt_frames is not None and state.eval_mask is not None:
            renders = [rasterize(state.field, c, config.background_depth).color
                       for c in state.cams]
            psnr = f"{_masked_psnr(renders, state.gt_frames, state.eval_mask):.6f}"
        state.metric_lines.append(
            f"{it},{terms['l2']:.9e},{terms['l1']:.9e},{terms['pearson']:.9f},"
            f"{mask_l:.9e},{psnr}")

    densify_stop = int(total * config.densify_stop_fraction)

    for it in range(1, total + 1):
        state.iteration = it
        v = (it - 1) % nviews
        cam = state.cams[v]
        out = rasterize(state.field, cam, config.background_depth)

        # -- predictor step (field detached) --
        feats = pred.build_features(out.color, state.video[v])
        r_raw = pred.residual_map(out.color, state.video[v])
        r_norm = r_raw / max(float(r_raw.max()), 1e-8)
        mask_l = 0.0
        if config.predictor_enabled:
            tau_low = pred.anneal_tau_low(it, total, config.tau_low_start,
                                          config.tau_low_end)
            upper, lower = pred.compute_bounds(r_raw, tau_low, config.tau_high)
            m_prior = (~state.m_occ[v]).astype(np.float64)
            mask_l, g_w, g_b = pred.mask_loss_gradients(
                feats, state.phi, upper, lower, m_prior, r_norm,
                config.lambda_prior, config.lambda_discard)
            phi_params = {"w": state.phi.weights, "b": np.array(state.phi.bias)}
            phi_opt.step(phi_params, {"w": g_w, "b": np.array(g_b)},
                         {"w": config.lr_predictor, "b": config.lr_predictor})
            state.phi.bias = float(phi_params["b"])
            m_mlp = pred.mlp_mask(pred.predict(feats, state.phi))
        else:
            m_mlp = np.zeros(r_raw.shape, dtype=bool)

        # -- field step --
        loss, terms, g_color, g_depth = gs_loss(
            out.color, state.video[v], state.init_frames[v], m_mlp,
            state.m_refine[v], out.depth, cond_depth[v],
            config.weight_l2, config.weight_l1, config.weight_pearson)
        grads = rasterize_backward(state.field, cam, out, g_color, g_depth)
        lr_mu = (config.lr_mu * (config.lr_mu_final / config.lr_mu) ** (it / total)
                 * config.scene_extent)
        opt.step(_field_params(state.field),
                 {"mu": grads.mu, "log_scale": grads.log_scale, "quat": grads.quat,
                  "opacity_logit": grads.opacity_logit, "color": grads.color},
                 {"mu": lr_mu, "log_scale": config.lr_scale, "quat": config.lr_quat,
                  "opacity_logit": config.lr_opacity, "color": config.lr_color})
        state.field.normalize_quats()
        stats.update(grads.mu)

        if (config.densify_interval > 0 and it >= config.densify_start
                and it <= densify_stop and it % config.densify_interval == 0):
            new_field, keep = density_control(state.field, stats.mean_norm(), rng,
                                              max_splats=config.max_splats)
            state.field = new_field
            opt.remap(keep, len(new_field))
            stats = GradStats(len(new_field))

        if it % config.log_interval == 0 or it == total:
            log(it, terms, mask_l)

        # -- refinement round --
        if it % config.refine_interval == 0 and it < total:
            s = anneal_noise_level(it, total, config.s_start, config.s_end)
            renders, depths, masks, changes = [], [], [], []
            for i, c in enumerate(state.cams):
                o = rasterize(state.field, c, config.background_depth)
                renders.append(o.color)
                depths.append(cond_depth[i])
                if config.predictor_enabled:
                    f_i = pred.build_features(o.color, state.video[i])
                    m_i = pred.mlp_mask(pred.predict(f_i, state.phi))
                else:
                    m_i = np.zeros(o.color.shape[:2], dtype=bool)
                masks.append(m_i)
                changes.append(change_map(m_i, state.m_refine[i], s,
                                          config.w_max, config.w_mid, config.w_min))
            state.mask_history.append(masks)
            request = RefineRequest(frames=renders, change_maps=changes,
                                    depth_maps=depths,
                                    text_prompt=config.text_prompt,
                                    noise_level=s, total_steps=config.diffusion_steps)
            try:
                response = refine(request, refiner)
            except Exception as exc:
                if checkpoint_dir is not None:
                    _checkpoint(checkpoint_dir, state, f"abort_{it:06d}")
                raise RefinementFailure(
                    f"refiner failed at iteration {it}: {exc}") from exc
            state.video = response.frames
            state.refinement_rounds += 1
            state.phi = pred.reset(state.phi, (config.seed, state.refinement_rounds))
            state.phi_resets += 1
            phi_opt = Adam({"w": state.phi.weights.shape, "b": ()})
            cond_depth = [np.asarray(depth_estimator.estimate(state.video[i],
                                                              state.cams[i]),
                                     dtype=np.float64) for i in range(nviews)]
            if checkpoint_dir is not None:
                _checkpoint(checkpoint_dir, state, f"round_{state.refinement_rounds:02d}")

    return state


def _checkpoint(checkpoint_dir, state: TrainState, tag: str) -> None:
    d = Path(checkpoint_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_field(d / f"{tag}_field.txt", state.field)
    pred.save_predictor(d / f"{tag}_predictor.txt", state.phi)
    (d / f"{tag}_metrics.csv").write_text("\n".join(state.metric_lines) + "\n")
