"""Self-supervised per-pixel inlier/outlier predictor.

A linear head over hand-crafted per-pixel features (a "1x1 convolution")
outputs an inlier probability map H. It is trained against residual-quantile
bounds plus prior-aware terms; the splat field is never touched by these
losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .field import sigmoid

FEATURE_DIM = 9  # rendered RGB, target RGB, per-channel |residual|
MLP_MASK_THRESHOLD = 0.5
TAU_LOW_START = 0.7
TAU_LOW_END = 0.85
TAU_HIGH = 0.95
INIT_WEIGHT_SCALE = 0.01


@dataclass
class PredictorParams:
    weights: np.ndarray  # (K,)
    bias: float

    def copy(self):
        return PredictorParams(self.weights.copy(), self.bias)


def init_predictor(seed: int, k: int = FEATURE_DIM) -> PredictorParams:
    rng = np.random.default_rng(seed)
    return PredictorParams(weights=rng.normal(0.0, INIT_WEIGHT_SCALE, k), bias=0.0)


def reset(phi: PredictorParams, seed: int) -> PredictorParams:
    """Fresh seeded re-initialization; escapes local optima between rounds."""
    return init_predictor(seed, k=len(phi.weights))


def build_features(render_rgb: np.ndarray, target_rgb: np.ndarray) -> np.ndarray:
    """(H, W, 9) feature map, each channel standardized per image."""
    feats = np.concatenate([render_rgb, target_rgb,
                            np.abs(render_rgb - target_rgb)], axis=-1)
    mean = feats.mean(axis=(0, 1), keepdims=True)
    std = feats.std(axis=(0, 1), keepdims=True)
    return (feats - mean) / np.maximum(std, 1e-8)


def residual_map(render_rgb: np.ndarray, target_rgb: np.ndarray) -> np.ndarray:
    """Per-pixel mean absolute color error."""
    return np.abs(render_rgb - target_rgb).mean(axis=-1)


def predict(features: np.ndarray, phi: PredictorParams) -> np.ndarray:
    """Per-pixel inlier probability in (0, 1)."""
    if features.shape[-1] != len(phi.weights):
        raise ValueError(f"feature dim {features.shape[-1]} does not match "
                         f"predictor dim {len(phi.weights)}")
    return sigmoid(features @ phi.weights + phi.bias)


def mlp_mask(h_map: np.ndarray) -> np.ndarray:
    """Binarized outlier mask: True where the inlier probability is low."""
    return h_map < MLP_MASK_THRESHOLD


# -- residual-quantile machinery -------------------------------------------

def quantile_threshold(values: np.ndarray, tau: float) -> float:
    """Smallest value with at least a tau fraction of the data <= it.

    Deterministic: ties resolved by the total order of sorted values.
    """
    flat = np.sort(values.reshape(-1), kind="stable")
    n = len(flat)
    k = min(n - 1, max(0, int(np.ceil(tau * n)) - 1))
    return float(flat[k])


def dilate3(mask: np.ndarray) -> np.ndarray:
    """3x3 box dilation with zero padding at the border."""
    return ndimage.maximum_filter(mask.astype(np.uint8), size=3,
                                  mode="constant", cval=0).astype(bool)


def residual_mask(residual: np.ndarray, tau: float) -> np.ndarray:
    """Flag the dilated set of pixels whose residual exceeds the tau-quantile.

    Strict inequality: a constant residual map yields an empty mask.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    rho = quantile_threshold(residual, tau)
    return dilate3(residual > rho)


def compute_bounds(residual: np.ndarray, tau_low: float, tau_high: float):
    """Per-pixel floor/ceiling maps (U, L) for the bounded supervision loss.

    U = 1 off the tau_low outlier set (confident inliers must stay high);
    L = 1 off the tau_high outlier set (only extreme residuals are forced
    low). Quantile nesting guarantees U <= L pointwise.
    """
    if not tau_low < tau_high:
        raise ValueError(f"need tau_low < tau_high, got {tau_low} >= {tau_high}")
    upper = (~residual_mask(residual, tau_low)).astype(np.float64)
    lower = (~residual_mask(residual, tau_high)).astype(np.float64)
    return upper, lower


# -- losses -----------------------------------------------------------------

def supervision_loss(h_map, upper, lower) -> float:
    """Hinge penalty for leaving the [U, L] band, averaged over pixels."""
    return float(np.mean(np.maximum(upper - h_map, 0.0)
                         + np.maximum(h_map - lower, 0.0)))


def prior_loss(h_map, m_prior) -> float:
    """Mean hinge pushing H up on prior-trusted (non-occluded) pixels."""
    return float(np.mean(np.maximum(m_prior - h_map, 0.0)))


def discard_loss(h_map, m_prior, residual_norm) -> float:
    """Negative reward for assigning low H to high-residual trusted pixels.

    residual_norm must be pre-normalized to [0, 1].
    """
    return float(-np.mean(m_prior * (1.0 - h_map) * residual_norm))


def mask_loss(h_map, upper, lower, m_prior, residual_norm,
              lambda_prior: float = 1.0, lambda_discard: float = 0.1) -> float:
    return (supervision_loss(h_map, upper, lower)
            + lambda_prior * prior_loss(h_map, m_prior)
            + lambda_discard * discard_loss(h_map, m_prior, residual_norm))


def mask_loss_gradients(features, phi: PredictorParams, upper, lower, m_prior,
                        residual_norm, lambda_prior: float = 1.0,
                        lambda_discard: float = 0.1):
    """Analytic (loss, d/dweights, d/dbias) of :func:`mask_loss`.

    Only the predictor receives gradients; the features are treated as
    constants (the splat field is detached for this loss).
    """
    h = predict(features, phi)
    n = h.size
    dl_dh = np.zeros_like(h)
    dl_dh -= (h < upper).astype(np.float64)
    dl_dh += (h > lower).astype(np.float64)
    dl_dh -= lambda_prior * ((h < m_prior) & (m_prior > 0)).astype(np.float64)
    dl_dh += lambda_discard * m_prior * residual_norm
    dl_dz = dl_dh * h * (1.0 - h) / n
    g_w = np.einsum("yx,yxk->k", dl_dz, features)
    g_b = float(dl_dz.sum())
    loss = mask_loss(h, upper, lower, m_prior, residual_norm,
                     lambda_prior, lambda_discard)
    return loss, g_w, g_b


def anneal_tau_low(iteration: int, total_iterations: int,
                   start: float = TAU_LOW_START, end: float = TAU_LOW_END) -> float:
    """Linear tightening of the supervision floor quantile over training."""
    if not 0 <= iteration <= total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {total_iterations}]")
    frac = iteration / total_iterations if total_iterations else 1.0
    return start + (end - start) * frac


# -- predictor checkpoint ----------------------------------------------------

def save_predictor(path, phi: PredictorParams) -> None:
    with open(path, "w") as f:
        f.write(" ".join(repr(float(w)) for w in phi.weights))
        f.write(f" {float(phi.bias)!r}\n")


def load_predictor(path) -> PredictorParams:
    with open(path) as f:
        vals = [float(v) for v in f.read().split()]
    if len(vals) < 2:
        raise ValueError(f"{path}: predictor checkpoint too short")
    return PredictorParams(weights=np.array(vals[:-1]), bias=vals[-1])
