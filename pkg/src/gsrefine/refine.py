"""Refinement scheduling: change maps, the latent-substitution rule, and the
external refiner contract.

The generative refiner lives outside this package; we speak to it either
through an in-process handle (the deterministic oracle used in tests) or
through a directory-based file exchange. Frames stand in for latents
one-to-one (identity codec), so every scheduling decision operates directly
in pixel space.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import imgio

W_MAX_DEFAULT = 1.0
W_MID_DEFAULT = 0.6
W_MIN_DEFAULT = 0.15
ORACLE_NOISE_SIGMA = 0.02  # scaled by the local change weight
PROTOCOL_TIMEOUT_DEFAULT = 600.0


class RefinerProtocolError(RuntimeError):
    """Malformed request/response or broken file exchange."""

    category = "refiner-protocol-error"


class RefinerTimeoutError(RefinerProtocolError):
    category = "refiner-timeout"


def change_map(m_mlp: np.ndarray, m_refine: np.ndarray, s: float,
               w_max: float = W_MAX_DEFAULT, w_mid: float = W_MID_DEFAULT,
               w_min: float = W_MIN_DEFAULT) -> np.ndarray:
    """Three-tier per-pixel change weights, scaled by the noise level s.

    Maximal change where the predictor flags inconsistency, intermediate
    change for generated-but-consistent content, minimal change for
    validated visible areas.
    """
    m_mlp = np.asarray(m_mlp, dtype=bool)
    m_refine = np.asarray(m_refine, dtype=bool)
    if m_mlp.shape != m_refine.shape:
        raise ValueError("mask dimensions differ")
    w = np.full(m_mlp.shape, w_min * s)
    w[~m_mlp & m_refine] = w_mid * s
    w[m_mlp] = w_max * s
    return w


def should_substitute(t: int, total_steps: int, w) -> bool:
    """Latent substitution test: overwrite the evolving estimate with the
    noised original at timestep t iff (T - t)/T < 1 - w.

    Evaluated in exact rational arithmetic so threshold cases are stable.
    """
    if not 0 <= t <= total_steps:
        raise ValueError(f"timestep {t} outside [0, {total_steps}]")
    w_frac = Fraction(*float(w).as_integer_ratio())
    return Fraction(total_steps - t, total_steps) < 1 - w_frac


@dataclass
class RefineRequest:
    frames: list          # F arrays (H, W, 3) in [0, 1]
    change_maps: list     # F arrays (H, W) in [0, 1]
    depth_maps: list      # F arrays (H, W), meters
    text_prompt: str = ""
    noise_level: float = 0.5
    total_steps: int = 20

    def __post_init__(self):
        if not (0.0 <= self.noise_level <= 1.0):
            raise ValueError(f"noise level {self.noise_level} outside [0, 1]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not (len(self.frames) == len(self.change_maps) == len(self.depth_maps)):
            raise ValueError("frame/change/depth counts differ")
        shape = np.shape(self.frames[0])[:2] if self.frames else None
        for i, (f, c, d) in enumerate(zip(self.frames, self.change_maps, self.depth_maps)):
            if np.shape(f)[:2] != shape or np.shape(c) != shape or np.shape(d) != shape:
                raise ValueError(f"inconsistent dimensions at frame {i}")


@dataclass
class RefineResponse:
    frames: list


def refine(request: RefineRequest, refiner) -> RefineResponse:
    """Forward a request to a refiner handle and validate the response.

    The request is never mutated; response frames are range-clamped to
    [0, 1]. Dimension or count mismatches raise RefinerProtocolError and no
    partial result escapes.
    """
    response = refiner(request)
    frames = response.frames if isinstance(response, RefineResponse) else response
    if len(frames) != len(request.frames):
        raise RefinerProtocolError(
            f"refiner returned {len(frames)} frames, expected {len(request.frames)}")
    out = []
    for i, f in enumerate(frames):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != np.shape(request.frames[i]):
            raise RefinerProtocolError(
                f"frame {i}: refiner returned shape {f.shape}, "
                f"expected {np.shape(request.frames[i])}")
        out.append(np.clip(f, 0.0, 1.0))
    return RefineResponse(frames=out)


# -- deterministic oracle ----------------------------------------------------

@dataclass
class OracleRefiner:
    """Test double for the generative refiner.

    Blends each frame toward its ground truth by the local change weight and
    adds seeded noise proportional to it:
    out = w * gt + (1 - w) * in + eta, eta ~ N(0, (sigma * w)^2).
    """

    ground_truth: list
    seed: int = 0
    noise_sigma: float = ORACLE_NOISE_SIGMA
    calls: int = field(default=0)

    def __call__(self, request: RefineRequest) -> RefineResponse:
        if len(self.ground_truth) != len(request.frames):
            raise RefinerProtocolError(
                f"oracle holds {len(self.ground_truth)} ground-truth frames, "
                f"request has {len(request.frames)}")
        rng = np.random.default_rng((self.seed, self.calls))
        self.calls += 1
        out = []
        for frame, w, gt in zip(request.frames, request.change_maps, self.ground_truth):
            w3 = np.asarray(w)[:, :, None]
            blended = w3 * gt + (1.0 - w3) * frame
            if self.noise_sigma > 0:
                blended = blended + rng.normal(0.0, 1.0, blended.shape) * (self.noise_sigma * w3)
            out.append(np.clip(blended, 0.0, 1.0))
        return RefineResponse(frames=out)


def _camera_index(cams, cam):
    for i, c in enumerate(cams):
        if c is cam:
            return i
    raise KeyError("camera not registered with this oracle")


@dataclass
class OracleDepthEstimator:
    """Depth-estimator stand-in returning ground-truth depth plus seeded noise."""

    cams: list
    ground_truth: list    # per-camera depth maps
    seed: int = 0
    noise_sigma: float = 0.0

    def estimate(self, image, cam):
        i = _camera_index(self.cams, cam)
        d = np.array(self.ground_truth[i], dtype=np.float64)
        if self.noise_sigma > 0:
            rng = np.random.default_rng((self.seed, i))
            d = d + rng.normal(0.0, self.noise_sigma, d.shape)
        return d


@dataclass
class OracleInpainter:
    """Inpainter stand-in: pastes ground-truth pixels into the masked region."""

    cams: list
    ground_truth: list    # per-camera RGB images

    def inpaint(self, image, mask, cam):
        gt = np.asarray(self.ground_truth[_camera_index(self.cams, cam)], dtype=np.float64)
        out = np.array(image, dtype=np.float64)
        m = np.asarray(mask, dtype=bool)
        out[m] = gt[m]
        return out


# -- directory-based wire protocol ------------------------------------------
# The engine writes request.json, frame_####.png, change_####.png (8-bit),
# depth_####.png (16-bit) and then the sentinel request.ready. The refiner
# answers with refined_####.png and the sentinel response.ready.

REQUEST_MANIFEST = "request.json"
REQUEST_SENTINEL = "request.ready"
RESPONSE_SENTINEL = "response.ready"


def write_request(exchange_dir, request: RefineRequest,
                  depth_scale: float = imgio.DEPTH_SCALE_DEFAULT) -> None:
    d = Path(exchange_dir)
    d.mkdir(parents=True, exist_ok=True)
    n = len(request.frames)
    h, w = np.shape(request.frames[0])[:2] if n else (0, 0)
    manifest = {
        "text_prompt": request.text_prompt,
        "noise_level": request.noise_level,
        "total_steps": request.total_steps,
        "frame_count": n,
        "width": int(w),
        "height": int(h),
        "depth_scale": depth_scale,
        "frame_files": [f"frame_{i:04d}.png" for i in range(n)],
        "change_files": [f"change_{i:04d}.png" for i in range(n)],
        "depth_files": [f"depth_{i:04d}.png" for i in range(n)],
        "response_files": [f"refined_{i:04d}.png" for i in range(n)],
    }
    for i in range(n):
        imgio.save_rgb(d / manifest["frame_files"][i], request.frames[i])
        imgio.save_mask(d / manifest["change_files"][i], request.change_maps[i])
        imgio.save_depth(d / manifest["depth_files"][i], request.depth_maps[i], depth_scale)
    (d / REQUEST_MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (d / REQUEST_SENTINEL).write_text("")


def read_request(exchange_dir):
    """Refiner-side loader; returns (manifest, frames, change_maps, depth_maps)."""
    d = Path(exchange_dir)
    manifest = json.loads((d / REQUEST_MANIFEST).read_text())
    frames = [imgio.load_rgb(d / f) for f in manifest["frame_files"]]
    changes = [imgio.load_mask(d / f, binary=False) for f in manifest["change_files"]]
    depths = [imgio.load_depth(d / f, manifest["depth_scale"]) for f in manifest["depth_files"]]
    return manifest, frames, changes, depths


def write_response(exchange_dir, frames) -> None:
    d = Path(exchange_dir)
    for i, f in enumerate(frames):
        imgio.save_rgb(d / f"refined_{i:04d}.png", f)
    (d / RESPONSE_SENTINEL).write_text("")


@dataclass
class DirectoryRefiner:
    """Client side of the file exchange; blocks until response.ready appears."""

    exchange_dir: str
    timeout: float = PROTOCOL_TIMEOUT_DEFAULT
    poll_interval: float = 0.05

    def __call__(self, request: RefineRequest) -> RefineResponse:
        d = Path(self.exchange_dir)
        for leftover in (REQUEST_SENTINEL, RESPONSE_SENTINEL):
            p = d / leftover
            if p.exists():
                p.unlink()
        write_request(d, request)
        deadline = time.monotonic() + self.timeout
        while not (d / RESPONSE_SENTINEL).exists():
            if time.monotonic() > deadline:
                raise RefinerTimeoutError(
                    f"refiner did not answer within {self.timeout}s in {d}")
            time.sleep(self.poll_interval)
        frames = []
        for i in range(len(request.frames)):
            p = d / f"refined_{i:04d}.png"
            if not p.exists():
                raise RefinerProtocolError(f"response missing frame file {p.name}")
            frames.append(imgio.load_rgb(p))
        return RefineResponse(frames=frames)
