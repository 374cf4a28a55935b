"""Anisotropic 3D Gaussian field: parameters, projection, checkpoint IO.

Parameters are stored in unconstrained form (log-scale, opacity logit) so
plain gradient steps keep scales positive and opacities in (0, 1).
Quaternions are renormalized after every optimizer step; projection also
normalizes defensively.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

QUAT_TOL = 1e-6
DEPTH_NEAR = 0.01  # near-plane cull threshold, meters
COV2D_BLUR = 0.3   # px^2 anti-aliasing floor added to projected covariance


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class SplatField:
    """A collection of Gaussians plus a constant background color.

    All per-splat parameters are (N, k) float64 arrays.
    """

    mu: np.ndarray            # (N, 3) means, meters
    log_scale: np.ndarray     # (N, 3) log of per-axis std dev
    quat: np.ndarray          # (N, 4) orientation, (w, x, y, z)
    opacity_logit: np.ndarray  # (N,)
    color: np.ndarray         # (N, 3) RGB in [0, 1]
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        n = len(self.mu)
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(n, 3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(n, 3)
        self.quat = np.asarray(self.quat, dtype=np.float64).reshape(n, 4)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(n)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(n, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    def __len__(self):
        return len(self.mu)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def normalize_quats(self):
        norms = np.linalg.norm(self.quat, axis=1, keepdims=True)
        self.quat = self.quat / np.maximum(norms, 1e-12)

    def copy(self) -> "SplatField":
        return SplatField(self.mu.copy(), self.log_scale.copy(), self.quat.copy(),
                          self.opacity_logit.copy(), self.color.copy(),
                          self.background.copy())

    @staticmethod
    def empty(background=(0.0, 0.0, 0.0)) -> "SplatField":
        z = np.zeros((0, 3))
        return SplatField(z, z.copy(), np.zeros((0, 4)), np.zeros(0), z.copy(),
                          np.asarray(background, dtype=np.float64))


# -- rotation math ----------------------------------------------------------

def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Batch unit quaternion (w,x,y,z) -> rotation matrices. q: (N,4) -> (N,3,3)."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_rot_jacobian(q: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions. q: (N,4) -> (N,4,3,3)."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = len(q)
    J = np.zeros((n, 4, 3, 3))
    zero = np.zeros(n)
    # dR/dw
    J[:, 0] = 2 * np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(n, 3, 3)
    # dR/dx
    J[:, 1] = 2 * np.stack([zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=-1).reshape(n, 3, 3)
    # dR/dy
    J[:, 2] = 2 * np.stack([-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=-1).reshape(n, 3, 3)
    # dR/dz
    J[:, 3] = 2 * np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=-1).reshape(n, 3, 3)
    return J


def covariance(log_scale: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """3x3 world-space covariance(s) R diag(s^2) R^T; quat need not be pre-normalized."""
    single = np.ndim(log_scale) == 1
    ls = np.atleast_2d(log_scale)
    q = np.atleast_2d(quat)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    R = quat_to_rot(q)
    s = np.exp(ls)
    M = R * s[:, None, :]
    cov = M @ np.swapaxes(M, 1, 2)
    return cov[0] if single else cov


# -- projection to screen space --------------------------------------------

@dataclass
class ProjectedSplats:
    """Screen-space quantities for all splats of one (field, camera) pair.

    Saved intermediates feed the analytic backward pass.
    """

    mean2d: np.ndarray   # (N, 2)
    cov2d: np.ndarray    # (N, 2, 2) includes the blur floor
    depth: np.ndarray    # (N,) camera-space z
    valid: np.ndarray    # (N,) bool, False = culled
    # intermediates
    t_cam: np.ndarray    # (N, 3)
    qn: np.ndarray       # (N, 4) normalized quats
    qnorm: np.ndarray    # (N,) raw quat norms
    R3: np.ndarray       # (N, 3, 3) splat rotations
    A: np.ndarray        # (N, 2, 3) perspective Jacobian times W
    sigma3: np.ndarray   # (N, 3, 3)


def project_splats(field: SplatField, cam, near: float = DEPTH_NEAR,
                   blur: float = COV2D_BLUR) -> ProjectedSplats:
    """EWA-style perspective projection of every splat.

    cov2d = J W Sigma W^T J^T + blur*I with J the pinhole Jacobian at the
    splat center. Splats at camera depth <= near are culled.
    """
    n = len(field)
    W = cam.rotation
    t_cam = field.mu @ W.T + cam.translation
    z = t_cam[:, 2]
    valid = z > near
    zs = np.where(valid, z, 1.0)  # avoid div-by-zero for culled splats

    mean2d = np.empty((n, 2))
    mean2d[:, 0] = cam.fx * t_cam[:, 0] / zs + cam.cx
    mean2d[:, 1] = cam.fy * t_cam[:, 1] / zs + cam.cy

    qnorm = np.linalg.norm(field.quat, axis=1)
    qn = field.quat / np.maximum(qnorm[:, None], 1e-12)
    R3 = quat_to_rot(qn)
    s = np.exp(field.log_scale)
    M = R3 * s[:, None, :]
    sigma3 = M @ np.swapaxes(M, 1, 2)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * t_cam[:, 0] / zs**2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * t_cam[:, 1] / zs**2
    A = J @ W
    cov2d = A @ sigma3 @ np.swapaxes(A, 1, 2)
    cov2d[:, 0, 0] += blur
    cov2d[:, 1, 1] += blur

    return ProjectedSplats(mean2d=mean2d, cov2d=cov2d, depth=z, valid=valid,
                           t_cam=t_cam, qn=qn, qnorm=qnorm, R3=R3, A=A, sigma3=sigma3)


def project_splats_backward(field: SplatField, cam, proj: ProjectedSplats,
                            g_mean2d: np.ndarray, g_cov2d: np.ndarray,
                            g_depth: np.ndarray):
    """Chain screen-space gradients back to (mu, log_scale, quat).

    g_cov2d is symmetrized internally; culled splats receive zero gradients.
    Returns (g_mu, g_log_scale, g_quat).
    """
    n = len(field)
    W = cam.rotation
    t = proj.t_cam
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    zs = np.where(proj.valid, z, 1.0)
    v = proj.valid.astype(np.float64)

    gM = 0.5 * (g_cov2d + np.swapaxes(g_cov2d, 1, 2)) * v[:, None, None]
    gm2 = g_mean2d * v[:, None]
    gd = g_depth * v

    A, sigma3, R3 = proj.A, proj.sigma3, proj.R3

    # cov2d = A Sigma A^T (+ const): gradients to Sigma and A
    g_sigma3 = np.swapaxes(A, 1, 2) @ gM @ A
    g_A = 2.0 * gM @ A @ sigma3
    g_J = g_A @ W.T

    # mean2d and depth gradients to camera-space position t
    g_t = np.zeros((n, 3))
    g_t[:, 0] += gm2[:, 0] * cam.fx / zs
    g_t[:, 1] += gm2[:, 1] * cam.fy / zs
    g_t[:, 2] += -gm2[:, 0] * cam.fx * x / zs**2 - gm2[:, 1] * cam.fy * y / zs**2
    g_t[:, 2] += gd

    # J depends on t as well
    g_t[:, 0] += g_J[:, 0, 2] * (-cam.fx / zs**2)
    g_t[:, 1] += g_J[:, 1, 2] * (-cam.fy / zs**2)
    g_t[:, 2] += (g_J[:, 0, 0] * (-cam.fx / zs**2)
                  + g_J[:, 0, 2] * (2 * cam.fx * x / zs**3)
                  + g_J[:, 1, 1] * (-cam.fy / zs**2)
                  + g_J[:, 1, 2] * (2 * cam.fy * y / zs**3))

    g_mu = g_t @ W

    # Sigma = R diag(s^2) R^T
    Gs = 0.5 * (g_sigma3 + np.swapaxes(g_sigma3, 1, 2))
    s2 = np.exp(2.0 * field.log_scale)
    RtGR = np.swapaxes(R3, 1, 2) @ Gs @ R3
    g_log_scale = 2.0 * s2 * np.einsum("nkk->nk", RtGR)

    g_R = 2.0 * Gs @ (R3 * s2[:, None, :])
    dRdq = quat_rot_jacobian(proj.qn)           # (N, 4, 3, 3)
    g_qn = np.einsum("nij,ncij->nc", g_R, dRdq)
    # through normalization q_hat = q / |q|
    proj_coeff = np.einsum("nc,nc->n", g_qn, proj.qn)
    g_quat = (g_qn - proj_coeff[:, None] * proj.qn) / np.maximum(proj.qnorm[:, None], 1e-12)

    return g_mu, g_log_scale, g_quat


# -- checkpoint format ------------------------------------------------------
# header: "splats <count> background <r> <g> <b>"
# then one line per splat: mu(3) log_scale(3) quat(4) opacity_logit color(3)

def save_field(path, field: SplatField) -> None:
    with open(path, "w") as f:
        bg = field.background
        f.write(f"splats {len(field)} background {float(bg[0])!r} "
                f"{float(bg[1])!r} {float(bg[2])!r}\n")
        rows = np.concatenate([field.mu, field.log_scale, field.quat,
                               field.opacity_logit[:, None], field.color], axis=1)
        for row in rows:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_field(path) -> SplatField:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 6 or header[0] != "splats" or header[2] != "background":
            raise ValueError(f"{path}: bad field checkpoint header")
        n = int(header[1])
        bg = np.array([float(v) for v in header[3:6]])
        if n == 0:
            return SplatField.empty(bg)
        rows = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if rows.shape != (n, 14) and not (n == 0 and rows.size == 0):
        raise ValueError(f"{path}: expected {n} splat rows of 14 values, got shape {rows.shape}")
    if n == 0:
        return SplatField.empty(bg)
    return SplatField(mu=rows[:, 0:3], log_scale=rows[:, 3:6], quat=rows[:, 6:10],
                      opacity_logit=rows[:, 10], color=rows[:, 11:14], background=bg)
