"""Interpolation baselines plus the shared interface to the neural ones."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .flow import FlowField
from .geometry import ChiField, VoxelGrid
from .model import fno_edsr_forward, srcnn_forward  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

BASELINE_KINDS = ("linear", "rbf", "srcnn", "edsr", "fno_edsr")
RBF_KERNELS = ("tps", "gaussian", "multiquadric")


@dataclass
class BaselineSpec:
    kind: str = "linear"
    rbf_kernel: str = "tps"
    rbf_epsilon: float = 1.0  # shape parameter in normalised coordinates (non-TPS kernels)
    rbf_cap: int = 20000

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; valid kinds: {', '.join(BASELINE_KINDS)}")
        if self.rbf_kernel not in RBF_KERNELS:
            raise ValueError(f"unknown RBF kernel {self.rbf_kernel!r}")
        if self.rbf_epsilon <= 0 or self.rbf_cap < 1:
            raise ValueError("RBF shape parameter and cap must be positive")


# ---------------------------------------------------------------------------
# linear


def interp_matrix(n_in, q):
    """Rows of linear interpolation weights at fractional indices ``q``.

    Outside ``[0, n_in - 1]`` the end segments are extended linearly.
    """
    q = np.asarray(q, dtype=float)
    M = np.zeros((len(q), n_in))
    if n_in == 1:
        M[:, 0] = 1.0
        return M
    i0 = np.clip(np.floor(q).astype(int), 0, n_in - 2)
    w = q - i0
    rows = np.arange(len(q))
    M[rows, i0] = 1.0 - w
    M[rows, i0 + 1] += w
    return M


def _axis_index(src: VoxelGrid, dst: VoxelGrid, axis):
    x = dst.origin[axis] + (np.arange(dst.dims[axis]) + 0.5) * dst.spacing[axis]
    return (x - src.origin[axis]) / src.spacing[axis] - 0.5


def upsample_space(vel, src: VoxelGrid, dst: VoxelGrid):
    """Separable trilinear map of ``[..., x, y, z]`` onto ``dst`` voxel centres."""
    out = np.asarray(vel, dtype=np.float64)
    lead = out.ndim - 3
    for a in range(3):
        M = interp_matrix(src.dims[a], _axis_index(src, dst, a))
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [lead + a])), 0, lead + a)
    return out


def time_weights(t_in, t_out):
    """Piecewise-linear weights ``[T_out, T_in]``; times past the last input frame are clamped."""
    t_in = np.asarray(t_in, float)
    t_out = np.asarray(t_out, float)
    W = np.zeros((len(t_out), len(t_in)))
    clamped = 0
    for j, t in enumerate(t_out):
        if len(t_in) == 1 or t >= t_in[-1]:
            W[j, -1] = 1.0
            clamped += int(t > t_in[-1])
        elif t <= t_in[0]:
            W[j, 0] = 1.0
            clamped += int(t < t_in[0])
        else:
            i = int(np.searchsorted(t_in, t, side="right") - 1)
            w = (t - t_in[i]) / (t_in[i + 1] - t_in[i])
            W[j, i], W[j, i + 1] = 1.0 - w, w
    return W, clamped


def upsample_time(vel, t_in, t_out):
    W, clamped = time_weights(t_in, t_out)
    return np.einsum("ji,ci...->cj...", W, vel), clamped


def linear_upsample(flow: FlowField, target_grid: VoxelGrid, target_times=None) -> FlowField:
    """Trilinear in space, piecewise linear in time; exact at the input samples."""
    target_times = flow.times if target_times is None else np.asarray(target_times, float)
    v = upsample_space(flow.velocity, flow.grid, target_grid)
    v, clamped = upsample_time(v, flow.times, target_times)
    meta = dict(flow.meta, interpolation="linear", time_clamped_frames=clamped)
    return FlowField(target_grid, target_times, v.astype(np.float32), meta)


# ---------------------------------------------------------------------------
# radial basis functions


def rbf_kernel(r, kind="tps", eps=1.0):
    r = np.asarray(r, dtype=float)
    if kind == "tps":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r * r * np.log(r)
        return np.where(r > 0, out, 0.0)
    if kind == "gaussian":
        return np.exp(-((eps * r) ** 2))
    if kind == "multiquadric":
        return np.sqrt(1.0 + (eps * r) ** 2)
    raise ValueError(f"unknown RBF kernel {kind!r}")


def _pairwise(a, b):
    return np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0))


def farthest_point_subset(points, k, start=0):
    """Indices of ``k`` points chosen greedily by farthest-point sampling."""
    n = len(points)
    if k >= n:
        return np.arange(n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    d = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, k):
        j = int(np.argmax(d))
        chosen[i] = j
        d = np.minimum(d, np.linalg.norm(points - points[j], axis=1))
    return np.sort(chosen)


@dataclass
class RBFInterpolant:
    centers: np.ndarray  # normalised coordinates
    weights: np.ndarray  # [n, m]
    poly: np.ndarray  # [p, m]
    shift: np.ndarray
    scale: float
    kind: str
    eps: float
    regularized: bool

    def __call__(self, points, block=4096):
        q = (np.asarray(points, float) - self.shift) / self.scale
        out = np.empty((len(q), self.weights.shape[1]))
        for lo in range(0, len(q), block):
            qq = q[lo : lo + block]
            K = rbf_kernel(_pairwise(qq, self.centers), self.kind, self.eps)
            P = _poly_basis(qq, len(self.poly))
            out[lo : lo + block] = K @ self.weights + P @ self.poly
        return out


def _poly_basis(x, p):
    return np.hstack([np.ones((len(x), 1)), x])[:, :p]


def rbf_fit(points, values, kind="tps", eps=1.0, cap=20000) -> RBFInterpolant:
    """Interpolant with an affine tail through ``values`` ``[n, m]`` at ``points`` ``[n, 3]``.

    Fewer than four or affinely dependent points fall back to a constant
    tail.  A singular system is regularised with ``1e-10 * ||K||_F`` on the
    kernel diagonal (the TPS kernel has zero trace), then least squares.
    """
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if len(pts) == 0:
        raise ValueError("no interpolation points")
    if len(pts) > cap:
        keep = farthest_point_subset(pts, cap)
        log.info("RBF: %d points subsampled to %d", len(pts), cap)
        pts, vals = pts[keep], vals[keep]
    shift = pts.mean(axis=0)
    scale = float(np.abs(pts - shift).max()) or 1.0
    x = (pts - shift) / scale
    n = len(x)
    p = 4 if n >= 4 and np.linalg.matrix_rank(_poly_basis(x, 4), tol=1e-8) == 4 else 1
    K = rbf_kernel(_pairwise(x, x), kind, eps)
    P = _poly_basis(x, p)
    A = np.zeros((n + p, n + p))
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    b = np.zeros((n + p, vals.shape[1]))
    b[:n] = vals
    regularized = False
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            sol = linalg.solve(A, b, assume_a="sym")
    except (linalg.LinAlgError, linalg.LinAlgWarning):
        regularized = True
        lam = 1e-10 * max(np.linalg.norm(K), 1.0)
        warnings.warn(f"singular RBF system; regularising with lambda={lam:.3g}", RuntimeWarning, stacklevel=2)
        A[:n, :n] += lam * np.eye(n)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                sol = linalg.solve(A, b, assume_a="sym")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            sol = np.linalg.lstsq(A, b, rcond=None)[0]
    return RBFInterpolant(x, sol[:n], sol[n:], shift, scale, kind, eps, regularized)


def rbf_upsample(
    flow: FlowField,
    target_grid: VoxelGrid,
    spec: BaselineSpec | None = None,
    chi_in: ChiField | np.ndarray | None = None,
    chi_out: ChiField | np.ndarray | None = None,
    target_times=None,
) -> FlowField:
    """Per-frame, per-component RBF fit on fluid input voxels, evaluated on fluid target voxels.

    One factorisation serves all components and frames.  Frames missing
    from the input are then filled by linear interpolation in time.
    """
    spec = spec or BaselineSpec(kind="rbf")

    def mask(chi, grid, fallback):
        if chi is None:
            return fallback
        m = np.asarray(chi.values if isinstance(chi, ChiField) else chi, bool)
        if m.shape != grid.dims:
            raise ValueError(f"chi shape {m.shape} does not match grid {grid.dims}")
        return m

    v = flow.velocity.astype(np.float64)
    m_in = mask(chi_in, flow.grid, np.linalg.norm(v, axis=0).max(axis=0) > 0)
    m_out = mask(chi_out, target_grid, np.ones(target_grid.dims, bool))
    out = np.zeros((3, flow.n_times) + target_grid.dims)
    if m_in.any() and m_out.any():
        src = flow.grid.centers()[m_in]
        vals = v[:, :, m_in].reshape(-1, len(src)).T  # [n, 3*T]
        fit = rbf_fit(src, vals, spec.rbf_kernel, spec.rbf_epsilon, spec.rbf_cap)
        res = fit(target_grid.centers()[m_out])  # [Q, 3*T]
        out[:, :, m_out] = res.T.reshape(3, flow.n_times, -1)
    meta = dict(flow.meta, interpolation=f"rbf-{spec.rbf_kernel}")
    times = flow.times
    if target_times is not None:
        out, clamped = upsample_time(out, flow.times, target_times)
        times = np.asarray(target_times, float)
        meta["time_clamped_frames"] = clamped
    return FlowField(target_grid, times, out.astype(np.float32), meta)


def linear_predict(sample):
    return linear_upsample(sample.input, sample.target.grid, sample.target.times).velocity


def rbf_predict(sample, spec: BaselineSpec | None = None):
    return rbf_upsample(sample.input, sample.target.grid, spec, sample.chi_lr, sample.chi_hr, sample.target.times).velocity
