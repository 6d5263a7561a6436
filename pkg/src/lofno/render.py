"""Grayscale PNG slices of velocity components and a projected WSS scatter."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

COMPONENTS = ("u", "v", "w")


def slice_image(field3d, axis, index, vmax=None, ppv=8):
    """8-bit image of one slice; zero maps to mid-gray, +-vmax to white/black."""
    a = np.asarray(field3d, dtype=np.float64)
    n = a.shape[axis]
    if not -n <= index < n:
        raise IndexError(f"slice {index} out of range for axis {axis} with {n} voxels")
    s = np.take(a, index, axis=axis)
    vmax = float(np.abs(s).max()) if vmax is None else float(vmax)
    g = np.full(s.shape, 128.0) if vmax == 0 else 128.0 + 127.0 * np.clip(s / vmax, -1, 1)
    img = np.rint(g).astype(np.uint8)
    # image rows run along the second in-plane axis, flipped so it points up
    img = np.kron(img.T[::-1], np.ones((ppv, ppv), dtype=np.uint8))
    return img


def wss_image(vertices, magnitude, axis=2, size=256, vmax=None):
    """Vertices projected along ``axis``; brighter pixels mean larger |WSS|."""
    v = np.asarray(vertices, dtype=np.float64)
    m = np.asarray(magnitude, dtype=np.float64)
    plane = [k for k in range(3) if k != axis]
    p = v[:, plane]
    lo = p.min(axis=0)
    span = max(float((p.max(axis=0) - lo).max()), 1e-300)
    ij = np.clip(((p - lo) / span * (size - 3)).astype(int) + 1, 0, size - 2)
    vmax = float(m.max()) if vmax is None else float(vmax)
    val = np.zeros(len(m)) if vmax == 0 else np.clip(m / vmax, 0, 1) * 255.0
    img = np.zeros((size, size), dtype=np.uint8)
    # draw far points first so the nearest one wins each pixel
    order = np.argsort(v[:, axis], kind="stable")
    for di in (0, 1):
        for dj in (0, 1):
            img[size - 1 - (ij[order, 1] + dj), ij[order, 0] + di] = np.rint(val[order]).astype(np.uint8)
    return img


def render(velocity, wss, vertices, out_dir, prefix, timestep=0, axis=2, index=-1, ppv=8, vmax=None, wss_vmax=None):
    """Write ``<prefix>_{u,v,w}.png`` and ``<prefix>_wss.png``; returns the four paths."""
    vel = np.asarray(velocity)
    T = vel.shape[1]
    if not 0 <= timestep < T:
        raise IndexError(f"timestep {timestep} out of range 0..{T - 1}")
    if index == -1:
        index = vel.shape[2 + axis] // 2
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, name in enumerate(COMPONENTS):
        img = slice_image(vel[c, timestep], axis, index, vmax, ppv)
        path = out / f"{prefix}_{name}.png"
        Image.fromarray(img, mode="L").save(path, optimize=False)
        paths.append(path)
    mag = np.linalg.norm(np.asarray(wss)[timestep], axis=-1)
    path = out / f"{prefix}_wss.png"
    Image.fromarray(wss_image(vertices, mag, axis, vmax=wss_vmax), mode="L").save(path, optimize=False)
    paths.append(path)
    return paths
