"""Slow, direct reference implementations used as test oracles.

Nothing here imports the kernels being checked.
"""

import math

import numpy as np
from scipy.special import erf


def dft3_half(x):
    """Unitary forward DFT over the last three axes, half spectrum on the last axis, by direct summation."""
    X, Y, Z = x.shape[-3:]
    N = X * Y * Z
    out = np.zeros(x.shape[:-3] + (X, Y, Z // 2 + 1), dtype=complex)
    grid = np.stack(np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij"), -1)
    for kx in range(X):
        for ky in range(Y):
            for kz in range(Z // 2 + 1):
                ph = np.exp(-2j * np.pi * (kx * grid[..., 0] / X + ky * grid[..., 1] / Y + kz * grid[..., 2] / Z))
                out[..., kx, ky, kz] = (x * ph).sum(axis=(-3, -2, -1)) / math.sqrt(N)
    return out


def idft3_half(G, shape):
    """Real field from a half spectrum, by direct summation with Hermitian multiplicities."""
    X, Y, Z = shape
    N = X * Y * Z
    out = np.zeros(G.shape[:-3] + (X, Y, Z))
    for x in range(X):
        for y in range(Y):
            for z in range(Z):
                acc = 0
                for kx in range(X):
                    for ky in range(Y):
                        for kz in range(Z // 2 + 1):
                            c = 1.0 if kz == 0 or (Z % 2 == 0 and kz == Z // 2) else 2.0
                            ph = np.exp(2j * np.pi * (kx * x / X + ky * y / Y + kz * z / Z))
                            acc = acc + c * G[..., kx, ky, kz] * ph
                out[..., x, y, z] = np.real(acc) / math.sqrt(N)
    return out


def slot_bins(m, n):
    """Map each weight slot (signed order 0..m-1, -(m-1)..-1) to its FFT bin, first claim wins."""
    freqs = list(range(m)) + list(range(-(m - 1), 0))
    seen, pairs = set(), []
    for s, f in enumerate(freqs):
        b = f % n
        if b not in seen:
            seen.add(b)
            pairs.append((s, b))
    return pairs


def spectral_multiply_loop(Xh, W):
    d_in, d_out, _, _, m = W.shape
    out = np.zeros((d_out,) + Xh.shape[1:], dtype=complex)
    for sx, bx in slot_bins(m, Xh.shape[1]):
        for sy, by in slot_bins(m, Xh.shape[2]):
            for sz in range(m):
                for o in range(d_out):
                    for i in range(d_in):
                        out[o, bx, by, sz] += W[i, o, sx, sy, sz] * Xh[i, bx, by, sz]
    return out


def fourier_integral_dense(h, W):
    """``I(h)`` by direct DFT sums and per-mode loops."""
    return idft3_half(spectral_multiply_loop(dft3_half(h), W), h.shape[1:])


def conv3d_loop(x, W, b=None):
    c_out, c_in, K = W.shape[:3]
    p = K // 2
    X, Y, Z = x.shape[1:]
    out = np.zeros((c_out, X, Y, Z))
    for o in range(c_out):
        for i in range(X):
            for j in range(Y):
                for k in range(Z):
                    acc = 0.0 if b is None else b[o]
                    for c in range(c_in):
                        for a in range(K):
                            for bb in range(K):
                                for cc in range(K):
                                    ii, jj, kk = i + a - p, j + bb - p, k + cc - p
                                    if 0 <= ii < X and 0 <= jj < Y and 0 <= kk < Z:
                                        acc += W[o, c, a, bb, cc] * x[c, ii, jj, kk]
                    out[o, i, j, k] = acc
    return out


def affine_loop(h, W, c):
    out = np.zeros((W.shape[0],) + h.shape[1:])
    for idx in np.ndindex(h.shape[1:]):
        for o in range(W.shape[0]):
            out[(o,) + idx] = sum(W[o, i] * h[(i,) + idx] for i in range(W.shape[1])) + c[o]
    return out


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def relative_loss_loop(pred, truth, chi, eps):
    total = 0.0
    _, T, X, Y, Z = pred.shape
    for t in range(T):
        for i in range(X):
            for j in range(Y):
                for k in range(Z):
                    if not chi[i, j, k]:
                        continue
                    d = math.sqrt(sum((pred[c, t, i, j, k] - truth[c, t, i, j, k]) ** 2 for c in range(3)))
                    u = math.sqrt(sum(truth[c, t, i, j, k] ** 2 for c in range(3)))
                    total += d / max(u, eps)
    return total


def trilinear_loop(coarse, factor, origin_shift=True):
    """Upsample ``[x, y, z]`` by evaluating the linear interpolant voxel by voxel.

    Coarse voxel i sits at fine index ``factor * i``; beyond the last coarse
    sample the end segment is extended linearly.
    """
    x, y, z = coarse.shape
    out = np.zeros((x * factor, y * factor, z * factor))

    def weights(q, n):
        if n == 1:
            return [(0, 1.0)]
        i0 = min(max(int(math.floor(q)), 0), n - 2)
        w = q - i0
        return [(i0, 1.0 - w), (i0 + 1, w)]

    for I in range(x * factor):
        for J in range(y * factor):
            for K in range(z * factor):
                acc = 0.0
                for a, wa in weights(I / factor, x):
                    for b, wb in weights(J / factor, y):
                        for c, wc in weights(K / factor, z):
                            acc += wa * wb * wc * coarse[a, b, c]
                out[I, J, K] = acc
    return out
