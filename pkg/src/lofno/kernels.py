"""Differentiable primitives on the tape: FFTs, spectral products, convolutions.

Field tensors are channel-first, ``[C, X, Y, Z]``.  Every op takes and
returns :class:`~lofno.autodiff.Var` and registers its exact adjoint.
FFTs are real-to-complex over the last three axes with unitary scaling.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .autodiff import Var, as_var

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
AXES = (-3, -2, -1)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for a, n in enumerate(shape):
        if n == 1 and g.shape[a] != 1:
            g = g.sum(axis=a, keepdims=True)
    return g


def _tape(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one argument must be a Var")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    t = _tape(a, b)
    a, b = as_var(a, t), as_var(b, t)
    sa, sb = a.shape, b.shape
    return t.record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    t = _tape(a, b)
    a, b = as_var(a, t), as_var(b, t)
    sa, sb = a.shape, b.shape
    return t.record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    t = _tape(a, b)
    a, b = as_var(a, t), as_var(b, t)
    av, bv = a.value, b.value

    def back(g):
        ga = _unbroadcast(g * np.conj(bv), av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * np.conj(av), bv.shape) if b.requires_grad else None
        return ga, gb

    return t.record(av * bv, (a, b), back)


def scale(x, s):
    return x.tape.record(x.value * s, (x,), lambda g: (g * s,))


def gelu(x):
    v = x.value
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    out = (v * cdf).astype(v.dtype, copy=False)

    def back(g):
        d = cdf + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return ((g * d).astype(v.dtype, copy=False),)

    return x.tape.record(out, (x,), back)


def relu(x):
    v = x.value
    mask = v > 0
    return x.tape.record(np.where(mask, v, 0).astype(v.dtype), (x,), lambda g: (g * mask,))


def identity(x):
    return x


ACTIVATIONS = {"gelu": gelu, "relu": relu, "identity": identity}


def activation(x, kind="gelu"):
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# shape ops and reductions


def reshape(x, shape):
    old = x.shape
    return x.tape.record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis=0):
    t = _tape(*xs)
    xs = [as_var(x, t) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return t.record(
        np.concatenate([x.value for x in xs], axis=axis), tuple(xs), lambda g: tuple(np.split(g, sizes, axis=axis))
    )


def sum_all(x):
    shape, dt = x.shape, x.dtype
    out = np.asarray(x.value.sum(dtype=np.float64 if np.isrealobj(x.value) else np.complex128))
    return x.tape.record(out, (x,), lambda g: (np.full(shape, g, dtype=dt),))


# ---------------------------------------------------------------------------
# Fourier transforms


def _check_finite(v):
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite input to FFT")


def hermitian_weights(nz, dtype=np.float64):
    """Multiplicity of each half-spectrum bin along the last axis."""
    c = np.full(nz // 2 + 1, 2.0, dtype=dtype)
    c[0] = 1.0
    if nz % 2 == 0:
        c[-1] = 1.0
    return c


def fft3(x):
    """Unitary real-to-complex 3D FFT over the last three axes."""
    v = x.value
    if min(v.shape[-3:]) < 2:
        raise ValueError("fft3 needs at least 2 samples per axis")
    _check_finite(v)
    ctype = np.complex64 if v.dtype == np.float32 else np.complex128
    out = np.fft.rfftn(v, axes=AXES, norm="ortho").astype(ctype, copy=False)
    shape = v.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., : g.shape[-1]] = g
        return (np.fft.ifftn(full, axes=AXES, norm="ortho").real.astype(v.dtype, copy=False),)

    return x.tape.record(out, (x,), back)


def ifft3(X, shape):
    """Inverse of :func:`fft3`; ``shape`` gives the real spatial dims."""
    s = tuple(shape[-3:])
    v = X.value
    rtype = np.float32 if v.dtype == np.complex64 else np.float64
    out = np.fft.irfftn(v, s=s, axes=AXES, norm="ortho").astype(rtype, copy=False)
    c = hermitian_weights(s[-1], rtype)

    def back(g):
        return ((np.fft.rfftn(g, axes=AXES, norm="ortho") * c).astype(v.dtype, copy=False),)

    return X.tape.record(out, (X,), back)


def spectral_energy(X, nz):
    """Full-spectrum energy ``sum |X_k|^2`` of a half spectrum (equals ``||x||^2``)."""
    v = X.value
    c = hermitian_weights(nz)
    out = np.asarray((c * (v.real.astype(np.float64) ** 2 + v.imag.astype(np.float64) ** 2)).sum())
    return X.tape.record(out, (X,), lambda g: ((2.0 * g * c * v).astype(v.dtype),))


# ---------------------------------------------------------------------------
# spectral weights


def signed_modes(n_modes):
    """Signed frequencies of a full FFT axis in weight order: 0..m-1, -(m-1)..-1."""
    return np.concatenate([np.arange(n_modes), np.arange(-(n_modes - 1), 0)])


def mode_index(n_modes, X, Y, n_half):
    """Bins touched by spectral weights with ``n_modes`` per axis.

    ``X``, ``Y`` are the full-axis lengths and ``n_half`` the length of the
    half-spectrum axis.  Returns ``(wx, bx, wy, by, bz)``: for each full
    axis the weight slots kept and the FFT bins they address (a duplicated
    Nyquist slot is dropped), and the half-axis bins ``0..n_modes-1``.
    """
    if n_modes < 1 or n_modes > min(X, Y) // 2 + 1 or n_modes > n_half:
        raise ValueError(f"n_modes={n_modes} exceeds the Nyquist limit of the grid")
    out = []
    for n in (X, Y):
        bins = signed_modes(n_modes) % n
        _, first = np.unique(bins, return_index=True)
        slots = np.sort(first)
        out += [slots, bins[slots]]
    return out[0], out[1], out[2], out[3], np.arange(n_modes)


def spectral_weight_shape(d_in, d_out, n_modes):
    return (d_in, d_out, 2 * n_modes - 1, 2 * n_modes - 1, n_modes)


def spectral_multiply(Xh, W):
    """Per-mode channel mixing ``out[:, k] = W[:, :, k]^T-contract Xh[:, k]``; other bins are zero.

    ``Xh`` is ``[d_in, X, Y, Z//2+1]`` complex, ``W`` is
    ``[d_in, d_out, 2m-1, 2m-1, m]`` complex.
    """
    t = _tape(Xh, W)
    Xh, W = as_var(Xh, t), as_var(W, t)
    xv, wv = Xh.value, W.value
    d_in, d_out, _, _, m = wv.shape
    if xv.shape[0] != d_in:
        raise ValueError(f"spectral_multiply: input has {xv.shape[0]} channels, weights expect {d_in}")
    wx, bx, wy, by, bz = mode_index(m, xv.shape[1], xv.shape[2], xv.shape[3])
    ix = np.ix_(bx, by, bz)
    iw = np.ix_(wx, wy, np.arange(m))
    xs = xv[(slice(None),) + ix]  # [din, mx, my, mz]
    ws = wv[(slice(None), slice(None)) + iw]  # [din, dout, mx, my, mz]
    M = xs.shape[1:]
    # batched matmul over modes: [M, 1, din] @ [M, din, dout]
    xm = xs.reshape(d_in, -1).T[:, None, :]
    wm = ws.reshape(d_in, d_out, -1).transpose(2, 0, 1)
    ym = (xm @ wm)[:, 0, :]  # [M, dout]
    out = np.zeros((d_out,) + xv.shape[1:], dtype=np.result_type(xv, wv))
    out[(slice(None),) + ix] = ym.T.reshape((d_out,) + M)

    def back(g):
        gs = g[(slice(None),) + ix].reshape(d_out, -1).T[:, :, None]  # [M, dout, 1]
        gx = gw = None
        if Xh.requires_grad:
            gxm = (np.conj(wm) @ gs)[:, :, 0]  # [M, din]
            gx = np.zeros_like(xv)
            gx[(slice(None),) + ix] = gxm.T.reshape((d_in,) + M)
        if W.requires_grad:
            gwm = np.conj(xm).transpose(0, 2, 1) @ gs.transpose(0, 2, 1)  # [M, din, dout]
            gw = np.zeros_like(wv)
            gw[(slice(None), slice(None)) + iw] = gwm.transpose(1, 2, 0).reshape((d_in, d_out) + M)
        return gx, gw

    return t.record(out, (Xh, W), back)


def spectral_conv(h, W):
    """``ifft3(spectral_multiply(fft3(h), W))``: the Fourier integral operator."""
    return ifft3(spectral_multiply(fft3(h), W), h.shape)


# ---------------------------------------------------------------------------
# pointwise maps


def pointwise_affine(h, W, c=None):
    """Per-voxel channel map ``W h(x) + c``; ``W`` is ``[C_out, C_in]``."""
    t = _tape(h, W)
    h, W = as_var(h, t), as_var(W, t)
    hv, wv = h.value, W.value
    if hv.shape[0] != wv.shape[1]:
        raise ValueError(f"pointwise_affine: input has {hv.shape[0]} channels, W expects {wv.shape[1]}")
    rest = hv.shape[1:]
    h2 = hv.reshape(hv.shape[0], -1)
    out = (wv @ h2).reshape((wv.shape[0],) + rest)
    parents = [h, W]
    if c is not None:
        c = as_var(c, t)
        if c.shape != (wv.shape[0],):
            raise ValueError(f"pointwise_affine: bias shape {c.shape} != ({wv.shape[0]},)")
        out = out + c.value.reshape((-1,) + (1,) * len(rest))
        parents.append(c)

    def back(g):
        g2 = g.reshape(g.shape[0], -1)
        gh = (wv.T @ g2).reshape(hv.shape) if h.requires_grad else None
        gw = g2 @ h2.T if W.requires_grad else None
        res = [gh, gw]
        if c is not None:
            res.append(g2.sum(axis=1) if c.requires_grad else None)
        return tuple(res)

    return t.record(out, tuple(parents), back)


def mlp_forward(x, layers, act="gelu"):
    """Apply ``[(W, b), ...]`` per voxel with ``act`` between (not after) layers."""
    for i, (W, b) in enumerate(layers):
        x = pointwise_affine(x, W, b)
        if i < len(layers) - 1:
            x = activation(x, act)
    return x


# ---------------------------------------------------------------------------
# convolutions


def conv3d(x, W, b=None):
    """Same-size 3D cross-correlation with zero padding, stride 1.

    ``x`` is ``[C_in, X, Y, Z]``, ``W`` is ``[C_out, C_in, K, K, K]`` (odd K).
    """
    t = _tape(x, W)
    x, W = as_var(x, t), as_var(W, t)
    xv, wv = x.value, W.value
    c_out, c_in, K = wv.shape[0], wv.shape[1], wv.shape[2]
    if xv.shape[0] != c_in:
        raise ValueError(f"conv3d: input has {xv.shape[0]} channels, kernel expects {c_in}")
    if K % 2 == 0 or wv.shape[2:] != (K, K, K):
        raise ValueError("conv3d needs a cubic kernel of odd size")
    p = K // 2
    X, Y, Z = xv.shape[1:]
    N = X * Y * Z
    xp = np.pad(xv, ((0, 0), (p, p), (p, p), (p, p)))
    offsets = [(a, bb, cc) for a in range(K) for bb in range(K) for cc in range(K)]

    def window(arr, a, bb, cc):
        return arr[:, a : a + X, bb : bb + Y, cc : cc + Z]

    # contiguous per-tap matrices keep matmul on the BLAS path
    wk = np.ascontiguousarray(wv.transpose(2, 3, 4, 0, 1))
    wkT = np.ascontiguousarray(wv.transpose(2, 3, 4, 1, 0))
    out = np.zeros((c_out, N), dtype=np.result_type(xv, wv))
    for a, bb, cc in offsets:
        out += wk[a, bb, cc] @ window(xp, a, bb, cc).reshape(c_in, N)
    parents = [x, W]
    if b is not None:
        b = as_var(b, t)
        out += b.value[:, None]
        parents.append(b)
    out = out.reshape((c_out, X, Y, Z))

    def back(g):
        g2 = g.reshape(c_out, N)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros((K, K, K, c_out, c_in), dtype=wv.dtype) if W.requires_grad else None
        for a, bb, cc in offsets:
            if gw is not None:
                gw[a, bb, cc] = g2 @ window(xp, a, bb, cc).reshape(c_in, N).T
            if gxp is not None:
                window(gxp, a, bb, cc)[...] += (wkT[a, bb, cc] @ g2).reshape(c_in, X, Y, Z)
        if gw is not None:
            gw = gw.transpose(3, 4, 0, 1, 2)
        gx = gxp[:, p : p + X, p : p + Y, p : p + Z] if gxp is not None else None
        res = [gx, gw]
        if b is not None:
            res.append(g2.sum(axis=1) if b.requires_grad else None)
        return tuple(res)

    return t.record(out, tuple(parents), back)


def conv3_resblock(x, w1, b1, w2, b2, residual_scale=0.1, act="gelu"):
    """EDSR residual block: ``x + residual_scale * conv(act(conv(x)))``."""
    y = conv3d(activation(conv3d(x, w1, b1), act), w2, b2)
    return add(x, scale(y, residual_scale))


def pixel_shuffle3(x, s):
    """Rearrange ``[C*s^3, X, Y, Z]`` into ``[C, s*X, s*Y, s*Z]``."""
    if s == 1:
        return x
    v = x.value
    C = v.shape[0] // s**3
    if C * s**3 != v.shape[0]:
        raise ValueError(f"channel count {v.shape[0]} not divisible by {s}^3")
    X, Y, Z = v.shape[1:]
    out = v.reshape(C, s, s, s, X, Y, Z).transpose(0, 4, 1, 5, 2, 6, 3).reshape(C, s * X, s * Y, s * Z)

    def back(g):
        return (g.reshape(C, X, s, Y, s, Z, s).transpose(0, 2, 4, 6, 1, 3, 5).reshape(v.shape),)

    return x.tape.record(out, (x,), back)


# ---------------------------------------------------------------------------
# losses


def relative_loss(pred, truth, chi, eps):
    """``sum_{chi=1, t} ||pred - truth||_2 / max(||truth||_2, eps)`` over vector components.

    ``pred`` and ``truth`` are ``[3, T, X, Y, Z]``; ``chi`` is ``[X, Y, Z]``.
    """
    pv = pred.value
    truth = np.asarray(truth)
    if pv.shape != truth.shape:
        raise ValueError(f"relative_loss: shape mismatch {pv.shape} vs {truth.shape}")
    diff = pv.astype(np.float64) - truth
    n = np.sqrt((diff * diff).sum(axis=0))
    den = np.maximum(np.sqrt((truth.astype(np.float64) ** 2).sum(axis=0)), eps)
    w = np.asarray(chi, dtype=np.float64)[None] / den
    out = np.asarray((w * n).sum())

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        gp = (g * w / safe * (n > 0))[None] * diff
        return (gp.astype(pv.dtype),)

    return pred.tape.record(out, (pred,), back)
