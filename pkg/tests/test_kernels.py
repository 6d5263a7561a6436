import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lofno import kernels as K
from lofno.autodiff import Tape

from .conftest import fd_check
from .oracles import (
    affine_loop,
    conv3d_loop,
    dft3_half,
    fourier_integral_dense,
    gelu,
    idft3_half,
    relative_loss_loop,
    spectral_multiply_loop,
)


def const(x):
    return Tape(enabled=False).const(np.asarray(x))


def cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# FFT


def test_fft3_matches_direct_dft(rng):
    x = rng.standard_normal((2, 4, 4, 4))
    assert np.allclose(K.fft3(const(x)).value, dft3_half(x), atol=1e-12)


def test_fft3_odd_and_uneven_axes(rng):
    x = rng.standard_normal((1, 3, 4, 5))
    assert np.allclose(K.fft3(const(x)).value, dft3_half(x), atol=1e-12)


def test_ifft3_matches_direct_inverse(rng):
    shape = (4, 4, 4)
    G = cplx(rng, (2, 4, 4, 3))
    assert np.allclose(K.ifft3(const(G), shape).value, idft3_half(G, shape), atol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([(2, 2, 2), (4, 4, 4), (3, 5, 4), (6, 4, 2)]))
def test_fft_roundtrip(seed, shape):
    x = np.random.default_rng(seed).standard_normal((2,) + shape)
    y = K.ifft3(K.fft3(const(x)), x.shape).value
    assert np.allclose(y, x, atol=1e-12)


def test_fft3_of_delta_is_flat():
    x = np.zeros((1, 4, 4, 4))
    x[0, 0, 0, 0] = 1.0
    X = K.fft3(const(x)).value
    assert np.allclose(X, 1.0 / 8.0)


@given(st.integers(0, 10_000))
def test_parseval_with_hermitian_weights(seed):
    x = np.random.default_rng(seed).standard_normal((2, 4, 4, 6))
    e = K.spectral_energy(K.fft3(const(x)), x.shape[-1]).value
    assert np.isclose(e, (x**2).sum(), rtol=1e-12)


def test_energy_gradient_is_2x(rng):
    x = rng.standard_normal((1, 4, 4, 4))
    t = Tape()
    v = t.leaf(x)
    t.backward(K.spectral_energy(K.fft3(v), 4))
    assert np.allclose(v.grad, 2 * x, atol=1e-12)


def test_fft3_rejects_nonfinite():
    x = np.zeros((1, 4, 4, 4))
    x[0, 1, 2, 3] = np.nan
    with pytest.raises(FloatingPointError):
        K.fft3(const(x))


def test_fft3_rejects_tiny_axis():
    with pytest.raises(ValueError):
        K.fft3(const(np.zeros((1, 1, 4, 4))))


# ---------------------------------------------------------------------------
# spectral multiply / conv


@pytest.mark.parametrize("m,shape", [(2, (4, 4, 4)), (3, (4, 4, 4)), (2, (5, 6, 4)), (3, (6, 6, 6))])
def test_spectral_multiply_matches_loop(rng, m, shape):
    Xh = cplx(rng, (2,) + shape[:2] + (shape[2] // 2 + 1,))
    W = cplx(rng, K.spectral_weight_shape(2, 3, m))
    assert np.allclose(K.spectral_multiply(const(Xh), const(W)).value, spectral_multiply_loop(Xh, W), atol=1e-12)


def test_spectral_multiply_zero_weights(rng):
    Xh = cplx(rng, (2, 4, 4, 3))
    W = np.zeros(K.spectral_weight_shape(2, 2, 2), complex)
    assert not K.spectral_multiply(const(Xh), const(W)).value.any()


def test_spectral_multiply_only_touches_kept_modes(rng):
    Xh = cplx(rng, (1, 8, 8, 5))
    W = cplx(rng, K.spectral_weight_shape(1, 1, 3))
    out = K.spectral_multiply(const(Xh), const(W)).value
    kept = np.zeros((8, 8, 5), bool)
    for bx in (0, 1, 2, 6, 7):
        for by in (0, 1, 2, 6, 7):
            kept[bx, by, :3] = True
    assert not out[0][~kept].any()


def test_mode_index_nyquist_limit():
    K.mode_index(3, 4, 4, 3)  # m-1 = Nyquist is allowed
    with pytest.raises(ValueError):
        K.mode_index(4, 4, 4, 3)


def test_spectral_conv_matches_dense_integral(rng):
    h = rng.standard_normal((2, 4, 4, 4))
    W = cplx(rng, K.spectral_weight_shape(2, 2, 2))
    got = K.spectral_conv(const(h), const(W)).value
    assert np.allclose(got, fourier_integral_dense(h, W), atol=1e-10)


def test_spectral_conv_is_discretization_invariant(rng):
    """Same weights on a band-limited field sampled at 16^3 and 32^3 agree on shared nodes."""
    m = 4
    W = cplx(rng, K.spectral_weight_shape(1, 1, m))
    coef = cplx(rng, (3, 3, 3))

    def field(n):
        g = np.arange(n) / n
        x, y, z = np.meshgrid(g, g, g, indexing="ij")
        f = np.zeros((n, n, n))
        for a in range(3):
            for b in range(3):
                for c in range(3):
                    f += np.real(coef[a, b, c] * np.exp(2j * np.pi * (a * x + (b - 1) * y + c * z)))
        return f[None]

    lo = K.spectral_conv(const(field(16)), const(W)).value
    hi = K.spectral_conv(const(field(32)), const(W)).value
    err = np.abs(hi[:, ::2, ::2, ::2] - lo).max() / np.abs(lo).max()
    assert err < 1e-3


# ---------------------------------------------------------------------------
# pointwise and convolutional maps


def test_pointwise_affine_matches_loop(rng):
    h = rng.standard_normal((3, 2, 3, 2))
    W = rng.standard_normal((4, 3))
    c = rng.standard_normal(4)
    assert np.allclose(K.pointwise_affine(const(h), const(W), const(c)).value, affine_loop(h, W, c), atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv3d_matches_loop(rng, k):
    x = rng.standard_normal((2, 4, 3, 5))
    W = rng.standard_normal((3, 2, k, k, k))
    b = rng.standard_normal(3)
    assert np.allclose(K.conv3d(const(x), const(W), const(b)).value, conv3d_loop(x, W, b), atol=1e-10)


def test_conv3d_rejects_even_kernel(rng):
    with pytest.raises(ValueError):
        K.conv3d(const(rng.standard_normal((1, 4, 4, 4))), const(np.zeros((1, 1, 2, 2, 2))))


def test_conv3_resblock_matches_loop(rng):
    x = rng.standard_normal((2, 3, 3, 3))
    w1, w2 = rng.standard_normal((2, 2, 3, 3, 3)), rng.standard_normal((2, 2, 3, 3, 3))
    b1, b2 = rng.standard_normal(2), rng.standard_normal(2)
    want = x + 0.1 * conv3d_loop(gelu(conv3d_loop(x, w1, b1)), w2, b2)
    got = K.conv3_resblock(const(x), const(w1), const(b1), const(w2), const(b2), 0.1, "gelu").value
    assert np.allclose(got, want, atol=1e-10)


def test_resblock_with_zero_weights_is_identity(rng):
    x = rng.standard_normal((2, 3, 3, 3))
    z = np.zeros((2, 2, 3, 3, 3))
    got = K.conv3_resblock(const(x), const(z), const(np.zeros(2)), const(z), const(np.zeros(2))).value
    assert np.array_equal(got, x)


def test_pixel_shuffle_layout(rng):
    s = 2
    x = rng.standard_normal((2 * s**3, 2, 3, 2))
    y = K.pixel_shuffle3(const(x), s).value
    for c, X, Y, Z, i, j, k in np.ndindex(2, 2, 3, 2, s, s, s):
        assert y[c, s * X + i, s * Y + j, s * Z + k] == x[c * s**3 + i * s * s + j * s + k, X, Y, Z]


def test_gelu_matches_erf_form(rng):
    x = rng.standard_normal(50) * 3
    assert np.allclose(K.gelu(const(x)).value, gelu(x), atol=1e-14)


def test_unknown_activation():
    with pytest.raises(ValueError):
        K.activation(const(np.zeros(2)), "swish")


# ---------------------------------------------------------------------------
# loss


def test_relative_loss_examples():
    truth = np.zeros((3, 1, 1, 1, 1))
    truth[0] = 1.0
    pred = np.zeros_like(truth)
    chi = np.ones((1, 1, 1))
    assert K.relative_loss(const(pred), truth, chi, 1e-6).value == 1.0
    assert K.relative_loss(const(truth.copy()), truth, chi, 1e-6).value == 0.0


@given(st.integers(0, 10_000))
def test_relative_loss_matches_loop(seed):
    r = np.random.default_rng(seed)
    pred, truth = r.standard_normal((2, 3, 2, 2, 2, 2))
    chi = r.random((2, 2, 2)) > 0.4
    got = float(K.relative_loss(const(pred), truth, chi, 1e-3).value)
    assert np.isclose(got, relative_loss_loop(pred, truth, chi, 1e-3), rtol=1e-10, atol=1e-12)


@given(st.integers(0, 10_000))
def test_relative_loss_nonnegative_and_zero_iff_equal_on_fluid(seed):
    r = np.random.default_rng(seed)
    truth = r.standard_normal((3, 2, 2, 2, 2))
    chi = r.random((2, 2, 2)) > 0.5
    pred = truth.copy()
    pred[:, :, ~chi] += 5.0  # exterior differences are ignored
    assert K.relative_loss(const(pred), truth, chi, 1e-6).value == 0.0
    pred = pred + r.standard_normal(pred.shape)
    v = K.relative_loss(const(pred), truth, chi, 1e-6).value
    assert v >= 0 and (v > 0) == bool(chi.any())


def test_relative_loss_shape_mismatch():
    with pytest.raises(ValueError):
        K.relative_loss(const(np.zeros((3, 1, 2, 2, 2))), np.zeros((3, 2, 2, 2, 2)), np.ones((2, 2, 2)), 1e-6)


# ---------------------------------------------------------------------------
# gradients (central differences, float64)

SEEDS = range(5)


def proj(rng, shape):
    return rng.standard_normal(shape)


def scalar(v, seed=99):
    return K.sum_all(K.mul(v, np.random.default_rng(seed).standard_normal(v.shape)))


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_fft_pair(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 4, 4, 4))
    m = cplx(r, (2, 4, 4, 3))
    assert fd_check(lambda t, v: scalar(K.ifft3(K.mul(K.fft3(v[0]), m), x.shape)), [x], seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_spectral_multiply(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 4, 4, 4))
    W = cplx(r, K.spectral_weight_shape(2, 3, 3))
    err = fd_check(lambda t, v: scalar(K.ifft3(K.spectral_multiply(K.fft3(v[0]), v[1]), (3, 4, 4, 4))), [x, W], seed)
    assert err < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_affine_gelu_relu(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 2, 2, 2))
    W, c = r.standard_normal((2, 3)), r.standard_normal(2)
    f = lambda t, v: scalar(K.gelu(K.pointwise_affine(v[0], v[1], v[2])))
    assert fd_check(f, [x, W, c], seed) < 1e-6
    assert fd_check(lambda t, v: scalar(K.relu(v[0])), [x + 0.01], seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv_resblock_shuffle(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 3, 3))
    w1, w2 = r.standard_normal((2, 2, 3, 3, 3)), r.standard_normal((16, 2, 3, 3, 3))
    b1, b2 = r.standard_normal(2), r.standard_normal(16)
    f = lambda t, v: scalar(K.pixel_shuffle3(K.conv3d(K.gelu(K.conv3d(v[0], v[1], v[2])), v[3], v[4]), 2))
    assert fd_check(f, [x, w1, b1, w2, b2], seed) < 1e-6
    w3 = r.standard_normal((2, 2, 3, 3, 3))
    g = lambda t, v: scalar(K.conv3_resblock(v[0], v[1], v[2], v[3], v[4], 0.1))
    assert fd_check(g, [x, w1, b1, w3, b1.copy()], seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_relative_loss_and_structure(seed):
    r = np.random.default_rng(seed)
    pred, truth = r.standard_normal((2, 3, 2, 2, 2, 2))
    chi = r.random((2, 2, 2)) > 0.3
    assert fd_check(lambda t, v: K.relative_loss(v[0], truth, chi, 1e-3), [pred], seed) < 1e-6
    a, b = r.standard_normal((2, 2, 3))
    f = lambda t, v: scalar(K.reshape(K.concat([K.sub(v[0], v[1]), K.scale(K.add(v[0], v[1]), 0.5)]), (2, 3, 2)))
    assert fd_check(f, [a, b], seed) < 1e-6
