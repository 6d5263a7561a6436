"""LoFNO and the neural baselines built from the same kernels.

Time is folded into channels: a velocity input ``[3, T, x, y, z]`` enters as
``3*T`` channels (component-major) and predictions leave as ``3*T_out``
channels reshaped back to ``[3, T_out, X, Y, Z]``.

Pipeline (``kind="lofno"``)::

    (u_lr ++ e_lr) -> EDSR -> (++ e_hr) -> P -> L x localized Fourier layer -> Q -> * chi
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from .autodiff import Tape

MODEL_KINDS = ("lofno", "lofno_wo_lep", "fno_edsr", "edsr", "srcnn")


@dataclass
class EDSRConfig:
    n_blocks: int = 8
    width: int = 64
    residual_scale: float = 0.1


@dataclass
class ModelConfig:
    kind: str = "lofno"
    d_h: int = 32
    n_layers: int = 4
    n_modes: int = 8
    n_prior: int = 32
    scale: int = 2
    t_in: int = 24
    t_out: int = 24
    q_hidden: int = 64
    activation: str = "gelu"
    edsr: EDSRConfig = field(default_factory=EDSRConfig)
    hr_prior: bool = True
    mask_output: bool = True
    srcnn_kernels: tuple = (9, 1, 5)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.edsr, dict):
            self.edsr = EDSRConfig(**self.edsr)
        self.srcnn_kernels = tuple(self.srcnn_kernels)
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
        if self.kind in ("lofno_wo_lep", "fno_edsr", "edsr", "srcnn"):
            self.n_prior = 0
        if self.scale not in (1, 2, 3, 4):
            raise ValueError("spatial scale must be 1, 2, 3 or 4")
        if self.t_in > self.t_out or self.t_in < 1:
            raise ValueError("need 1 <= t_in <= t_out")
        if min(self.d_h, self.n_layers, self.n_modes) < 1:
            raise ValueError("d_h, n_layers and n_modes must be positive")

    @property
    def c_in(self):
        return 3 * self.t_in

    @property
    def c_out(self):
        return 3 * self.t_out

    @property
    def uses_chi(self):
        return self.kind in ("lofno", "lofno_wo_lep")

    def receptive_radius(self):
        """Low-res voxels one input voxel can influence through the EDSR stack."""
        return 2 * self.edsr.n_blocks + 2

    def to_dict(self):
        d = asdict(self)
        d["srcnn_kernels"] = list(self.srcnn_kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg: ModelConfig):
    """Name -> (shape, fan_in or None for spectral, complex flag)."""
    shapes = {}

    def lin(name, c_out, c_in):
        shapes[name + ".w"] = ((c_out, c_in), c_in)
        shapes[name + ".b"] = ((c_out,), None)

    def conv(name, c_out, c_in, k=3):
        shapes[name + ".w"] = ((c_out, c_in, k, k, k), c_in * k**3)
        shapes[name + ".b"] = ((c_out,), None)

    if cfg.kind == "srcnn":
        c = cfg.c_out
        for i, k in enumerate(cfg.srcnn_kernels, 1):
            conv(f"srcnn.conv{i}", c, c, k)
        return shapes

    e = cfg.edsr
    s = cfg.scale
    conv("edsr.head", e.width, cfg.c_in + cfg.n_prior)
    for i in range(e.n_blocks):
        conv(f"edsr.block{i}.conv1", e.width, e.width)
        conv(f"edsr.block{i}.conv2", e.width, e.width)
    conv("edsr.up", e.width * s**3, e.width)
    lin("edsr.tail", cfg.c_out, e.width)
    if cfg.kind == "edsr":
        return shapes

    n_hr = cfg.n_prior if cfg.hr_prior else 0
    lin("lift", cfg.d_h, cfg.c_out + n_hr)
    m = cfg.n_modes
    shapes["fourier.spectral"] = (K.spectral_weight_shape(cfg.d_h, cfg.d_h, m), "spectral")
    lin("fourier", cfg.d_h, cfg.d_h)
    lin("proj.1", cfg.q_hidden, cfg.d_h)
    lin("proj.2", cfg.c_out, cfg.q_hidden)
    return shapes


def init_params(cfg: ModelConfig, seed=None):
    """Deterministic initialisation: fan-in scaled normals, zero biases,
    spectral weights uniform with scale ``1 / (d_h * n_modes^3)``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, (shape, fan) in param_shapes(cfg).items():
        if fan == "spectral":
            sc = 1.0 / (cfg.d_h * cfg.n_modes**3)
            w = sc * (rng.random(shape) + 1j * rng.random(shape))
            params[name] = w.astype(np.complex64)
        elif fan is None:
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            params[name] = (rng.standard_normal(shape) / np.sqrt(fan)).astype(np.float32)
    return params


def n_parameters(params):
    return int(sum(p.size * (2 if np.iscomplexobj(p) else 1) for p in params.values()))


# ---------------------------------------------------------------------------
# building blocks


def edsr_upsample(x, P, cfg: ModelConfig):
    """EDSR trunk on the low-res grid followed by a sub-voxel shuffle head.

    ``x`` is ``[c_in (+ n_prior), x, y, z]``; returns ``[3*t_out, s*x, s*y, s*z]``.
    """
    e = cfg.edsr
    if x.shape[0] != P["edsr.head.w"].shape[1]:
        raise ValueError(f"EDSR expects {P['edsr.head.w'].shape[1]} input channels, got {x.shape[0]}")
    h0 = K.conv3d(x, P["edsr.head.w"], P["edsr.head.b"])
    h = h0
    for i in range(e.n_blocks):
        p = f"edsr.block{i}."
        h = K.conv3_resblock(
            h, P[p + "conv1.w"], P[p + "conv1.b"], P[p + "conv2.w"], P[p + "conv2.b"], e.residual_scale, cfg.activation
        )
    if e.n_blocks:
        h = K.add(h, h0)
    up = K.pixel_shuffle3(K.conv3d(h, P["edsr.up.w"], P["edsr.up.b"]), cfg.scale)
    return K.pointwise_affine(up, P["edsr.tail.w"], P["edsr.tail.b"])


def fourier_layer(h, P, cfg, chi=None, i_chi=None):
    """One Fourier layer with the shared weights.

    With ``chi`` the integral only couples fluid voxels:
    ``act(chi * (I(chi h) - h * I(chi)) + W h + c)``; without it this is the
    plain ``act(I(h) + W h + c)``.  ``i_chi`` may pass a precomputed ``I(chi)``.
    """
    Ws = P["fourier.spectral"]
    local = K.pointwise_affine(h, P["fourier.w"], P["fourier.b"])
    if chi is None:
        return K.activation(K.add(K.spectral_conv(h, Ws), local), cfg.activation)
    chi_b = np.broadcast_to(np.asarray(chi, dtype=h.dtype), h.shape)
    if i_chi is None:
        i_chi = chi_integral(chi, P, h.tape, h.dtype)
    nonlocal_ = K.sub(K.spectral_conv(K.mul(h, chi_b), Ws), K.mul(h, i_chi))
    return K.activation(K.add(K.mul(nonlocal_, chi_b), local), cfg.activation)


def chi_integral(chi, P, tape, dtype=np.float32):
    """``I(chi)`` with chi copied onto every hidden channel."""
    Ws = P["fourier.spectral"]
    d_h = Ws.value.shape[0] if hasattr(Ws, "value") else Ws.shape[0]
    chi_b = tape.const(np.broadcast_to(np.asarray(chi, dtype=dtype), (d_h,) + np.shape(chi)).copy())
    return K.spectral_conv(chi_b, Ws)


def dafno_layer(h, chi, P, cfg):
    return fourier_layer(h, P, cfg, chi=chi)


# ---------------------------------------------------------------------------
# full models


def _bind(params, tape, trainable=True):
    return {k: tape.leaf(v, name=k, requires_grad=trainable) for k, v in params.items()}


def forward(params, cfg: ModelConfig, u_lr, e_lr=None, e_hr=None, chi_hr=None, tape=None):
    """Run model ``cfg.kind``; returns ``(prediction Var [3, T_out, X, Y, Z], bound params)``.

    ``u_lr`` is the noisy ``[3, T_in, x, y, z]`` input.  For ``srcnn`` it must
    already be interpolated onto the target grid and all ``T_out`` times.
    """
    tape = tape or Tape(enabled=False)
    P = _bind(params, tape)
    # float64 parameters (gradient checks) run the whole pass in float64
    dt = np.float64 if any(p.dtype in (np.float64, np.complex128) for p in params.values()) else np.float32
    u = np.asarray(u_lr, dtype=dt)
    x = tape.const(u.reshape((-1,) + u.shape[2:]))

    if cfg.kind == "srcnn":
        if x.shape[0] != cfg.c_out:
            raise ValueError(f"SRCNN expects {cfg.c_out} pre-upsampled channels, got {x.shape[0]}")
        n = len(cfg.srcnn_kernels)
        for i in range(1, n + 1):
            x = K.conv3d(x, P[f"srcnn.conv{i}.w"], P[f"srcnn.conv{i}.b"])
            if i < n:
                x = K.relu(x)
        out = x
    else:
        if cfg.n_prior:
            x = K.concat([x, tape.const(np.asarray(e_lr[: cfg.n_prior], dtype=dt))])
        out = edsr_upsample(x, P, cfg)
        if cfg.kind != "edsr":
            if cfg.n_prior and cfg.hr_prior:
                out = K.concat([out, tape.const(np.asarray(e_hr[: cfg.n_prior], dtype=dt))])
            h = K.pointwise_affine(out, P["lift.w"], P["lift.b"])
            if cfg.uses_chi:
                chi = np.asarray(chi_hr, dtype=dt)
                if chi.shape != h.shape[1:]:
                    raise ValueError(f"chi grid {chi.shape} does not match hidden grid {h.shape[1:]}")
                i_chi = chi_integral(chi, P, tape, dt)
                for _ in range(cfg.n_layers):
                    h = fourier_layer(h, P, cfg, chi=chi, i_chi=i_chi)
            else:
                for _ in range(cfg.n_layers):
                    h = fourier_layer(h, P, cfg)
            out = K.mlp_forward(h, [(P["proj.1.w"], P["proj.1.b"]), (P["proj.2.w"], P["proj.2.b"])], cfg.activation)
    if cfg.uses_chi and cfg.mask_output:
        out = K.mul(out, np.asarray(chi_hr, dtype=dt)[None])
    pred = K.reshape(out, (3, cfg.t_out) + out.shape[1:])
    return pred, P


def model_inputs(sample, cfg: ModelConfig):
    """Arrays fed to :func:`forward` for a :class:`~lofno.flow.FlowSample`."""
    if cfg.kind == "srcnn":
        from .baselines import linear_upsample

        u = linear_upsample(sample.input, sample.target.grid, sample.target.times).velocity
    else:
        u = sample.input.velocity
    e_lr = sample.prior_lr.channels if sample.prior_lr is not None else None
    e_hr = sample.prior_hr.channels if sample.prior_hr is not None else None
    if cfg.n_prior and (e_lr is None or len(e_lr) < cfg.n_prior):
        raise ValueError(f"sample provides fewer than n_prior={cfg.n_prior} prior channels")
    return dict(u_lr=u, e_lr=e_lr, e_hr=e_hr, chi_hr=sample.chi_hr.values)


def predict(params, cfg: ModelConfig, sample):
    pred, _ = forward(params, cfg, **model_inputs(sample, cfg))
    return pred.value


def lofno_forward(sample, params, cfg):
    return predict(params, cfg, sample)


def lofno_wo_lep_forward(sample, params, cfg):
    if cfg.n_prior:
        raise ValueError("LoFNO without priors needs n_prior = 0")
    return predict(params, cfg, sample)


def fno_edsr_forward(sample, params, cfg):
    return predict(params, cfg, sample)


def srcnn_forward(sample, params, cfg):
    return predict(params, cfg, sample)
