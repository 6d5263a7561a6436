"""Synthetic pulsatile vessel flow and its degradation into training pairs.

The ground truth is a quasi-steady Poiseuille-type field: speed
``amplitude * s(t) * g(x)`` along the local centreline tangent, where
``g = r(2 - r)`` with ``r = clip(-sdf_tube / R_local, 0, 1)``.  On a
straight tube this is the parabolic profile and the wall shear is
``2 mu U / R``.  ``sdf_tube`` ignores the bulge, so the axial field stays
divergence-free; the sac instead holds a slow vortex
``SAC_SPEED * E(rho) * a x (x - c) / r_b`` with radial envelope
``E = 1 - (rho / rho_1)^2``, which is divergence-free for any radial
``E``.  ``rho_1`` reaches just past the smooth-min fillet so no fluid voxel
is at rest (the relative loss divides by the true speed).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .geometry import (
    ChiField,
    SurfaceMesh,
    VesselGeometry,
    VesselSpec,
    VoxelGrid,
    extract_surface_mesh,
    generate_vessel,
    sample_chi,
    sdf_gradient,
)
from .spectral import PriorChannels, gaussian_resample, mesh_spectrum

log = logging.getLogger(__name__)

MU = 3.5e-3  # Pa s (dynamic)
SAC_SPEED = 0.5  # sac vortex scale relative to the centreline peak; its peak is ~0.48 of this
SAC_REACH = 1.25  # envelope radius / bulge radius; fluid admitted by the smooth-min blend lies within r_b / 4 of the sphere
RHO = 1060.0  # kg / m^3


@dataclass
class PulseSpec:
    """Inlet waveform ``s(t) = 1 + sum_n a_n sin(2 pi n t / period + phi_n)``.

    Base phases are ``n * pi / 3``; ``phase_jitter`` (radians) perturbs each
    phase and the amplitude (by the same relative amount) from ``seed``.
    """

    period: float = 1.0
    amplitude: float = 0.5
    harmonics: tuple = (0.4, 0.15)
    phase_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.harmonics = tuple(float(h) for h in self.harmonics)
        if self.amplitude <= 0 or self.period <= 0:
            raise ValueError("pulse amplitude and period must be positive")

    def _draws(self):
        rng = np.random.default_rng(self.seed)
        u = rng.uniform(-1.0, 1.0, size=len(self.harmonics) + 1)
        return u[:-1] * self.phase_jitter, 1.0 + 0.5 * self.phase_jitter * u[-1]

    @property
    def effective_amplitude(self):
        return self.amplitude * self._draws()[1]

    def waveform(self, t):
        t = np.asarray(t, dtype=float)
        dphi, _ = self._draws()
        s = np.ones_like(t)
        for n, (a, d) in enumerate(zip(self.harmonics, dphi), 1):
            s = s + a * np.sin(2 * np.pi * n * t / self.period + n * np.pi / 3 + d)
        return s

    def to_dict(self):
        return {
            "period": self.period,
            "amplitude": self.amplitude,
            "harmonics": list(self.harmonics),
            "phase_jitter": self.phase_jitter,
            "seed": self.seed,
        }


@dataclass
class FlowField:
    grid: VoxelGrid
    times: np.ndarray
    velocity: np.ndarray  # [3, T, X, Y, Z] float32, m/s
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = self.velocity
        if v.ndim != 5 or v.shape[0] != 3 or v.shape[1] != len(self.times) or v.shape[2:] != self.grid.dims:
            raise ValueError(f"velocity shape {v.shape} inconsistent with grid {self.grid.dims} and {len(self.times)} times")

    @property
    def n_times(self):
        return len(self.times)


def profile(geom: VesselGeometry, points):
    """Velocity per unit centreline peak speed: the axial field plus the sac vortex."""
    sdf, tangent, radius = geom.axial_query(points)
    r = np.clip(-sdf / radius, 0.0, 1.0)
    g = r * (2.0 - r)
    return g[..., None] * tangent + sac_vortex(geom, points)


def sac_vortex(geom: VesselGeometry, points):
    """Divergence-free recirculation inside the bulge, zero beyond ``SAC_REACH * r_b``."""
    p = np.asarray(points, dtype=float)
    if geom.bulge_center is None:
        return np.zeros(p.shape)
    rb = geom.bulge_radius
    x = p - geom.bulge_center
    rho = np.linalg.norm(x, axis=-1)
    env = np.clip(1.0 - (rho / (SAC_REACH * rb)) ** 2, 0.0, None)
    env = np.where(geom.sdf(p) < 0, env, 0.0)  # the ball overhangs the fillet; keep the exterior at rest
    return (SAC_SPEED / rb) * env[..., None] * np.cross(geom.bulge_axis, x)


def uniform_times(pulse: PulseSpec, T):
    return np.arange(T) * pulse.period / T


def analytic_flow(geom: VesselGeometry, pulse: PulseSpec, grid: VoxelGrid, T) -> FlowField:
    if T < 1:
        raise ValueError("need at least one timestep")
    q = profile(geom, grid.centers())  # X, Y, Z, 3
    times = uniform_times(pulse, T)
    s = pulse.effective_amplitude * pulse.waveform(times)
    vel = s[None, :, None, None, None] * np.moveaxis(q, -1, 0)[:, None]
    return FlowField(grid, times, vel.astype(np.float32))


def analytic_wss(geom: VesselGeometry, pulse: PulseSpec, points, times, mu=MU):
    """Closed-form wall shear stress of the analytic field, ``[T, P, 3]`` in Pa.

    On the tube wall the only velocity gradient is
    ``amplitude s(t) tangent (x) grad g`` with ``grad g = -2 grad(sdf) / R``.
    Where the bulge blend shapes the wall (``on_tube_wall`` false) no
    closed form is provided and the result is zero; those vertices are
    left out of the evaluated wall set.  The normal in ``mu (I - n n^T)(G + G^T) n``
    points into the fluid, so the result is the shear the blood exerts on
    the wall and is aligned with the near-wall flow.
    """
    pts = np.asarray(points, dtype=float)
    _, tangent, radius = geom.axial_query(pts)
    grad = sdf_gradient(geom, pts, 1e-4 * geom.spec.domain_size, lambda q: geom.axial_query(q)[0])
    n = -grad / np.linalg.norm(grad, axis=1, keepdims=True)
    G = tangent[:, :, None] * (-2.0 * grad / radius[:, None])[:, None, :]  # unit-speed du_i/dx_j
    S = G + np.transpose(G, (0, 2, 1))
    Sn = np.einsum("pij,pj->pi", S, n)
    tau = mu * (Sn - n * np.einsum("pi,pi->p", Sn, n)[:, None])
    tau[~on_tube_wall(geom, pts)] = 0.0
    s = pulse.effective_amplitude * pulse.waveform(np.asarray(times))
    return s[:, None, None] * tau[None]


def on_tube_wall(geom: VesselGeometry, points):
    """True where the bulge blend leaves the tube surface untouched."""
    d = geom.axial_query(points)[0]
    if geom.bulge_center is None:
        return np.ones(d.shape, bool)
    db = np.linalg.norm(np.asarray(points, dtype=float) - geom.bulge_center, axis=-1) - geom.bulge_radius
    return db - d >= geom.bulge_radius / 4


def wall_vertices(geom: VesselGeometry, mesh: SurfaceMesh, mesh_resolution):
    """Tube-wall vertices where the WSS truth is closed-form.

    Inlet/outlet cap vertices (deep inside the tube) and the sac wall are
    excluded.
    """
    tol = 0.25 * geom.spec.domain_size / mesh_resolution
    return geom.wall_mask(mesh.vertices, tol) & on_tube_wall(geom, mesh.vertices)


def poiseuille_wss(mu, peak_speed, radius):
    return 2.0 * mu * peak_speed / radius


# ---------------------------------------------------------------------------
# degradation


def add_noise(flow: FlowField, snr, seed, chi) -> FlowField:
    """Gaussian noise on fluid voxels with mean signal power / noise power = ``snr``.

    Power is the mean squared velocity magnitude over fluid voxels and all
    times; each component gets variance ``power / (3 snr)``.  ``snr=inf``
    returns an unchanged copy.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    if np.isinf(snr):
        return replace(flow, velocity=flow.velocity.copy(), meta=dict(flow.meta))
    mask = np.asarray(chi.values if isinstance(chi, ChiField) else chi, dtype=bool)
    v = flow.velocity
    inside = v[:, :, mask]  # [3, T, M]
    power = float((inside.astype(np.float64) ** 2).sum(axis=0).mean()) if inside.size else 0.0
    if power == 0.0:
        raise DataError("undefined SNR: flow is identically zero in the domain")
    sigma = np.sqrt(power / (3.0 * snr))
    rng = np.random.default_rng(seed)
    noisy = v.copy()
    noisy[:, :, mask] = (inside + sigma * rng.standard_normal(inside.shape)).astype(v.dtype)
    return FlowField(flow.grid, flow.times, noisy, dict(flow.meta, snr=float(snr), noise_sigma=float(sigma)))


def downsample_space(flow: FlowField, factor) -> FlowField:
    """Keep every ``factor``-th voxel starting at index 0."""
    if factor < 1 or any(d % factor for d in flow.grid.dims):
        raise ValueError(f"factor {factor} does not divide grid dims {flow.grid.dims}")
    if factor == 1:
        return flow
    v = flow.velocity[:, :, ::factor, ::factor, ::factor].copy()
    return FlowField(flow.grid.coarsen(factor), flow.times, v, dict(flow.meta))


def downsample_time(flow: FlowField, keep) -> FlowField:
    """Keep ``keep`` frames at uniform stride from t=0."""
    T = flow.n_times
    if keep < 1 or keep > T:
        raise ValueError(f"keep={keep} must lie in 1..{T}")
    if keep != 1 and T % keep:
        raise ValueError(f"keep={keep} does not divide T={T}")
    if keep == T:
        return flow
    idx = np.arange(keep) * (T // keep if keep > 1 else 1)
    return FlowField(flow.grid, flow.times[idx], flow.velocity[:, idx].copy(), dict(flow.meta))


def strided_chi(chi: ChiField, factor):
    if factor == 1:
        return chi
    return ChiField(chi.grid.coarsen(factor), chi.values[::factor, ::factor, ::factor].copy())


# ---------------------------------------------------------------------------
# tasks and datasets

TASKS = {
    # name: (spatial factor, kept fraction of frames; 0 means single initial frame)
    "spatial_x2": (2, 1),
    "spatial_x3": (3, 1),
    "spatial_x4": (4, 1),
    "temporal_x2": (1, 2),
    "temporal_x4": (1, 4),
    "prediction": (1, 0),
}


def task_shape(task, n_times):
    """``(space_factor, kept_frames)`` for ``task`` with ``n_times`` target frames."""
    try:
        factor, tdiv = TASKS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}") from None
    keep = 1 if tdiv == 0 else n_times // tdiv
    return factor, keep


@dataclass
class DatasetConfig:
    task: str = "spatial_x2"
    target_dims: int = 32
    n_times: int = 24
    n_train: int = 8
    n_test: int = 2
    flows_per_geometry: int = 1
    train_seeds: list | None = None
    test_seeds: list | None = None
    seed: int = 0
    snr: float = 10.0
    domain_size: float = 0.032
    vessel_jitter: float = 0.3
    amplitude: float = 0.5
    period: float = 1.0
    harmonics: tuple = (0.4, 0.15)
    phase_jitter: float = 0.15
    n_eigs: int = 32
    eig_order: str = "largest_nonzero"
    mesh_resolution: int = 32
    kernel_radius: float = 1.5  # in target voxel spacings
    mu: float = MU
    rho: float = RHO

    def __post_init__(self):
        self.harmonics = tuple(self.harmonics)
        task_shape(self.task, self.n_times)
        if self.train_seeds is None:
            self.train_seeds = list(range(self.n_train))
        if self.test_seeds is None:
            self.test_seeds = list(range(1000, 1000 + self.n_test))
        self.train_seeds = [int(s) for s in self.train_seeds]
        self.test_seeds = [int(s) for s in self.test_seeds]
        overlap = set(self.train_seeds) & set(self.test_seeds)
        if overlap:
            raise ValueError(f"train and test geometry seeds overlap: {sorted(overlap)}")
        factor, _ = task_shape(self.task, self.n_times)
        if self.target_dims % factor:
            raise ValueError(f"target_dims={self.target_dims} not divisible by spatial factor {factor}")


@dataclass
class FlowSample:
    sample_id: str
    split: str
    input: FlowField
    target: FlowField
    chi_hr: ChiField
    chi_lr: ChiField
    prior_lr: PriorChannels | None
    prior_hr: PriorChannels | None
    mesh: SurfaceMesh
    wss_truth: np.ndarray  # [T, V, 3] Pa, zero on inlet/outlet faces
    wall: np.ndarray  # [V] bool, vertex lies on the vessel wall
    vessel: VesselSpec  # realised, jitter-free
    pulse: PulseSpec
    provenance: dict = field(default_factory=dict)

    def geometry(self):
        return VesselGeometry(self.vessel)


def _derive(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def realize_vessel(cfg: DatasetConfig, geom_seed, max_attempts=20):
    base = VesselSpec(domain_size=cfg.domain_size, jitter=cfg.vessel_jitter)
    for attempt in range(max_attempts):
        s = geom_seed if attempt == 0 else _derive(geom_seed, attempt)
        try:
            geom = generate_vessel(base, s)
        except DataError as exc:
            log.debug("geometry seed %d attempt %d rejected: %s", geom_seed, attempt, exc)
            continue
        return replace(geom.spec, jitter=0.0), attempt
    raise DataError(f"could not realise a valid vessel for seed {geom_seed}")


def make_sample(cfg: DatasetConfig, split, geom_seed, flow_index=0, spectrum_cache=None) -> FlowSample:
    vessel, attempt = realize_vessel(cfg, geom_seed)
    geom = VesselGeometry(vessel)
    pulse_seed = _derive(cfg.seed, geom_seed, flow_index, 1)
    noise_seed = _derive(cfg.seed, geom_seed, flow_index, 2)
    pulse = PulseSpec(cfg.period, cfg.amplitude, cfg.harmonics, cfg.phase_jitter, pulse_seed)

    grid_hr = VoxelGrid.cube(cfg.target_dims, cfg.domain_size)
    factor, keep = task_shape(cfg.task, cfg.n_times)
    target = analytic_flow(geom, pulse, grid_hr, cfg.n_times)
    chi_hr = sample_chi(geom, grid_hr)
    chi_lr = strided_chi(chi_hr, factor)
    low = downsample_time(downsample_space(target, factor), keep)
    noisy = add_noise(low, cfg.snr, noise_seed, chi_lr)

    mesh = extract_surface_mesh(geom, cfg.mesh_resolution)
    spec = None
    key = None
    if spectrum_cache is not None:
        from .spectral import spectrum_key

        key = spectrum_key(mesh, cfg.n_eigs, cfg.eig_order)
        spec = spectrum_cache.get(key)
    if spec is None:
        spec = mesh_spectrum(mesh, cfg.n_eigs, cfg.eig_order, seed=cfg.seed)
        if spectrum_cache is not None:
            spectrum_cache[key] = spec
    radius = cfg.kernel_radius * grid_hr.spacing[0]
    prior_hr = gaussian_resample(mesh, spec.eigenvectors, grid_hr, radius, np.float32)
    prior_lr = gaussian_resample(mesh, spec.eigenvectors, chi_lr.grid, radius, np.float32)
    wall = wall_vertices(geom, mesh, cfg.mesh_resolution)
    wss = analytic_wss(geom, pulse, mesh.vertices, target.times, cfg.mu)
    wss[:, ~wall] = 0.0
    wss = wss.astype(np.float32)

    sid = f"{split}_{geom_seed:05d}_{flow_index}"
    prov = {
        "geometry_seed": int(geom_seed),
        "geometry_attempt": int(attempt),
        "flow_index": int(flow_index),
        "pulse_seed": int(pulse_seed),
        "noise_seed": int(noise_seed),
        "task": cfg.task,
        "snr": cfg.snr,
        "snr_definition": "power ratio (mean |u|^2 / mean |noise|^2) over fluid voxels",
    }
    return FlowSample(sid, split, noisy, target, chi_hr, chi_lr, prior_lr, prior_hr, mesh, wss, wall, vessel, pulse, prov)


def sample_plan(cfg: DatasetConfig):
    plan = [("train", s, j) for s in cfg.train_seeds for j in range(cfg.flows_per_geometry)]
    plan += [("test", s, j) for s in cfg.test_seeds for j in range(cfg.flows_per_geometry)]
    return plan


def make_dataset(cfg: DatasetConfig, workers=1):
    """All train and test samples of ``cfg``; identical output for any ``workers``."""
    plan = sample_plan(cfg)
    if workers <= 1:
        return [make_sample(cfg, *p) for p in plan]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(lambda p: make_sample(cfg, *p), plan))


def sample_digest(sample: FlowSample):
    h = hashlib.sha256()
    for arr in (sample.input.velocity, sample.target.velocity, sample.chi_hr.values, sample.wss_truth):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
