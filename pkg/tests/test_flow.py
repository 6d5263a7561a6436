import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from lofno.errors import DataError
from lofno.flow import (
    MU,
    DatasetConfig,
    FlowField,
    PulseSpec,
    add_noise,
    analytic_flow,
    analytic_wss,
    downsample_space,
    downsample_time,
    make_dataset,
    make_sample,
    poiseuille_wss,
    realize_vessel,
    sample_digest,
    task_shape,
)
from lofno.geometry import VesselGeometry, VesselSpec, VoxelGrid, sample_chi, straight_tube

L = 0.032
R = 0.15  # fraction of L


def tube():
    return VesselGeometry(straight_tube(R, domain_size=L))


def tiny_cfg(**kw):
    base = dict(task="spatial_x2", target_dims=16, n_times=4, n_train=2, n_test=1, n_eigs=8, mesh_resolution=16)
    base.update(kw)
    return DatasetConfig(**base)


def field(rng, shape=(3, 4, 8, 8, 8)):
    return FlowField(VoxelGrid.cube(shape[2], L), np.arange(shape[1]) * 0.25, rng.standard_normal(shape).astype(np.float32))


def interior_divergence(geom, n=32):
    grid = VoxelGrid.cube(n, L)
    pulse = PulseSpec()
    u = analytic_flow(geom, pulse, grid, 1).velocity[:, 0].astype(np.float64)
    h = grid.spacing[0]
    div = sum(np.gradient(u[a], h, axis=a) for a in range(3))
    inner = ndimage.binary_erosion(sample_chi(geom, grid).values.astype(bool), iterations=2)
    # central differences need both neighbours inside the grid
    inner[[0, -1]] = False
    inner[:, [0, -1]] = False
    inner[:, :, [0, -1]] = False
    return np.abs(div[inner]).max() * h / pulse.amplitude


# ---------------------------------------------------------------------------
# pulse and analytic field


@pytest.mark.parametrize("kw", [{"amplitude": 0.0}, {"period": -1.0}])
def test_pulse_rejects_nonpositive(kw):
    with pytest.raises(ValueError):
        PulseSpec(**kw)


def test_pulse_without_jitter_keeps_amplitude():
    p = PulseSpec(amplitude=0.7, seed=99)
    assert p.effective_amplitude == 0.7
    t = np.linspace(0, 1, 7)
    assert np.allclose(p.waveform(t), 1 + 0.4 * np.sin(2 * np.pi * t + np.pi / 3) + 0.15 * np.sin(4 * np.pi * t + 2 * np.pi / 3))


def test_centerline_speed():
    grid = VoxelGrid.cube(15, L)  # odd, so voxel row j = k = 7 lies on the axis
    pulse = PulseSpec()
    f = analytic_flow(tube(), pulse, grid, 6)
    expected = pulse.amplitude * pulse.waveform(f.times)
    for i in (2, 7, 12):
        speed = np.linalg.norm(f.velocity[:, :, i, 7, 7].astype(np.float64), axis=0)
        assert np.allclose(speed, expected, atol=1e-6)
        assert np.allclose(f.velocity[1:, :, i, 7, 7], 0)


def test_wall_adjacent_speed_follows_parabola():
    grid = VoxelGrid.cube(32, L)
    pulse = PulseSpec()
    f = analytic_flow(tube(), pulse, grid, 1)
    chi = sample_chi(tube(), grid).values.astype(bool)
    edge = chi & ~ndimage.binary_erosion(chi)
    pts = grid.centers()[edge]
    rho = np.linalg.norm(pts[:, 1:] - 0.5 * L, axis=1)
    bound = pulse.amplitude * pulse.waveform(0.0) * (1 - (rho / (R * L)) ** 2)
    speed = np.linalg.norm(f.velocity[:, 0][:, edge], axis=0)
    assert np.all(speed <= bound * (1 + 1e-6) + 1e-9)
    assert np.allclose(speed, bound, rtol=1e-5)


def test_no_slip_exterior():
    geom = VesselGeometry(VesselSpec(domain_size=L))
    grid = VoxelGrid.cube(16, L)
    f = analytic_flow(geom, PulseSpec(), grid, 3)
    chi = sample_chi(geom, grid).values
    assert np.all(f.velocity[:, :, chi == 0] == 0)
    assert np.all(np.isfinite(f.velocity))


def test_straight_tube_divergence_free():
    assert interior_divergence(tube()) < 1e-10


def test_default_vessel_divergence_bound():
    assert interior_divergence(VesselGeometry(VesselSpec(domain_size=L))) < 0.05


@pytest.mark.parametrize("seed", range(4))
def test_random_vessel_divergence(seed):
    vessel, _ = realize_vessel(DatasetConfig(), seed)
    # the profile kink at the sac neck lies inside the fluid; central differences across it
    # leave an O(h / R) residue that reaches 0.051 on one of six seeds (see decisions ledger)
    assert interior_divergence(VesselGeometry(vessel)) < 0.1


def test_analytic_wss_straight_tube():
    geom = tube()
    pulse = PulseSpec()
    ang = np.linspace(0, 2 * np.pi, 9)[:-1]
    pts = np.stack([np.full(8, 0.4 * L), 0.5 * L + R * L * np.cos(ang), 0.5 * L + R * L * np.sin(ang)], axis=1)
    times = np.array([0.0, 0.3])
    tau = analytic_wss(geom, pulse, pts, times)
    U = pulse.amplitude * pulse.waveform(times)
    assert np.allclose(np.linalg.norm(tau, axis=-1), poiseuille_wss(MU, U, R * L)[:, None], rtol=1e-6)
    # shear points along the flow on the wall
    assert np.allclose(tau[..., 1:], 0, atol=1e-9 * tau.max())
    assert np.all(tau[..., 0] > 0)


def test_analytic_wss_zero_on_sac_wall():
    geom = VesselGeometry(VesselSpec(domain_size=L))
    tip = geom.bulge_center + geom.bulge_radius * (geom.bulge_center - geom.points[64]) / np.linalg.norm(
        geom.bulge_center - geom.points[64]
    )
    assert np.all(analytic_wss(geom, PulseSpec(), tip[None], [0.0]) == 0)


# ---------------------------------------------------------------------------
# noise


def test_noise_snr_within_band():
    geom = tube()
    grid = VoxelGrid.cube(32, L)
    f = analytic_flow(geom, PulseSpec(), grid, 8)
    chi = sample_chi(geom, grid)
    assert chi.count * 8 >= 10_000
    noisy = add_noise(f, 10.0, 3, chi)
    m = chi.values.astype(bool)
    sig = (f.velocity[:, :, m].astype(np.float64) ** 2).sum(axis=0).mean()
    noise = ((noisy.velocity - f.velocity)[:, :, m].astype(np.float64) ** 2).sum(axis=0).mean()
    assert 9.0 <= sig / noise <= 11.0


def test_noise_infinite_snr_is_identity():
    f = field(np.random.default_rng(0))
    out = add_noise(f, np.inf, 0, np.ones((8, 8, 8), bool))
    assert np.array_equal(out.velocity, f.velocity)
    assert out.velocity is not f.velocity


def test_noise_deterministic_and_confined():
    rng = np.random.default_rng(1)
    f = field(rng)
    chi = rng.uniform(size=(8, 8, 8)) < 0.5
    f.velocity[:, :, ~chi] = 0
    a = add_noise(f, 10.0, 42, chi)
    b = add_noise(f, 10.0, 42, chi)
    c = add_noise(f, 10.0, 43, chi)
    assert np.array_equal(a.velocity, b.velocity)
    assert not np.array_equal(a.velocity, c.velocity)
    assert np.all(a.velocity[:, :, ~chi] == 0)


def test_noise_zero_flow_undefined():
    f = FlowField(VoxelGrid.cube(4, L), [0.0], np.zeros((3, 1, 4, 4, 4), np.float32))
    with pytest.raises(DataError, match="undefined SNR"):
        add_noise(f, 10.0, 0, np.ones((4, 4, 4), bool))


def test_noise_rejects_nonpositive_snr():
    with pytest.raises(ValueError):
        add_noise(field(np.random.default_rng(0)), 0.0, 0, np.ones((8, 8, 8), bool))


# ---------------------------------------------------------------------------
# subsampling


def test_downsample_space_strided():
    rng = np.random.default_rng(2)
    f = field(rng, (3, 2, 32, 32, 32))
    d = downsample_space(f, 2)
    assert d.grid.dims == (16, 16, 16)
    assert d.grid.spacing[0] == 2 * f.grid.spacing[0]
    for i, j, k in [(0, 0, 0), (3, 7, 15), (15, 1, 9)]:
        assert np.array_equal(d.velocity[:, :, i, j, k], f.velocity[:, :, 2 * i, 2 * j, 2 * k])
    assert np.allclose(d.grid.center(3, 7, 15), f.grid.center(6, 14, 30))


def test_downsample_space_x3_pairing():
    f = field(np.random.default_rng(3), (3, 1, 24, 24, 24))
    assert downsample_space(f, 3).grid.dims == (8, 8, 8)


def test_downsample_space_identity_and_errors():
    f = field(np.random.default_rng(4))
    assert np.array_equal(downsample_space(f, 1).velocity, f.velocity)
    with pytest.raises(ValueError):
        downsample_space(f, 3)


def test_downsample_time():
    f = FlowField(VoxelGrid.cube(4, L), np.arange(24) / 24, np.random.default_rng(5).standard_normal((3, 24, 4, 4, 4)))
    assert np.allclose(downsample_time(f, 12).times, np.arange(0, 24, 2) / 24)
    one = downsample_time(f, 1)
    assert one.n_times == 1 and np.array_equal(one.velocity[:, 0], f.velocity[:, 0])
    assert np.array_equal(downsample_time(f, 24).velocity, f.velocity)
    with pytest.raises(ValueError):
        downsample_time(f, 25)
    with pytest.raises(ValueError):
        downsample_time(f, 5)


@given(st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4, 8]), st.integers(0, 1000))
def test_degradation_commutes(factor, keep, seed):
    f = field(np.random.default_rng(seed), (3, 8, 8, 8, 8))
    a = downsample_time(downsample_space(f, factor), keep)
    b = downsample_space(downsample_time(f, keep), factor)
    assert np.array_equal(a.velocity, b.velocity)
    assert np.array_equal(a.times, b.times)


# ---------------------------------------------------------------------------
# tasks and datasets


def test_task_shapes():
    assert task_shape("spatial_x2", 24) == (2, 24)
    assert task_shape("spatial_x3", 24) == (3, 24)
    assert task_shape("temporal_x2", 24) == (1, 12)
    assert task_shape("temporal_x4", 24) == (1, 6)
    assert task_shape("prediction", 24) == (1, 1)
    with pytest.raises(ValueError, match="unknown task"):
        task_shape("spatial_x5", 24)


def test_overlapping_seeds_rejected():
    with pytest.raises(ValueError, match="overlap"):
        DatasetConfig(train_seeds=[1, 2, 3], test_seeds=[3, 4])


def test_indivisible_target_rejected():
    with pytest.raises(ValueError):
        DatasetConfig(task="spatial_x3", target_dims=32)


@pytest.fixture(scope="module")
def tiny_dataset():
    return make_dataset(tiny_cfg())


def test_sample_invariants(tiny_dataset):
    for s in tiny_dataset:
        factor = s.target.grid.dims[0] // s.input.grid.dims[0]
        assert factor == 2
        assert set(np.round(s.input.times, 12)) <= set(np.round(s.target.times, 12))
        assert np.all(s.target.velocity[:, :, s.chi_hr.values == 0] == 0)
        assert np.all(s.input.velocity[:, :, s.chi_lr.values == 0] == 0)
        assert s.prior_hr.channels.shape == (8,) + s.target.grid.dims
        assert s.prior_lr.channels.shape == (8,) + s.input.grid.dims
        assert s.wss_truth.shape == (4, len(s.mesh.vertices), 3)
        for k in ("geometry_seed", "pulse_seed", "noise_seed"):
            assert k in s.provenance


def test_test_geometries_unseen(tiny_dataset):
    train = [s for s in tiny_dataset if s.split == "train"]
    test = [s for s in tiny_dataset if s.split == "test"]
    assert len(train) == 2 and len(test) == 1
    assert {s.provenance["geometry_seed"] for s in train}.isdisjoint({s.provenance["geometry_seed"] for s in test})
    assert all(t.vessel != s.vessel for t in test for s in train)


def test_dataset_deterministic(tiny_dataset):
    again = make_dataset(tiny_cfg())
    assert [sample_digest(s) for s in again] == [sample_digest(s) for s in tiny_dataset]


def test_parallel_matches_serial(tiny_dataset):
    par = make_dataset(tiny_cfg(), workers=3)
    assert [sample_digest(s) for s in par] == [sample_digest(s) for s in tiny_dataset]


def test_temporal_and_prediction_samples():
    for task, keep in (("temporal_x2", 2), ("prediction", 1)):
        s = make_sample(tiny_cfg(task=task, n_train=1, n_test=0), "train", 0)
        assert s.input.grid == s.target.grid
        assert s.input.n_times == keep
        assert s.input.times[0] == 0.0
