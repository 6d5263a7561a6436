"""Voxel grids, synthetic vessel geometries and their rasterizations.

Geometries are anything exposing ``sdf(points)`` (negative inside) and
``bounds()``.  The synthetic vessel is a variable-radius tube swept along a
cubic Bezier centreline, optionally blended with a spherical bulge.  Its
ends normally lie outside the domain box, so the fluid region is an open
vessel section: the box faces it crosses act as inlet and outlet.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .errors import DataError, DisconnectedError, EmptyDomainError


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.dims) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("VoxelGrid needs 3 dims, spacings and origin coordinates")
        if min(self.dims) < 2:
            raise ValueError(f"grid dims must be >= 2, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    @classmethod
    def cube(cls, n, size=1.0, origin=0.0):
        return cls((n, n, n), (size / n,) * 3, (origin,) * 3)

    @property
    def shape(self):
        return self.dims

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    def center(self, i, j, k):
        return np.asarray(self.origin) + (np.array([i, j, k], dtype=float) + 0.5) * np.asarray(self.spacing)

    def axes(self):
        return [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing[a] for a in range(3)]

    def centers(self):
        """Voxel centres as an ``(X, Y, Z, 3)`` array."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def coarsen(self, factor):
        """Grid whose voxel centres coincide with every ``factor``-th centre of this one."""
        if any(d % factor for d in self.dims):
            raise ValueError(f"factor {factor} does not divide grid dims {self.dims}")
        spacing = tuple(s * factor for s in self.spacing)
        origin = tuple(o - 0.5 * s * (factor - 1) for o, s in zip(self.origin, self.spacing))
        return VoxelGrid(tuple(d // factor for d in self.dims), spacing, origin)

    def refine(self, factor):
        """Inverse of :meth:`coarsen`."""
        spacing = tuple(s / factor for s in self.spacing)
        origin = tuple(o + 0.5 * s * (factor - 1) for o, s in zip(self.origin, spacing))
        return VoxelGrid(tuple(d * factor for d in self.dims), spacing, origin)

    def world_to_index(self, points):
        """Continuous index coordinates (voxel centre of index i sits at i)."""
        return (np.asarray(points) - np.asarray(self.origin)) / np.asarray(self.spacing) - 0.5

    def to_dict(self):
        return {"dims": list(self.dims), "spacing": list(self.spacing), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["dims"]), tuple(d["spacing"]), tuple(d["origin"]))


# ---------------------------------------------------------------------------
# primitive geometries


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def sdf(self, points):
        p = np.asarray(points, dtype=float)
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class HalfSpace:
    """Region behind a plane; ``normal`` points out of the domain."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    def sdf(self, points):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return (np.asarray(points, dtype=float) - np.asarray(self.point)) @ n

    def bounds(self):
        return np.full(3, -np.inf), np.full(3, np.inf)


def smooth_min(a, b, k):
    """Polynomial smooth minimum with blend width ``k``."""
    if k <= 0:
        return np.minimum(a, b)
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h * h * k * 0.25


# ---------------------------------------------------------------------------
# vessels


@dataclass(frozen=True)
class Bulge:
    """Spherical outpouching attached at centreline parameter ``t``.

    The sphere centre sits ``offset`` away from the centreline along
    ``direction`` (projected perpendicular to the local tangent).
    """

    t: float
    radius: float
    offset: float
    direction: tuple[float, float, float] = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class VesselSpec:
    """Explicit vessel description plus the randomisation applied per seed.

    ``radii`` are tube radii at equally spaced arclength knots (piecewise
    linear in between).  ``jitter`` scales every random perturbation;
    ``jitter == 0`` makes :func:`generate_vessel` ignore the seed.
    """

    control_points: tuple = ((-0.35, 0.45, 0.5), (0.3, 0.45, 0.5), (0.7, 0.45, 0.5), (1.35, 0.45, 0.5))
    radii: tuple = (0.16, 0.14)
    bulge: Bulge | None = Bulge(t=0.5, radius=0.15, offset=0.15)
    domain_size: float = 1.0
    jitter: float = 0.0
    n_segments: int = 128
    coarse_dims: int = 8

    def to_dict(self):
        d = {
            "control_points": [list(p) for p in self.control_points],
            "radii": list(self.radii),
            "domain_size": self.domain_size,
            "jitter": self.jitter,
            "n_segments": self.n_segments,
            "coarse_dims": self.coarse_dims,
            "bulge": None,
        }
        if self.bulge is not None:
            b = self.bulge
            d["bulge"] = {"t": b.t, "radius": b.radius, "offset": b.offset, "direction": list(b.direction)}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        b = d.pop("bulge", None)
        bulge = None if b is None else Bulge(b["t"], b["radius"], b["offset"], tuple(b["direction"]))
        return cls(
            control_points=tuple(tuple(float(c) for c in p) for p in d.pop("control_points")),
            radii=tuple(float(r) for r in d.pop("radii")),
            bulge=bulge,
            **d,
        )


def straight_tube(radius, start=(-0.3, 0.5, 0.5), end=(1.3, 0.5, 0.5), domain_size=1.0):
    """Cylinder without bulge; coordinates are fractions of ``domain_size``.

    The default axis runs along x through the whole box (open ends); start
    and end inside the box give a closed capsule instead.
    """
    s, e = np.asarray(start, float), np.asarray(end, float)
    cps = tuple(tuple(s + (e - s) * f) for f in (0.0, 1 / 3, 2 / 3, 1.0))
    return VesselSpec(control_points=cps, radii=(radius,), bulge=None, domain_size=domain_size)


def _bezier(cps, t):
    t = np.asarray(t)[:, None]
    p0, p1, p2, p3 = cps
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


class VesselGeometry:
    """Signed distance to a tube swept along a polyline of the centreline.

    All lengths are in the same unit as ``spec.domain_size`` (metres in the
    dataset pipeline).  The sdf is negative inside.
    """

    def __init__(self, spec: VesselSpec):
        self.spec = spec
        L = spec.domain_size
        cps = np.asarray(spec.control_points, dtype=float) * L
        if cps.shape != (4, 3):
            raise ValueError("centreline needs 4 control points")
        if min(spec.radii) <= 0:
            raise ValueError("radius profile must be positive")
        pts = _bezier(cps, np.linspace(0.0, 1.0, spec.n_segments + 1))
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        length = seg_len.sum()
        if length < 1e-9 * max(L, 1e-12):
            raise ValueError("degenerate zero-length tube")
        self.length = float(length)
        self.points = pts
        self.seg = seg
        self.seg_len2 = np.maximum(seg_len**2, 1e-300)
        self.arclength = np.concatenate([[0.0], np.cumsum(seg_len)]) / length
        knots = np.linspace(0.0, 1.0, len(spec.radii)) if len(spec.radii) > 1 else np.array([0.0])
        self._knots = knots
        self._radii = np.asarray(spec.radii, dtype=float) * L
        self.bulge_center = None
        self.bulge_radius = 0.0
        self.bulge_axis = None  # rotation axis of the sac vortex
        if spec.bulge is not None:
            b = spec.bulge
            rb = b.radius * L
            if rb >= 0.5 * length:
                raise ValueError("bulge radius must be below half the tube length")
            i = int(np.clip(np.searchsorted(self.arclength, b.t), 1, len(pts) - 1))
            tangent = seg[i - 1] / max(np.linalg.norm(seg[i - 1]), 1e-300)
            d = np.asarray(b.direction, dtype=float)
            d = d - tangent * (d @ tangent)
            if np.linalg.norm(d) < 1e-9:
                raise ValueError("bulge direction parallel to centreline")
            d /= np.linalg.norm(d)
            base = pts[i - 1] + (b.t - self.arclength[i - 1]) / max(
                self.arclength[i] - self.arclength[i - 1], 1e-300
            ) * seg[i - 1]
            self.bulge_center = base + d * b.offset * L
            self.bulge_radius = rb
            # turning about (-d) x tangent moves the neck side of the sac with the parent flow
            self.bulge_axis = np.cross(-d, tangent)

    def radius_at(self, s):
        if len(self._radii) == 1:
            return np.full(np.shape(s), self._radii[0])
        return np.interp(s, self._knots, self._radii)

    def _tube(self, p):
        """Tube sdf, nearest centreline tangent and local radius for points ``(P, 3)``."""
        best = np.full(len(p), np.inf)
        tangent = np.zeros((len(p), 3))
        radius = np.zeros(len(p))
        # segments in blocks keep the (P, S) temporaries small
        for lo in range(0, len(self.seg), 32):
            a = self.points[lo : lo + 32]
            ab = self.seg[lo : lo + 32]
            ap = p[:, None, :] - a[None]
            u = np.clip(np.einsum("psk,sk->ps", ap, ab) / self.seg_len2[lo : lo + 32], 0.0, 1.0)
            d = np.linalg.norm(ap - u[..., None] * ab[None], axis=-1)
            s = self.arclength[lo : lo + 32] + u * np.diff(self.arclength)[lo : lo + 32]
            r = self.radius_at(s)
            val = d - r
            j = np.argmin(val, axis=1)
            v = val[np.arange(len(p)), j]
            better = v < best
            best = np.where(better, v, best)
            t = ab[j] / np.sqrt(self.seg_len2[lo : lo + 32][j])[:, None]
            tangent[better] = t[better]
            radius[better] = r[np.arange(len(p)), j][better]
        return best, tangent, radius

    def axial_query(self, points):
        """Return ``(sdf, tangent, local_radius)`` of the swept tube alone, ignoring the bulge."""
        p = np.asarray(points, dtype=float)
        shape = p.shape[:-1]
        p = p.reshape(-1, 3)
        out_sdf = np.empty(len(p))
        out_t = np.empty((len(p), 3))
        out_r = np.empty(len(p))
        for lo in range(0, len(p), 4096):
            out_sdf[lo : lo + 4096], out_t[lo : lo + 4096], out_r[lo : lo + 4096] = self._tube(p[lo : lo + 4096])
        return out_sdf.reshape(shape), out_t.reshape(shape + (3,)), out_r.reshape(shape)

    def query(self, points):
        """Return ``(sdf, tangent, local_radius)`` at ``points`` of shape ``(..., 3)``.

        The sdf includes the bulge; tangent and radius belong to the tube.
        """
        d, t, r = self.axial_query(points)
        if self.bulge_center is not None:
            db = np.linalg.norm(np.asarray(points, dtype=float) - self.bulge_center, axis=-1) - self.bulge_radius
            d = smooth_min(d, db, self.bulge_radius / 4)
        return d, t, r

    def tube_sdf(self, points):
        """Vessel sdf without the box clipping."""
        return self.query(points)[0]

    def box_sdf(self, points):
        """Signed distance to the domain box ``[0, L]^3`` (negative inside)."""
        p = np.asarray(points, dtype=float)
        q = np.abs(p - 0.5 * self.spec.domain_size) - 0.5 * self.spec.domain_size
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def sdf(self, points):
        """Fluid-region sdf: the vessel clipped by the domain box."""
        return np.maximum(self.query(points)[0], self.box_sdf(points))

    def wall_mask(self, points, tol):
        """True for surface points on the vessel wall, False on inlet/outlet faces."""
        return self.query(points)[0] > -tol

    def tube_bounds(self):
        rmax = self._radii.max()
        lo = self.points.min(axis=0) - rmax
        hi = self.points.max(axis=0) + rmax
        if self.bulge_center is not None:
            lo = np.minimum(lo, self.bulge_center - self.bulge_radius)
            hi = np.maximum(hi, self.bulge_center + self.bulge_radius)
        return lo, hi

    def bounds(self):
        lo, hi = self.tube_bounds()
        L = self.spec.domain_size
        return np.clip(lo, 0.0, L), np.clip(hi, 0.0, L)

    def open_faces(self):
        """Box faces ``(axis, side)`` the centreline leaves through; side 0 is the low face."""
        L = self.spec.domain_size
        faces = set()
        for p in (self.points[0], self.points[-1]):
            viol = np.concatenate([-p, p - L])
            if viol.max() > 0:
                i = int(np.argmax(viol))
                faces.add((i % 3, i // 3))
        return faces

    def domain_grid(self, n):
        return VoxelGrid.cube(n, self.spec.domain_size)


def _perturb(spec: VesselSpec, rng):
    j = spec.jitter
    cps = np.asarray(spec.control_points, dtype=float)
    cps[1:3] += rng.uniform(-0.5, 0.5, size=(2, 3)) * j
    cps[[0, 3]] += rng.uniform(-0.25, 0.25, size=(2, 3)) * j
    radii = tuple(float(r * (1 + 0.5 * j * rng.uniform(-1, 1))) for r in spec.radii)
    bulge = spec.bulge
    if bulge is not None:
        tan = cps[2] - cps[1]
        tan /= np.linalg.norm(tan)
        helper = np.array([1.0, 0, 0]) if abs(tan[0]) < 0.9 else np.array([0, 1.0, 0])
        e1 = np.cross(tan, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(tan, e1)
        ang = rng.uniform(0, 2 * np.pi)
        bulge = replace(
            bulge,
            t=float(np.clip(bulge.t + 0.5 * j * rng.uniform(-1, 1), 0.3, 0.7)),
            radius=float(bulge.radius * (1 + 0.8 * j * rng.uniform(-1, 1))),
            offset=float(bulge.offset * (1 + 0.8 * j * rng.uniform(-1, 1))),
            direction=tuple(float(c) for c in np.cos(ang) * e1 + np.sin(ang) * e2),
        )
    return replace(spec, control_points=tuple(map(tuple, cps.tolist())), radii=radii, bulge=bulge)


def _faces_clear(geom: VesselGeometry, n=33):
    """The tube may only touch the box faces its centreline exits through."""
    L = geom.spec.domain_size
    a, b = np.meshgrid(np.linspace(0, L, n), np.linspace(0, L, n), indexing="ij")
    open_ = geom.open_faces()
    for axis in range(3):
        for side in (0, 1):
            if (axis, side) in open_:
                continue
            pts = np.zeros((n, n, 3))
            others = [k for k in range(3) if k != axis]
            pts[..., axis] = side * L
            pts[..., others[0]] = a
            pts[..., others[1]] = b
            if (geom.query(pts)[0] <= 0).any():
                return False
    return True


def generate_vessel(spec: VesselSpec, seed=0):
    """Build a vessel from ``spec``, randomised by ``seed`` when ``spec.jitter > 0``.

    Raises if the tube touches a box face other than its inlet and outlet,
    or if the interior is empty or split into several pieces on the coarse
    ``spec.coarse_dims``-cubed domain grid.
    """
    if spec.jitter > 0:
        spec = _perturb(spec, np.random.default_rng(seed))
    geom = VesselGeometry(spec)
    if not _faces_clear(geom):
        raise DataError("vessel leaves the domain box")
    inside = geom.sdf(geom.domain_grid(spec.coarse_dims).centers()) < 0
    if not inside.any():
        raise EmptyDomainError("empty domain at coarsest grid")
    _, n = ndimage.label(inside)
    if n > 1:
        raise DisconnectedError("vessel interior at coarsest grid", n)
    return geom


# ---------------------------------------------------------------------------
# rasterisation


@dataclass
class ChiField:
    grid: VoxelGrid
    values: np.ndarray  # uint8, one per voxel

    @property
    def count(self):
        return int(self.values.sum())


def sample_chi(geom, grid: VoxelGrid) -> ChiField:
    """Characteristic function: 1 where the voxel-centre sdf is negative."""
    values = (geom.sdf(grid.centers()) < 0).astype(np.uint8)
    if not values.any():
        raise EmptyDomainError()
    return ChiField(grid, values)


def boundary_mask(chi: ChiField):
    """Fluid voxels with at least one non-fluid face neighbour (grid exterior counts as non-fluid)."""
    inside = np.pad(chi.values.astype(bool), 1, constant_values=False)
    eroded = ndimage.binary_erosion(inside, structure=ndimage.generate_binary_structure(3, 1))
    return (inside & ~eroded)[1:-1, 1:-1, 1:-1]


def sdf_gradient(geom, points, h, sdf=None):
    """Central-difference gradient of ``sdf`` (default ``geom.sdf``)."""
    f = geom.sdf if sdf is None else sdf
    p = np.asarray(points, dtype=float)
    g = np.empty(p.shape)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[..., a] = (f(p + e) - f(p - e)) / (2 * h)
    return g


def wall_normals(geom, points, h):
    """Outward unit normals of the vessel wall; ignores the box clipping when available."""
    g = sdf_gradient(geom, points, h, getattr(geom, "tube_sdf", None))
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)


@dataclass
class NormalField:
    grid: VoxelGrid
    index: np.ndarray  # (M, 3) voxel indices of boundary voxels
    normals: np.ndarray  # (M, 3) unit outward normals


def boundary_normals(geom, chi: ChiField) -> NormalField:
    """Outward unit normals at boundary voxel centres from the sdf gradient."""
    idx = np.argwhere(boundary_mask(chi))
    if len(idx) == 0:
        raise DataError("no boundary voxels")
    pts = chi.grid.centers()[tuple(idx.T)]
    g = sdf_gradient(geom, pts, 1e-3 * min(chi.grid.spacing))
    n = g / np.linalg.norm(g, axis=1, keepdims=True)
    return NormalField(chi.grid, idx, n)


# ---------------------------------------------------------------------------
# surface meshes


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def edges(self):
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self):
        return len(self.vertices) - len(self.edges()) + len(self.faces)

    def area(self):
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum()

    def n_components(self):
        n = len(self.vertices)
        e = self.edges()
        adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return csgraph.connected_components(adj, directed=False)[0]


def clean_mesh(vertices, faces, tol=1e-6):
    """Snap vertices closer than ``tol``, drop degenerate faces and unused vertices."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    keys = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    vertices = vertices[first]
    faces = inverse[faces]
    v = vertices[faces]
    area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2]) & (area2 > 0)
    faces = faces[ok]
    used = np.unique(faces)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(vertices[used], remap[faces])


def extract_surface_mesh(geom, resolution=32) -> SurfaceMesh:
    """Zero iso-surface of ``geom.sdf`` by marching cubes over its padded bounding box.

    ``resolution`` is the number of cells along the longest bounding-box side.
    """
    from skimage.measure import marching_cubes

    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    lo, hi = (np.asarray(b, dtype=float) for b in geom.bounds())
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("geometry is unbounded")
    h = (hi - lo).max() / resolution
    lo = lo - 2 * h
    n = np.ceil((hi + 2 * h - lo) / h).astype(int) + 1
    axes = [lo[a] + h * np.arange(n[a]) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vol = geom.sdf(pts)
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(h, h, h), allow_degenerate=False)
    mesh = clean_mesh(verts + lo, faces)
    if len(mesh.faces) == 0:
        raise DataError("surface extraction produced no faces")
    nc = mesh.n_components()
    if nc != 1:
        raise DisconnectedError("surface mesh", nc)
    return mesh


def write_obj(mesh: SurfaceMesh, path):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]  # repr round-trips exactly
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> SurfaceMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise DataError("only triangle faces are supported")
            faces.append(idx)
    return SurfaceMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


_VTK_TRIANGLE = 5


def _data_array(el):
    fmt = el.get("format", "ascii")
    if fmt != "ascii":
        raise DataError(f"unsupported VTK DataArray format {fmt!r} (ascii only)")
    return np.array((el.text or "").split(), dtype=float)


def read_vtu(path) -> SurfaceMesh:
    """Triangle surface from a VTK XML UnstructuredGrid (ascii arrays)."""
    root = ET.parse(path).getroot()
    piece = root.find("./UnstructuredGrid/Piece")
    if piece is None:
        raise DataError("not a VTK UnstructuredGrid file")
    pts = _data_array(piece.find("./Points/DataArray")).reshape(-1, 3)
    arrays = {el.get("Name"): el for el in piece.findall("./Cells/DataArray")}
    conn = _data_array(arrays["connectivity"]).astype(np.int64)
    offsets = _data_array(arrays["offsets"]).astype(np.int64)
    types = _data_array(arrays["types"]).astype(np.int64)
    bad = np.flatnonzero(types != _VTK_TRIANGLE)
    if len(bad):
        raise DataError(f"non-triangle cell types {sorted(set(types[bad].tolist()))} in {path}")
    if not np.array_equal(np.diff(np.concatenate([[0], offsets])), np.full(len(types), 3)):
        raise DataError("triangle cells must have 3 points")
    return SurfaceMesh(pts, conn.reshape(-1, 3))
