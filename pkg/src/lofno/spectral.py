"""Laplacian eigenvector priors on surface meshes.

The mesh graph gives a symmetric normalized Laplacian whose eigenvectors
are resampled onto voxel grids with a Gaussian kernel.  Eigenpairs come
from a Lanczos iteration with full reorthogonalisation and locking
restarts, which also recovers degenerate eigenspaces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigh_tridiagonal
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import DisconnectedError, SpectrumError
from .geometry import SurfaceMesh, VoxelGrid

NULL_TOL = 1e-9
DEGENERATE_TOL = 1e-8


@dataclass
class MeshGraph:
    n_vertices: int
    adjacency: sparse.csr_matrix
    degrees: np.ndarray


@dataclass
class LaplacianSpectrum:
    eigenvalues: np.ndarray  # (k,)
    eigenvectors: np.ndarray  # (N, k), unit columns
    order: str = "largest_nonzero"


@dataclass
class PriorChannels:
    grid: VoxelGrid
    channels: np.ndarray  # (Ne, X, Y, Z)


def build_graph(mesh: SurfaceMesh, require_connected=True) -> MeshGraph:
    n = len(mesh.vertices)
    e = mesh.edges()
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A.data[:] = 1.0
    if require_connected:
        nc = csgraph.connected_components(A, directed=False)[0]
        if nc != 1:
            raise DisconnectedError("mesh graph", nc)
    return MeshGraph(n, A, np.asarray(A.sum(axis=1)).ravel().astype(np.int64))


def normalized_laplacian(graph: MeshGraph) -> sparse.csr_matrix:
    """``I - D^{+1/2} A D^{+1/2}`` with the pseudoinverse zeroing isolated rows."""
    d = graph.degrees.astype(float)
    dinv = np.zeros_like(d)
    dinv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    Dm = sparse.diags(dinv)
    L = sparse.identity(graph.n_vertices, format="csr") - Dm @ graph.adjacency @ Dm
    return sparse.csr_matrix(L)


def _orthogonalize(w, *bases):
    # two passes of classical Gram-Schmidt (DGKS style)
    for _ in range(2):
        for B in bases:
            if B.shape[1]:
                w = w - B @ (B.T @ w)
    return w


def lanczos_largest(matvec, n, want, locked, rng, tol=1e-9, max_steps=None):
    """One Lanczos run in the orthogonal complement of ``locked`` columns.

    Returns ``(ritz_values, ritz_vectors, residual_norms, steps)`` sorted by
    decreasing Ritz value.  Stops when the top ``want`` Ritz pairs have
    residual estimates below ``tol * max(1, |theta|)`` or the Krylov space
    becomes invariant.
    """
    m_max = n - locked.shape[1]
    if max_steps is not None:
        m_max = min(m_max, max_steps)
    if m_max <= 0:
        return np.empty(0), np.empty((n, 0)), np.empty(0), 0
    q = _orthogonalize(rng.standard_normal(n), locked)
    nq = np.linalg.norm(q)
    if nq < 1e-12:
        return np.empty(0), np.empty((n, 0)), np.empty(0), 0
    Q = np.zeros((n, m_max))
    Q[:, 0] = q / nq
    alpha, beta = [], []
    for j in range(m_max):
        w = matvec(Q[:, j])
        a = Q[:, j] @ w
        w = w - a * Q[:, j] - (beta[-1] * Q[:, j - 1] if j else 0.0)
        w = _orthogonalize(w, locked, Q[:, : j + 1])
        alpha.append(a)
        b = np.linalg.norm(w)
        invariant = b < 1e-12 * max(1.0, np.abs(alpha).max())
        m = j + 1
        if invariant or m == m_max or (m >= want and m % max(8, m // 8) == 0):
            top = min(m, want + 8)
            theta, S = eigh_tridiagonal(
                np.asarray(alpha), np.asarray(beta), select="i", select_range=(m - top, m - 1)
            )
            theta, S = theta[::-1], S[:, ::-1]
            res = np.abs(b * S[-1, :])
            top = min(want, m)
            converged = np.all(res[:top] <= tol * np.maximum(1.0, np.abs(theta[:top])))
            if invariant or (top == want and converged) or m == m_max:
                return theta, Q[:, :m] @ S, res, m
        beta.append(b)
        Q[:, j + 1] = w / b
    raise AssertionError("unreachable")


def _sign_fix(V):
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def top_k_eigenpairs(L, k, order="largest_nonzero", seed=0, tol=1e-9, max_iter=5000) -> LaplacianSpectrum:
    """``k`` eigenpairs of a symmetric normalized Laplacian, excluding its nullspace.

    ``largest_nonzero`` returns eigenvalues in descending order,
    ``smallest_nonzero`` in ascending order.
    """
    if order not in ("largest_nonzero", "smallest_nonzero"):
        raise ValueError(f"unknown order {order!r}")
    L = sparse.csr_matrix(L, dtype=float)
    n = L.shape[0]
    if k < 1:
        raise SpectrumError(f"k={k} must be positive")
    flip = order == "smallest_nonzero"
    # spectrum lies in [0, 2]; 2I - L turns the smallest into the largest
    matvec = (lambda x: 2.0 * x - L @ x) if flip else (lambda x: L @ x)
    rng = np.random.default_rng(seed)

    locked_vals = np.empty(0)
    locked = np.empty((n, 0))
    total = 0
    while True:
        lam = (2.0 - locked_vals) if flip else locked_vals
        nonzero = np.abs(lam) >= NULL_TOL
        need = k - int(nonzero.sum())
        kth = np.sort(locked_vals[nonzero])[::-1][k - 1] if need <= 0 else None
        want = max(need, 0) + 1
        theta, V, res, steps = lanczos_largest(
            matvec, n, want, locked, rng, tol=tol, max_steps=max_iter - total
        )
        total += steps
        if len(theta) == 0:
            break
        ok = res <= tol * np.maximum(1.0, np.abs(theta))
        # lock the converged prefix from the top
        n_new = int(np.argmin(ok)) if not ok.all() else len(ok)
        if kth is not None and (n_new == 0 or theta[0] < kth - DEGENERATE_TOL):
            break
        if n_new == 0:
            if total >= max_iter:
                raise SpectrumError(f"Lanczos did not converge within {max_iter} iterations")
            continue
        locked_vals = np.concatenate([locked_vals, theta[:n_new]])
        locked = np.concatenate([locked, V[:, :n_new]], axis=1)
        if locked.shape[1] >= n:
            break
        if total >= max_iter:
            raise SpectrumError(f"Lanczos did not converge within {max_iter} iterations")

    lam = (2.0 - locked_vals) if flip else locked_vals
    keep = np.abs(lam) >= NULL_TOL
    lam, V = lam[keep], locked[:, keep]
    if len(lam) < k:
        raise SpectrumError(f"requested k={k} but only {len(lam)} nonzero eigenvalues are available")
    # Rayleigh-Ritz on the collected subspace tidies up orthogonality
    Qs, _ = np.linalg.qr(V)
    H = Qs.T @ (L @ Qs)
    lam, S = np.linalg.eigh(0.5 * (H + H.T))
    V = Qs @ S
    keep = np.abs(lam) >= NULL_TOL
    lam, V = lam[keep], V[:, keep]
    idx = np.argsort(lam) if flip else np.argsort(-lam)
    lam, V = lam[idx[:k]], V[:, idx[:k]]
    V = _sign_fix(V / np.linalg.norm(V, axis=0))
    lam, V = _order_degenerate(lam, V, flip)
    return LaplacianSpectrum(lam, V, order)


def _order_degenerate(lam, V, ascending):
    """Within groups of (near-)equal eigenvalues, sort by the first component, descending."""
    lam, V = lam.copy(), V.copy()
    i = 0
    while i < len(lam):
        j = i + 1
        while j < len(lam) and abs(lam[j] - lam[i]) < DEGENERATE_TOL:
            j += 1
        if j - i > 1:
            idx = np.argsort(-V[0, i:j], kind="stable") + i
            V[:, i:j] = V[:, idx]
            lam[i:j] = lam[idx]
        i = j
    return lam, V


def mesh_spectrum(mesh: SurfaceMesh, k=32, order="largest_nonzero", seed=0):
    return top_k_eigenpairs(normalized_laplacian(build_graph(mesh)), k, order=order, seed=seed)


def spectrum_key(mesh: SurfaceMesh, k, order):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    h.update(f"{k}:{order}".encode())
    return h.hexdigest()


def gaussian_resample(mesh: SurfaceMesh, vertex_values, grid: VoxelGrid, radius, dtype=np.float64) -> PriorChannels:
    """Normalised Gaussian-kernel average of vertex values at voxel centres.

    Vertices farther than ``3 * radius`` do not contribute; voxels with no
    vertex in range are zero.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    vals = np.asarray(vertex_values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    centers = grid.centers().reshape(-1, 3)
    tree = cKDTree(mesh.vertices)
    pairs = tree.query_ball_point(centers, 3.0 * radius)
    counts = np.fromiter((len(p) for p in pairs), dtype=np.int64, count=len(pairs))
    out = np.zeros((len(centers), vals.shape[1]))
    if counts.sum():
        vox = np.repeat(np.arange(len(centers)), counts)
        vert = np.concatenate([np.asarray(p, dtype=np.int64) for p in pairs if len(p)])
        d2 = ((centers[vox] - mesh.vertices[vert]) ** 2).sum(axis=1)
        w = np.exp(-d2 / (2.0 * radius * radius))
        wsum = np.bincount(vox, weights=w, minlength=len(centers))
        for c in range(vals.shape[1]):
            out[:, c] = np.bincount(vox, weights=w * vals[vert, c], minlength=len(centers))
        hit = wsum > 0
        out[hit] /= wsum[hit, None]
    channels = out.T.reshape((vals.shape[1],) + grid.dims)
    return PriorChannels(grid, channels.astype(dtype))
