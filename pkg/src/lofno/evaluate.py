"""Error metrics, finite-difference wall shear stress and test-set reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .errors import DataError
from .geometry import ChiField, NormalField, SurfaceMesh, wall_normals

log = logging.getLogger(__name__)

WSS_STEPS = 3  # interior samples of the one-sided stencil, one voxel apart
WSS_REACH = 3  # vertices with no fluid voxel this many steps away are missing


def err_metric(pred, truth, mask=None):
    """Mean 2-norm of the pointwise vector difference over evaluation sites.

    ``pred`` and ``truth`` are ``[3, T, X, Y, Z]`` with a spatial ``mask``
    (chi) or ``[T, V, 3]`` mesh fields with an optional vertex ``mask``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim == 5:
        m = np.ones(pred.shape[2:], bool) if mask is None else np.asarray(mask, bool)
        d = np.linalg.norm(pred[:, :, m] - truth[:, :, m], axis=0)  # [T, M]
    elif pred.ndim == 3:
        m = np.ones(pred.shape[1], bool) if mask is None else np.asarray(mask, bool)
        d = np.linalg.norm(pred[:, m] - truth[:, m], axis=-1)
    else:
        raise ValueError("expected a [3, T, X, Y, Z] field or a [T, V, 3] mesh field")
    if d.size == 0:
        raise DataError("empty evaluation site set")
    return float(d.mean())


def normals_from_field(normals: NormalField, mesh: SurfaceMesh):
    """Nearest boundary-voxel normal for each mesh vertex."""
    centers = normals.grid.centers()[tuple(normals.index.T)]
    _, j = cKDTree(centers).query(mesh.vertices)
    return normals.normals[j]


def compute_wss(flow, geom, normals, mesh: SurfaceMesh, mu, chi: ChiField | None = None):
    """Wall shear stress ``[T, V, 3]`` and a missing-vertex mask ``[V]``.

    The wall-normal derivative comes from the one-sided second-order stencil
    ``(-5 u(h) + 8 u(2h) - 3 u(3h)) / (2h)`` on samples at distances ``h``,
    ``2h``, ``3h`` along ``-n``, extrapolated to the wall without assuming
    its value (so a constant field has zero shear); velocities are sampled
    trilinearly.  The gradient is approximated by
    ``du/dn (x) n`` and ``tau = mu (I - m m^T)(G + G^T) m`` with ``m = -n``
    pointing into the fluid, i.e. the shear exerted on the wall.  Outward
    normals ``n`` come from ``geom`` when given, else from the ``normals``
    field.
    """
    grid = flow.grid
    h = float(min(grid.spacing))
    V = len(mesh.vertices)
    if geom is not None:
        n = wall_normals(geom, mesh.vertices, 1e-3 * h)
    elif normals is not None:
        n = normals_from_field(normals, mesh)
    else:
        raise ValueError("need a geometry or a normal field")

    if chi is None:
        chi_mask = np.linalg.norm(flow.velocity, axis=0).max(axis=0) > 0
    else:
        chi_mask = np.asarray(chi.values if isinstance(chi, ChiField) else chi, bool)
    missing = np.ones(V, bool)
    fluid = grid.centers()[chi_mask]
    if len(fluid):
        d, _ = cKDTree(fluid).query(mesh.vertices, distance_upper_bound=WSS_REACH * h * (1 + 1e-9))
        missing = ~np.isfinite(d)

    origin = np.asarray(grid.origin, float)
    sp = np.asarray(grid.spacing, float)
    samples = []
    for k in range(1, WSS_STEPS + 1):
        p = mesh.vertices - k * h * n
        idx = (p - origin) / sp - 0.5  # voxel-index coordinates of the sample
        out = np.any((idx < 0) | (idx > np.asarray(grid.dims) - 1), axis=1)  # stencil leaves the grid
        missing |= out
        samples.append(idx)
    T = flow.velocity.shape[1]
    tau = np.zeros((T, V, 3))
    ok = ~missing
    if not ok.any():
        return tau, missing
    coords = [s[ok].T for s in samples]
    nn = n[ok]
    for t in range(T):
        u = [np.stack([map_coordinates(flow.velocity[c, t].astype(np.float64), q, order=1, mode="nearest")
                       for c in range(3)], axis=1) for q in coords]
        dudn = (5.0 * u[0] - 8.0 * u[1] + 3.0 * u[2]) / (2.0 * h)  # derivative along +n, outward
        G = dudn[:, :, None] * nn[:, None, :]
        S = G + np.transpose(G, (0, 2, 1))
        Sm = -np.einsum("pij,pj->pi", S, nn)
        tau[t, ok] = mu * (Sm - nn * np.einsum("pi,pi->p", Sm, nn)[:, None])
    return tau, missing


def wss_error(pred_tau, true_tau, mask):
    return err_metric(pred_tau, true_tau, mask)


@dataclass
class SampleResult:
    model: str
    task: str
    sample_id: str
    err_u: float
    err_wss: float
    missing_wss: int
    seconds: float = 0.0

    def to_dict(self):
        return {
            "model": self.model,
            "task": self.task,
            "sample_id": self.sample_id,
            "err_u": self.err_u,
            "err_wss": self.err_wss,
            "missing_wss": self.missing_wss,
        }


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # SampleResult
    train_seconds: dict = field(default_factory=dict)  # (model, task) -> s
    eval_seconds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def models(self):
        return list(dict.fromkeys(r.model for r in self.rows))

    def tasks(self):
        return list(dict.fromkeys(r.task for r in self.rows))

    def mean(self, model, task, metric):
        vals = [getattr(r, metric) for r in self.rows if r.model == model and r.task == task]
        if not vals:
            return float("nan")
        return float(np.mean(vals))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "task", "metric", "mean", "n_samples"])
        for m in self.models():
            for t in self.tasks():
                n = sum(1 for r in self.rows if r.model == m and r.task == t)
                if not n:
                    continue
                for metric in ("err_u", "err_wss"):
                    w.writerow([m, t, metric, repr(self.mean(m, t, metric)), n])
        return buf.getvalue()

    def to_jsonl(self):
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.rows)

    def to_table(self, metric="err_u"):
        tasks = self.tasks()
        names = self.models()
        width = max([len(n) for n in names] + [8])
        lines = [f"{'model':<{width}}  " + "  ".join(f"{t:>12}" for t in tasks)]
        for m in names:
            cells = []
            for t in tasks:
                v = self.mean(m, t, metric)
                cells.append(f"{v:12.4f}" if np.isfinite(v) else f"{'-':>12}")
            lines.append(f"{m:<{width}}  " + "  ".join(cells))
        return f"[{metric}]\n" + "\n".join(lines) + "\n"

    def timing_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "task", "train_seconds", "eval_seconds"])
        for (m, t), s in sorted(self.eval_seconds.items()):
            w.writerow([m, t, f"{self.train_seconds.get((m, t), 0.0):.3f}", f"{s:.3f}"])
        return buf.getvalue()


def evaluate_sample(predict_fn, sample, mu, model_name, task):
    """Velocity and WSS error of one prediction against a sample's ground truth."""
    t0 = time.perf_counter()
    pred = np.asarray(predict_fn(sample), dtype=np.float64)
    err_u = err_metric(pred, sample.target.velocity, sample.chi_hr.values)
    from .flow import FlowField

    pf = FlowField(sample.target.grid, sample.target.times, pred)
    tau, missing = compute_wss(pf, sample.geometry(), None, sample.mesh, mu, sample.chi_hr)
    sites = sample.wall & ~missing
    err_w = err_metric(tau, sample.wss_truth, sites)
    return SampleResult(model_name, task, sample.sample_id, err_u, err_w, int((sample.wall & missing).sum()),
                        time.perf_counter() - t0)


def evaluate(models, testset, task, mu, report=None):
    """Evaluate ``models`` (name -> predict function or None) on ``testset``.

    A ``None`` entry stands for a missing checkpoint; its row is skipped.
    """
    report = report or EvalReport()
    for name, fn in models.items():
        if fn is None:
            log.warning("no checkpoint for %s on %s; row skipped", name, task)
            continue
        t0 = time.perf_counter()
        for s in testset:
            report.rows.append(evaluate_sample(fn, s, mu, name, task))
        report.eval_seconds[(name, task)] = time.perf_counter() - t0
    return report
