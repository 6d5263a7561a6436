"""Desk-scale experiments behind the acceptance checks and ``scripts/``.

Each function builds its own synthetic data, trains, evaluates and returns a
plain dict of numbers so callers can print or gate on them.
"""

from __future__ import annotations

import logging
import time

from .baselines import linear_predict
from .evaluate import evaluate
from .flow import MU, DatasetConfig, make_dataset, make_sample, task_shape
from .model import EDSRConfig, ModelConfig, predict
from .train import TrainConfig, train

log = logging.getLogger(__name__)


def split(samples):
    return [s for s in samples if s.split == "train"], [s for s in samples if s.split == "test"]


def overfit_smoke(epochs=500, seed=0):
    """Tiny LoFNO (d_h=8, two layers, four modes) on two 8^3 -> 16^3, T=4 samples."""
    cfg = DatasetConfig(task="spatial_x2", target_dims=16, n_times=4, n_train=2, n_test=1, mesh_resolution=24,
                        n_eigs=8, seed=seed)
    samples = [make_sample(cfg, "train", s) for s in cfg.train_seeds]
    mc = ModelConfig(kind="lofno", d_h=8, n_layers=2, n_modes=4, n_prior=8, scale=2, t_in=4, t_out=4, q_hidden=16,
                     edsr=EDSRConfig(2, 16, 0.1), seed=seed)
    t0 = time.perf_counter()
    r = train(mc, samples, TrainConfig(epochs=epochs, batch_size=1, accumulate=1, seed=seed))
    h = r.history
    return {"first": h[0], "last": h[-1], "best": min(h), "ratio": min(h) / h[0], "seconds": time.perf_counter() - t0}


def desk_models(task, n_times, kinds=("lofno", "fno_edsr")):
    scale, keep = task_shape(task, n_times)
    return {
        k: ModelConfig(kind=k, d_h=16, n_layers=4, n_modes=6, n_prior=16, scale=scale, t_in=keep, t_out=n_times,
                       q_hidden=32, edsr=EDSRConfig(2, 16, 0.1))
        for k in kinds
    }


def compare(task="spatial_x2", target_dims=32, n_times=8, n_train=8, n_test=2, epochs=200, kinds=("lofno", "fno_edsr"),
            progress=None):
    """Train ``kinds`` on one synthetic task and report mean test errors next to linear interpolation.

    Returns ``{"err_u": {name: value}, "err_wss": {...}, "train_seconds": {...}, "seconds": total}``.
    """
    t0 = time.perf_counter()
    cfg = DatasetConfig(task=task, target_dims=target_dims, n_times=n_times, n_train=n_train, n_test=n_test,
                        n_eigs=16)
    train_set, test_set = split(make_dataset(cfg))
    report = evaluate({"linear": linear_predict}, test_set, task, MU)
    seconds = {}
    for kind, mc in desk_models(task, n_times, kinds).items():
        cb = None if progress is None else (lambda e, loss, k=kind: progress(k, e, loss))
        r = train(mc, train_set, TrainConfig(epochs=epochs, batch_size=1, accumulate=1), callback=cb)
        seconds[kind] = r.seconds
        report = evaluate({kind: (lambda s, p=r.params, mc=mc: predict(p, mc, s))}, test_set, task, MU, report)
    names = ["linear", *kinds]
    return {
        "err_u": {n: report.mean(n, task, "err_u") for n in names},
        "err_wss": {n: report.mean(n, task, "err_wss") for n in names},
        "train_seconds": seconds,
        "seconds": time.perf_counter() - t0,
        "report": report,
    }
