"""``lofno gen|train|eval|render`` command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import config as config_mod
from .baselines import BaselineSpec, linear_predict, rbf_predict
from .container import (
    atomic_write,
    load_checkpoint,
    load_manifest,
    manifest_path,
    read_dataset,
    write_dataset,
)
from .errors import ConfigError, DataError, NumericalError
from .evaluate import EvalReport, compute_wss, evaluate
from .flow import FlowField, make_dataset
from .model import MODEL_KINDS, predict
from .train import train

log = logging.getLogger("lofno")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
COMMANDS = ("gen", "train", "eval", "render")


def thread_limit():
    n = os.environ.get("LOFNO_THREADS")
    if not n:
        return nullcontext(), 1
    try:
        k = max(1, int(n))
    except ValueError:
        raise ConfigError(f"LOFNO_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(k), k


def dataset_dict(cfg):
    return cfg.to_dict()["dataset"]


# ---------------------------------------------------------------------------
# gen


def cmd_gen(cfg, args, workers=1):
    root = cfg.data_dir
    want = dataset_dict(cfg)
    if manifest_path(root).exists() and not args.force:
        m = load_manifest(root)
        if m["config"] == want:
            read_dataset(root)  # verifies hashes
            print(f"dataset {root} up to date")
            return EXIT_OK
        raise ConfigError(f"{root} holds a dataset for a different config; use --force to overwrite")
    if root.exists() and any(root.iterdir()) and not manifest_path(root).exists() and not args.force:
        raise DataError(f"{root} contains a partial dataset without manifest; use --force to overwrite")
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write to {root}: {exc}") from exc
    if manifest_path(root).exists():
        manifest_path(root).unlink()
    samples = make_dataset(cfg.dataset, workers=workers)
    write_dataset(root, samples, want)
    print(f"wrote {len(samples)} samples to {root}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _check_task(cfg, args):
    if args.task and args.task != cfg.dataset.task:
        raise ConfigError(f"--task {args.task} does not match the config's dataset task {cfg.dataset.task}")


def load_split(cfg, split):
    root = cfg.data_dir
    m = load_manifest(root)
    if m["config"] != dataset_dict(cfg):
        raise ConfigError(f"dataset at {root} was generated from a different config; rerun gen")
    return read_dataset(root, split)


def checkpoint_path(cfg, kind):
    return cfg.task_run_dir / f"{kind}.ckpt"


def write_history(path, history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(history, 1):
        w.writerow([i, repr(v)])
    atomic_write(path, buf.getvalue().encode())


def cmd_train(cfg, args):
    kind = args.model or cfg.model.kind
    if kind in ("linear", "rbf"):
        print(f"{kind} needs no training")
        return EXIT_OK
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model {kind!r}; valid kinds: {', '.join(config_mod.ALL_MODELS)}")
    _check_task(cfg, args)
    mcfg = cfg.model_config(kind)
    samples = load_split(cfg, "train")
    ckpt = checkpoint_path(cfg, kind)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    if ckpt.exists() and not args.force:
        header, _, _ = load_checkpoint(ckpt)
        if header.get("epoch") == cfg.train.epochs and header.get("model") == mcfg.to_dict():
            print(f"{ckpt} up to date")
            return EXIT_OK
    if args.force and ckpt.exists():
        ckpt.unlink()

    def progress(epoch, loss):
        log.info("epoch %d loss %.6g", epoch, loss)

    result = train(mcfg, samples, cfg.train, checkpoint=ckpt, callback=progress)
    header, params, opt = load_checkpoint(ckpt)
    header["train_seconds"] = header.get("train_seconds", 0.0) + result.seconds
    from .container import save_checkpoint

    save_checkpoint(ckpt, params, header, opt)
    write_history(cfg.task_run_dir / f"{kind}_history.csv", header["history"])
    print(f"trained {kind}: final loss {header['history'][-1]!r} -> {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def predictor(cfg, kind):
    """Prediction function for ``kind``, or None when its checkpoint is missing."""
    if kind == "linear":
        return linear_predict, 0.0
    if kind == "rbf":
        spec = BaselineSpec("rbf", rbf_kernel=cfg.eval.rbf_kernel, rbf_cap=cfg.eval.rbf_cap)
        return (lambda s: rbf_predict(s, spec)), 0.0
    ckpt = checkpoint_path(cfg, kind)
    if not ckpt.exists():
        return None, 0.0
    header, params, _ = load_checkpoint(ckpt)
    mcfg = cfg.model_config(kind)
    if header.get("model") != mcfg.to_dict():
        log.warning("checkpoint %s does not match the configured %s model; row skipped", ckpt, kind)
        return None, 0.0
    return (lambda s: predict(params, mcfg, s)), float(header.get("train_seconds", 0.0))


def cmd_eval(cfg, args):
    _check_task(cfg, args)
    test = load_split(cfg, "test")
    if not test:
        raise DataError("dataset has no test samples")
    kinds = [args.model] if args.model else list(cfg.eval.models)
    for k in kinds:
        if k not in config_mod.ALL_MODELS:
            raise ConfigError(f"unknown model {k!r}; valid kinds: {', '.join(config_mod.ALL_MODELS)}")
    report = EvalReport(meta={"task": cfg.dataset.task, "loss_norm": "per-voxel 3-vector 2-norm", "aggregate": "mean"})
    task = cfg.dataset.task
    for k in kinds:
        fn, train_s = predictor(cfg, k)
        if fn is None:
            print(f"warning: no checkpoint for {k}; row skipped", file=sys.stderr)
        evaluate({k: fn}, test, task, cfg.dataset.mu, report)
        report.train_seconds[(k, task)] = train_s
    out = cfg.task_run_dir
    atomic_write(out / "report.csv", report.to_csv().encode())
    atomic_write(out / "report.txt", (report.to_table("err_u") + "\n" + report.to_table("err_wss")).encode())
    atomic_write(out / "samples.jsonl", report.to_jsonl().encode())
    atomic_write(out / "timing.csv", report.timing_csv().encode())
    print(report.to_table("err_u"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def cmd_render(cfg, args):
    from .render import render

    _check_task(cfg, args)
    test = load_split(cfg, "test")
    rc = cfg.render
    sid = args.sample or rc.sample or test[0].sample_id
    match = [s for s in test if s.sample_id == sid]
    if not match:
        raise DataError(f"no test sample {sid!r}")
    s = match[0]
    kind = args.model or "truth"
    if kind == "truth":
        vel = s.target.velocity
    else:
        fn, _ = predictor(cfg, kind)
        if fn is None:
            raise DataError(f"no checkpoint for {kind}")
        vel = np.asarray(fn(s), dtype=np.float32)
    tau, _ = compute_wss(FlowField(s.target.grid, s.target.times, vel), s.geometry(), None, s.mesh, cfg.dataset.mu, s.chi_hr)
    tau[:, ~s.wall] = 0.0
    t = rc.timestep if args.timestep is None else args.timestep
    axis = rc.axis if args.axis is None else args.axis
    idx = rc.slice if args.slice is None else args.slice
    paths = render(vel, tau, s.mesh.vertices, cfg.task_run_dir / "render", f"{sid}_{kind}_t{t}",
                   timestep=t, axis=axis, index=idx, ppv=rc.pixels_per_voxel)
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="lofno", description="Localized Fourier neural operator flow super-resolution")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--model", help="model kind")
    p.add_argument("--task", help="task id; must match the config")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--sample", help="render: test sample id")
    p.add_argument("--timestep", type=int)
    p.add_argument("--axis", type=int, choices=(0, 1, 2))
    p.add_argument("--slice", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        limit, workers = thread_limit()
        with limit:
            run_dir = cfg.task_run_dir
            if args.command == "gen":
                code = cmd_gen(cfg, args, workers)
            elif args.command == "train":
                code = cmd_train(cfg, args)
            elif args.command == "eval":
                code = cmd_eval(cfg, args)
            else:
                code = cmd_render(cfg, args)
            if args.command in ("train", "eval"):
                run_dir.mkdir(parents=True, exist_ok=True)
                atomic_write(run_dir / "config.toml", cfg.dumps().encode())
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

