"""Training with the relative loss, Adam and a cosine learning-rate schedule."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels as K
from .autodiff import Tape
from .errors import NumericalError
from .model import ModelConfig, forward, init_params, model_inputs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 2
    accumulate: int = 4
    lr: float = 1e-3
    lr_min: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_rel_factor: float = 1e-6  # loss guard, relative to the dataset mean speed
    seed: int = 0
    checkpoint_every: int = 50
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.accumulate < 1:
            raise ValueError("batch_size and accumulate must be >= 1")
        if not self.eps_rel_factor > 0:
            raise ValueError("eps_rel must be positive")
        if self.lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ValueError("need 0 <= lr_min <= lr and lr > 0")

    def to_dict(self):
        return asdict(self)


def cosine_lr(cfg: TrainConfig, epoch):
    """Learning rate for 0-based ``epoch``; decays from ``lr`` to ``lr_min``."""
    if cfg.epochs == 1:
        return cfg.lr
    f = epoch / (cfg.epochs - 1)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + np.cos(np.pi * f))


def _real_view(a):
    return a.view(a.real.dtype) if np.iscomplexobj(a) else a


class Adam:
    """Adam on a dict of arrays; complex arrays are updated as (re, im) pairs."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(_real_view(v), dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(_real_view(v), dtype=np.float64) for k, v in params.items()}

    def step(self, params, grads, lr):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for k in sorted(params):
            g = grads.get(k)
            if g is None:
                continue
            g = _real_view(np.ascontiguousarray(g, dtype=params[k].dtype)).astype(np.float64)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p = _real_view(params[k])
            p -= upd.astype(p.dtype)

    def state(self):
        out = {"step": np.array([self.step_count], dtype=np.int64)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load(self, state):
        self.step_count = int(state["step"][0])
        for k in self.m:
            self.m[k] = state[f"m/{k}"].astype(np.float64)
            self.v[k] = state[f"v/{k}"].astype(np.float64)


def mean_speed(samples):
    """Mean target speed over fluid voxels and all times of ``samples``."""
    tot, n = 0.0, 0
    for s in samples:
        m = s.chi_hr.values.astype(bool)
        sp = np.linalg.norm(s.target.velocity[:, :, m].astype(np.float64), axis=0)
        tot += sp.sum()
        n += sp.size
    return tot / max(n, 1)


def sample_loss_and_grads(params, cfg: ModelConfig, inputs, truth, chi, eps_rel):
    tape = Tape()
    pred, P = forward(params, cfg, tape=tape, **inputs)
    loss = K.relative_loss(pred, truth, chi, eps_rel)
    value = float(loss.value)
    if not np.isfinite(value):
        return value, None
    tape.backward(loss)
    return value, {k: v.grad for k, v in P.items()}


@dataclass
class TrainResult:
    params: dict
    history: list  # per-epoch mean loss
    seconds: float
    eps_rel: float
    start_epoch: int = 0

    def history_hash(self):
        return hashlib.sha256(np.asarray(self.history, dtype="<f8").tobytes()).hexdigest()


def epoch_order(cfg: TrainConfig, epoch, n):
    if not cfg.shuffle:
        return np.arange(n)
    return np.random.default_rng([cfg.seed, epoch]).permutation(n)


def train(model_cfg: ModelConfig, samples, cfg: TrainConfig, params=None, checkpoint=None, resume=True,
          stop_after=None, callback=None) -> TrainResult:
    """Fit ``model_cfg`` on ``samples``.

    One optimiser step per ``batch_size * accumulate`` samples; gradients are
    summed in a fixed order so runs are bit-reproducible.  With
    ``checkpoint`` set, state is saved every ``cfg.checkpoint_every`` epochs
    and at the end, and an existing checkpoint is resumed.  ``stop_after``
    ends the run early after that many epochs (used to emulate a kill).
    """
    from .container import load_checkpoint, save_checkpoint

    if not samples:
        raise ValueError("empty training set")
    splits = {s.split for s in samples}
    if splits - {"train"}:
        raise ValueError(f"training samples must come from the train split, got {sorted(splits)}")
    eps_rel = cfg.eps_rel_factor * mean_speed(samples)
    if not eps_rel > 0:
        eps_rel = cfg.eps_rel_factor
    params = {k: v.copy() for k, v in (params or init_params(model_cfg)).items()}
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = []
    start = 0
    if checkpoint is not None and resume and Path(checkpoint).exists():
        header, loaded, opt_state = load_checkpoint(checkpoint)
        if header.get("model") != model_cfg.to_dict():
            raise ValueError("checkpoint was written for a different model configuration")
        params = loaded
        if opt_state is not None:
            opt.load(opt_state)
        history = list(header["history"])
        start = int(header["epoch"])
        log.info("resuming from epoch %d", start)

    cache = [(model_inputs(s, model_cfg), s.target.velocity, s.chi_hr.values) for s in samples]
    group = cfg.batch_size * cfg.accumulate
    t0 = time.perf_counter()

    def save(epoch):
        header = {
            "model": model_cfg.to_dict(),
            "train": cfg.to_dict(),
            "epoch": epoch,
            "history": history,
            "history_sha256": hashlib.sha256(np.asarray(history, dtype="<f8").tobytes()).hexdigest(),
            "eps_rel": eps_rel,
        }
        save_checkpoint(checkpoint, params, header, opt.state())

    for epoch in range(start, cfg.epochs):
        lr = cosine_lr(cfg, epoch)
        order = epoch_order(cfg, epoch, len(samples))
        losses = []
        for g0 in range(0, len(order), group):
            acc = {}
            for b, i in enumerate(order[g0 : g0 + group]):
                inputs, truth, chi = cache[i]
                value, grads = sample_loss_and_grads(params, model_cfg, inputs, truth, chi, eps_rel)
                if grads is None:
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch + 1}, batch {(g0 + b) // cfg.batch_size}, "
                        f"sample {samples[i].sample_id}"
                    )
                losses.append(value)
                for k, g in grads.items():
                    if g is not None:
                        acc[k] = g if k not in acc else acc[k] + g
            n = len(order[g0 : g0 + group])
            opt.step(params, {k: g / n for k, g in acc.items()}, lr)
            for k, p in params.items():
                if not np.all(np.isfinite(p)):
                    raise NumericalError(f"non-finite parameter {k} after epoch {epoch + 1} step")
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch + 1, history[-1])
        done = epoch + 1
        if checkpoint is not None and (done % cfg.checkpoint_every == 0 or done == cfg.epochs):
            save(done)
        if stop_after is not None and done - start >= stop_after:
            break
    return TrainResult(params, history, time.perf_counter() - t0, eps_rel, start)
