"""Run configuration: one TOML document with dataset/model/train/eval/paths tables."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path

import toml

from .baselines import BASELINE_KINDS
from .errors import ConfigError
from .flow import DatasetConfig, task_shape
from .model import MODEL_KINDS, EDSRConfig, ModelConfig
from .train import TrainConfig

ALL_MODELS = tuple(dict.fromkeys(("linear", "rbf") + tuple(BASELINE_KINDS) + MODEL_KINDS))
TABLE_ORDER = ("linear", "rbf", "srcnn", "edsr", "fno_edsr", "lofno_wo_lep", "lofno")
DERIVED_MODEL_KEYS = ("kind", "scale", "t_in", "t_out")


@dataclass
class EvalConfig:
    models: list = field(default_factory=lambda: list(TABLE_ORDER))
    rbf_kernel: str = "tps"
    rbf_cap: int = 20000
    noise_levels: list = field(default_factory=lambda: [10.0, 5.0, 2.5])

    def __post_init__(self):
        bad = [m for m in self.models if m not in ALL_MODELS]
        if bad:
            raise ValueError(f"unknown model(s) {bad}; valid kinds: {', '.join(ALL_MODELS)}")


@dataclass
class RenderConfig:
    sample: str = ""
    timestep: int = 0
    axis: int = 2
    slice: int = -1  # -1 selects the middle slice
    pixels_per_voxel: int = 8


@dataclass
class PathsConfig:
    data_root: str = "data"
    run_dir: str = "runs"


SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "render": RenderConfig,
    "paths": PathsConfig,
}


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def data_dir(self):
        return self.resolve(self.paths.data_root) / self.dataset.task

    @property
    def task_run_dir(self):
        return self.resolve(self.paths.run_dir) / self.dataset.task

    def model_config(self, kind):
        """Model config for ``kind`` with scale and time widths taken from the task."""
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model {kind!r}; valid kinds: {', '.join(ALL_MODELS)}")
        factor, keep = task_shape(self.dataset.task, self.dataset.n_times)
        d = self.model.to_dict()
        d.update(kind=kind, scale=factor, t_in=keep, t_out=self.dataset.n_times)
        if kind in ("lofno",) and d["n_prior"] > self.dataset.n_eigs:
            raise ConfigError(f"model.n_prior={d['n_prior']} exceeds dataset.n_eigs={self.dataset.n_eigs}")
        if kind == "lofno" and d["n_prior"] == 0:
            d["n_prior"] = self.dataset.n_eigs
        return ModelConfig.from_dict(d)

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            obj = getattr(self, name)
            d = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
            if name == "model":
                for k in DERIVED_MODEL_KEYS:
                    d.pop(k, None)
            out[name] = _tomlable(d)
        return out

    def dumps(self):
        return toml.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.dumps())

    def with_seed(self, seed):
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            model=dataclasses.replace(self.model, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def _tomlable(d):
    if isinstance(d, dict):
        return {k: _tomlable(v) for k, v in d.items() if v is not None}
    if isinstance(d, tuple):
        return [_tomlable(v) for v in d]
    if isinstance(d, list):
        return [_tomlable(v) for v in d]
    return d


def _check_keys(table, cls, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def from_dict(d, base_dir=Path(".")) -> RunConfig:
    unknown = sorted(set(d) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        table = dict(d.get(name, {}))
        _check_keys(table, cls, name)
        try:
            if name == "model":
                for k in DERIVED_MODEL_KEYS:
                    if k in table:
                        raise ConfigError(f"[model] {k} is derived from the dataset task and --model; remove it")
                edsr = table.pop("edsr", {})
                _check_keys(edsr, EDSRConfig, "model.edsr")
                built[name] = cls(edsr=EDSRConfig(**edsr), **table)
            else:
                built[name] = cls(**table)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    return RunConfig(**built, base_dir=Path(base_dir))


def loads(text, base_dir=Path(".")) -> RunConfig:
    try:
        d = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return from_dict(d, base_dir)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return loads(path.read_text(), path.resolve().parent)
