"""Run configuration as flat INI sections: [run], [model], [train], [data]."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from pyrpix.data.synthetic import SyntheticSpec
from pyrpix.network.config import ModelConfig, make_config


class RunConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class ModelSection:
    base_height: int = 4
    base_width: int = 4
    target_height: int = 8
    target_width: int = 8
    channels: int = 1
    levels: int = 4
    kind: str = "A"
    base_layers: int = 3
    base_hidden: int = 16
    first_kernel: int = 7
    kernel: int = 3
    resnet_layers: int = 2
    up_hidden: int = 16
    patch: int = 4
    shallow_layers: int = 4
    shallow_hidden: int = 16
    separate_corners: bool = False
    num_classes: int = 0
    cond_channels: int = 0
    cond_hidden: int = 8


@dataclass
class TrainSection:
    batch_size: int = 16
    steps: int = 5000
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_steps: list = field(default_factory=lambda: [4000])
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    eval_every: int = 250
    checkpoint_every: int = 500
    crop: int = 0


@dataclass
class DataSection:
    source: str = "synthetic"
    family: str = "checkerboard_noise"
    noise: float = 0.1
    count: int = 4000
    data_seed: int = 0
    cell_size: int = 0
    phase: str = ""
    directory: str = ""


_SECTIONS = {"run": RunSection, "model": ModelSection, "train": TrainSection, "data": DataSection}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def model_config(self) -> ModelConfig:
        m = self.model
        kw = {f.name: getattr(m, f.name) for f in dataclasses.fields(m)}
        base = (kw.pop("base_height"), kw.pop("base_width"))
        target = (kw.pop("target_height"), kw.pop("target_width"))
        C, K = kw.pop("channels"), kw.pop("levels")
        return make_config(base, target, C, K, **kw)

    def synthetic_spec(self) -> SyntheticSpec:
        d, m = self.data, self.model
        if d.source != "synthetic":
            raise RunConfigError("data source is not synthetic")
        phase = tuple(int(v) for v in d.phase.split(",")) if d.phase else None
        return SyntheticSpec(
            d.family,
            m.target_height,
            m.target_width,
            m.levels,
            m.channels,
            d.noise,
            d.data_seed,
            cell_size=d.cell_size or None,
            phase=phase,
        )

    def lr_at(self, step: int) -> float:
        """Learning rate in effect for ``step`` (0-based): one factor per passed decay step."""
        t = self.train
        return t.lr * t.lr_decay_factor ** sum(1 for s in t.lr_decay_steps if step >= s)

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise RunConfigError(str(e)) from None
        unknown = set(cp.sections()) - set(_SECTIONS)
        if unknown:
            raise RunConfigError(f"unknown sections {sorted(unknown)}")
        out = cls()
        for name, typ in _SECTIONS.items():
            if not cp.has_section(name):
                continue
            sec = getattr(out, name)
            fields = {f.name: f for f in dataclasses.fields(typ)}
            for key, raw in cp[name].items():
                if key not in fields:
                    raise RunConfigError(f"unknown key {key!r} in [{name}]")
                setattr(sec, key, _parse(raw, type(getattr(typ(), key)), f"[{name}] {key}"))
        out.validate()
        return out

    def validate(self) -> None:
        t = self.train
        if t.batch_size < 1 or t.steps < 0 or t.lr <= 0 or t.rms_epsilon <= 0 or not 0 <= t.rms_decay < 1:
            raise RunConfigError("train section out of range")
        if t.eval_every < 1 or t.checkpoint_every < 1:
            raise RunConfigError("eval_every and checkpoint_every must be positive")
        if self.data.source not in ("synthetic", "directory"):
            raise RunConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source == "directory" and not self.data.directory:
            raise RunConfigError("directory data source needs [data] directory")
        self.model_config()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is list:
            return [int(v) for v in raw.split(",") if v.strip()]
        return typ(raw)
    except ValueError:
        raise RunConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


def preset(name: str) -> RunConfig:
    """``desk`` (the defaults) or ``paper`` (full-scale regime, 32x32 type-B)."""
    cfg = RunConfig()
    if name == "desk":
        return cfg
    if name != "paper":
        raise RunConfigError(f"unknown preset {name!r}")
    cfg.model = ModelSection(
        target_height=32,
        target_width=32,
        channels=3,
        levels=256,
        kind="B",
        base_layers=4,
        base_hidden=128,
        resnet_layers=12,
        up_hidden=128,
        shallow_hidden=128,
    )
    cfg.train = TrainSection(
        batch_size=128, steps=200_000, lr=1e-4, lr_decay_factor=0.1, lr_decay_steps=[100_000], eval_every=1000,
        checkpoint_every=5000, crop=32,
    )
    return cfg

