from __future__ import annotations

from dataclasses import dataclass, field

from pyrpix.pyramid import GroupSchedule, build_schedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PixelCNNConfig:
    layers: int = 3
    hidden: int = 16
    kernel: int = 3
    first_kernel: int = 7
    levels: int = 4
    channels: int = 1

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("PixelCNN needs at least one layer")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.kernel % 2 == 0 or self.first_kernel % 2 == 0:
            raise ConfigError("kernel extents must be odd")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.hidden < self.channels:
            raise ConfigError("hidden width must be >= channels for channel masking")


@dataclass(frozen=True)
class UpscalerConfig:
    kind: str = "A"
    resnet_layers: int = 2
    hidden: int = 16
    patch: int = 4
    shallow_layers: int = 4
    shallow_hidden: int = 16
    levels: int = 4
    channels: int = 1
    separate_corners: bool = False

    def validate(self) -> None:
        if self.kind not in ("A", "B"):
            raise ConfigError(f"upscaler kind must be 'A' or 'B', got {self.kind!r}")
        if self.resnet_layers < 0:
            raise ConfigError("resnet_layers must be >= 0")
        if self.kind == "B":
            if self.patch < 1:
                raise ConfigError("patch must be >= 1")
            if self.shallow_layers < 2:
                raise ConfigError("shallow PixelCNN needs >= 2 masked layers")
            if self.shallow_hidden < self.channels:
                raise ConfigError("shallow_hidden must be >= channels")


@dataclass(frozen=True)
class ModelConfig:
    base_size: tuple[int, int] = (4, 4)
    target_size: tuple[int, int] = (8, 8)
    channels: int = 1
    levels: int = 4
    base: PixelCNNConfig = field(default_factory=PixelCNNConfig)
    upscaler: UpscalerConfig = field(default_factory=UpscalerConfig)
    num_classes: int = 0
    cond_channels: int = 0
    cond_hidden: int = 8

    def __post_init__(self):
        object.__setattr__(self, "base_size", tuple(int(v) for v in self.base_size))
        object.__setattr__(self, "target_size", tuple(int(v) for v in self.target_size))

    @property
    def schedule(self) -> GroupSchedule:
        return build_schedule(self.base_size, self.target_size)

    def validate(self) -> None:
        sched = self.schedule
        for sub in (self.base, self.upscaler):
            if sub.levels != self.levels or sub.channels != self.channels:
                raise ConfigError("sub-config levels/channels disagree with the model")
        self.base.validate()
        self.upscaler.validate()
        if self.upscaler.kind == "B":
            m = self.upscaler.patch
            for s in range(1, sched.num_scales + 1):
                h, w = sched.scale_size(s - 1)
                if h % m or w % m:
                    raise ConfigError(f"corner grid {(h, w)} at scale {s} not divisible by patch {m}")
        if self.num_classes < 0 or self.cond_channels < 0:
            raise ConfigError("num_classes and cond_channels must be >= 0")


def make_config(
    base_size=(4, 4),
    target_size=(8, 8),
    channels: int = 1,
    levels: int = 4,
    *,
    base_layers: int = 3,
    base_hidden: int = 16,
    first_kernel: int = 7,
    kernel: int = 3,
    kind: str = "A",
    resnet_layers: int = 2,
    up_hidden: int = 16,
    patch: int = 4,
    shallow_layers: int = 4,
    shallow_hidden: int = 16,
    separate_corners: bool = False,
    num_classes: int = 0,
    cond_channels: int = 0,
    cond_hidden: int = 8,
) -> ModelConfig:
    """Flat-keyword constructor that keeps the nested configs consistent."""
    cfg = ModelConfig(
        base_size=tuple(base_size),
        target_size=tuple(target_size),
        channels=channels,
        levels=levels,
        base=PixelCNNConfig(base_layers, base_hidden, kernel, first_kernel, levels, channels),
        upscaler=UpscalerConfig(
            kind, resnet_layers, up_hidden, patch, shallow_layers, shallow_hidden, levels, channels, separate_corners
        ),
        num_classes=num_classes,
        cond_channels=cond_channels,
        cond_hidden=cond_hidden,
    )
    cfg.validate()
    return cfg
