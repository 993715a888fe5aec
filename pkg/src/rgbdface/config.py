"""Pipeline configuration and the flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    train.epochs = 100
    train.lr_initial = 0.0002
    generator.dropout_stages = (0, 1, 2)
    window.near_mm = 300

Values are Python literals (numbers, strings, tuples, lists, booleans,
None). Unknown keys are rejected so typos do not silently fall back to
defaults. The same format is used for the dataset ``meta`` file.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import DiscriminatorConfig, GeneratorConfig, LossWeights
from .pointcloud import CameraIntrinsics
from .preprocess import DepthWindow
from .training import TrainConfig


def dump_flat(data: dict) -> str:
    lines = []
    for key in sorted(data):
        lines.append(f"{key} = {data[key]!r}")
    return "\n".join(lines) + "\n"


def parse_flat(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def read_flat(path) -> dict:
    return parse_flat(Path(path).read_text())


def write_flat(path, data: dict) -> None:
    Path(path).write_text(dump_flat(data))


_SECTIONS = {
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "window": DepthWindow,
}


@dataclass
class PipelineConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    window: DepthWindow = field(default_factory=DepthWindow)
    camera: CameraIntrinsics | None = None  # None -> synthetic camera of image_size
    perceptual: str = "random:0"  # "random:<seed>" or a weights file
    square_crop: bool = True

    def camera_or_default(self) -> CameraIntrinsics:
        return self.camera or CameraIntrinsics.synthetic(self.generator.image_size)

    def to_flat(self) -> dict:
        out = {}
        for name in _SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                out[f"{name}.{k}"] = v
        if self.camera is not None:
            for k, v in self.camera.to_dict().items():
                out[f"camera.{k}"] = v
        out["pipeline.perceptual"] = self.perceptual
        out["pipeline.square_crop"] = self.square_crop
        return out

    @classmethod
    def from_flat(cls, data: dict) -> "PipelineConfig":
        grouped: dict[str, dict] = {}
        for key, value in data.items():
            section, _, name = key.partition(".")
            if not name:
                raise ValueError(f"config key {key!r} lacks a section prefix")
            grouped.setdefault(section, {})[name] = value
        unknown = set(grouped) - set(_SECTIONS) - {"camera", "pipeline"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for section, klass in _SECTIONS.items():
            values = grouped.get(section, {})
            names = {f.name for f in dataclasses.fields(klass)}
            bad = set(values) - names
            if bad:
                raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")
            kwargs[section] = klass(**values)
        if "camera" in grouped:
            kwargs["camera"] = CameraIntrinsics(**grouped["camera"])
        pipe = grouped.get("pipeline", {})
        bad = set(pipe) - {"perceptual", "square_crop"}
        if bad:
            raise ValueError(f"unknown keys in [pipeline]: {sorted(bad)}")
        return cls(**kwargs, **pipe)

    def dumps(self) -> str:
        return dump_flat(self.to_flat())

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        return cls.from_flat(parse_flat(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def toy_config(image_size: int = 64, epochs: int = 20, seed: int = 0) -> PipelineConfig:
    """Small CPU-friendly configuration used by tests and the demo dataset."""
    depth = image_size.bit_length() - 1  # bottleneck of 1x1
    return PipelineConfig(
        generator=GeneratorConfig(image_size=image_size, base_width=16, depth=depth),
        discriminator=DiscriminatorConfig(base_width=16),
        train=TrainConfig(
            epochs=epochs,
            lr_constant_epochs=epochs - epochs * 7 // 10,
            lr_decay_epochs=epochs * 7 // 10,
            seed=seed,
            checkpoint_every=max(epochs // 4, 1),
        ),
    )
