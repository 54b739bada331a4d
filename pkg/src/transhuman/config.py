"""Run configuration: one JSON document, every field defaulted, unknown keys rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffcore.nn import NetworkConfig
from .grouping import default_token_count
from .model import GROUPINGS, PE_MODES, ModelOptions, RenderSettings
from .dparf import COORD_MODES
from .fdi import FDI_MODES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str = "dataset"
    run_dir: str = "runs/default"
    # grouping / fields
    n_tokens: int = 0            # 0: scale n_tokens_base by vertex count
    n_tokens_base: int = 300
    grouping_seed: int = 0
    n_k: int = 7
    n_views: int = 3
    # rendering
    n_samples: int = 64
    threshold: float = 0.1
    density_gate: float = 1e-4
    bbox_padding: float = 0.2
    far_field: bool = True
    stratified: bool = True
    # loss / optimisation
    lambda_per: float = 0.1
    patch_size: int = 32
    patches_per_step: int = 4
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 2000
    checkpoint_every: int = 500
    eval_every: int = 0
    threads: int = 1
    # ablation switches
    grouping: str = "canonical-kmeans"
    pe: str = "canonical"
    fdi: str = "full"
    coordinate: str = "deformed"
    frame_convention: str = "inverse"
    fdi_residual: bool = True
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = _build(NetworkConfig, self.network, "network")
        self.betas = tuple(float(b) for b in self.betas)
        checks = [
            (self.grouping in GROUPINGS, f"grouping must be one of {GROUPINGS}"),
            (self.pe in PE_MODES, f"pe must be one of {PE_MODES}"),
            (self.fdi in FDI_MODES, f"fdi must be one of {FDI_MODES}"),
            (self.coordinate in COORD_MODES, f"coordinate must be one of {COORD_MODES}"),
            (self.frame_convention in ("inverse", "literal"), "frame_convention must be inverse or literal"),
            (self.lambda_per >= 0, "lambda_per must be >= 0"),
            (self.n_k >= 1 and self.n_views >= 1 and self.n_samples >= 1, "n_k, n_views, n_samples must be >= 1"),
            (self.patch_size >= 1 and self.patches_per_step >= 1, "patch settings must be positive"),
            (self.threshold > 0 and self.bbox_padding >= 0, "threshold must be > 0"),
            (self.n_tokens >= 0 and self.n_tokens_base >= 1, "token counts must be positive"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def token_count(self, n_vertices: int) -> int:
        n = self.n_tokens or default_token_count(n_vertices, self.n_tokens_base)
        return min(n, n_vertices)

    def model_options(self) -> ModelOptions:
        return ModelOptions(self.n_k, self.coordinate, self.frame_convention, self.fdi, self.pe,
                            self.grouping, self.fdi_residual)

    def render_settings(self) -> RenderSettings:
        return RenderSettings(self.n_samples, self.threshold, self.density_gate, self.bbox_padding,
                              self.far_field, self.stratified)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["network"]["cnn_channels"] = list(self.network.cnn_channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        for k, v in changes.items():
            if k.startswith("network."):
                d["network"][k.split(".", 1)[1]] = v
            else:
                d[k] = v
        return RunConfig.from_dict(d)


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
