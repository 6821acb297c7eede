"""Experiment configuration: JSON in, validated dataclass out."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .foms import FAMILIES, params_from_vector
from .networks import AEArchitecture, flow_architecture, hnn_architecture
from .training import LossWeights, TrainConfig

__all__ = ["ConfigError", "PRESETS", "ExperimentConfig", "family_defaults"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


PRESETS: dict[str, dict[str, list[float]]] = {
    "linear": {"test1": [0.2385], "test2": [0.3798], "test3": [0.5428]},
    "nonlinear": {
        "test1": [0.2385, 0.088, 0.5485],
        "test2": [0.3785, 0.281, 1.354],
        "test3": [0.5528, 0.437, 2.128],
    },
    "shallow_water": {"test1": [0.105, 0.11], "test2": [0.195, 0.053], "test3": [0.21, 0.045]},
}

_WAVE_NET = {
    "s": 16,
    "ae_variant": "bichannel",
    "ae_activation": "elu",
    "hnn_hidden": [24, 12, 12, 12, 6],
    "hnn_activation": "tanh",
    "flow_hidden": [32, 24, 16, 16],
    "flow_activation": "tanh",
}

_DEFAULTS = {
    "linear": {"n": 1024, "t_final": 0.4, "dt": 1e-4, "param_lo": [0.2], "param_hi": [0.6], "k": 1, **_WAVE_NET},
    "nonlinear": {
        "n": 1024,
        "t_final": 0.3,
        "dt": 1e-4,
        "param_lo": [0.2, 0.025, 0.4],
        "param_hi": [0.6, 0.5, 2.4],
        "k": 3,
        **_WAVE_NET,
    },
    "shallow_water": {
        "n": 1024,
        "t_final": 0.5,
        "dt": 2e-4,
        "param_lo": [0.0, 0.2],
        "param_hi": [0.2, 0.05],
        "k": 4,
        "s": 48,
        "ae_variant": "split",
        "ae_activation": "swish",
        "hnn_hidden": [40, 20, 20, 20, 10],
        "hnn_activation": "swish",
        "flow_hidden": [40, 20, 20, 20, 10],
        "flow_activation": "swish",
    },
}

METHODS = ("psd", "pod", "aehnn", "aeflow")


def family_defaults(family: str) -> dict:
    if family not in _DEFAULTS:
        raise ConfigError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    return json.loads(json.dumps(_DEFAULTS[family]))


@dataclass
class ExperimentConfig:
    family: str = "linear"
    n: int = 1024
    t_final: float = 0.4
    dt: float = 1e-4
    p_train: int = 20
    p_val: int = 6
    param_lo: list[float] = field(default_factory=lambda: [0.2])
    param_hi: list[float] = field(default_factory=lambda: [0.6])
    method: str = "psd"
    k: int = 1
    s: int = 16
    ae_variant: str = "bichannel"
    ae_blocks: int = 4
    ae_dense: list[int] = field(default_factory=lambda: [256, 128, 64, 32])
    ae_activation: str = "elu"
    hnn_hidden: list[int] = field(default_factory=lambda: [24, 12, 12, 12, 6])
    hnn_activation: str = "tanh"
    flow_hidden: list[int] = field(default_factory=lambda: [32, 24, 16, 16])
    flow_activation: str = "tanh"
    weights: list[float] = field(default_factory=lambda: [0.1, 80.0, 7e-4, 0.1])
    max_steps: int = 10_000
    batch_size: int = 64
    eval_every: int = 250
    val_pairs: int = 128
    seed: int = 0
    tests: list = field(default_factory=lambda: ["test1", "test2", "test3"])
    precision: str = "f64"
    repetitions: int = 5
    benchmark_steps: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        merged = {**family_defaults(d.get("family", "linear")), **d}
        try:
            cfg = cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.family in FAMILIES, f"unknown family {self.family!r}")
        need(self.method in METHODS, f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        need(isinstance(self.n, int) and self.n >= 4, "n must be an integer >= 4")
        need(self.dt > 0 and self.t_final > 0, "dt and t_final must be positive")
        need(self.n_steps >= 1, "t_final must cover at least one time step")
        need(self.p_train >= 1 and self.p_val >= 0, "p_train must be >= 1 and p_val >= 0")
        need(len(self.param_lo) == len(self.param_hi) == self.param_dim, "parameter bounds have the wrong length")
        need(1 <= self.k <= self.n, f"k must lie in [1, {self.n}]")
        need(0 <= self.s < self.n_steps, "watch duration s must be smaller than the number of steps")
        need(len(self.weights) == 4 and min(self.weights) >= 0, "weights must be four non-negative numbers")
        need(self.precision in ("f32", "f64"), "precision must be f32 or f64")
        need(self.repetitions >= 1, "repetitions must be >= 1")
        for t in self.tests:
            need(isinstance(t, list) or t in PRESETS[self.family], f"unknown test preset {t!r}")

    # ------------------------------------------------------------ derived

    @property
    def param_dim(self) -> int:
        return {"linear": 1, "nonlinear": 3, "shallow_water": 2}[self.family]

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def _segment(self, frac) -> list:
        lo, hi = np.asarray(self.param_lo, float), np.asarray(self.param_hi, float)
        return [params_from_vector(self.family, lo + f * (hi - lo)) for f in frac]

    def train_params(self) -> list:
        """``p_train`` values evenly spaced on the segment from ``param_lo`` to ``param_hi``."""
        return self._segment(np.linspace(0.0, 1.0, self.p_train))

    def val_params(self) -> list:
        """Cell midpoints of the same segment, so validation never repeats a training value."""
        return self._segment((np.arange(self.p_val) + 0.5) / self.p_val)

    def test_params(self) -> list[tuple[str, object]]:
        out = []
        for i, t in enumerate(self.tests):
            if isinstance(t, list):
                out.append((f"custom{i + 1}", params_from_vector(self.family, t)))
            else:
                out.append((t, params_from_vector(self.family, PRESETS[self.family][t])))
        return out

    def ae_architecture(self) -> AEArchitecture:
        return AEArchitecture(self.n, 2 * self.k, self.ae_blocks, tuple(self.ae_dense), self.ae_activation, self.ae_variant)

    def dyn_architecture(self):
        if self.method == "aeflow":
            return flow_architecture(2 * self.k, self.param_dim, self.flow_hidden, self.flow_activation)
        return hnn_architecture(2 * self.k, self.param_dim, self.hnn_hidden, self.hnn_activation)

    def loss_weights(self) -> LossWeights:
        return LossWeights(*self.weights)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_steps=self.max_steps,
            batch_size=self.batch_size,
            weights=self.loss_weights(),
            eval_every=self.eval_every,
            seed=self.seed,
        )
