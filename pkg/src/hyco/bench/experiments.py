"""Experiment configurations, scale presets and the problem factory."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..physics import gray_scott as gs
from ..problems import HELMHOLTZ_REGIONS, Problem, gray_scott_problem, helmholtz_problem
from ..trainer import METHODS, HycoConfig

PROBLEMS = ("gray_scott", "helmholtz")
SCALES = ("desk", "paper")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "helmholtz"
    scale: str = "desk"
    region: str = "omega"
    method: str = "hyco"
    seed: int = 0
    out: str = "runs"
    n: int = 48
    n_steps: int = 0
    T: float = 0.0
    snapshot_stride: int = 10
    convention: str = "classical"
    M: int = 25
    noise_std: float = 0.0
    hidden_layers: tuple[int, ...] = (256, 256)
    skip_connections: bool = True
    hyco: HycoConfig = field(default_factory=HycoConfig)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps if self.n_steps else 0.0

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.M < 1 or self.n < 3:
            raise ConfigError("need M >= 1 and n >= 3")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if self.problem == "helmholtz":
            if self.region not in HELMHOLTZ_REGIONS:
                raise ConfigError(f"region must be one of {tuple(HELMHOLTZ_REGIONS)}, got {self.region!r}")
        else:
            if self.n_steps < 1 or self.T <= 0:
                raise ConfigError("Gray-Scott needs n_steps >= 1 and T > 0")
            if self.convention not in gs.CONVENTIONS:
                raise ConfigError(f"convention must be one of {tuple(gs.CONVENTIONS)}")
            try:
                gs.check_stability(gs.unit_square_grid(self.n), gs.TRUE_PARAMS, self.dt)
            except gs.StabilityError as exc:
                raise ConfigError(str(exc)) from exc
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """The single experiment seed drives data, ghost points and initialization."""
        hy = replace(self.hyco, seed_data=seed, seed_ghost=seed, seed_init=seed)
        return replace(self, seed=seed, hyco=hy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from a (possibly partial) dict on top of the matching preset."""
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = preset(d.get("problem", "helmholtz"), d.get("scale", "desk"), d.get("region", "omega"))
        hy = d.pop("hyco", None) or {}
        hy_known = {f.name for f in fields(HycoConfig)}
        if set(hy) - hy_known:
            raise ConfigError(f"unknown hyco keys: {sorted(set(hy) - hy_known)}")
        if "hidden_layers" in d:
            d["hidden_layers"] = tuple(int(w) for w in d["hidden_layers"])
        try:
            cfg = replace(base, **d)
            cfg = replace(cfg, hyco=replace(base.hyco, **hy))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if "seed" in d and not {"seed_data", "seed_ghost", "seed_init"} & set(hy):
            cfg = cfg.with_seed(cfg.seed)
        return cfg.validate()


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# Training hyperparameters per setting. The coupling needs to be weaker when
# the data already pin the physics (full coverage) and stronger when the
# network has to carry information into unobserved parts of the domain.
HELMHOLTZ_TRAINING = {
    "omega": dict(alpha=1.0, beta=10.0, interaction_weight=0.1, lr_theta=1e-3, lr_lambda=0.02),
    "q1": dict(alpha=10.0, beta=10.0, interaction_weight=1.0, lr_theta=3e-3, lr_lambda=0.01),
    "q2": dict(alpha=10.0, beta=10.0, interaction_weight=1.0, lr_theta=3e-3, lr_lambda=0.01),
}
# The diffusivities move the desk-scale solution by about 1e-3 relative, far
# less than the network's fitting error, so the physical player has to weight
# its data heavily; the network still feels the interaction at full strength.
GRAY_SCOTT_TRAINING = dict(alpha=1.0, beta=1e6, interaction_weight=1.0, lr_theta=1e-3, lr_lambda=0.05)


def preset(problem: str, scale: str = "desk", region: str = "omega") -> ExperimentConfig:
    if problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}, got {problem!r}")
    if scale not in SCALES:
        raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")
    if problem == "helmholtz":
        if region not in HELMHOLTZ_REGIONS:
            raise ConfigError(f"region must be one of {tuple(HELMHOLTZ_REGIONS)}, got {region!r}")
        hy = HycoConfig(H=200, max_iters=2000, metrics_every=10, **HELMHOLTZ_TRAINING[region])
        return ExperimentConfig(problem=problem, scale=scale, region=region, n=48 if scale == "desk" else 96,
                                M=25, hidden_layers=(256, 256), skip_connections=True, hyco=hy)
    if scale == "desk":
        hy = HycoConfig(H=300, max_iters=200, metrics_every=10, **GRAY_SCOTT_TRAINING)
        return ExperimentConfig(problem=problem, scale=scale, region="omega", n=32, n_steps=1000, T=400.0,
                                M=1000, hidden_layers=(128,) * 4, skip_connections=False, hyco=hy)
    hy = HycoConfig(H=1000, max_iters=600, metrics_every=10, **GRAY_SCOTT_TRAINING)
    return ExperimentConfig(problem=problem, scale=scale, region="omega", n=64, n_steps=5000, T=2000.0,
                            snapshot_stride=50, M=5000, hidden_layers=(128,) * 4, skip_connections=False, hyco=hy)


def build_problem(cfg: ExperimentConfig) -> Problem:
    h = cfg.hyco
    if cfg.problem == "helmholtz":
        return helmholtz_problem(cfg.n, cfg.region, cfg.M, h.seed_data, h.seed_init, cfg.noise_std,
                                 cfg.hidden_layers, cfg.skip_connections)
    return gray_scott_problem(cfg.n, cfg.n_steps, cfg.T, cfg.M, h.seed_data, h.seed_init, cfg.noise_std,
                              cfg.snapshot_stride, cfg.convention, cfg.hidden_layers)
