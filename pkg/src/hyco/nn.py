"""Feedforward network used as the synthetic model, with hand-written
reverse-mode gradients and an Adam optimizer.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(n, fan_in)`` maps to ``X @ W + b``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FIELD_MAGIC, BadMagicError, BadVersionError, TruncatedFileError, make_rng

CHECKPOINT_VERSION = 2
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    skip_connections: bool = False
    init_seed: int = 0
    # optional affine map of the input box onto [-1, 1]^d
    input_low: tuple[float, ...] | None = None
    input_high: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.skip_connections and len(set(self.hidden_layers)) > 1:
            raise ValueError("skip connections need equal hidden widths")
        for name in ("input_low", "input_high"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(a) for a in v)
                if len(v) != self.input_dim:
                    raise ValueError(f"{name} must have input_dim entries")
                object.__setattr__(self, name, v)
        if (self.input_low is None) != (self.input_high is None):
            raise ValueError("input_low and input_high go together")
        if self.input_low is not None and any(h <= l for l, h in zip(self.input_low, self.input_high)):
            raise ValueError("input_high must exceed input_low")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MLPConfig":
        d = dict(d)
        for k in ("hidden_layers", "input_low", "input_high"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MLPParams:
    config: MLPConfig
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        dims = self.config.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match config")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l}: shapes {W.shape}, {b.shape} do not match config")

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MLPParams":
        return replace(self, weights=tuple(arrays[0::2]), biases=tuple(arrays[1::2]))

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vec: np.ndarray) -> "MLPParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.array(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return self.with_arrays(out)


def init_params(config: MLPConfig) -> MLPParams:
    """He-normal weights for relu, Glorot-normal for tanh; zero biases."""
    rng = make_rng(config.init_seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        var = 2.0 / fan_in if config.activation == "relu" else 2.0 / (fan_in + fan_out)
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(var))
        biases.append(np.zeros(fan_out))
    return MLPParams(config, tuple(weights), tuple(biases))


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _prepare_inputs(config: MLPConfig, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] < config.input_dim:
        raise ValueError(f"inputs have {x.shape[1]} columns, network expects {config.input_dim}")
    x = x[:, :config.input_dim]
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    if config.input_low is not None:
        lo = np.asarray(config.input_low)
        hi = np.asarray(config.input_high)
        x = 2.0 * (x - lo) / (hi - lo) - 1.0
    return x


def _forward_cache(params: MLPParams, x):
    cfg = params.config
    h = _prepare_inputs(cfg, x)
    cache = []
    n_layers = len(params.weights)
    for l in range(n_layers - 1):
        W, b = params.weights[l], params.biases[l]
        z = h @ W + b
        a = _act(z, cfg.activation)
        skip = cfg.skip_connections and l > 0
        cache.append((h, z, a, skip))
        h = h + a if skip else a
    out = h @ params.weights[-1] + params.biases[-1]
    cache.append((h, None, None, False))
    return out, cache


def forward(params: MLPParams, x) -> np.ndarray:
    """Network outputs for a batch; ``x`` may carry extra trailing columns
    (e.g. a zero time column for static problems), which are ignored."""
    return _forward_cache(params, x)[0]


def backward(params: MLPParams, x, grad_out) -> MLPParams:
    """Gradient over all weights of the scalar loss whose output-gradients are ``grad_out``."""
    out, cache = _forward_cache(params, x)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1 and out.shape[1] == 1:
        g = g[:, None]
    if g.shape != out.shape:
        raise ValueError(f"output gradient shape {g.shape} does not match outputs {out.shape}")
    cfg = params.config
    n_layers = len(params.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    h_last = cache[-1][0]
    dW[-1] = h_last.T @ g
    db[-1] = g.sum(axis=0)
    dh = g @ params.weights[-1].T
    for l in range(n_layers - 2, -1, -1):
        h_in, z, a, skip = cache[l]
        dz = dh * _act_grad(z, a, cfg.activation)
        dW[l] = h_in.T @ dz
        db[l] = dz.sum(axis=0)
        dh_in = dz @ params.weights[l].T
        dh = dh + dh_in if skip else dh_in
    return MLPParams(cfg, tuple(dW), tuple(db))


@dataclass(eq=False)
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        arrs = _arrays(params)
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], **hyper)


def _arrays(p) -> list[np.ndarray]:
    if isinstance(p, MLPParams):
        return p.arrays()
    if isinstance(p, np.ndarray):
        return [p]
    return list(p)


def _rebuild(template, arrays):
    if isinstance(template, MLPParams):
        return template.with_arrays(arrays)
    if isinstance(template, np.ndarray):
        return arrays[0]
    return arrays


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Works on ``MLPParams``, a single array
    or a list of arrays; returns new params of the same kind and a new state."""
    p_arrs, g_arrs = _arrays(params), _arrays(grads)
    if len(p_arrs) != len(g_arrs) or any(p.shape != g.shape for p, g in zip(p_arrs, g_arrs)):
        raise ValueError("parameter and gradient shapes disagree")
    if not all(np.all(np.isfinite(g)) for g in g_arrs):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrs, g_arrs, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return _rebuild(params, new_p), replace(state, m=new_m, v=new_v, step=t)


def write_checkpoint(params: MLPParams, path) -> None:
    """Binary container (one section per array) plus a ``.json`` config sidecar."""
    path = Path(path)
    arrs = params.arrays()
    chunks = [FIELD_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrs))]
    for a in arrs:
        chunks.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))
    path.with_suffix(".json").write_text(json.dumps(params.config.to_dict(), indent=2, sort_keys=True) + "\n")


def read_checkpoint(path) -> MLPParams:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: truncated header")
    version, n = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    pos, arrs = 12, []
    try:
        for _ in range(n):
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            count = int(np.prod(shape))
            if pos + 8 * count > len(data):
                raise TruncatedFileError(f"{path}: truncated payload")
            arrs.append(np.frombuffer(data, "<f8", count, pos).astype(np.float64).reshape(shape))
            pos += 8 * count
    except struct.error as exc:
        raise TruncatedFileError(f"{path}: truncated section header") from exc
    config = MLPConfig.from_dict(json.loads(path.with_suffix(".json").read_text()))
    return MLPParams(config, tuple(arrs[0::2]), tuple(arrs[1::2]))
