"""Frame embedding, sequence encoder and the K decoder heads.

Motion arrays are laid out ``(batch, frames, joints, dims)``. Single
sequences ``(frames, joints, dims)`` are accepted wherever a batch is and
treated as a batch of one.
"""
from __future__ import annotations

import base64
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .schedule import HorizonSchedule, Mode, compute_horizons, single_schedule

CHECKPOINT_FORMAT = "md2ga-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    T_p: int
    T_f: int
    J: int
    D: int
    K: int = 6
    mode: str = "incremental"
    encoder: str = "gcn"
    embed_hidden: int = 64
    hidden: int = 64
    n_blocks: int = 2
    mlp_hidden: int = 256
    head_hidden: int = 64
    gate_hidden: int = 256
    single_decoder: bool = False
    gated: bool = True
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode.parse(self.mode).value
        if self.D not in (2, 3):
            raise ConfigError(f"spatial dimension D must be 2 or 3, got {self.D}")
        if self.encoder not in ("gcn", "mlp"):
            raise ConfigError(f"unknown encoder kind {self.encoder!r}")

    @property
    def total(self) -> int:
        return self.T_p + self.T_f

    @property
    def coords(self) -> int:
        return self.J * self.D

    @property
    def schedule(self) -> HorizonSchedule:
        if self.single_decoder:
            return single_schedule(self.T_p, self.T_f)
        return compute_horizons(self.T_p, self.T_f, self.K, self.mode)

    @property
    def latent_size(self) -> int:
        if self.encoder == "gcn":
            return self.coords * self.hidden
        return self.mlp_hidden

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def parameters(self) -> list:
        return list(self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(ModelConfig(**asdict(self.config)),
                           {k: Tensor(v.data.copy(), requires_grad=True)
                            for k, v in self.tensors.items()})

    @property
    def n_heads(self) -> int:
        return sum(1 for n in self.tensors if n.startswith("head.") and n.endswith(".W2"))

    def zero_heads(self):
        """Zero every decoder-head weight so each head emits only its residual."""
        for name, t in self.tensors.items():
            if name.startswith("head."):
                t.data[...] = 0.0


def init_params(config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    c, T = config.coords, config.total
    p: dict = {}

    def dense(prefix, n_in, n_out):
        p[f"{prefix}.W"] = xavier(rng, n_in, n_out)
        p[f"{prefix}.b"] = np.zeros(n_out)

    E = config.embed_hidden
    p["embed.W1"] = xavier(rng, c, E)
    p["embed.b1"] = np.zeros(E)
    p["embed.W2"] = xavier(rng, E, c)
    p["embed.b2"] = np.zeros(c)

    if config.encoder == "gcn":
        F = config.hidden
        p["enc.in.A"] = xavier(rng, c, c)
        p["enc.in.W"] = xavier(rng, T, F)
        for b in range(config.n_blocks):
            p[f"enc.block{b}.A"] = xavier(rng, c, c)
            p[f"enc.block{b}.W"] = xavier(rng, F, F)
    else:
        dense("enc.in", T * c, config.mlp_hidden)
        for b in range(config.n_blocks):
            dense(f"enc.block{b}", config.mlp_hidden, config.mlp_hidden)

    latent, hh = config.latent_size, config.head_hidden
    for k, n in enumerate(config.schedule.lengths):
        p[f"head.{k}.W1"] = xavier(rng, latent, hh)
        p[f"head.{k}.b1"] = np.zeros(hh)
        p[f"head.{k}.W2"] = xavier(rng, hh, n * c)
        p[f"head.{k}.b2"] = np.zeros(n * c)

    if config.gated and not config.single_decoder:
        G = config.gate_hidden
        dense("gate.fc1", config.T_p * c, G)
        dense("gate.fc2", G, G)
        dense("gate.fc3", G, config.K)

    return ModelParams(config, {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()})


def _batched(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[None] if X.ndim == 3 else X


def pad_input(X, total_len: int) -> np.ndarray:
    """Extend the observed frames to ``total_len`` by repeating the last one."""
    X = np.asarray(X, dtype=np.float64)
    T_p = X.shape[-3]
    if total_len < T_p:
        raise ValueError(f"total_len={total_len} is shorter than the {T_p} observed frames")
    last = X[..., T_p - 1:T_p, :, :]
    reps = [1] * X.ndim
    reps[-3] = total_len - T_p
    return np.concatenate([X, np.tile(last, reps)], axis=-3)


def embed_frames(X_padded, params: ModelParams) -> Tensor:
    X = _batched(X_padded)
    B, T = X.shape[:2]
    x = Tensor(X.reshape(B, T, -1))
    h = nx.relu(x @ params["embed.W1"] + params["embed.b1"])
    return h @ params["embed.W2"] + params["embed.b2"]


def encode(X_hat: Tensor, params: ModelParams) -> Tensor:
    """Latent M: ``(B, J*D, hidden)`` for the graph encoder, ``(B, mlp_hidden)`` for the MLP."""
    cfg = params.config
    if cfg.encoder == "gcn":
        # nodes are coordinate channels, features run along time
        y = nx.transpose(X_hat, (0, 2, 1))
        y = nx.tanh(params["enc.in.A"] @ y @ params["enc.in.W"])
        for b in range(cfg.n_blocks):
            y = y + nx.tanh(params[f"enc.block{b}.A"] @ y @ params[f"enc.block{b}.W"])
        return y
    B = X_hat.shape[0]
    h = nx.tanh(X_hat.reshape(B, -1) @ params["enc.in.W"] + params["enc.in.b"])
    for b in range(cfg.n_blocks):
        h = h + nx.tanh(h @ params[f"enc.block{b}.W"] + params[f"enc.block{b}.b"])
    return h


def decode_all(M: Tensor, X, schedule: HorizonSchedule, params: ModelParams) -> list:
    """Return ``Y_k = head_k(M) + padded X`` on each decoder's span."""
    if schedule.K != params.n_heads:
        raise ConfigError(f"schedule has {schedule.K} decoders but the model has "
                          f"{params.n_heads} heads")
    X = _batched(X)
    B, _, J, D = X.shape
    padded = pad_input(X, schedule.total)
    flat = M.reshape(B, -1)
    outputs = []
    for k, (first, last) in enumerate(schedule.spans()):
        n = last - first + 1
        if params[f"head.{k}.W2"].shape[1] != n * J * D:
            raise ConfigError(f"head {k + 1} emits {params[f'head.{k}.W2'].shape[1] // (J * D)} "
                              f"frames but the schedule asks for {n}")
        h = nx.tanh(flat @ params[f"head.{k}.W1"] + params[f"head.{k}.b1"])
        raw = (h @ params[f"head.{k}.W2"] + params[f"head.{k}.b2"]).reshape(B, n, J, D)
        outputs.append(raw + padded[:, first - 1:last])
    return outputs


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).astype(np.float64)


def save_checkpoint(params: ModelParams, path, extra: dict | None = None):
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "params": {k: _encode_array(t.data) for k, t in params.tensors.items()},
    }
    if extra:
        record["extra"] = extra
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not an md2ga checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {record.get('version')}")
    config = ModelConfig.from_dict(record["config"])
    tensors = {k: Tensor(_decode_array(v), requires_grad=True, name=k)
               for k, v in record["params"].items()}
    return ModelParams(config, tensors)
