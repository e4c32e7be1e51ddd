"""Optimizer, deterministic training loop, evaluation and analyses."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .backbone import ConfigError, ModelConfig, ModelParams, init_params
from .data import Dataset, zero_velocity_baseline
from .model import forward
from .numerics import Tensor, backward
from .objective import EvalReport, mpjpe, total_loss
from .schedule import Mode

log = logging.getLogger(__name__)

EVAL_MODES = ("blended", "last_decoder_only")
ABLATION_VARIANTS = ("full", "single", "no_l1", "no_l2", "no_ga", "full-all", "disjoint",
                     "zero-velocity")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    K: int = 6
    mode: str = "incremental"
    single_decoder: bool = False
    no_l1: bool = False
    no_l2: bool = False
    no_ga: bool = False
    eval_mode: str = "blended"
    encoder: str = "gcn"
    clip: float | None = None
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    embed_hidden: int = 64
    hidden: int = 64
    n_blocks: int = 2
    mlp_hidden: int = 256
    head_hidden: int = 64
    gate_hidden: int = 256

    def __post_init__(self):
        self.mode = Mode.parse(self.mode).value
        self.betas = tuple(self.betas)
        if self.single_decoder and (self.no_l1 or self.no_l2 or self.no_ga
                                    or self.mode != Mode.INCREMENTAL.value):
            raise ConfigError("single_decoder cannot be combined with other decoding flags")
        if self.no_l1 and self.no_l2:
            raise ConfigError("no_l1 and no_l2 together leave nothing to minimize")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs nonnegative")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("clip must be positive when given")

    def model_config(self, T_p, T_f, J, D) -> ModelConfig:
        return ModelConfig(T_p=T_p, T_f=T_f, J=J, D=D, K=self.K, mode=self.mode,
                           encoder=self.encoder, embed_hidden=self.embed_hidden,
                           hidden=self.hidden, n_blocks=self.n_blocks,
                           mlp_hidden=self.mlp_hidden, head_hidden=self.head_hidden,
                           gate_hidden=self.gate_hidden, single_decoder=self.single_decoder,
                           gated=not self.no_ga,
                           seed=self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, betas=(0.9, 0.999),
              eps=1e-8, clip=None):
    """Bias-corrected Adam update, in place, with optional global-norm clipping.

    ``params`` and ``grads`` map names to arrays. Missing gradients count as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    scale = 1.0
    if clip is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None))
        if norm > clip:
            scale = clip / norm
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if g is None:
            g = np.zeros_like(p)
        elif scale != 1.0:
            g = g * scale
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    bitgen = np.random.Philox(np.random.SeedSequence([seed, epoch]))
    return np.random.Generator(bitgen).permutation(n)


def frozen(params: ModelParams) -> ModelParams:
    """Untracked view of the parameters for gradient-free forward passes."""
    return ModelParams(params.config, {k: Tensor(v.data) for k, v in params.tensors.items()})


def batch_loss(params: ModelParams, config: TrainConfig, X, Y):
    fwd = forward(params, X)
    G = np.concatenate([X, Y], axis=1)
    if params.config.single_decoder:
        return total_loss(fwd.prediction, fwd.outputs, G, params.config.schedule, True, False)
    return total_loss(fwd.prediction, fwd.outputs, G, params.config.schedule,
                      not config.no_l1, not config.no_l2)


@dataclass
class TrainResult:
    params: ModelParams
    history: list


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset | None = None,
          params: ModelParams | None = None) -> TrainResult:
    if params is None:
        params = init_params(config.model_config(train_set.T_p, train_set.T_f,
                                                 train_set.J, train_set.D))
    state = AdamState()
    history = []
    n = len(train_set)
    names = params.names()
    arrays = {k: params[k].data for k in names}
    for epoch in range(1, config.epochs + 1):
        order = batch_order(n, config.seed, epoch)
        sums = {"l1": 0.0, "l2": 0.0, "total": 0.0}
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            params.zero_grad()
            losses = batch_loss(params, config, train_set.X[idx], train_set.Y[idx])
            values = losses.as_floats()
            if not np.isfinite(values["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            backward(losses.total)
            adam_step(arrays, {k: params[k].grad for k in names}, state, config.lr,
                      config.betas, config.eps, config.clip)
            for k in sums:
                sums[k] += values[k] * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        row["val_mpjpe"] = (evaluate(params, val_set, config.eval_mode).average_mpjpe
                            if val_set is not None and len(val_set) else float("nan"))
        history.append(row)
        log.info("epoch %d l1=%.5f l2=%.5f total=%.5f val=%.5f", epoch, row["l1"],
                 row["l2"], row["total"], row["val_mpjpe"])
    params.zero_grad()
    return TrainResult(params, history)


def predict(params: ModelParams, X, mode="blended", batch_size=256) -> np.ndarray:
    """Full-timeline predictions ``(N, T_p+T_f, J, D)`` for the requested mode."""
    cfg = params.config
    fp = frozen(params)
    out = []
    for start in range(0, len(X), batch_size):
        fwd = forward(fp, X[start:start + batch_size])
        if cfg.single_decoder or mode == "blended":
            out.append(fwd.prediction.data)
        elif mode == "last_decoder_only":
            first, last = cfg.schedule.spans()[-1]
            if first != 1 or last != cfg.total:
                raise ConfigError("last_decoder_only needs a last decoder spanning the "
                                  "whole timeline")
            out.append(fwd.outputs[-1].data)
        else:
            raise ConfigError(f"unknown eval mode {mode!r}")
    return np.concatenate(out, axis=0)


def evaluate(params: ModelParams, dataset: Dataset, mode="blended") -> EvalReport:
    cfg = params.config
    label = "single" if cfg.single_decoder else mode
    pred = predict(params, dataset.X, mode)
    return mpjpe(pred, dataset.G, (cfg.T_p + 1, cfg.total), label)


def zero_velocity_report(dataset: Dataset) -> EvalReport:
    pred = np.concatenate([dataset.X, zero_velocity_baseline(dataset.X, dataset.T_f)], axis=1)
    return mpjpe(pred, dataset.G, (dataset.T_p + 1, dataset.T_p + dataset.T_f),
                 "zero-velocity")


def consistency_matrix(params: ModelParams, dataset: Dataset, batch_size=256) -> np.ndarray:
    """Mean joint distance between every pair of decoders on their shared frames."""
    cfg = params.config
    spans = cfg.schedule.spans()
    K = len(spans)
    fp = frozen(params)
    sums = np.zeros((K, K))
    counts = np.zeros((K, K))
    for start in range(0, len(dataset), batch_size):
        outs = [y.data for y in forward(fp, dataset.X[start:start + batch_size]).outputs]
        for i in range(K):
            for j in range(i + 1, K):
                lo = max(spans[i][0], spans[j][0])
                hi = min(spans[i][1], spans[j][1])
                if hi < lo:
                    continue
                a = outs[i][:, lo - spans[i][0]:hi - spans[i][0] + 1]
                b = outs[j][:, lo - spans[j][0]:hi - spans[j][0] + 1]
                dist = np.sqrt(((a - b) ** 2).sum(axis=-1)).mean(axis=-1)
                sums[i, j] += dist.sum()
                counts[i, j] += dist.size
    mat = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return mat + mat.T


def attention_by_action(params: ModelParams, dataset: Dataset, batch_size=256) -> dict:
    """Mean attention matrix ``(K, T_p+T_f)`` per action label."""
    fp = frozen(params)
    labels = dataset.labels if dataset.labels is not None else np.zeros(len(dataset), int)
    mats = []
    for start in range(0, len(dataset), batch_size):
        mats.append(forward(fp, dataset.X[start:start + batch_size]).attention.data)
    A = np.concatenate(mats, axis=0)
    return {int(c): A[labels == c].mean(axis=0) for c in np.unique(labels)}


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    clean = replace(base, seed=seed, single_decoder=False, no_l1=False, no_l2=False,
                    no_ga=False, mode="incremental")
    if variant == "full":
        return clean
    if variant == "single":
        return replace(clean, single_decoder=True)
    if variant in ("no_l1", "no_l2", "no_ga"):
        return replace(clean, **{variant: True})
    if variant in ("full-all", "disjoint"):
        return replace(clean, mode=variant)
    raise ConfigError(f"unknown ablation variant {variant!r}")


def _run_variant(job):
    config, train_set, val_set = job
    result = train(config, train_set, val_set)
    return evaluate(result.params, val_set, "blended").average_mpjpe


def _map(fn, jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_ablation(base: TrainConfig, train_set: Dataset, val_set: Dataset, seeds,
                 variants=ABLATION_VARIANTS, workers=1) -> list:
    """Mean/std validation MPJPE for each variant over ``seeds``."""
    seeds = list(seeds)
    trained = [v for v in variants if v != "zero-velocity"]
    jobs = [(variant_config(base, v, s), train_set, val_set) for v in trained for s in seeds]
    scores = iter(_map(_run_variant, jobs, workers))
    per_variant = {v: [next(scores) for _ in seeds] for v in trained}
    if "zero-velocity" in variants:
        zv = zero_velocity_report(val_set).average_mpjpe
        per_variant["zero-velocity"] = [zv] * len(seeds)
    full_mean = float(np.mean(per_variant["full"])) if "full" in per_variant else float("nan")
    rows = []
    for v in variants:
        vals = np.asarray(per_variant[v])
        rows.append({"variant": v, "n_seeds": len(vals), "mean_mpjpe": float(vals.mean()),
                     "std_mpjpe": float(vals.std()),
                     "margin_vs_full": float(vals.mean()) - full_mean,
                     "per_seed": [float(x) for x in vals]})
    return rows


def _run_fig1(job):
    config, train_set, val_set = job
    result = train(config, train_set, val_set)
    return evaluate(result.params, val_set).per_frame_mpjpe


def fig1_harness(base: TrainConfig, dataset: Dataset, pre_lengths, seeds, fractions=(0.8, 0.2, 0.0),
                 split_seed=0, workers=1) -> dict:
    """Per-frame validation MPJPE of sole-decoder models predicting ``x`` frames.

    ``dataset`` must carry at least ``max(pre_lengths)`` future frames; each
    setting keeps only the first ``x`` of them, so all settings see the same
    underlying motion.
    """
    from .data import split

    pre_lengths = sorted(set(int(x) for x in pre_lengths))
    if pre_lengths[-1] > dataset.T_f:
        raise ConfigError(f"dataset has {dataset.T_f} future frames, Pre-{pre_lengths[-1]} "
                          f"needs more")
    train_set, val_set, _ = split(dataset, fractions, split_seed)
    jobs, keys = [], []
    for x in pre_lengths:
        tr = Dataset(train_set.X, train_set.Y[:, :x], train_set.labels)
        va = Dataset(val_set.X, val_set.Y[:, :x], val_set.labels)
        for s in seeds:
            cfg = replace(base, seed=s, single_decoder=True, no_l1=False, no_l2=False,
                          no_ga=False, mode="incremental")
            jobs.append((cfg, tr, va))
            keys.append(x)
    curves = _map(_run_fig1, jobs, workers)
    out = {}
    for x in pre_lengths:
        rows = [c for k, c in zip(keys, curves) if k == x]
        out[x] = [float(v) for v in np.mean(np.asarray(rows), axis=0)]
    return out


def history_rows(history) -> list:
    return [[h["epoch"], repr(h["l1"]), repr(h["l2"]), repr(h["total"]), repr(h["val_mpjpe"])]
            for h in history]

