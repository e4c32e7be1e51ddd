"""Training losses and the MPJPE evaluation metric."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor, as_tensor


def extended_truth(X, Y) -> np.ndarray:
    """History followed by future along the frame axis: the loss target G."""
    return np.concatenate([np.asarray(X, dtype=np.float64),
                           np.asarray(Y, dtype=np.float64)], axis=-3)


def _sq_error_sum(pred: Tensor, target: np.ndarray) -> Tensor:
    return nx.square(pred - Tensor(target)).sum()


def _n_sequences(shape) -> int:
    return int(np.prod(shape[:-3])) if len(shape) > 3 else 1


def loss_l1(P, G) -> Tensor:
    """Mean over frames and joints of the squared joint error (batch-averaged)."""
    P = as_tensor(P)
    G = np.asarray(G, dtype=np.float64)
    if P.shape != G.shape:
        raise ValueError(f"prediction shape {P.shape} != target shape {G.shape}")
    T, J = P.shape[-3], P.shape[-2]
    return _sq_error_sum(P, G) * (1.0 / (_n_sequences(P.shape) * T * J))


def loss_l2(outputs, G, schedule) -> Tensor:
    """Sum over decoders of each decoder's mean squared joint error on its span."""
    G = np.asarray(G, dtype=np.float64)
    total = None
    for (first, last), Y in zip(schedule.spans(), outputs):
        Y = as_tensor(Y)
        n = last - first + 1
        if Y.shape[-3] != n:
            raise ValueError(f"decoder output has {Y.shape[-3]} frames, schedule expects {n}")
        term = _sq_error_sum(Y, G[..., first - 1:last, :, :]) * (
            1.0 / (_n_sequences(Y.shape) * n * Y.shape[-2]))
        total = term if total is None else total + term
    return total


@dataclass
class LossBreakdown:
    l1: Tensor
    l2: Tensor
    total: Tensor

    def as_floats(self) -> dict:
        return {"l1": self.l1.item(), "l2": self.l2.item(), "total": self.total.item()}


def total_loss(P, outputs, G, schedule, use_l1=True, use_l2=True) -> LossBreakdown:
    l1 = loss_l1(P, G)
    l2 = loss_l2(outputs, G, schedule)
    if use_l1 and use_l2:
        total = l1 + l2
    elif use_l1:
        total = l1
    elif use_l2:
        total = l2
    else:
        raise ValueError("at least one of the two loss terms must be enabled")
    return LossBreakdown(l1, l2, total)


@dataclass
class EvalReport:
    per_frame_mpjpe: list
    average_mpjpe: float
    frames_evaluated: tuple
    mode: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames_evaluated"] = list(self.frames_evaluated)
        return d

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        first = self.frames_evaluated[0]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "mpjpe"])
            for i, v in enumerate(self.per_frame_mpjpe):
                w.writerow([first + i, repr(float(v))])


def per_frame_errors(pred, truth) -> np.ndarray:
    """Mean unsquared joint distance per frame, averaged over any batch axes."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    dist = np.sqrt(((pred - truth) ** 2).sum(axis=-1)).mean(axis=-1)
    return dist.reshape(-1, dist.shape[-1]).mean(axis=0)


def mpjpe(pred, truth, frame_range, mode="blended") -> EvalReport:
    """MPJPE over the inclusive 1-based ``frame_range = (first, last)``."""
    first, last = frame_range
    if last < first:
        raise ValueError(f"empty frame range {frame_range}")
    sl = (Ellipsis, slice(first - 1, last), slice(None), slice(None))
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if last > pred.shape[-3] or last > truth.shape[-3]:
        raise ValueError(f"frame range {frame_range} exceeds the sequence length")
    per_frame = per_frame_errors(pred[sl], truth[sl])
    return EvalReport([float(v) for v in per_frame], float(np.mean(per_frame)),
                      (first, last), mode)
