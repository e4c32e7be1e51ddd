"""Gating network, masked adaptive attention and blending of decoder outputs."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor, as_tensor


def gate(X, params) -> Tensor:
    """Blending coefficients from the flattened observed sequence, ``(B, K)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    x = Tensor(X.reshape(X.shape[0], -1))
    h = nx.relu(x @ params["gate.fc1.W"] + params["gate.fc1.b"])
    h = nx.relu(h @ params["gate.fc2.W"] + params["gate.fc2.b"])
    return nx.softmax(h @ params["gate.fc3.W"] + params["gate.fc3.b"], axis=-1)


def masked_attention(omega, mask) -> Tensor:
    """A[k, t] = exp(w_k) B[k, t] / sum_k' exp(w_k') B[k', t].

    ``omega`` is ``(K,)`` or ``(B, K)``; the result is ``(K, T)`` or
    ``(B, K, T)``. The exponential is applied to ``omega`` as given, even
    when it already came out of a softmax.
    """
    omega = as_tensor(omega)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[0] != omega.shape[-1]:
        raise ValueError(f"omega has {omega.shape[-1]} entries but mask has {mask.shape[0]} rows")
    if np.any(mask.sum(axis=0) == 0):
        raise ValueError("mask has a frame covered by no decoder")
    # subtracting the row max leaves the ratio unchanged
    shifted = omega - Tensor(omega.data.max(axis=-1, keepdims=True))
    weights = nx.exp(shifted.reshape(*omega.shape, 1)) * mask
    return weights / weights.sum(axis=-2, keepdims=True)


def uniform_attention(mask) -> Tensor:
    mask = np.asarray(mask, dtype=np.float64)
    return Tensor(mask / mask.sum(axis=0, keepdims=True))


def blend(outputs, A, schedule) -> Tensor:
    """Per-frame convex combination of decoder outputs on the full timeline.

    ``outputs[k]`` covers the 1-based frames of ``schedule.spans()[k]``;
    frames outside a decoder's span carry zero weight and are skipped.
    """
    A = as_tensor(A)
    T = schedule.total
    batched = A.ndim == 3
    P = None
    for k, ((first, last), Y) in enumerate(zip(schedule.spans(), outputs)):
        Y = as_tensor(Y)
        w = A[:, k, first - 1:last] if batched else A[k, first - 1:last]
        term = Y * w.reshape(*w.shape, *([1] * (Y.ndim - w.ndim)))
        lead = Y.shape[:Y.ndim - 3] if Y.ndim >= 3 else ()
        pieces = []
        if first > 1:
            pieces.append(Tensor(np.zeros((*lead, first - 1, *Y.shape[-2:]))))
        pieces.append(term)
        if last < T:
            pieces.append(Tensor(np.zeros((*lead, T - last, *Y.shape[-2:]))))
        full = nx.concat(pieces, axis=-3) if len(pieces) > 1 else term
        P = full if P is None else P + full
    return P
