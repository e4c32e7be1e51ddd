"""End-to-end forward pass: embed, encode, decode every range, gate and blend."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import blend, gate, masked_attention, uniform_attention
from .backbone import ModelParams, decode_all, embed_frames, encode, pad_input
from .numerics import Tensor
from .schedule import build_mask


@dataclass
class Forward:
    outputs: list
    omega: Tensor | None
    attention: Tensor
    prediction: Tensor


def forward(params: ModelParams, X) -> Forward:
    """Run the model on a batch ``(B, T_p, J, D)`` of observed sequences."""
    cfg = params.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    schedule = cfg.schedule
    M = encode(embed_frames(pad_input(X, cfg.total), params), params)
    outputs = decode_all(M, X, schedule, params)
    mask = build_mask(schedule)
    if cfg.single_decoder:
        A = Tensor(np.broadcast_to(mask, (X.shape[0], *mask.shape)).copy())
        return Forward(outputs, None, A, outputs[0])
    if cfg.gated:
        omega = gate(X, params)
        A = masked_attention(omega, mask)
    else:
        omega = None
        A = Tensor(np.broadcast_to(uniform_attention(mask).data,
                                   (X.shape[0], *mask.shape)).copy())
    return Forward(outputs, omega, A, blend(outputs, A, schedule))
