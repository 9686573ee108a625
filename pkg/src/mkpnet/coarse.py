"""Coarse category adaptor: a 4-way classifier shared across tasks plus an
embedding table for the coarse labels."""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from . import tensorgrad as tg
from .tensorgrad import Tensor


class CoarseLabel(IntEnum):
    Temporal = 0
    Contingency = 1
    Comparison = 2
    Expansion = 3

    @classmethod
    def parse(cls, value) -> "CoarseLabel":
        if isinstance(value, str):
            try:
                return cls[value]
            except KeyError:
                raise ValueError(f"unknown coarse label {value!r}") from None
        return cls(int(value))


N_COARSE = len(CoarseLabel)


def init_coarse_params(rng, n_in: int, d_c: int) -> dict:
    lim = np.sqrt(6.0 / (n_in + N_COARSE))
    return {
        "clf.W": rng.uniform(-lim, lim, size=(n_in, N_COARSE)),
        "clf.b": np.zeros(N_COARSE),
        "emb": rng.normal(0, 0.1, size=(N_COARSE, d_c)),
    }


def coarse_logits(h_cls: Tensor, h_z: Tensor | None, heads: dict) -> Tensor:
    x = h_cls if h_z is None else tg.concat([h_cls, h_z])
    if x.shape[-1] != heads["clf.W"].shape[0]:
        raise tg.ShapeError(f"coarse classifier expects {heads['clf.W'].shape[0]} inputs, got {x.shape[-1]}")
    return tg.add(tg.matmul(x if x.data.ndim == 2 else tg.reshape(x, (1, -1)), heads["clf.W"]), heads["clf.b"])


def classify_coarse(h_cls: Tensor, h_z: Tensor | None, heads: dict) -> Tensor:
    """Softmax over the four coarse categories, ``[B, 4]``."""
    return tg.softmax(coarse_logits(h_cls, h_z, heads))


def embed_coarse(label, heads: dict) -> Tensor:
    """Row(s) of the coarse label table; ``label`` is an id or array of ids."""
    ids = np.asarray(label, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= N_COARSE):
        raise ValueError(f"coarse label id out of range: {label}")
    return tg.embedding(heads["emb"], ids)


def argmax_label(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    return np.argmax(probs, axis=-1)
