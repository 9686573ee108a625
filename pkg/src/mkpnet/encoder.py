"""Token adaptor: tokenizer, vocabulary and a small transformer pair encoder.

The encoder reads ``[CLS] arg1 [SEP] arg2 [SEP]`` and returns the last-layer
hidden state at the ``[CLS]`` position.  Input embeddings are the sum of
token, segment and position embeddings; blocks are pre-norm with a tanh
feed-forward layer.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensorgrad as tg
from .tensorgrad import Tensor

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def normalize(text: str) -> list[str]:
    """Lowercase, split on whitespace, split punctuation into its own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token <-> id map with ``[PAD] [UNK] [CLS] [SEP]`` fixed at ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with {RESERVED}, got {tuple(tokens[:4])}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    pad_id, unk_id, cls_id, sep_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 8192) -> "Vocab":
        """Most frequent tokens first, ties broken alphabetically."""
        counts = Counter(tok for text in texts for tok in normalize(text))
        for r in RESERVED:
            counts.pop(r.lower(), None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        body = [tok for tok, _ in ranked[: max(0, max_size - len(RESERVED))]]
        return cls(list(RESERVED) + body)

    def save(self, path):
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


@dataclass
class TokenizedPair:
    token_ids: list
    segment_ids: list
    position_ids: list
    attention_mask: list

    def __len__(self):
        return len(self.token_ids)


def _split_budget(n1: int, n2: int, budget: int) -> tuple[int, int]:
    if n1 + n2 <= budget:
        return n1, n2
    # proportional share, rounding half up so ties favour arg1
    k1 = int(np.floor(budget * n1 / (n1 + n2) + 0.5))
    k1 = min(n1, max(1, min(k1, budget - 1)))
    k2 = min(n2, budget - k1)
    k1 = min(n1, budget - k2)
    return k1, k2


def tokenize_pair(arg1: str, arg2: str, vocab: Vocab, max_len: int = 64) -> TokenizedPair:
    if max_len < 5:
        raise ValueError(f"max_len={max_len} cannot hold [CLS] a [SEP] b [SEP]")
    t1, t2 = normalize(arg1), normalize(arg2)
    if not t1 or not t2:
        raise ValueError(f"empty argument after normalization: {arg1!r}, {arg2!r}")
    k1, k2 = _split_budget(len(t1), len(t2), max_len - 3)
    ids = ([vocab.cls_id] + [vocab.id(t) for t in t1[:k1]] + [vocab.sep_id]
           + [vocab.id(t) for t in t2[:k2]] + [vocab.sep_id])
    seg = [0] * (k1 + 2) + [1] * (k2 + 1)
    n = len(ids)
    return TokenizedPair(ids, seg, list(range(n)), [1] * n)


def pad_batch(batch: Sequence[TokenizedPair], length: int | None = None) -> dict:
    """Stack pairs into ``[B, T]`` int arrays, padding with ``[PAD]``."""
    T = length or max(len(p) for p in batch)
    out = {k: np.zeros((len(batch), T), dtype=np.int64)
           for k in ("token_ids", "segment_ids", "position_ids", "attention_mask")}
    for i, p in enumerate(batch):
        n = len(p)
        if n > T:
            raise ValueError(f"pair of length {n} does not fit padded length {T}")
        out["token_ids"][i, :n] = p.token_ids
        out["segment_ids"][i, :n] = p.segment_ids
        out["position_ids"][i, :n] = p.position_ids
        out["position_ids"][i, n:] = np.arange(n, T)
        out["attention_mask"][i, :n] = 1
    return out


def _dense(rng, n_in, n_out, prefix):
    # Glorot-uniform weights, zero bias
    lim = np.sqrt(6.0 / (n_in + n_out))
    return {
        f"{prefix}.W": rng.uniform(-lim, lim, size=(n_in, n_out)),
        f"{prefix}.b": np.zeros(n_out),
    }


def init_encoder_params(rng, vocab_size: int, d: int = 64, n_layers: int = 2,
                        n_heads: int = 4, max_len: int = 64, d_ff: int | None = None) -> dict:
    if d % n_heads:
        raise ValueError(f"d={d} is not divisible by n_heads={n_heads}")
    d_ff = d_ff or 4 * d
    p = {
        "tok_emb": rng.normal(0, 0.1, size=(vocab_size, d)),
        "seg_emb": rng.normal(0, 0.05, size=(2, d)),
        "pos_emb": rng.normal(0, 0.05, size=(max_len, d)),
    }
    for layer in range(n_layers):
        pre = f"layer{layer}"
        p[f"{pre}.ln1.g"] = np.ones(d)
        p[f"{pre}.ln1.b"] = np.zeros(d)
        for name in ("q", "k", "v", "o"):
            p.update(_dense(rng, d, d, f"{pre}.attn.{name}"))
        # a key bias shifts every score of a query equally, so softmax
        # cancels it and its gradient is identically zero
        del p[f"{pre}.attn.k.b"]
        p[f"{pre}.ln2.g"] = np.ones(d)
        p[f"{pre}.ln2.b"] = np.zeros(d)
        p.update(_dense(rng, d, d_ff, f"{pre}.ff1"))
        p.update(_dense(rng, d_ff, d, f"{pre}.ff2"))
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    return p


def _linear(x, params, prefix):
    return tg.add(tg.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def _split_heads(x, B, T, H, dh):
    return tg.transpose(tg.reshape(x, (B, T, H, dh)), (0, 2, 1, 3))


def encode_pair(batch: Sequence[TokenizedPair] | dict, params: dict, n_heads: int) -> Tensor:
    """Return h_[CLS] for each pair as a ``[B, d]`` tensor.

    ``params`` maps encoder parameter names (without group prefix) to
    Tensors; ``batch`` is either a list of pairs or the output of
    :func:`pad_batch`.
    """
    arrays = batch if isinstance(batch, dict) else pad_batch(batch)
    ids = arrays["token_ids"]
    B, T = ids.shape
    max_len, d = params["pos_emb"].shape
    if T > max_len:
        raise ValueError(f"sequence length {T} exceeds position table size {max_len}")
    H = n_heads
    dh = d // H
    mask = arrays["attention_mask"]

    x = tg.add(tg.embedding(params["tok_emb"], ids), tg.embedding(params["seg_emb"], arrays["segment_ids"]))
    x = tg.add(x, tg.embedding(params["pos_emb"], arrays["position_ids"]))
    layer = 0
    while f"layer{layer}.ln1.g" in params:
        pre = f"layer{layer}"
        h = tg.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        q = _split_heads(_linear(h, params, f"{pre}.attn.q"), B, T, H, dh)
        k = _split_heads(tg.matmul(h, params[f"{pre}.attn.k.W"]), B, T, H, dh)
        v = _split_heads(_linear(h, params, f"{pre}.attn.v"), B, T, H, dh)
        a = tg.attention(q, k, v, mask)
        a = tg.reshape(tg.transpose(a, (0, 2, 1, 3)), (B, T, d))
        x = tg.add(x, _linear(a, params, f"{pre}.attn.o"))
        h = tg.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        h = _linear(tg.tanh(_linear(h, params, f"{pre}.ff1")), params, f"{pre}.ff2")
        x = tg.add(x, h)
        layer += 1
    x = tg.layer_norm(x, params["ln_f.g"], params["ln_f.b"])
    return tg.select(x, 0, axis=1)
