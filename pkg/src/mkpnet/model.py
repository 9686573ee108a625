"""MKPNet assembly: shared encoder, semantic and coarse adaptors plus one fine
classifier per task.

Parameters live in five named groups.  ``bert``, ``semantic`` and ``coarse``
are shared by both tasks (a single storage instance each); ``fine_ERE`` and
``fine_DRR`` hold each task's fine classifier and fine-label embedding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorgrad as tg
from .coarse import CoarseLabel, argmax_label, coarse_logits, embed_coarse, init_coarse_params
from .data import InstancePair, coarse_id
from .encoder import Vocab, encode_pair, init_encoder_params, pad_batch, tokenize_pair
from .semantic import (init_semantic_params, infer_latent, kl_closed_form, posterior_params,
                       prior_params, reparameterize)
from .tasks import DEFAULT_SPECS, TASKS, TaskSpec
from .tensorgrad import Tensor

SHARED_GROUPS = ("bert", "semantic", "coarse")


def fine_group(task: str) -> str:
    return f"fine_{task}"


@dataclass
class ModelConfig:
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    d_z: int = 32
    d_label: int = 32
    d_c: int = 32
    d_ff: int | None = None


@dataclass
class AblationConfig:
    use_semantic: bool = True
    use_coarse: bool = True
    use_projection: bool = True
    gold_coarse_at_test: bool = False

    def __post_init__(self):
        if self.gold_coarse_at_test and not self.use_coarse:
            raise ValueError("gold_coarse_at_test requires use_coarse")


class ParamGroups:
    """Named parameter groups; each parameter is stored exactly once."""

    def __init__(self, groups: dict):
        self.groups = {g: dict(ps) for g, ps in groups.items()}
        seen = {}
        for g, ps in self.groups.items():
            for name, t in ps.items():
                if id(t) in seen:
                    raise ValueError(f"{g}.{name} is also registered as {seen[id(t)]}")
                seen[id(t)] = f"{g}.{name}"

    def __getitem__(self, group) -> dict:
        return self.groups[group]

    def named(self, groups: Sequence[str] | None = None) -> dict:
        """Flat ``{"group.name": Tensor}`` view in a fixed order."""
        out = {}
        for g in groups or self.groups:
            for name, t in self.groups.get(g, {}).items():
                out[f"{g}.{name}"] = t
        return out

    def for_task(self, task: str) -> dict:
        """Parameters a step on ``task`` may update."""
        return self.named(list(SHARED_GROUPS) + [fine_group(task)])

    def count(self, group: str | None = None) -> int:
        groups = [group] if group else list(self.groups)
        return sum(t.size for g in groups for t in self.groups.get(g, {}).values())

    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.named().items()}

    def load_state_dict(self, state: dict):
        named = self.named()
        if set(named) != set(state):
            raise ValueError(f"checkpoint names differ: missing {sorted(set(named) - set(state))[:5]}, "
                             f"unexpected {sorted(set(state) - set(named))[:5]}")
        for k, t in named.items():
            if t.shape != tuple(state[k].shape):
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} vs model {t.shape}")
            t.data[...] = state[k]

    def zero_grad(self):
        for t in self.named().values():
            t.grad = None


def assemble_features(h_cls: Tensor, h_z: Tensor | None, h_yc: Tensor | None, cfg: AblationConfig) -> Tensor:
    """[h_cls ; h_z ; h_yc] with disabled components left out."""
    parts = [h_cls]
    for flag, part, name in ((cfg.use_semantic, h_z, "h_z"), (cfg.use_coarse, h_yc, "h_yc")):
        if flag:
            if part is None:
                raise ValueError(f"assemble_features: {name} missing but its adaptor is enabled")
            parts.append(part)
    return parts[0] if len(parts) == 1 else tg.concat(parts)


@dataclass
class TrainOutput:
    fine_logits: Tensor
    coarse_logits: Tensor | None
    kl: Tensor
    fine_ce: Tensor
    coarse_ce: Tensor
    eps: np.ndarray | None = None


@dataclass
class Prediction:
    fine_label: str
    coarse_label: str | None
    fine_probs: np.ndarray
    coarse_probs: np.ndarray | None = None

    @property
    def probability(self) -> float:
        return float(self.fine_probs.max())


def _glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class MKPNet:
    def __init__(self, vocab: Vocab, specs: dict | None = None, config: ModelConfig | None = None,
                 ablation: AblationConfig | None = None, seed: int = 0):
        self.vocab = vocab
        self.specs = dict(specs or DEFAULT_SPECS)
        self.config = config or ModelConfig()
        self.ablation = ablation or AblationConfig()
        self.seed = seed
        self._tok_cache: dict = {}
        self.params = self._init_params(seed)

    # ------------------------------------------------------------------ setup

    def feature_dim(self) -> int:
        c, a = self.config, self.ablation
        return c.d + (c.d_z if a.use_semantic else 0) + (c.d_c if a.use_coarse else 0)

    def _init_params(self, seed) -> ParamGroups:
        c, a = self.config, self.ablation
        # one independent stream per group so enabling a component never
        # shifts the initialisation of another
        rngs = dict(zip(("bert", "semantic", "coarse") + tuple(fine_group(t) for t in TASKS),
                        np.random.default_rng(np.random.SeedSequence(seed)).spawn(5)))
        raw = {g: {} for g in rngs}
        raw["bert"] = init_encoder_params(rngs["bert"], len(self.vocab), c.d, c.n_layers, c.n_heads,
                                          c.max_len, c.d_ff)
        if a.use_semantic:
            raw["semantic"] = init_semantic_params(rngs["semantic"], c.d, c.d_label, c.d_z)
        if a.use_coarse:
            raw["coarse"] = init_coarse_params(rngs["coarse"], c.d + (c.d_z if a.use_semantic else 0), c.d_c)
        for task in TASKS:
            g = fine_group(task)
            if task not in self.specs:
                continue
            n = self.specs[task].n_fine
            rng = rngs[g]
            raw[g] = {"clf.W": _glorot(rng, self.feature_dim(), n), "clf.b": np.zeros(n)}
            if a.use_semantic:
                raw[g]["label_emb"] = rng.normal(0, 0.1, size=(n, c.d_label))
        groups = {g: {k: Tensor(v, requires_grad=True, name=f"{g}.{k}") for k, v in ps.items()}
                  for g, ps in raw.items()}
        return ParamGroups(groups)

    # ---------------------------------------------------------------- helpers

    def spec(self, task: str) -> TaskSpec:
        try:
            return self.specs[task]
        except KeyError:
            raise ValueError(f"model has no task {task!r}") from None

    def tokenize(self, pairs: Sequence[InstancePair]) -> dict:
        toks = []
        for p in pairs:
            key = (p.arg1, p.arg2)
            tp = self._tok_cache.get(key)
            if tp is None:
                tp = self._tok_cache[key] = tokenize_pair(p.arg1, p.arg2, self.vocab, self.config.max_len)
            toks.append(tp)
        return pad_batch(toks)

    def encode(self, pairs: Sequence[InstancePair]) -> Tensor:
        return encode_pair(self.tokenize(pairs), self.params["bert"], self.config.n_heads)

    def _check_task(self, pairs, task):
        if not pairs:
            raise ValueError("empty batch")
        bad = [p.id for p in pairs if p.task != task]
        if bad:
            raise ValueError(f"batch mixes tasks: {bad[:3]} are not {task}")

    # ---------------------------------------------------------------- forward

    def forward_train(self, pairs: Sequence[InstancePair], task: str, rng: np.random.Generator | None = None,
                      teacher_forcing: bool = True, eps: np.ndarray | None = None) -> TrainOutput:
        """Training forward pass over a homogeneous batch.

        Losses are batch means; ``kl`` is zero (and no posterior is built)
        when the semantic adaptor is off, ``coarse_ce`` is zero when the
        coarse adaptor is off.
        """
        self._check_task(pairs, task)
        spec, cfg, P = self.spec(task), self.ablation, self.params
        fine = np.array([spec.fine_id(p.fine_label) for p in pairs])
        coarse = np.array([coarse_id(p) for p in pairs])
        expected = np.array([int(spec.fine_to_coarse[p.fine_label]) for p in pairs])
        if (coarse != expected).any():
            raise ValueError(f"coarse label inconsistent with fine label for {task}")
        fg = P[fine_group(task)]
        h_cls = self.encode(pairs)

        zero = Tensor(0.0)
        h_z, kl, used_eps = None, zero, None
        if cfg.use_semantic:
            if rng is None and eps is None:
                raise ValueError("forward_train needs an rng (or a recorded eps) for the latent sample")
            h_y = tg.embedding(fg["label_emb"], fine)
            q = posterior_params(h_cls, h_y, P["semantic"])
            p = prior_params(h_cls, P["semantic"])
            sample = reparameterize(q, rng, eps)
            h_z, used_eps = sample.h_z, sample.eps
            kl = kl_closed_form(q, p)

        c_logits, h_yc, coarse_ce = None, None, zero
        if cfg.use_coarse:
            c_logits = coarse_logits(h_cls, h_z, P["coarse"])
            coarse_ce = tg.cross_entropy(c_logits, coarse)
            ids = coarse if teacher_forcing else argmax_label(c_logits.data)
            h_yc = embed_coarse(ids, P["coarse"])

        feats = assemble_features(h_cls, h_z, h_yc, cfg)
        f_logits = tg.add(tg.matmul(feats, fg["clf.W"]), fg["clf.b"])
        fine_ce = tg.cross_entropy(f_logits, fine)
        return TrainOutput(f_logits, c_logits, kl, fine_ce, coarse_ce, used_eps)

    def predict(self, pairs: Sequence[InstancePair], task: str, oracle: bool | None = None) -> list[Prediction]:
        """Deterministic inference.  With the oracle flag (default: the
        ablation's ``gold_coarse_at_test``) the gold coarse label of each
        pair replaces the predicted one."""
        self._check_task(pairs, task)
        spec, cfg, P = self.spec(task), self.ablation, self.params
        oracle = cfg.gold_coarse_at_test if oracle is None else oracle
        if oracle and not cfg.use_coarse:
            raise ValueError("oracle coarse mode needs the coarse adaptor")
        if oracle and any(p.coarse_label is None for p in pairs):
            raise ValueError("oracle coarse mode needs a gold coarse label on every pair")
        h_cls = self.encode(pairs)
        h_z = infer_latent(h_cls, P["semantic"]) if cfg.use_semantic else None
        c_probs, c_ids, h_yc = None, None, None
        if cfg.use_coarse:
            c_logits = coarse_logits(h_cls, h_z, P["coarse"])
            c_probs = tg._softmax(c_logits.data)
            c_ids = np.array([coarse_id(p) for p in pairs]) if oracle else argmax_label(c_probs)
            h_yc = embed_coarse(c_ids, P["coarse"])
        f_logits = tg.add(tg.matmul(assemble_features(h_cls, h_z, h_yc, cfg), P[fine_group(task)]["clf.W"]),
                          P[fine_group(task)]["clf.b"])
        f_probs = tg._softmax(f_logits.data)
        f_ids = np.argmax(f_probs, axis=-1)
        out = []
        for i in range(len(pairs)):
            out.append(Prediction(
                spec.fine_labels[f_ids[i]],
                CoarseLabel(int(c_ids[i])).name if c_ids is not None else None,
                f_probs[i],
                c_probs[i] if c_probs is not None else None,
            ))
        return out

    def predict_batched(self, pairs: Sequence[InstancePair], task: str, batch_size: int = 256,
                        oracle: bool | None = None) -> list[Prediction]:
        out = []
        for i in range(0, len(pairs), batch_size):
            out.extend(self.predict(pairs[i:i + batch_size], task, oracle))
        return out

    # ------------------------------------------------------------ persistence

    def sidecar(self, extra: dict | None = None) -> dict:
        return {
            "tasks": {t: s.to_dict() for t, s in self.specs.items()},
            "model": asdict(self.config),
            "ablation": asdict(self.ablation),
            "vocab_sha256": self.vocab.digest(),
            "vocab_size": len(self.vocab),
            "seed": self.seed,
            "param_counts": {g: self.params.count(g) for g in self.params.groups},
            **(extra or {}),
        }

    def save(self, out_dir, extra: dict | None = None):
        """Checkpoint (``params.json`` + ``params.bin``), ``vocab.txt`` and
        the ``model.json`` sidecar."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tg.save_checkpoint(out_dir / "params", self.params.named())
        self.vocab.save(out_dir / "vocab.txt")
        (out_dir / "model.json").write_text(json.dumps(self.sidecar(extra), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir) -> "MKPNet":
        model_dir = Path(model_dir)
        meta = json.loads((model_dir / "model.json").read_text())
        vocab = Vocab.load(model_dir / "vocab.txt")
        if vocab.digest() != meta["vocab_sha256"]:
            raise ValueError(f"{model_dir}: vocab.txt does not match the hash in model.json")
        specs = {t: TaskSpec.from_dict(d) for t, d in meta["tasks"].items()}
        model = cls(vocab, specs, _from_dict(ModelConfig, meta["model"]),
                    _from_dict(AblationConfig, meta["ablation"]), meta.get("seed", 0))
        model.params.load_state_dict(tg.load_checkpoint(model_dir / "params"))
        return model


def _from_dict(klass, d: dict):
    names = {f.name for f in fields(klass)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"{klass.__name__}: unknown keys {sorted(unknown)}")
    return klass(**d)
