"""Corpus records, JSONL I/O, IERE-style dataset construction and a
synthetic generator with planted cue structure."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .coarse import CoarseLabel
from .tasks import DEFAULT_SPECS, DRR, ERE, TASKS, TaskSpec

FIELDS = ("id", "task", "arg1", "arg2", "fine_label", "coarse_label", "connective", "confidence")


class DataError(ValueError):
    pass


@dataclass
class InstancePair:
    id: str
    task: str
    arg1: str
    arg2: str
    fine_label: str | None = None
    coarse_label: str | None = None
    connective: str | None = None
    confidence: float | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in FIELDS}
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstancePair":
        missing = [k for k in ("id", "task", "arg1", "arg2") if k not in d]
        if missing:
            raise DataError(f"missing fields {missing}")
        known = {k: d.get(k) for k in FIELDS}
        extra = {k: v for k, v in d.items() if k not in FIELDS}
        if known["confidence"] is not None:
            known["confidence"] = float(known["confidence"])
        return cls(**known, extra=extra)


def validate(pair: InstancePair, spec: TaskSpec):
    """Check task tag, fine label membership and fine -> coarse consistency."""
    if pair.task != spec.task:
        raise DataError(f"{pair.id}: task {pair.task!r} does not match spec {spec.task!r}")
    if pair.fine_label is not None:
        if pair.fine_label not in spec.fine_to_coarse:
            raise DataError(f"{pair.id}: fine label {pair.fine_label!r} not in {spec.task} label set")
        parent = spec.fine_to_coarse[pair.fine_label].name
        if pair.coarse_label is not None and pair.coarse_label != parent:
            raise DataError(f"{pair.id}: coarse label {pair.coarse_label!r} inconsistent with "
                            f"{pair.fine_label!r} (expected {parent!r})")
    if pair.confidence is not None and pair.confidence < 0:
        raise DataError(f"{pair.id}: negative confidence {pair.confidence}")


def load_jsonl(path, spec: TaskSpec | dict | None = None) -> list[InstancePair]:
    """Read one InstancePair per line.  ``spec`` may be one TaskSpec or a
    task -> TaskSpec map; unknown JSON keys are kept in ``extra``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pair = InstancePair.from_dict(json.loads(line))
            except (json.JSONDecodeError, DataError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            s = spec.get(pair.task) if isinstance(spec, dict) else spec
            if s is not None:
                try:
                    validate(pair, s)
                except DataError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
            out.append(pair)
    return out


def save_jsonl(path, pairs: Iterable[InstancePair]):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=False) + "\n")


def strip_connectives(explicit: Sequence[InstancePair]) -> list[InstancePair]:
    """Turn explicit instances into implicit ones by dropping the connective.

    Arguments and labels are untouched.  Instances that were already stripped
    by a previous call (marked ``extra["stripped"]``) pass through unchanged.
    """
    out = []
    for p in explicit:
        if p.connective is None:
            if p.extra.get("stripped"):
                out.append(replace(p, extra=dict(p.extra)))
                continue
            raise DataError(f"{p.id}: no connective to strip")
        extra = dict(p.extra)
        extra["stripped"] = p.connective
        out.append(replace(p, connective=None, extra=extra))
    return out


def cap_per_category(data: Sequence[InstancePair], cap: int) -> list[InstancePair]:
    """Keep the ``cap`` most confident instances of every fine label.

    Ties on confidence are broken by ascending id; the input order of the
    survivors is preserved.
    """
    by_label = defaultdict(list)
    for i, p in enumerate(data):
        if p.confidence is None:
            raise DataError(f"{p.id}: missing confidence")
        by_label[p.fine_label].append(i)
    keep = set()
    for idx in by_label.values():
        idx.sort(key=lambda i: (-data[i].confidence, data[i].id))
        keep.update(idx[:cap])
    return [p for i, p in enumerate(data) if i in keep]


def split_stratified(data: Sequence[InstancePair], n_dev: int, n_test: int, rng) -> dict:
    """Per-category stratified train/dev/test split.

    Each label contributes to dev and test in proportion to its share of the
    data (largest-remainder rounding); the remainder goes to train.
    """
    by_label = defaultdict(list)
    for p in data:
        by_label[p.fine_label].append(p)
    labels = sorted(by_label)
    total = len(data)

    def allot(n):
        raw = np.array([n * len(by_label[lab]) / total for lab in labels])
        base = np.floor(raw).astype(int)
        for j in np.argsort(-(raw - base), kind="stable")[: n - base.sum()]:
            base[j] += 1
        return dict(zip(labels, base))

    dev_n, test_n = allot(n_dev), allot(n_test)
    out = {"train": [], "dev": [], "test": []}
    for lab in labels:
        items = list(by_label[lab])
        order = rng.permutation(len(items))
        items = [items[i] for i in order]
        a, b = dev_n[lab], dev_n[lab] + test_n[lab]
        out["dev"].extend(items[:a])
        out["test"].extend(items[a:b])
        out["train"].extend(items[b:])
    for k in out:
        out[k].sort(key=lambda p: p.id)
    return out


# --------------------------------------------------------------------------
# synthetic corpus

_SUBJECTS = ["per", "he", "she", "they", "the team", "the company", "my friend", "the child"]
_VERBS = ["goes", "eats", "orders", "walks", "writes", "buys", "reads", "calls", "leaves",
          "opens", "closes", "waits", "sleeps", "runs", "plays", "cooks", "finds", "loses",
          "sells", "meets", "visits", "builds", "cleans", "drives"]
_OBJECTS = ["the restaurant", "two hamburgers", "a letter", "the store", "a book", "the door",
            "the car", "a friend", "the office", "the park", "some bread", "the report",
            "a ticket", "the window", "the house", "a song", "the bill", "the game"]
_ADVERBS = ["quickly", "slowly", "again", "today", "early", "late", "happily", "quietly"]

N_COARSE_CUES = 3


def coarse_cue(coarse: int, k: int) -> str:
    return f"cue{coarse}{'abc'[k]}"


def fine_cue(task: str, slot: int) -> str:
    return f"{task.lower()}mark{slot}"


@dataclass
class SynthSpec:
    n_train: int = 2000
    n_dev: int = 400
    n_test: int = 400
    seed: int = 0
    noise: float = 0.1

    def to_dict(self):
        return dict(self.__dict__)


def _clause(rng) -> list[str]:
    words = [_SUBJECTS[rng.integers(len(_SUBJECTS))], _VERBS[rng.integers(len(_VERBS))]]
    if rng.random() < 0.8:
        words.append(_OBJECTS[rng.integers(len(_OBJECTS))])
    if rng.random() < 0.4:
        words.append(_ADVERBS[rng.integers(len(_ADVERBS))])
    return " ".join(words).split()


def _synth_instance(rng, spec: TaskSpec, label: str, uid: str) -> InstancePair:
    coarse = spec.fine_to_coarse[label]
    slot = spec.children(coarse).index(label)
    a1, a2 = _clause(rng), _clause(rng)
    for cue in (coarse_cue(int(coarse), int(rng.integers(N_COARSE_CUES))), fine_cue(spec.task, slot)):
        target = a1 if rng.random() < 0.5 else a2
        target.insert(int(rng.integers(len(target) + 1)), cue)
    return InstancePair(uid, spec.task, " ".join(a1), " ".join(a2), label, coarse.name)


def synth_task(spec: TaskSpec, synth: SynthSpec, rng) -> dict:
    """Generate train/dev/test splits for one task.

    Labels are drawn uniformly.  Label noise is applied to the training split
    only: a noisy instance gets a uniformly chosen *different* fine label
    (and that label's coarse parent); its cue tokens keep the original label.
    """
    if not 0 <= synth.noise < 0.5:
        raise DataError(f"noise rate must be in [0, 0.5), got {synth.noise}")
    splits = {}
    for split, n in (("train", synth.n_train), ("dev", synth.n_dev), ("test", synth.n_test)):
        if n < 2 * spec.n_fine:
            raise DataError(f"{spec.task}/{split}: n={n} is too small for {spec.n_fine} labels "
                            f"(need at least {2 * spec.n_fine})")
        labels = rng.integers(spec.n_fine, size=n)
        items = []
        for i, lab in enumerate(labels):
            uid = f"{spec.task.lower()}-{split}-{i:05d}"
            pair = _synth_instance(rng, spec, spec.fine_labels[lab], uid)
            if spec.task == ERE:
                pair.confidence = round(float(rng.lognormal(1.0, 0.5)), 4)
            if split == "train" and rng.random() < synth.noise:
                other = (lab + 1 + rng.integers(spec.n_fine - 1)) % spec.n_fine
                new = spec.fine_labels[other]
                pair.extra["clean_label"] = pair.fine_label
                pair.fine_label, pair.coarse_label = new, spec.fine_to_coarse[new].name
            items.append(pair)
        splits[split] = items
    return splits


def synth_generate(synth: SynthSpec | dict | None = None, specs: dict | None = None) -> dict:
    """ERE and DRR corpora sharing coarse cues with task-specific fine cues.

    Returns ``{task: {split: [InstancePair]}}``.
    """
    if synth is None:
        synth = SynthSpec()
    elif isinstance(synth, dict):
        synth = SynthSpec(**synth)
    specs = specs or DEFAULT_SPECS
    ere_rng, drr_rng = np.random.default_rng(np.random.SeedSequence(synth.seed)).spawn(2)
    return {ERE: synth_task(specs[ERE], synth, ere_rng), DRR: synth_task(specs[DRR], synth, drr_rng)}


# --------------------------------------------------------------------------
# manifests


def write_corpus(out_dir, corpus: dict, specs: dict | None = None, provenance: dict | None = None) -> Path:
    """Write ``{task}_{split}.jsonl`` files plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = specs or DEFAULT_SPECS
    manifest = {"tasks": {}, "provenance": provenance or {}}
    for task, splits in corpus.items():
        entry = {"spec": specs[task].to_dict(), "splits": {}, "counts": {}}
        for split, items in splits.items():
            name = f"{task.lower()}_{split}.jsonl"
            save_jsonl(out_dir / name, items)
            entry["splits"][split] = name
            entry["counts"][split] = len(items)
        manifest["tasks"][task] = entry
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_corpus(data_dir) -> tuple[dict, dict]:
    """Load a directory written by :func:`write_corpus`.

    Returns ``(corpus, specs)``; split files are validated against the
    manifest's TaskSpecs and counts.
    """
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    corpus, specs = {}, {}
    for task, entry in manifest["tasks"].items():
        if task not in TASKS:
            raise DataError(f"manifest: unknown task {task!r}")
        spec = TaskSpec.from_dict(entry["spec"])
        specs[task] = spec
        corpus[task] = {}
        for split, name in entry["splits"].items():
            path = data_dir / name
            if not path.exists():
                raise DataError(f"manifest lists missing file {path}")
            items = load_jsonl(path, spec)
            if len(items) != entry["counts"][split]:
                raise DataError(f"{path}: {len(items)} records, manifest says {entry['counts'][split]}")
            corpus[task][split] = items
    return corpus, specs


def coarse_id(pair: InstancePair) -> int:
    return int(CoarseLabel.parse(pair.coarse_label))
