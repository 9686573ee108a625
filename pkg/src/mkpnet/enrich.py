"""Event-graph enrichment with classified implicit relations.

Candidate event pairs (typically co-occurring in a document) are classified
by a trained ERE model.  Each prediction is scored as

    confidence = probability * frequency

and assigned to the ``core`` / ``high`` / ``full`` tier by threshold.
Explicit (connective-derived) edges are kept in every tier and are never
replaced by an implicit edge.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

from .data import InstancePair
from .tasks import ERE

TIERS = ("core", "high", "full")
DEFAULT_THRESHOLDS = {"core": 3.0, "high": 2.0, "full": 1.0}
EDGE_COLUMNS = ("event1", "event2", "relation", "probability", "frequency", "confidence", "tier", "source")


@dataclass
class EnrichedEdge:
    event1: str
    event2: str
    relation: str
    probability: float
    frequency: int
    confidence: float
    tier: str
    source: str = "implicit"
    conflict: bool = field(default=False, compare=False)

    @property
    def key(self) -> tuple:
        return (self.event1, self.event2, self.relation)


@dataclass
class EventGraph:
    nodes: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.edges:
            for ev in (e.event1, e.event2):
                if ev not in self.nodes:
                    raise KeyError(f"edge {e.key} references unknown event {ev!r}")
            if e.key in seen:
                raise ValueError(f"duplicate edge {e.key}")
            seen.add(e.key)

    def copy(self) -> "EventGraph":
        return EventGraph(dict(self.nodes), [EnrichedEdge(**e.__dict__) for e in self.edges])


def score_edge(prob: float, freq: int) -> float:
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"probability must be in (0, 1], got {prob}")
    if int(freq) != freq or freq < 1:
        raise ValueError(f"frequency must be a positive integer, got {freq}")
    return prob * int(freq)


def _check_thresholds(thresholds: dict):
    vals = [thresholds[t] for t in TIERS]
    if not all(v > 0 for v in vals) or not all(a > b for a, b in zip(vals, vals[1:])):
        raise ValueError(f"thresholds must be positive and strictly decreasing core > high > full, got {thresholds}")


def assign_tier(confidence: float, thresholds: dict | None = None) -> str | None:
    """Highest tier whose threshold ``confidence`` reaches (inclusive), or
    None when it falls below the ``full`` threshold."""
    thresholds = thresholds or DEFAULT_THRESHOLDS
    _check_thresholds(thresholds)
    for tier in TIERS:
        if confidence >= thresholds[tier]:
            return tier
    return None


def tier_view(graph: EventGraph, tier: str) -> EventGraph:
    """Explicit edges plus implicit edges at ``tier`` or stricter."""
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    allowed = set(TIERS[: TIERS.index(tier) + 1])
    edges = [e for e in graph.edges if e.source == "explicit" or e.tier in allowed]
    return EventGraph(dict(graph.nodes), edges)


def aggregate_candidates(candidates: Iterable) -> "OrderedDict[tuple, int]":
    """Merge repeated (event1, event2) candidates, summing their frequencies."""
    merged: OrderedDict = OrderedDict()
    for item in candidates:
        if len(item) == 2:
            (e1, e2), freq = item
        else:
            e1, e2, freq = item
        merged[(e1, e2)] = merged.get((e1, e2), 0) + int(freq)
    return merged


def candidates_from_documents(docs: dict) -> list:
    """All within-document event pairs ``(e_i, e_j, 1)`` with i < j in
    document order, one per co-occurrence."""
    out = []
    for doc_id in sorted(docs):
        events = list(OrderedDict.fromkeys(docs[doc_id]))
        out.extend((a, b, 1) for a, b in combinations(events, 2))
    return out


def enrich_graph(graph: EventGraph, candidates: Iterable, model, thresholds: dict | None = None,
                 batch_size: int = 256) -> EventGraph:
    """Return a new graph with classified candidate pairs merged in.

    ``candidates`` yields ``(event1, event2, frequency)`` triples (or
    ``((event1, event2), frequency)``).  ``model`` needs
    ``predict(pairs, task)`` returning objects with ``fine_label`` and
    ``probability``.  Edges come out sorted by (event1, event2, relation).
    """
    thresholds = thresholds or DEFAULT_THRESHOLDS
    _check_thresholds(thresholds)
    merged = aggregate_candidates(candidates)
    for e1, e2 in merged:
        for ev in (e1, e2):
            if ev not in graph.nodes:
                raise KeyError(f"candidate ({e1}, {e2}) references unknown event {ev!r}")

    out = graph.copy()
    existing = {e.key for e in out.edges}
    explicit_rel = {}
    for e in out.edges:
        if e.source == "explicit":
            explicit_rel.setdefault((e.event1, e.event2), set()).add(e.relation)

    keys = list(merged)
    preds = []
    for s in range(0, len(keys), batch_size):
        chunk = keys[s:s + batch_size]
        pairs = [InstancePair(f"{a}|{b}", ERE, graph.nodes[a], graph.nodes[b]) for a, b in chunk]
        preds.extend(model.predict(pairs, ERE))

    for (e1, e2), pred in zip(keys, preds):
        freq = merged[(e1, e2)]
        prob = float(pred.probability)
        conf = score_edge(prob, freq)
        tier = assign_tier(conf, thresholds)
        if tier is None:
            continue
        key = (e1, e2, pred.fine_label)
        if key in existing:
            continue
        rels = explicit_rel.get((e1, e2), set())
        out.edges.append(EnrichedEdge(e1, e2, pred.fine_label, prob, freq, conf, tier, "implicit",
                                      conflict=bool(rels) and pred.fine_label not in rels))
        existing.add(key)
    out.edges.sort(key=lambda e: e.key)
    return out


# --------------------------------------------------------------------------
# TSV I/O


def read_nodes(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if rows and rows[0] == ["id", "text"]:
        rows = rows[1:]
    return {r[0]: r[1] for r in rows if r}


def write_nodes(path, nodes: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "text"])
        for k in sorted(nodes):
            w.writerow([k, nodes[k]])


def read_edges(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(EDGE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing edge columns {sorted(missing)}")
        return [EnrichedEdge(r["event1"], r["event2"], r["relation"], float(r["probability"]),
                             int(r["frequency"]), float(r["confidence"]), r["tier"], r["source"])
                for r in reader]


def write_edges(path, edges: Sequence[EnrichedEdge]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for e in edges:
            w.writerow([e.event1, e.event2, e.relation, repr(e.probability), e.frequency,
                        repr(e.confidence), e.tier, e.source])


def write_conflicts(path, edges: Sequence[EnrichedEdge]):
    """Implicit edges whose pair already carries a different explicit relation."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["event1", "event2", "implicit_relation", "confidence"])
        for e in edges:
            if e.conflict:
                w.writerow([e.event1, e.event2, e.relation, repr(e.confidence)])


def read_candidates(path) -> list:
    """TSV ``event1 event2 frequency`` (header optional) or a JSON document
    map ``{doc_id: [event ids]}``."""
    path = Path(path)
    if path.suffix == ".json":
        return candidates_from_documents(json.loads(path.read_text()))
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0] == "event1":
                continue
            out.append((row[0], row[1], int(row[2]) if len(row) > 2 else 1))
    return out


def explicit_edges_from_rows(rows: Iterable) -> list:
    """Explicit edges from ``(event1, event2, relation, frequency)`` rows.

    Explicit relations are taken as certain (probability 1) and are placed
    in the ``core`` tier regardless of frequency.
    """
    return [EnrichedEdge(a, b, rel, 1.0, int(f), score_edge(1.0, int(f)), "core", "explicit")
            for a, b, rel, f in rows]
