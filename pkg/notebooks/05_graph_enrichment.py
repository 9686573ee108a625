"""
Enriching an event graph with implicit relations
================================================

Event pairs that co-occur in a document are classified by a trained event
relation model.  Each new edge is scored as probability times frequency
and placed in the core, high or full tier by threshold.  Explicit edges
always stay, and an implicit edge never replaces one.
"""

from mkpnet.ablation import run_experiment
from mkpnet.data import SynthSpec, synth_generate
from mkpnet.enrich import EventGraph, candidates_from_documents, enrich_graph, explicit_edges_from_rows, tier_view
from mkpnet.model import AblationConfig, ModelConfig
from mkpnet.tasks import DEFAULT_SPECS, ERE
from mkpnet.trainer import TrainerConfig

corpus = synth_generate(SynthSpec(n_train=600, n_dev=100, n_test=100, seed=2, noise=0.0))
model, _ = run_experiment(corpus, DEFAULT_SPECS, ModelConfig(d=32, n_layers=1, d_z=16, d_label=16, d_c=16),
                          AblationConfig(), TrainerConfig(epochs=6, seed=0))

# Nodes come from held-out pairs so the texts carry the planted cues.
pairs = corpus[ERE]["test"][:30]
nodes = {}
for i, p in enumerate(pairs):
    nodes[f"a{i:02d}"], nodes[f"b{i:02d}"] = p.arg1, p.arg2
explicit = explicit_edges_from_rows([("a00", "b00", pairs[0].fine_label, 3)])
graph = EventGraph(nodes, explicit)

# Each pair shares a document a few times; pairs with more mentions get more weight.
docs = {f"doc{i:02d}-{k}": [f"a{i:02d}", f"b{i:02d}"] for i in range(len(pairs)) for k in range(1 + i % 5)}
candidates = candidates_from_documents(docs)
enriched = enrich_graph(graph, candidates, model)

for tier in ("core", "high", "full"):
    print(f"{tier:5s} tier: {len(tier_view(enriched, tier).edges)} edges")
for e in enriched.edges[:6]:
    print(f"{e.event1} -> {e.event2}  {e.relation:14s} p={e.probability:.2f} x {e.frequency} = "
          f"{e.confidence:.2f}  [{e.tier}, {e.source}{', conflict' if e.conflict else ''}]")
print("re-enriching changes nothing:", enrich_graph(enriched, candidates, model) == enriched)
