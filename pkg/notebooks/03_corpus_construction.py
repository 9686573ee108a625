"""
Building training corpora
=========================

Implicit training pairs are made from explicit ones by dropping the
connective and keeping the most confident instances of every relation.
For desk-scale experiments a synthetic generator plants coarse and fine cue
tokens, with coarse cues shared between the event and discourse tasks.
"""

from collections import Counter

from mkpnet.data import InstancePair, SynthSpec, cap_per_category, strip_connectives, synth_generate
from mkpnet.tasks import DRR, ERE, ERE_SPEC

# Explicit instances, e.g. "PER orders two hamburgers because PER is so hungry".
explicit = [
    InstancePair("x1", ERE, "PER orders two hamburgers", "PER is so hungry", "Reason", "Contingency", "because", 7.5),
    InstancePair("x2", ERE, "PER goes to the restaurant", "PER orders two hamburgers", "Precedence", "Temporal",
                 "then", 2.0),
    InstancePair("x3", ERE, "PER is tired", "PER goes home", "Reason", "Contingency", "so", 3.1),
    InstancePair("x4", ERE, "PER is full", "PER orders dessert", "Reason", "Contingency", "but", 1.2),
]
implicit = cap_per_category(strip_connectives(explicit), cap=2)
for p in implicit:
    print(p.id, p.fine_label, repr(p.arg1), "->", repr(p.arg2), "connective:", p.connective)

# Label hierarchy of the event task.
for coarse in range(4):
    print(ERE_SPEC.coarse_of(ERE_SPEC.children(coarse)[0]).name, ERE_SPEC.children(coarse))

# Synthetic corpus: uniform labels, 10% label noise on training data only.
corpus = synth_generate(SynthSpec(n_train=500, n_dev=100, n_test=100, seed=0, noise=0.1))
sample = corpus[ERE]["train"][0]
print("\nsynthetic ERE pair:", sample.arg1, "|", sample.arg2, "->", sample.fine_label)
print("synthetic DRR pair:", corpus[DRR]["train"][0].arg1, "|", corpus[DRR]["train"][0].arg2)
print("flipped labels in ERE train:", sum("clean_label" in p.extra for p in corpus[ERE]["train"]))
print("coarse balance:", Counter(p.coarse_label for p in corpus[ERE]["train"]))
