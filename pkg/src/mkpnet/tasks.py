"""Task label inventories and the fine -> coarse hierarchy."""

from __future__ import annotations

from dataclasses import dataclass, field

from .coarse import CoarseLabel

ERE, DRR = "ERE", "DRR"
TASKS = (ERE, DRR)


@dataclass(frozen=True)
class TaskSpec:
    task: str
    fine_labels: tuple
    fine_to_coarse: dict = field(hash=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        labels = tuple(self.fine_labels)
        object.__setattr__(self, "fine_labels", labels)
        if not labels:
            raise ValueError(f"{self.task}: empty fine label list")
        if len(set(labels)) != len(labels):
            raise ValueError(f"{self.task}: duplicate fine labels")
        mapping = {k: CoarseLabel.parse(v) for k, v in self.fine_to_coarse.items()}
        missing = [lab for lab in labels if lab not in mapping]
        if missing:
            raise ValueError(f"{self.task}: no coarse parent for {missing}")
        object.__setattr__(self, "fine_to_coarse", {lab: mapping[lab] for lab in labels})
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @property
    def n_fine(self) -> int:
        return len(self.fine_labels)

    def fine_id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"{self.task}: unknown fine label {label!r}") from None

    def coarse_of(self, label: str) -> CoarseLabel:
        self.fine_id(label)
        return self.fine_to_coarse[label]

    def children(self, coarse: CoarseLabel) -> list:
        return [lab for lab in self.fine_labels if self.fine_to_coarse[lab] == coarse]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "fine_labels": list(self.fine_labels),
            "fine_to_coarse": {k: v.name for k, v in self.fine_to_coarse.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["task"], tuple(d["fine_labels"]), dict(d["fine_to_coarse"]))


T, C, P, X = CoarseLabel.Temporal, CoarseLabel.Contingency, CoarseLabel.Comparison, CoarseLabel.Expansion

# ASER's connective-derived relation types (Co_Occurrence excluded)
ERE_SPEC = TaskSpec(ERE, (
    "Precedence", "Succession", "Synchronous",
    "Reason", "Result", "Condition",
    "Contrast", "Concession",
    "Conjunction", "Instantiation", "Restatement", "Alternative", "ChosenAlternative", "Exception",
), {
    "Precedence": T, "Succession": T, "Synchronous": T,
    "Reason": C, "Result": C, "Condition": C,
    "Contrast": P, "Concession": P,
    "Conjunction": X, "Instantiation": X, "Restatement": X, "Alternative": X,
    "ChosenAlternative": X, "Exception": X,
})

# PDTB 2.0 second-level types commonly used for 11-way classification
DRR_SPEC = TaskSpec(DRR, (
    "Asynchronous", "Synchrony",
    "Cause", "Pragmatic cause",
    "Contrast", "Concession",
    "Conjunction", "Instantiation", "Restatement", "Alternative", "List",
), {
    "Asynchronous": T, "Synchrony": T,
    "Cause": C, "Pragmatic cause": C,
    "Contrast": P, "Concession": P,
    "Conjunction": X, "Instantiation": X, "Restatement": X, "Alternative": X, "List": X,
})

DEFAULT_SPECS = {ERE: ERE_SPEC, DRR: DRR_SPEC}
