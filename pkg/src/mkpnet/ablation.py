"""Train/evaluate one configuration, and the seven-row ablation grid."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .encoder import Vocab
from .evalx import EvalReport, EvalRow, micro_f1
from .model import AblationConfig, MKPNet, ModelConfig
from .tasks import DRR, ERE
from .trainer import TrainerConfig, TrainResult, evaluate, train

log = logging.getLogger(__name__)

BASELINE = "MKPNet w/o KP"
ORACLE = "MKPNet w/o SA*"

# row name -> ablation flags; the oracle row reuses the trained "w/o SA" model
GRID = {
    "BERT-CLS": AblationConfig(use_semantic=False, use_coarse=False, use_projection=False),
    "MKPNet w/o KP": AblationConfig(use_projection=False),
    "MKPNet w/o SA & CA": AblationConfig(use_semantic=False, use_coarse=False),
    "MKPNet w/o CA": AblationConfig(use_coarse=False),
    "MKPNet w/o SA": AblationConfig(use_semantic=False),
    "MKPNet": AblationConfig(),
}


def build_vocab(corpus: dict, ablation: AblationConfig, target: str = ERE, max_size: int = 8192) -> Vocab:
    """Vocabulary over the training arguments of the tasks that will be trained."""
    tasks = [ERE, DRR] if ablation.use_projection else [target]
    texts = [t for task in tasks for p in corpus[task]["train"] for t in (p.arg1, p.arg2)]
    return Vocab.build(texts, max_size)


def run_experiment(corpus: dict, specs: dict, model_cfg: ModelConfig, ablation: AblationConfig,
                   trainer_cfg: TrainerConfig, seed: int | None = None) -> tuple[MKPNet, TrainResult]:
    seed = trainer_cfg.seed if seed is None else seed
    target = trainer_cfg.target_task
    model = MKPNet(build_vocab(corpus, ablation, target), specs, model_cfg, ablation, seed)
    dev = corpus[target].get("dev")
    result = train(model, corpus[ERE]["train"], corpus[DRR].get("train") if DRR in corpus else None,
                   trainer_cfg, dev_data=dev)
    return model, result


def evaluation_row(name: str, model: MKPNet, data, task: str, oracle: bool = False) -> EvalRow:
    res = evaluate(model, data, task, oracle=oracle)
    preds = model.predict_batched(list(data), task, oracle=oracle)
    mi = micro_f1([p.fine_label for p in data], [p.fine_label for p in preds], model.spec(task).fine_labels)
    return EvalRow(name, res["acc"], res["f1"], res.get("coarse_acc"), res.get("coarse_f1"), micro_f1=mi)


def _run_row(args):
    name, corpus, specs, model_cfg, ablation, trainer_cfg, split = args
    model, _ = run_experiment(corpus, specs, model_cfg, ablation, trainer_cfg)
    target = trainer_cfg.target_task
    rows = [evaluation_row(name, model, corpus[target][split], target)]
    if name == "MKPNet w/o SA":
        rows.append(evaluation_row(ORACLE, model, corpus[target][split], target, oracle=True))
    return rows


def ablation_grid(corpus: dict, specs: dict, model_cfg: ModelConfig | None = None,
                  trainer_cfg: TrainerConfig | None = None, split: str = "test", jobs: int = 1) -> EvalReport:
    """Train every grid configuration with the same seed and report them
    with deltas against ``MKPNet w/o KP``.

    The gold-coarse oracle row evaluates the ``w/o SA`` model with gold
    coarse labels substituted at test time; training is identical, so it is
    not retrained.
    """
    model_cfg = model_cfg or ModelConfig()
    trainer_cfg = trainer_cfg or TrainerConfig()
    jobs_args = [(name, corpus, specs, model_cfg, replace(flags), trainer_cfg, split)
                 for name, flags in GRID.items()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, jobs_args))
    else:
        results = []
        for args in jobs_args:
            log.info("ablation: training %s", args[0])
            results.append(_run_row(args))
    report = EvalReport()
    rows = [row for group in results for row in group]
    for row in sorted(rows, key=lambda r: r.config == ORACLE):
        report.add(row)
    report.compute_deltas(BASELINE)
    return report
