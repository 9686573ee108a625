"""``mkpnet`` command line: gen-data, train, eval, ablate, predict, enrich.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure.  Diagnostics go to stderr; stdout lists the files written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import enrich as en
from .ablation import ablation_grid, evaluation_row, run_experiment
from .config import ConfigError, RunConfig, load_config
from .data import DataError, SynthSpec, load_jsonl, read_corpus, synth_generate, write_corpus
from .evalx import EvalReport
from .model import MKPNet
from .tasks import DEFAULT_SPECS, ERE
from .tensorgrad import NonFiniteError, NumericError

log = logging.getLogger("mkpnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mkpnet", description=__doc__.splitlines()[0].replace("``", ""))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic ERE+DRR corpus")
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-dev", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", help="corpus directory (overrides data.dir)")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--task", default=ERE)
    e.add_argument("--oracle-coarse", action="store_true")
    e.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    a.add_argument("--config", required=True)
    a.add_argument("--data")
    a.add_argument("--split", default="test")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="classify instance pairs from a JSONL file")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--task", default=ERE)
    pr.add_argument("--oracle-coarse", action="store_true")
    pr.add_argument("--out", required=True)

    n = sub.add_parser("enrich", help="add classified implicit edges to an event graph")
    n.add_argument("--model", required=True)
    n.add_argument("--nodes", required=True)
    n.add_argument("--edges", help="explicit edges TSV")
    n.add_argument("--candidates", required=True, help="TSV event1/event2/frequency or JSON doc map")
    n.add_argument("--config", help="run config supplying enrich thresholds")
    n.add_argument("--tier", choices=en.TIERS, default="full")
    n.add_argument("--out", required=True)
    return p


def _echo_config(cfg: RunConfig, out: Path) -> Path:
    path = out / "config.resolved.json"
    path.write_text(cfg.dumps())
    sys.stderr.write(cfg.dumps())
    return path


def _corpus(cfg: RunConfig, data_dir: str | None):
    data_dir = data_dir or cfg.data.dir
    if data_dir:
        return read_corpus(data_dir)
    return synth_generate(cfg.data.synth), dict(DEFAULT_SPECS)


def cmd_gen_data(args) -> list:
    cfg = load_config(args.config) if args.config else RunConfig()
    synth = cfg.data.synth
    overrides = {"seed": args.seed, "n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test,
                 "noise": args.noise}
    synth = SynthSpec(**{**synth.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})
    cfg.data.synth = synth
    out = Path(args.out)
    corpus = synth_generate(synth)
    manifest = write_corpus(out, corpus, provenance={"source": "synthetic", **synth.to_dict()})
    return [manifest, _echo_config(cfg, out)] + sorted(out.glob("*.jsonl"))


def cmd_train(args) -> list:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [_echo_config(cfg, out)]
    corpus, specs = _corpus(cfg, args.data)
    model, result = run_experiment(corpus, specs, cfg.model, cfg.ablation, cfg.trainer)
    model.save(out, extra={"trainer": cfg.to_dict()["trainer"], "best_epoch": result.best_epoch})
    log_path = out / "train_log.jsonl"
    log_path.write_text("\n".join(result.log_lines()) + "\n")
    written += [out / "params.json", out / "params.bin", out / "vocab.txt", out / "model.json", log_path]
    return written


def _write_report(report: EvalReport, out: Path) -> list:
    tsv, js = out / "report.tsv", out / "report.json"
    tsv.write_text(report.to_tsv())
    js.write_text(report.to_json())
    return [tsv, js]


def cmd_eval(args) -> list:
    model = MKPNet.load(args.model)
    corpus, _ = read_corpus(args.data)
    data = corpus[args.task][args.split]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "MKPNet (gold coarse)" if args.oracle_coarse else "MKPNet"
    report = EvalReport()
    report.add(evaluation_row(name, model, data, args.task, oracle=args.oracle_coarse))
    return _write_report(report, out)


def cmd_ablate(args) -> list:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [_echo_config(cfg, out)]
    corpus, specs = _corpus(cfg, args.data)
    report = ablation_grid(corpus, specs, cfg.model, cfg.trainer, split=args.split, jobs=args.jobs)
    return written + _write_report(report, out)


def cmd_predict(args) -> list:
    model = MKPNet.load(args.model)
    pairs = load_jsonl(args.input)
    for p in pairs:
        p.task = p.task or args.task
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = model.predict_batched(pairs, args.task, oracle=args.oracle_coarse)
    path = out / "predictions.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for pair, pred in zip(pairs, preds):
            fh.write(json.dumps({"id": pair.id, "fine_label": pred.fine_label, "coarse_label": pred.coarse_label,
                                 "probability": pred.probability}) + "\n")
    return [path]


def cmd_enrich(args) -> list:
    cfg = load_config(args.config) if args.config else RunConfig()
    thresholds = {"core": cfg.enrich.core, "high": cfg.enrich.high, "full": cfg.enrich.full}
    model = MKPNet.load(args.model)
    nodes = en.read_nodes(args.nodes)
    edges = en.read_edges(args.edges) if args.edges else []
    for e in edges:
        if e.source != "explicit":
            raise DataError(f"{args.edges}: input edges must be explicit, got source={e.source!r}")
    graph = en.EventGraph(nodes, edges)
    try:
        enriched = en.enrich_graph(graph, en.read_candidates(args.candidates), model, thresholds)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    view = en.tier_view(enriched, args.tier)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nodes_path, edges_path, conf_path = out / "nodes.tsv", out / f"edges.{args.tier}.tsv", out / "conflicts.tsv"
    en.write_nodes(nodes_path, view.nodes)
    en.write_edges(edges_path, view.edges)
    en.write_conflicts(conf_path, view.edges)
    return [nodes_path, edges_path, conf_path]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
    "enrich": cmd_enrich,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError("mkpnet: a command is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        written = COMMANDS[args.command](args)
    except (NumericError, NonFiniteError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (ConfigError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
