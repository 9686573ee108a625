"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
that is also repeated in the pytest terminal summary."""

import itertools
import math
import time
import zlib
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import TINY, record_criterion
from test_tensorgrad import CASES

from mkpnet import tensorgrad as tg
from mkpnet.ablation import BASELINE, ORACLE, ablation_grid
from mkpnet.cli import main
from mkpnet.data import InstancePair, SynthSpec, cap_per_category, strip_connectives, synth_generate
from mkpnet.enrich import (EventGraph, assign_tier, enrich_graph, explicit_edges_from_rows, score_edge,
                           tier_view)
from mkpnet.evalx import significance
from mkpnet.model import AblationConfig, MKPNet, ModelConfig
from mkpnet.semantic import GaussianParams, kl_closed_form, reparameterize
from mkpnet.tasks import DEFAULT_SPECS, DRR, ERE, ERE_SPEC
from mkpnet.tensorgrad import Tensor
from mkpnet.trainer import StepRecord, TrainerConfig, combined_loss, train_step


def test_criterion_01_gradients(small_vocab, small_corpus, monkeypatch):
    start = time.perf_counter()
    used = set()
    original = tg.apply_primitive

    def spy(op, inputs, **attrs):
        used.add(op)
        return original(op, inputs, **attrs)

    monkeypatch.setattr(tg, "apply_primitive", spy)
    worst = {}
    with tg.precision(np.float64):
        for name, build in sorted(CASES.items()):
            f, xs = build(np.random.default_rng(zlib.crc32(name.encode())))
            worst[name] = tg.grad_check(f, xs)
        cfg = ModelConfig(d=8, n_layers=1, n_heads=2, max_len=24, d_z=4, d_label=4, d_c=4)
        model = MKPNet(small_vocab, DEFAULT_SPECS, cfg, AblationConfig(), seed=5)
        batch = small_corpus[ERE]["train"][:2]
        eps = np.random.default_rng(11).standard_normal((2, cfg.d_z))
        tc = TrainerConfig()

        def loss(_):
            out = model.forward_train(batch, ERE, eps=eps)
            return combined_loss(out.fine_ce, out.kl, out.coarse_ce, tc)

        worst["full MKPNet loss"] = tg.grad_check(loss, list(model.params.for_task(ERE).values()))
    elapsed = time.perf_counter() - start
    missing = set(tg.PRIMITIVES) - used
    err = max(worst.values())
    ok = err < 1e-3 and not missing and elapsed < 60
    record_criterion(1, "gradient check on every primitive and the full loss", ok,
                     f"max rel err {err:.2e}, {len(used)} primitives, {elapsed:.1f}s"
                     + (f", untested {sorted(missing)}" if missing else ""))


def test_criterion_02_kl_oracle():
    with tg.precision(np.float64):
        q = GaussianParams(Tensor([0.0]), Tensor([math.log(4.0)]))
        p = GaussianParams(Tensor([0.0]), Tensor([0.0]))
        kl = kl_closed_form(q, p).item()
        same = kl_closed_form(q, q).item()
    formula = 0.5 * (math.log(1 / 4) + 4 - 1)
    z = np.random.default_rng(2024).normal(0.0, 2.0, size=100_000)
    mc = float(np.mean(-0.5 * (np.log(2 * np.pi * 4) + z ** 2 / 4) + 0.5 * (np.log(2 * np.pi) + z ** 2)))
    ok = abs(kl - 0.806853) < 1e-4 and abs(kl - formula) < 1e-4 and abs(mc - kl) / kl < 0.02 and abs(same) < 1e-8
    record_criterion(2, "closed-form KL against formula and sampling", ok,
                     f"kl={kl:.6f}, mc={mc:.6f}, identical={same:.1e}")


def test_criterion_03_reparameterization():
    g = GaussianParams(Tensor([1.0, 2.0]), Tensor([0.0, math.log(4.0)]))
    rng = np.random.default_rng(77)
    draws = np.stack([reparameterize(g, rng).h_z.data for _ in range(10_000)]).astype(np.float64)
    n, mu, var = len(draws), np.array([1.0, 2.0]), np.array([1.0, 4.0])
    z_mean = np.abs(draws.mean(0) - mu) / np.sqrt(var / n)
    z_var = np.abs(draws.var(0, ddof=1) - var) / (var * np.sqrt(2 / (n - 1)))
    ok = bool((z_mean < 3).all() and (z_var < 3).all())
    record_criterion(3, "reparameterized draws match mean and variance", ok,
                     f"max |z| mean {z_mean.max():.2f}, variance {z_var.max():.2f}")


def test_criterion_04_sharing(small_vocab, small_corpus):
    failures = []
    for task, other in ((DRR, ERE), (ERE, DRR)):
        model = MKPNet(small_vocab, DEFAULT_SPECS, TINY, AblationConfig(), seed=1)
        before = model.params.state_dict()
        cfg = TrainerConfig()
        train_step(model, small_corpus[task]["train"][:8], task, cfg, tg.OptimState(lr=cfg.lr),
                   np.random.default_rng(0))
        after = model.params.state_dict()

        def moved(group):
            return any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(group + "."))

        if moved(f"fine_{other}"):
            failures.append(f"{task} step touched fine_{other}")
        failures += [f"{task} step left {g} unchanged" for g in ("bert", "semantic", "coarse") if not moved(g)]
    record_criterion(4, "shared groups move, the other fine group does not", not failures,
                     "; ".join(failures) or "ERE and DRR steps checked")


def test_criterion_05_loss_algebra(small_vocab, small_corpus):
    rng = np.random.default_rng(5)
    triples = rng.uniform(0, 10, size=(1000, 3))
    grid = list(itertools.product([0.0, 0.25, 0.5, 0.9, 1.0], [0.0, 0.5, 1.0, 2.0]))
    worst = 0.0
    with tg.precision(np.float64):
        for alpha, lam in grid:
            cfg = TrainerConfig(alpha=alpha, lam=lam)
            for f, k, c in triples:
                value = combined_loss(Tensor(f), Tensor(k), Tensor(c), cfg).item()
                rec = StepRecord(0, ERE, f, c, k, value)
                expect = alpha * (rec.fine_ce + lam * rec.kl) + (1 - alpha) * rec.coarse_ce
                worst = max(worst, abs(rec.combined - expect), abs(combined_loss(f, k, c, cfg) - expect))
    # the identity also holds on records produced by real steps
    model = MKPNet(small_vocab, DEFAULT_SPECS, TINY, AblationConfig(), seed=2)
    state, step_rng = tg.OptimState(), np.random.default_rng(1)
    for i, (alpha, lam) in enumerate(grid):
        cfg = TrainerConfig(alpha=alpha, lam=lam)
        task = (ERE, DRR)[i % 2]
        rec = train_step(model, small_corpus[task]["train"][8 * i % 96:][:8], task, cfg, state, step_rng)
        expect = alpha * (rec.fine_ce + lam * rec.kl) + (1 - alpha) * rec.coarse_ce
        worst = max(worst, abs(rec.combined - expect))
    out = model.forward_train(small_corpus[ERE]["train"][:8], ERE, np.random.default_rng(3))
    tg.backward(combined_loss(out.fine_ce, out.kl, out.coarse_ce, TrainerConfig(alpha=1.0)))
    coarse_grad = float(np.abs(model.params["coarse"]["clf.W"].grad).max())
    ok = worst < 1e-6 and coarse_grad == 0.0
    record_criterion(5, "combined loss identity and alpha=1 coarse isolation", ok,
                     f"max deviation {worst:.1e} over {len(grid) * 1000} triples, coarse grad {coarse_grad}")


@pytest.mark.slow
def test_criterion_06_end_to_end():
    start = time.perf_counter()
    corpus = synth_generate(SynthSpec(n_train=2000, n_dev=400, n_test=400, seed=0, noise=0.1))
    report = ablation_grid(corpus, DEFAULT_SPECS, ModelConfig(), TrainerConfig(seed=0))
    elapsed = time.perf_counter() - start
    full, no_kp = report.row("MKPNet"), report.row(BASELINE)
    no_sa, oracle = report.row("MKPNet w/o SA"), report.row(ORACLE)
    checks = {
        "full >= 0.90": full.acc >= 0.90,
        "full >= w/o KP - 0.005": full.acc >= no_kp.acc - 0.005,
        "oracle >= w/o SA - 0.005": oracle.acc >= no_sa.acc - 0.005,
        "oracle coarse = 1": oracle.coarse_acc == 1.0,
        "under 15 min": elapsed < 900,
    }
    print(report.to_tsv())
    record_criterion(6, "synthetic end-to-end trend", all(checks.values()),
                     f"full {full.acc:.4f}, w/o KP {no_kp.acc:.4f}, w/o SA {no_sa.acc:.4f}, "
                     f"oracle {oracle.acc:.4f} / coarse {oracle.coarse_acc:.4f}, {elapsed / 60:.1f} min"
                     + "".join(f"; failed {k}" for k, v in checks.items() if not v))


def test_criterion_07_dataset_construction():
    def pair(i, label, conf, conn="because"):
        return InstancePair(f"p{i:05d}", ERE, f"arg one {i}", f"arg two {i}", label,
                            ERE_SPEC.coarse_of(label).name, conn, conf)

    small = [pair(0, "Reason", 3.0), pair(1, "Reason", 9.0), pair(2, "Reason", 5.0)]
    kept = sorted(p.confidence for p in cap_per_category(small, 2))
    rng = np.random.default_rng(7)
    conns = ["because", "so", "but", "and", "then", "if"]
    many = [pair(i, ERE_SPEC.fine_labels[rng.integers(14)], float(rng.uniform(0, 10)),
                 conns[rng.integers(len(conns))]) for i in range(1000)]
    once = strip_connectives(many)
    twice = strip_connectives(once)
    preserved = all(a.fine_label == b.fine_label and a.coarse_label == b.coarse_label and a.arg1 == b.arg1
                    and a.arg2 == b.arg2 and b.connective is None for a, b in zip(many, once))
    ok = kept == [5.0, 9.0] and once == twice and preserved
    record_criterion(7, "per-category cap and connective stripping", ok,
                     f"cap kept {kept}, idempotent {once == twice}, labels preserved {preserved}")


class _PlantedModel:
    """Predicts a relation and probability fixed per argument text."""

    def __init__(self, table):
        self.table = table

    def predict(self, pairs, task):
        return [SimpleNamespace(fine_label=self.table[(p.arg1, p.arg2)][0], probability=self.table[(p.arg1, p.arg2)][1])
                for p in pairs]


def test_criterion_08_enrichment():
    rng = np.random.default_rng(8)
    nodes = {f"ev{i:03d}": f"event text {i}" for i in range(40)}
    pairs = list(itertools.combinations(sorted(nodes), 2))
    chosen = [pairs[i] for i in rng.choice(len(pairs), 100, replace=False)]
    table, cands = {}, []
    for j, (a, b) in enumerate(chosen):
        if j < 10:      # planted: confidence exactly 0.9
            prob, freq = 0.9, 1
        else:
            prob, freq = float(rng.uniform(0.05, 1.0)), int(rng.integers(1, 8))
        table[(nodes[a], nodes[b])] = (ERE_SPEC.fine_labels[rng.integers(14)], prob)
        cands.append((a, b, freq))
    explicit = explicit_edges_from_rows([(*chosen[50], "Reason", 3), (*chosen[60], "Contrast", 1)])
    graph = EventGraph(nodes, explicit)
    model = _PlantedModel(table)
    out = enrich_graph(graph, cands, model)
    views = [{e.key for e in tier_view(out, t).edges} for t in ("core", "high", "full")]
    nested = views[0] <= views[1] <= views[2]
    exact = all(e.confidence == score_edge(e.probability, e.frequency) == e.probability * e.frequency
                for e in out.edges)
    tiers_ok = all(e.source == "explicit" or e.tier == assign_tier(e.confidence) for e in out.edges)
    idem = enrich_graph(out, cands, model) == out
    planted = {(a, b) for a, b, _ in cands[:10]}
    rejected = not any((e.event1, e.event2) in planted for e in out.edges)
    explicit_kept = all(e in tier_view(out, "core").edges for e in explicit)
    ok = nested and exact and tiers_ok and idem and rejected and explicit_kept
    record_criterion(8, "enrichment tiers, scoring and idempotence", ok,
                     f"core/high/full = {len(views[0])}/{len(views[1])}/{len(views[2])}, "
                     f"0.9 rejected {rejected}, idempotent {idem}")


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(tmp_path):
    import json
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "model": {"d": 16, "n_layers": 1, "n_heads": 2, "max_len": 32, "d_z": 8, "d_label": 8, "d_c": 8},
        "trainer": {"epochs": 2, "batch_size": 32, "seed": 11},
        "data": {"synth": {"n_train": 120, "n_dev": 40, "n_test": 40, "seed": 4, "noise": 0.1}},
    }))
    snaps = []
    for run in ("a", "b"):
        root = tmp_path / run
        codes = [
            main(["gen-data", "--config", str(cfg), "--seed", "4", "--out", str(root / "data")]),
            main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "model")]),
            main(["ablate", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "report")]),
        ]
        assert codes == [0, 0, 0], codes
        snaps.append({k: _snapshot(root / k) for k in ("data", "model", "report")})
    diffs = [f"{k}/{name}" for k in snaps[0] for name in snaps[0][k] if snaps[0][k][name] != snaps[1][k].get(name)]
    same_sets = all(snaps[0][k].keys() == snaps[1][k].keys() for k in snaps[0])
    n_files = sum(len(v) for v in snaps[0].values())
    record_criterion(9, "gen-data, train and ablate are byte-reproducible", not diffs and same_sets,
                     f"{n_files} files compared" + (f", differing {diffs}" if diffs else ""))


def test_criterion_10_significance():
    rng = np.random.default_rng(10)
    gold = list(rng.integers(4, size=500))
    rand = list(rng.integers(4, size=500))
    p_same = significance(gold, rand, rand, 10_000, seed=0)
    p_diff = significance(gold, gold, rand, 10_000, seed=0)
    record_criterion(10, "approximate randomization significance", p_same == 1.0 and p_diff < 0.01,
                     f"identical p={p_same}, perfect vs random p={p_diff:.2e}")
