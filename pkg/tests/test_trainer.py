import numpy as np
import pytest
from conftest import TINY
from hypothesis import given, settings
from hypothesis import strategies as st

from mkpnet import tensorgrad as tg
from mkpnet.model import AblationConfig, MKPNet
from mkpnet.tasks import DEFAULT_SPECS, DRR, ERE
from mkpnet.tensorgrad import Tensor
from mkpnet.trainer import StepRecord, TrainerConfig, combined_loss, schedule, train, train_step


def step_once(model, corpus, task, cfg=None, seed=0):
    cfg = cfg or TrainerConfig()
    before = model.params.state_dict()
    rec = train_step(model, corpus[task]["train"][:8], task, cfg, tg.OptimState(lr=cfg.lr),
                     np.random.default_rng(seed))
    return before, model.params.state_dict(), rec


def changed(before, after, prefix):
    keys = [k for k in before if k.startswith(prefix + ".")]
    assert keys, prefix
    return any(not np.array_equal(before[k], after[k]) for k in keys)


class TestCombinedLoss:
    @pytest.mark.parametrize("alpha,lam,parts,want", [
        (0.5, 1.0, (2.0, 0.4, 1.0), 1.7),
        (1.0, 0.5, (2.0, 0.4, 9.0), 2.2),
        (0.3, 0.0, (2.0, 100.0, 1.0), 0.3 * 2 + 0.7),
    ])
    def test_examples(self, alpha, lam, parts, want):
        assert combined_loss(*parts, TrainerConfig(alpha=alpha, lam=lam)) == pytest.approx(want, abs=1e-12)

    def test_tensor_and_float_agree(self):
        cfg = TrainerConfig(alpha=0.7, lam=0.3)
        t = combined_loss(Tensor(1.2), Tensor(0.5), Tensor(0.8), cfg).item()
        assert t == pytest.approx(combined_loss(1.2, 0.5, 0.8, cfg), abs=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 5), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
    def test_bounded_by_components(self, alpha, lam, f, k, c):
        v = combined_loss(f, k, c, TrainerConfig(alpha=alpha, lam=lam))
        assert min(f + lam * k, c) - 1e-9 <= v <= max(f + lam * k, c) + 1e-9

    @pytest.mark.parametrize("kw", [{"alpha": 1.5}, {"alpha": float("nan")}, {"lam": -1}, {"ratio": (0, 1)}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainerConfig(**kw)


class TestTrainStep:
    def test_drr_step_isolation(self, tiny_model, small_corpus):
        before, after, _ = step_once(tiny_model, small_corpus, DRR)
        assert not changed(before, after, "fine_ERE")
        for g in ("bert", "semantic", "coarse", "fine_DRR"):
            assert changed(before, after, g), g

    def test_ere_step_isolation(self, tiny_model, small_corpus):
        before, after, _ = step_once(tiny_model, small_corpus, ERE)
        assert not changed(before, after, "fine_DRR")
        for g in ("bert", "semantic", "coarse", "fine_ERE"):
            assert changed(before, after, g), g

    def test_record_identity(self, tiny_model, small_corpus):
        cfg = TrainerConfig(alpha=0.6, lam=0.25)
        _, _, rec = step_once(tiny_model, small_corpus, ERE, cfg)
        assert isinstance(rec, StepRecord) and rec.task == ERE
        assert abs(rec.combined - (0.6 * (rec.fine_ce + 0.25 * rec.kl) + 0.4 * rec.coarse_ce)) < 1e-6

    def test_alpha_one_leaves_coarse_classifier_unchanged(self, tiny_model, small_corpus):
        before, after, _ = step_once(tiny_model, small_corpus, ERE, TrainerConfig(alpha=1.0))
        for k in ("coarse.clf.W", "coarse.clf.b"):
            assert np.array_equal(before[k], after[k])
        assert tiny_model.params["coarse"]["clf.W"].grad is None    # consumed by the optimizer

    def test_alpha_one_zero_gradient(self, tiny_model, small_corpus):
        out = tiny_model.forward_train(small_corpus[ERE]["train"][:6], ERE, np.random.default_rng(0))
        tg.backward(combined_loss(out.fine_ce, out.kl, out.coarse_ce, TrainerConfig(alpha=1.0)))
        assert not np.any(tiny_model.params["coarse"]["clf.W"].grad)
        assert np.any(tiny_model.params["bert"]["tok_emb"].grad)

    def test_mixed_and_empty(self, tiny_model, small_corpus):
        st_ = tg.OptimState()
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            train_step(tiny_model, [], ERE, TrainerConfig(), st_, rng)
        with pytest.raises(ValueError):
            train_step(tiny_model, small_corpus[ERE]["train"][:2], DRR, TrainerConfig(), st_, rng)


class TestSchedule:
    def test_round_robin(self):
        assert schedule(4, 4) == [ERE, DRR] * 4

    def test_ratio_and_leftovers(self):
        assert schedule(5, 2, (2, 1)) == [ERE, ERE, DRR, ERE, ERE, DRR, ERE]

    def test_target_only(self):
        assert schedule(3, 0) == [ERE] * 3


class TestTrain:
    def run(self, vocab, corpus, ablation=None, **kw):
        m = MKPNet(vocab, DEFAULT_SPECS, TINY, ablation or AblationConfig(), seed=2)
        cfg = TrainerConfig(epochs=2, batch_size=16, seed=9, **kw)
        res = train(m, corpus[ERE]["train"][:48], corpus[DRR]["train"][:32], cfg, corpus[ERE]["dev"])
        return m, res

    def test_replay_bitwise(self, small_vocab, small_corpus):
        a, ra = self.run(small_vocab, small_corpus)
        b, rb = self.run(small_vocab, small_corpus)
        sa, sb = a.params.state_dict(), b.params.state_dict()
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)
        assert ra.log_lines() == rb.log_lines()

    def test_interleaving_and_identity(self, small_vocab, small_corpus):
        _, res = self.run(small_vocab, small_corpus)
        epoch1 = [r.task for r in res.records if r.epoch == 1]
        assert epoch1 == [ERE, DRR, ERE, DRR, ERE]
        for r in res.records:
            assert abs(r.combined - (0.9 * (r.fine_ce + 0.5 * r.kl) + 0.1 * r.coarse_ce)) < 1e-6
        assert [e["epoch"] for e in res.epochs] == [1, 2] and "dev_acc" in res.epochs[0]

    def test_no_projection_means_no_drr_steps(self, small_vocab, small_corpus):
        _, res = self.run(small_vocab, small_corpus, AblationConfig(use_projection=False))
        assert res.records and all(r.task == ERE for r in res.records)

    def test_best_state_loaded(self, small_vocab, small_corpus):
        m, res = self.run(small_vocab, small_corpus)
        now = m.params.state_dict()
        assert all(np.array_equal(now[k], res.best_state[k]) for k in now)

    def test_projection_needs_both(self, small_vocab, small_corpus):
        m = MKPNet(small_vocab, DEFAULT_SPECS, TINY, seed=0)
        with pytest.raises(ValueError):
            train(m, small_corpus[ERE]["train"], [], TrainerConfig(epochs=1))


def test_parameter_count(tiny_model):
    p = tiny_model.params
    groups = ("bert", "semantic", "coarse", "fine_ERE", "fine_DRR")
    assert p.count() == sum(p.count(g) for g in groups)
    assert p.count() == sum(t.size for t in {id(t): t for t in p.named().values()}.values())
    # fine classifier plus label embedding, per task
    d_feat = TINY.d + TINY.d_z + TINY.d_c
    assert p.count("fine_ERE") == d_feat * 14 + 14 + 14 * TINY.d_label
    assert p.count("fine_DRR") == d_feat * 11 + 11 + 11 * TINY.d_label
