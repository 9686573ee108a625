import numpy as np
import pytest

from mkpnet import tensorgrad as tg
from mkpnet.data import SynthSpec, synth_generate
from mkpnet.encoder import Vocab
from mkpnet.model import AblationConfig, MKPNet, ModelConfig
from mkpnet.tasks import DEFAULT_SPECS

TINY = ModelConfig(d=8, n_layers=1, n_heads=2, max_len=24, d_z=4, d_label=4, d_c=4)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_generate(SynthSpec(n_train=120, n_dev=40, n_test=40, seed=3, noise=0.0))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    texts = [t for task in small_corpus for p in small_corpus[task]["train"] for t in (p.arg1, p.arg2)]
    return Vocab.build(texts)


@pytest.fixture
def tiny_model(small_vocab):
    return MKPNet(small_vocab, DEFAULT_SPECS, TINY, AblationConfig(), seed=1)


@pytest.fixture
def f64():
    with tg.precision(np.float64):
        yield


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
