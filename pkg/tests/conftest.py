import numpy as np
import pytest

from unitedqa.extractive import EncoderConfig, ExtractiveReader
from unitedqa.generative import GenerativeReader, Seq2SeqConfig
from unitedqa.text import Vocab

TOY_WORDS = "who is where paris london rome city river the new".split()  # |V| = 16


@pytest.fixture
def toy_vocab():
    return Vocab(TOY_WORDS)


def tiny_extractive(vocab, seed=0, d=4, heads=2, layers=1, T=12, max_span_length=3):
    cfg = EncoderConfig(len(vocab), num_layers=layers, hidden_dim=d, num_heads=heads,
                        max_sequence_length=T, ff_dim=2 * d, seed=seed)
    return ExtractiveReader(cfg, vocab, max_span_length=max_span_length)


def tiny_generative(vocab, seed=0, d=4, heads=2, layers=1, K=3, T=8, dec=4, bias=True):
    cfg = Seq2SeqConfig(len(vocab), encoder_layers=layers, decoder_layers=layers, hidden_dim=d,
                        num_heads=heads, max_passages=K, max_decode_length=dec, max_sequence_length=T,
                        ff_dim=2 * d, attention_bias=bias, seed=seed)
    return GenerativeReader(cfg, vocab)


def random_words(rng, n):
    return " ".join(TOY_WORDS[i] for i in rng.integers(0, len(TOY_WORDS), size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_ACCEPTANCE: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    entry = _ACCEPTANCE.setdefault(n, {"title": title, "status": "PASS", "notes": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["status"] = "FAIL"
    notes = getattr(item, "acceptance_notes", None)
    if report.when == "call" and notes:
        entry["notes"] = list(notes)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[n]
        notes = f"  [{'; '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {n:>2} {e['status']}: {e['title']}{notes}")


@pytest.fixture
def note(request):
    """Attach measured values to the acceptance summary line."""
    request.node.acceptance_notes = []
    return request.node.acceptance_notes.append
