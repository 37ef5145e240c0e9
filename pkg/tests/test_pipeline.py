"""Config, synthetic fixtures, training and the CLI commands on tiny inputs."""

import json
import re
import statistics
from pathlib import Path

import jsonschema
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from unitedqa.cli import main
from unitedqa.ensemble import HybridWeights, hybrid_select, majority_vote
from unitedqa.evaluation import breakdown_populations, has_answer
from unitedqa.pipeline.artifacts import git_blob_hash
from unitedqa.pipeline.config import RunConfig, build_config, load_config
from unitedqa.pipeline.report import REPORT_SCHEMA, build_report, system_name
from unitedqa.pipeline.synth import synthesize, write_fixture
from unitedqa.records import InputError, load_dataset, load_predictions, write_jsonl
from unitedqa.retrieval import build_index, load_corpus, save_index, split_passages

TINY = {
    "retrieval": {"k": 4, "k_values": [1, 2, 4]},
    "extractive": {"num_layers": 1, "hidden_dim": 8, "num_heads": 2, "ff_dim": 16, "passages": 2},
    "generative": {"encoder_layers": 1, "decoder_layers": 1, "hidden_dim": 8, "num_heads": 2, "ff_dim": 16,
                   "passages": 2, "max_decode_length": 4},
    "trainer": {"epochs": 5, "target_em": None, "patience": None, "extractive_lr": 1e-2, "generative_lr": 1e-2},
    "seeds": [0],
}


def run(*args, code=0):
    res = CliRunner().invoke(main, ["--quiet", *map(str, args)])
    assert res.exit_code == code, f"exit {res.exit_code}: {res.output}\n{res.exception!r}"
    return res


def tiny_fixture(root: Path, documents=12, train=9, test=6, **overrides) -> Path:
    run("synth", "--out", root, "--documents", documents, "--train", train, "--test", test)
    cfg_path = root / "config.json"
    cfg = json.loads(cfg_path.read_text())
    for section, values in {**TINY, **overrides}.items():
        if isinstance(values, dict):
            cfg.setdefault(section, {}).update(values)
        else:
            cfg[section] = values
    cfg_path.write_text(json.dumps(cfg))
    return cfg_path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Tiny fixture with an index and one extractive and one generative checkpoint."""
    root = tmp_path_factory.mktemp("tiny")
    cfg = tiny_fixture(root)
    run("ingest", "--config", cfg)
    run("train", "--config", cfg, "--reader", "extractive")
    run("train", "--config", cfg, "--reader", "generative")
    ck = root / "work" / "checkpoints"
    return {"root": root, "config": cfg, "ext": ck / "extractive-seed0.ckpt", "gen": ck / "generative-seed0.ckpt",
            "ck": ck}


# -- config --------------------------------------------------------------------------

def test_defaults_and_paths(tmp_path):
    cfg = build_config({}, tmp_path, environ={})
    assert cfg.trainer.warmup_ratio == 0.1 and cfg.trainer.gammas == [4.0, 8.0]
    assert cfg.ensemble.tau == 0.6 and cfg.ensemble.delta == 0.4
    assert cfg.path("dev") == cfg.path("train") == (tmp_path / "train.jsonl").resolve()
    with pytest.raises(InputError, match="paths.train"):
        cfg.require("train")


def test_env_overrides(tmp_path):
    cfg = build_config({}, tmp_path, environ={"UNITEDQA_EPOCHS": "7", "UNITEDQA_GENERATIVE__HIDDEN_DIM": "16",
                                              "UNITEDQA_SEEDS": "[4]", "OTHER": "x"})
    assert cfg.trainer.epochs == 7 and cfg.generative.hidden_dim == 16 and cfg.seeds == [4]
    with pytest.raises(InputError, match="ambiguous"):
        build_config({}, tmp_path, environ={"UNITEDQA_HIDDEN_DIM": "16"})
    with pytest.raises(InputError, match="unknown"):
        build_config({}, tmp_path, environ={"UNITEDQA_NOPE": "1"})
    with pytest.raises(InputError, match="trainer.epochs"):
        build_config({}, tmp_path, environ={"UNITEDQA_EPOCHS": "0"})


def test_load_config_errors(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_config(tmp_path / "missing.json", environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"trainer\": \n")
    with pytest.raises(InputError, match=":3"):
        load_config(bad, environ={})
    bad.write_text("[]")
    with pytest.raises(InputError, match="object"):
        load_config(bad, environ={})


# (section, field, out-of-range value)
MUTATIONS = [
    ("trainer", "warmup_ratio", 1.5), ("trainer", "warmup_ratio", -0.1), ("trainer", "gammas", [4, -1]),
    ("trainer", "epochs", 0), ("trainer", "epsilon_adv", -1e-3), ("trainer", "alpha", -1.0),
    ("trainer", "extractive_lr", -1.0), ("trainer", "target_em", 2.0), ("trainer", "patience", 0),
    ("trainer", "eval_every", 0), ("trainer", "noise_scale", -0.5), ("retrieval", "k", 0),
    ("retrieval", "b", 1.5), ("retrieval", "k1", -1), ("retrieval", "split_width", 0),
    ("retrieval", "k_values", [1, 500]), ("extractive", "hidden_dim", 0), ("extractive", "max_span_length", 0),
    ("extractive", "num_heads", 3), ("generative", "passages", 0), ("generative", "num_heads", 5),
    ("generative", "max_decode_length", 0), ("ensemble", "tau", -0.6), ("ensemble", "delta", -1),
    ("trainer", "unknown_field", 1), ("paths", "train", ""),
]


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(MUTATIONS), st.sampled_from([{}, {"trainer": {"epochs": 3}}]))
def test_mutated_config_rejected_with_field_message(mutation, base):
    section, field_name, value = mutation
    data = json.loads(json.dumps(base))
    data.setdefault(section, {})[field_name] = value
    with pytest.raises(InputError) as info:
        build_config(data, ".", environ={})
    msg = str(info.value)
    assert msg.startswith("invalid configuration")
    assert f"{section}.{field_name}" in msg


def test_snapshot_has_no_machine_paths(tmp_path):
    snap = build_config({}, tmp_path, environ={}).snapshot()
    assert "base_dir" not in snap and str(tmp_path) not in json.dumps(snap)
    RunConfig.model_validate(snap)


# -- synthetic fixtures ---------------------------------------------------------------

def test_synth_answers_in_exactly_one_document():
    data = synthesize(200, 100, 60, seed=0)
    assert len(data.documents) == 200 and len(data.train) == 100 and len(data.test) == 60
    for ex in data.train + data.test:
        holders = [d.id for d in data.documents if has_answer(d.text, ex.answers)]
        assert len(holders) == 1, (ex.question, ex.answers, holders)


def test_synth_deterministic_and_seed_sensitive(tmp_path):
    a = write_fixture(synthesize(20, 10, 6, seed=3), tmp_path / "a")
    b = write_fixture(synthesize(20, 10, 6, seed=3), tmp_path / "b")
    c = write_fixture(synthesize(20, 10, 6, seed=4), tmp_path / "c")
    for name in ("corpus", "train", "test", "config"):
        assert a[name].read_bytes() == b[name].read_bytes()
    assert a["corpus"].read_bytes() != c["corpus"].read_bytes()


def test_synth_annotations_are_consistent():
    data = synthesize(200, 100, 60, seed=1)
    train_q = {ex.question for ex in data.train}
    train_a = {ex.answers[0] for ex in data.train}
    pops = breakdown_populations(data.test)
    assert len(pops["question_overlap"]) + len(pops["no_question_overlap"]) == 60
    assert len(pops["no_overlap"]) == len(pops["no_question_overlap"]) - len(pops["answer_overlap_only"])
    assert all(len(pops[k]) > 0 for k in pops)
    for ex in data.test:
        assert ex.question_overlap == (ex.question in train_q)
        assert ex.answer_overlap == (ex.answers[0] in train_a)


def test_synth_size_errors(tmp_path):
    run("synth", "--out", tmp_path, "--documents", 0, code=2)


# -- ingest ----------------------------------------------------------------------------

def test_ingest_counts_and_determinism(tmp_path):
    docs = [{"id": "a", "title": "A", "text": " ".join(f"w{i}" for i in range(250))},
            {"id": "b", "title": "B", "text": "short text"},
            {"id": "c", "title": "C", "text": " ".join(f"x{i}" for i in range(100))}]
    write_jsonl(tmp_path / "corpus.jsonl", docs)
    (tmp_path / "config.json").write_text("{}")
    res = run("ingest", "--config", tmp_path / "config.json")
    # 250 words -> 3 passages, 2 words -> 1, 100 words -> 1
    assert "documents 3 passages 5" in res.output
    first = (tmp_path / "work" / "index.bin").read_bytes()
    run("ingest", "--config", tmp_path / "config.json")
    assert (tmp_path / "work" / "index.bin").read_bytes() == first
    expected = sum(len(split_passages(d)) for d in load_corpus(tmp_path / "corpus.jsonl"))
    assert expected == 5


def test_ingest_input_errors(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text("{}")
    (tmp_path / "corpus.jsonl").write_text("")
    assert "empty" in run("ingest", "--config", cfg, code=2).output
    (tmp_path / "corpus.jsonl").write_text('{"id": "a", "title": "t", "text": "x"}\n{broken\n')
    out = run("ingest", "--config", cfg, code=2).output
    assert re.search(r":2\b", out), out
    run("ingest", "--config", cfg, tmp_path / "nope.jsonl", code=2)
    run("ingest", "--config", tmp_path / "nope.json", code=2)


# -- train -----------------------------------------------------------------------------

def test_train_outputs_and_manifest(trained):
    ck = trained["ck"]
    assert (ck / "extractive-seed0-gamma4.ckpt").exists() and (ck / "extractive-seed0-gamma8.ckpt").exists()
    man = json.loads((ck / "extractive-seed0.manifest.json").read_text())
    assert [s["gamma"] for s in man["gamma_sweep"]] == [4.0, 8.0]
    winner = man["selected_gamma"]
    best = max(s["best_dev_em"] for s in man["gamma_sweep"])
    assert winner == next(s["gamma"] for s in man["gamma_sweep"] if s["best_dev_em"] == best)
    assert trained["ext"].read_bytes() == (ck / f"extractive-seed0-gamma{winner:g}.ckpt").read_bytes()
    assert set(man["metrics"]) == {"0"} and set(man["inputs"]["files"]) == {"index", "train", "dev"}
    hashes = [*man["inputs"]["files"].values(), man["inputs"]["combined"]]
    assert all(re.fullmatch(r"[0-9a-f]{40}", h) for h in hashes)
    assert man["inputs"]["files"]["train"] == git_blob_hash((trained["root"] / "train.jsonl").read_bytes())
    assert "timings" in man and man["config"]["trainer"]["epochs"] == 5


def test_git_blob_hash_matches_git():
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_training_loss_decreases_first_three_epochs(trained):
    ck = trained["ck"]
    ext = json.loads((ck / "extractive-seed0.manifest.json").read_text())
    gen = json.loads((ck / "generative-seed0.manifest.json").read_text())
    for history in [s["history"] for s in ext["gamma_sweep"]] + [gen["history"]]:
        losses = [h["loss"] for h in history[:3]]
        assert losses[0] > losses[1] > losses[2], losses


def test_train_same_seed_identical_bytes(trained, tmp_path):
    out = tmp_path / "again.ckpt"
    run("train", "--config", trained["config"], "--reader", "generative", "--seed", 0, "--out", out)
    assert out.read_bytes() == trained["gen"].read_bytes()


def test_train_no_trainable_data_exit_3(tmp_path):
    cfg = tiny_fixture(tmp_path)
    rows = [json.loads(line) for line in (tmp_path / "train.jsonl").read_text().splitlines()]
    for r in rows:
        r["answers"] = ["zzzunplanted"]
    write_jsonl(tmp_path / "train.jsonl", rows)
    run("ingest", "--config", cfg)
    run("train", "--config", cfg, "--reader", "extractive", code=3)


def test_train_missing_index_exit_2(tmp_path):
    cfg = tiny_fixture(tmp_path)
    run("train", "--config", cfg, "--reader", "generative", code=2)


# -- predict / ensemble / evaluate / report ------------------------------------------------

def test_predict_lines_and_tags(trained, tmp_path):
    test = load_dataset(trained["root"] / "test.jsonl")
    one = tmp_path / "one.jsonl"
    run("predict", "--config", trained["config"], "--checkpoint", trained["ext"], "--out", one)
    assert len(one.read_text().splitlines()) == len(test)
    both = tmp_path / "both.jsonl"
    run("predict", "--config", trained["config"], "--checkpoint", trained["ext"], "--checkpoint", trained["gen"],
        "--out", both)
    preds = load_predictions(both)
    assert {p.model_type for p in preds} == {"extractive", "generative"}
    assert len(preds) == 2 * len(test)
    again = tmp_path / "again.jsonl"
    run("predict", "--config", trained["config"], "--checkpoint", trained["ext"], "--checkpoint", trained["gen"],
        "--out", again)
    assert again.read_bytes() == both.read_bytes()


def test_predict_zero_passages_gives_empty_answer(trained, tmp_path):
    empty = tmp_path / "empty.bin"
    save_index(build_index([]), empty)
    out = tmp_path / "p.jsonl"
    res = CliRunner().invoke(main, ["predict", "--config", str(trained["config"]), "--checkpoint", str(trained["ext"]),
                                    "--checkpoint", str(trained["gen"]), "--out", str(out)],
                             env={"UNITEDQA_PATHS__INDEX": str(empty)})
    assert res.exit_code == 0, res.output
    preds = load_predictions(out)
    assert len(preds) == 2 * len(load_dataset(trained["root"] / "test.jsonl"))
    assert all(p.answer == "" for p in preds)


def test_predict_bad_checkpoint(trained, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nonsense")
    run("predict", "--config", trained["config"], "--checkpoint", bad, code=2)


def _write_preds(path, model_id, model_type, answers):
    write_jsonl(path, [{"question_id": q, "answer": a, "model_id": model_id, "model_type": model_type, "score": 0.0}
                       for q, a in answers.items()])


def test_ensemble_routing(tmp_path):
    qs = ["q1", "q2", "q3"]
    e = {"q1": "Paris", "q2": "rome", "q3": "x"}
    g1 = {"q1": "London", "q2": "oslo", "q3": "y"}
    g2 = {"q1": "London", "q2": "Rome", "q3": "z"}
    _write_preds(tmp_path / "e.jsonl", "ext-seed0", "extractive", e)
    _write_preds(tmp_path / "g1.jsonl", "gen-seed0", "generative", g1)
    _write_preds(tmp_path / "g2.jsonl", "gen-seed1", "generative", g2)
    out = tmp_path / "h.jsonl"
    res = run("ensemble", tmp_path / "e.jsonl", tmp_path / "g1.jsonl", tmp_path / "g2.jsonl", "--out", out)
    assert "hybrid" in res.output
    fused = {p.question_id: p for p in load_predictions(out)}
    for q in qs:
        assert fused[q].answer == hybrid_select([e[q]], [g1[q], g2[q]], HybridWeights())
    assert fused["q1"].answer == "London" and fused["q1"].model_type == "generative"
    assert fused["q2"].answer == "rome" and fused["q2"].model_type == "extractive"

    for i, ans in enumerate([e, g1, g2]):
        _write_preds(tmp_path / f"x{i}.jsonl", f"ext{i}", "extractive", ans)
    res = run("ensemble", *[tmp_path / f"x{i}.jsonl" for i in range(3)], "--out", out)
    assert "majority" in res.output
    fused = {p.question_id: p.answer for p in load_predictions(out)}
    assert fused == {q: majority_vote([e[q], g1[q], g2[q]]) for q in qs}

    res = run("ensemble", tmp_path / "e.jsonl", "--out", out)
    assert "passthrough" in res.output
    assert {p.question_id: p.answer for p in load_predictions(out)} == e


def test_ensemble_inconsistent_questions(tmp_path):
    _write_preds(tmp_path / "a.jsonl", "a", "extractive", {"q1": "x", "q2": "y"})
    _write_preds(tmp_path / "b.jsonl", "b", "generative", {"q1": "x", "q3": "y"})
    out = run("ensemble", tmp_path / "a.jsonl", tmp_path / "b.jsonl", "--out", tmp_path / "o.jsonl", code=2).output
    assert "q2" in out and "q3" in out


def test_evaluate_command(trained, tmp_path):
    preds = tmp_path / "p.jsonl"
    run("predict", "--config", trained["config"], "--checkpoint", trained["ext"], "--out", preds)
    out = tmp_path / "metrics.json"
    res = run("evaluate", "--config", trained["config"], preds, "--out", out)
    metrics = json.loads(out.read_text())
    (mid,) = metrics
    assert mid == "extractive-seed0" and f"EM {metrics[mid]['em']:.4f}" in res.output
    assert set(metrics[mid]["breakdown"]) >= {"question_overlap", "no_overlap"}


def test_report_median_and_matrix(trained, tmp_path):
    test = load_dataset(trained["root"] / "test.jsonl")
    ids = [ex.question_id for ex in test]
    # six models: three seeds of each reader with planted EMs
    files = []
    for reader, typ, hits in (("ext", "extractive", [3, 6, 4]), ("gen", "generative", [1, 2, 6])):
        for seed, h in enumerate(hits):
            answers = {q: (ex.answers[0] if i < h else "wrong") for i, (q, ex) in enumerate(zip(ids, test))}
            path = tmp_path / f"{reader}{seed}.jsonl"
            _write_preds(path, f"{reader}-seed{seed}", typ, answers)
            files.append(path)
    args = []
    for f in files:
        args += ["--predictions", f]
    out = tmp_path / "rep"
    run("report", "--config", trained["config"], *args, "--manifest", trained["ck"] / "extractive-seed0.manifest.json",
        "--out", out)
    rep = json.loads((out / "report.json").read_text())
    jsonschema.validate(rep, REPORT_SCHEMA)
    n = len(test)
    assert rep["systems"]["ext"]["median_em"] == pytest.approx(statistics.median([3 / n, 6 / n, 4 / n]))
    assert rep["systems"]["gen"]["median_em"] == pytest.approx(2 / n)
    m = rep["agreement"]["matrix"]
    assert len(m) == 6 and all(len(r) == 6 for r in m)
    assert all(m[i][i] == 1.0 for i in range(6))
    assert all(m[i][j] == m[j][i] for i in range(6) for j in range(6))
    assert "Exact match" in (out / "report.txt").read_text()
    before = (out / "report.json").read_bytes()
    run("report", "--config", trained["config"], *args, "--manifest", trained["ck"] / "extractive-seed0.manifest.json",
        "--out", out)
    assert (out / "report.json").read_bytes() == before


def test_report_median_of_three():
    assert statistics.median([0.50, 0.52, 0.58]) == 0.52
    assert system_name("generative-seed2") == "generative"
    assert system_name("extractive-seed0-gamma4") == "extractive"
    assert system_name("hybrid") == "hybrid"


def test_report_needs_inputs(trained):
    run("report", "--config", trained["config"], code=2)


def test_build_report_rejects_schema_violation(trained, tmp_path):
    bad = tmp_path / "bad.jsonl"
    write_jsonl(bad, [{"question_id": "x", "answer": "a", "model_id": "m", "model_type": "extractive", "score": 0}])
    cfg = load_config(trained["config"], environ={})
    with pytest.raises(ValueError):
        build_report(cfg, [], [bad], trained["root"] / "test.jsonl")
