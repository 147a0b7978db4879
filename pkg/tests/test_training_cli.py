"""Training behavior and the command-line surface (run as real subprocesses)."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from stepsum.config import config_from_dict
from stepsum.data import Vocab, examples_from_plan, prepare_cnndm
from stepsum.models import ModelStepScorer, build_model
from stepsum.synthetic import gold_plan, make_overfit_corpus
from stepsum.training import TrainingDiverged, evaluate_loss, train


def tiny_cfg(**overrides):
    base = dict(dim=16, ffn_dim=32, sent_layers=1, doc_layers=1,
                max_sent_len=8, max_doc_sents=16, batch_size=4,
                train_steps=40, checkpoint_every=20, learning_rate=2e-3,
                seed=3)
    base.update(overrides)
    return config_from_dict(base)


def tiny_corpus(n_docs=6):
    docs, gold = make_overfit_corpus(n_docs=n_docs, n_sents=6, n_gold=2,
                                     sent_len=5, seed=3)
    vocab = Vocab.from_corpus(s for d in docs for s in d.sentences)
    cfg = tiny_cfg()
    examples = []
    for d in docs:
        prep = prepare_cnndm(d, vocab, max_doc_sents=cfg.max_doc_sents,
                             max_sent_len=cfg.max_sent_len)
        examples.extend(examples_from_plan(prep, gold_plan(gold[d.doc_id])))
    return cfg, vocab, examples


def test_single_step_reduces_example_loss():
    cfg = tiny_cfg(train_steps=1, checkpoint_every=1, batch_size=1,
                   learning_rate=1e-3)
    _, vocab, examples = tiny_corpus(2)
    model = build_model(cfg, len(vocab))
    one = [examples[0]]
    before = evaluate_loss(model, cfg, vocab, one)
    train(cfg, model, vocab, one, one)
    after = evaluate_loss(model, cfg, vocab, one)
    assert after < before


def test_seed_repeat_identical_loss_curves():
    cfg, vocab, examples = tiny_corpus()

    def run():
        model = build_model(cfg, len(vocab))
        return train(cfg, model, vocab, examples, examples[:8]).history

    assert run() == run()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_checkpoint(tmp_path):
    cfg, vocab, examples = tiny_corpus(2)
    cfg.learning_rate = 1e155  # force a blow-up after the first checkpoint
    cfg.train_steps = 40
    cfg.checkpoint_every = 1
    model = build_model(cfg, len(vocab))
    out = str(tmp_path / "run")
    with pytest.raises(TrainingDiverged):
        train(cfg, model, vocab, examples, examples[:4], out)
    from stepsum.checkpoint import load_checkpoint

    manifest, arrays = load_checkpoint(os.path.join(out, "last"))
    assert manifest.vocab == vocab.id_to_token
    assert all(np.isfinite(a).all() for a in arrays.values())


def test_decode_after_restore_is_bitwise_identical(tmp_path):
    from stepsum.checkpoint import load_checkpoint, restore_params, save_checkpoint
    from stepsum.data import prepare_cnndm
    from stepsum.synthetic import make_overfit_corpus

    cfg, vocab, examples = tiny_corpus(2)
    model = build_model(cfg, len(vocab))
    train(cfg, model, vocab, examples, examples[:4])
    prep = examples[0].doc
    before = ModelStepScorer(model, cfg, vocab, prep).step_log_probs(())

    path = str(tmp_path / "ck")
    save_checkpoint(path, model.named_parameters(), cfg, vocab.id_to_token)
    _, arrays = load_checkpoint(path)
    fresh = build_model(cfg, len(vocab), seed=1234)
    restore_params(fresh.named_parameters(), arrays)
    after = ModelStepScorer(fresh, cfg, vocab, prep).step_log_probs(())
    assert np.array_equal(before, after)


# -- CLI ----------------------------------------------------------------------


def write_config(path, **overrides):
    lines = {
        "run": {"task": "cnndm", "encoder": "hibert", "seed": 3},
        "model": {"dim": 16, "ffn_dim": 32, "sent_layers": 1, "doc_layers": 1,
                  "max_sent_len": 8, "max_doc_sents": 16},
        "optimizer": {"train_steps": 30, "checkpoint_every": 15,
                      "batch_size": 4, "learning_rate": 0.002},
    }
    for key, value in overrides.items():
        section, name = key.split(".")
        lines.setdefault(section, {})[name] = value
    with open(path, "w") as fh:
        for section, kv in lines.items():
            fh.write(f"[{section}]\n")
            for k, v in kv.items():
                fh.write(f"{k} = {v}\n")


def write_docs(path, n_docs=6):
    docs, gold = make_overfit_corpus(n_docs=n_docs, n_sents=6, n_gold=2,
                                     sent_len=5, seed=3)
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps({
                "id": d.doc_id,
                "sentences": d.sentences,
                "abstract": [d.sentences[i] for i in gold[d.doc_id]],
            }) + "\n")


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "stepsum.cli", *args],
        capture_output=True, text=True, env=env, cwd=os.path.dirname(__file__),
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = str(root / "run.cfg")
    docs_path = str(root / "docs.jsonl")
    write_config(cfg_path)
    write_docs(docs_path)
    return root, cfg_path, docs_path


def test_cli_oracle_and_repeatability(workspace):
    root, cfg_path, docs_path = workspace
    out1 = str(root / "o1.jsonl")
    out2 = str(root / "o2.jsonl")
    r1 = run_cli("oracle", "--config", cfg_path, "--in", docs_path, "--out", out1)
    assert r1.returncode == 0, r1.stderr
    r2 = run_cli("oracle", "--config", cfg_path, "--in", docs_path, "--out", out2)
    assert open(out1, "rb").read() == open(out2, "rb").read()
    row = json.loads(open(out1).readline())
    assert set(row) == {"id", "selected", "score"}


def test_cli_oracle_parallel_matches_serial(workspace):
    root, cfg_path, docs_path = workspace
    out1 = str(root / "op1.jsonl")
    out2 = str(root / "op2.jsonl")
    run_cli("oracle", "--config", cfg_path, "--in", docs_path, "--out", out1)
    r = run_cli("oracle", "--config", cfg_path, "--in", docs_path, "--out", out2,
                env_extra={"STEPSUM_THREADS": "2"})
    assert r.returncode == 0, r.stderr
    assert open(out1, "rb").read() == open(out2, "rb").read()


def test_cli_malformed_line_reported_run_continues(workspace, tmp_path):
    root, cfg_path, docs_path = workspace
    bad = str(tmp_path / "bad.jsonl")
    lines = open(docs_path).readlines()
    with open(bad, "w") as fh:
        fh.write(lines[0])
        fh.write("this is not json\n")
        fh.writelines(lines[1:3])
    out = str(tmp_path / "oracles.jsonl")
    r = run_cli("oracle", "--config", cfg_path, "--in", bad, "--out", out)
    assert r.returncode == 1
    assert ":2:" in r.stderr
    assert len(open(out).readlines()) == 3  # the good lines still processed


def test_cli_train_decode_eval_round(workspace):
    root, cfg_path, docs_path = workspace
    ckpt = str(root / "ckpt")
    r = run_cli("train", "--config", cfg_path, "--train", docs_path,
                "--valid", docs_path, "--out", ckpt)
    assert r.returncode == 0, r.stderr
    assert os.path.isdir(os.path.join(ckpt, "best"))

    plans1 = str(root / "p1.jsonl")
    plans2 = str(root / "p2.jsonl")
    r = run_cli("decode", "--config", cfg_path, "--ckpt", os.path.join(ckpt, "best"),
                "--in", docs_path, "--out", plans1)
    assert r.returncode == 0, r.stderr
    run_cli("decode", "--config", cfg_path, "--ckpt", os.path.join(ckpt, "best"),
            "--in", docs_path, "--out", plans2)
    assert open(plans1, "rb").read() == open(plans2, "rb").read()

    report = str(root / "report.json")
    r = run_cli("eval", "--task", "rouge", "--gen", plans1, "--ref", docs_path,
                "--out", report)
    assert r.returncode == 0, r.stderr
    blob = json.load(open(report))
    assert set(blob["corpus"]) == {"rouge1", "rouge2", "rouge3", "rouge4", "rougeL"}


def test_cli_decode_config_mismatch_fails(workspace, tmp_path):
    root, cfg_path, docs_path = workspace
    ckpt = os.path.join(str(root / "ckpt"), "best")
    if not os.path.isdir(ckpt):
        pytest.skip("train round has not produced a checkpoint yet")
    other_cfg = str(tmp_path / "other.cfg")
    write_config(other_cfg, **{"model.dim": 32, "model.ffn_dim": 64})
    r = run_cli("decode", "--config", other_cfg, "--ckpt", ckpt,
                "--in", docs_path, "--out", str(tmp_path / "x.jsonl"))
    assert r.returncode == 2
    assert "hash" in r.stderr


def test_cli_eval_plan_identical_plans(tmp_path):
    plans = [{"id": "g1", "plan": [
        {"entity": "TeamA", "type": "TEAM-PTS"},
        {"entity": "P1", "type": "PLAYER-PTS"},
        "EOS", "EOT"]}]
    gen = str(tmp_path / "gen.jsonl")
    ref = str(tmp_path / "ref.jsonl")
    for path in (gen, ref):
        with open(path, "w") as fh:
            for row in plans:
                fh.write(json.dumps(row) + "\n")
    report = str(tmp_path / "rep.json")
    r = run_cli("eval", "--task", "plan", "--gen", gen, "--ref", ref,
                "--out", report)
    assert r.returncode == 0, r.stderr
    blob = json.load(open(report))
    assert blob["corpus"]["cs_f1"] == 1.0
    assert blob["corpus"]["co"] == 1.0


def test_cli_stats_single_bin(tmp_path):
    rows = [{"id": f"p{i}", "plan": [
        {"entity": "A", "type": "TEAM-PTS"},
        {"entity": "B", "type": "TEAM-PTS"},
        "EOT"]} for i in range(3)]
    path = str(tmp_path / "plans.jsonl")
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    hist = str(tmp_path / "hist.csv")
    r = run_cli("stats", "--in", path, "--out", hist)
    assert r.returncode == 0, r.stderr
    lines = open(hist).read().strip().splitlines()
    assert lines[0] == "length,count,density"
    assert lines[1] == "2,3,1.0"
    summary = json.loads(r.stdout.strip().splitlines()[-1])
    assert summary["mean_entries"] == 2.0


def test_cli_linearize(workspace, tmp_path):
    from stepsum.acceptance import table3_game

    games = str(tmp_path / "games.jsonl")
    with open(games, "w") as fh:
        fh.write(json.dumps(table3_game()) + "\n")
    out = str(tmp_path / "units.jsonl")
    r = run_cli("linearize", "--in", games, "--out", out)
    assert r.returncode == 0, r.stderr
    row = json.loads(open(out).readline())
    assert "team points scored of Chicago_Bulls is 100 which is 1st best" in row["units"]
    assert "Chicago_Bulls|TEAM-PTS" in row["records"]
