"""Command-line surface: oracle, train, decode, eval, linearize, selfcheck, stats.

Every command is replayable: identical inputs and seed produce identical
outputs. Malformed input lines are reported with their line number and
skipped; the run continues and exits nonzero at the end. The only
environment variable honored is STEPSUM_THREADS (worker count for oracle
construction).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import data as datalib
from . import rotowire
from .acceptance import run_fast_criteria
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    restore_params,
    verify_config_match,
)
from .config import ConfigError, RunConfig, load_config
from .data import (
    Document,
    StepExample,
    Vocab,
    examples_from_plan,
    parse_document,
    prepare_cnndm,
    prepare_rotowire,
    read_jsonl,
    rotowire_corpus_sentences,
    write_jsonl,
)
from .decoding import DecodeConstraints, beam_decode, greedy_decode_with_repeat_exceptions
from .metrics import co_score, cs_scores, rouge_l, rouge_n, stem_tokens
from .models import ModelStepScorer, build_model, trim_for_flat_budget
from .oracle import make_stepwise_examples, oracle_full
from .plan import PlanStep
from .rotowire import GameFormatError, parse_game, plan_from_json, plan_to_json
from .training import TrainingDiverged, train


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _report_line_errors(path: str, errors: list[tuple[int, str]]) -> None:
    for lineno, msg in errors:
        _err(f"{path}:{lineno}: {msg}")


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("STEPSUM_THREADS", "1")))
    except ValueError:
        return 1


def _load_documents(path: str) -> tuple[list[Document], list[tuple[int, str]]]:
    rows, errors = read_jsonl(path)
    docs = []
    for i, row in enumerate(rows):
        try:
            docs.append(parse_document(row))
        except ValueError as e:
            errors.append((i + 1, str(e)))
    return docs, errors


def _load_games(path: str) -> tuple[list[rotowire.RotowireGame], list[tuple[int, str]]]:
    rows, errors = read_jsonl(path)
    games = []
    for i, row in enumerate(rows):
        try:
            games.append(parse_game(row))
        except GameFormatError as e:
            errors.append((i + 1, str(e)))
    return games, errors


def _load_plans(path: str) -> tuple[dict[str, list[PlanStep]], list[tuple[int, str]]]:
    rows, errors = read_jsonl(path)
    plans = {}
    for i, row in enumerate(rows):
        try:
            plans[str(row["id"])] = plan_from_json(row["plan"])
        except (KeyError, ValueError) as e:
            errors.append((i + 1, str(e)))
    return plans, errors


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def _oracle_worker(args: tuple[list[list[str]], list[str], int]):
    sentences, reference, max_size = args
    result = oracle_full(sentences, reference, max_size)
    return result.selected, result.score


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    docs, errors = _load_documents(args.infile)
    _report_line_errors(args.infile, errors)
    jobs = [(d.sentences, d.abstract_tokens, cfg.max_steps) for d in docs]
    workers = _thread_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_oracle_worker, jobs, chunksize=8))
    else:
        results = [_oracle_worker(j) for j in jobs]
    rows = [
        {"id": d.doc_id, "selected": sel, "score": score}
        for d, (sel, score) in zip(docs, results)
    ]
    write_jsonl(args.out, rows)
    return 1 if errors else 0


# ---------------------------------------------------------------------------
# dataset assembly shared by train
# ---------------------------------------------------------------------------


def _prepare_corpus(cfg: RunConfig, path: str, plans_path: str | None,
                    vocab: Vocab | None):
    """Returns (vocab, examples, prepared docs, line errors)."""
    errors: list[tuple[int, str]] = []
    if cfg.task == "cnndm":
        docs, errors = _load_documents(path)
        if vocab is None:
            vocab = Vocab.from_corpus(s for d in docs for s in d.sentences)
        prepared = []
        examples: list[StepExample] = []
        for doc in docs:
            prep = prepare_cnndm(doc, vocab, max_doc_sents=cfg.max_doc_sents,
                                 max_sent_len=cfg.max_sent_len)
            if cfg.encoder == "etc":
                prep = trim_for_flat_budget(prep, cfg, vocab)
            try:
                result = oracle_full(doc.sentences[: prep.n_real_units],
                                     doc.abstract_tokens, cfg.max_steps)
            except ValueError as e:
                errors.append((0, f"document {doc.doc_id}: {e}"))
                continue
            pairs = make_stepwise_examples(doc.sentences[: prep.n_real_units],
                                           result)
            for prefix, target in pairs:
                examples.append(StepExample(
                    prep, prefix, datalib.candidate_index(prep, target)))
            prepared.append(prep)
        return vocab, examples, prepared, errors

    games, errors = _load_games(path)
    if plans_path is None:
        raise ConfigError("rotowire training needs --train-plans/--valid-plans")
    plans, perr = _load_plans(plans_path)
    errors.extend(perr)
    if vocab is None:
        corpus = rotowire_corpus_sentences(games, cfg.max_units)
        vocab = Vocab.from_corpus(corpus)
    prepared = []
    examples = []
    for game in games:
        if game.game_id not in plans:
            errors.append((0, f"game {game.game_id} has no reference plan"))
            continue
        prep = prepare_rotowire(game, vocab, max_units=cfg.max_units,
                                max_sent_len=cfg.max_sent_len)
        if cfg.encoder == "etc":
            prep = trim_for_flat_budget(prep, cfg, vocab)
        aligned = datalib.align_plan_to_units(plans[game.game_id], prep)
        missing = rotowire.missing_plan_records(prep.records, plans[game.game_id])
        for ref in missing:
            _err(f"game {game.game_id}: plan record "
                 f"{ref.entity}|{ref.type} was prefiltered away")
        examples.extend(examples_from_plan(prep, aligned))
        prepared.append(prep)
    return vocab, examples, prepared, errors


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    vocab, train_ex, _, err1 = _prepare_corpus(cfg, args.train, args.train_plans, None)
    _report_line_errors(args.train, err1)
    _, valid_ex, _, err2 = _prepare_corpus(cfg, args.valid, args.valid_plans, vocab)
    _report_line_errors(args.valid, err2)
    model = build_model(cfg, len(vocab))
    try:
        result = train(cfg, model, vocab, train_ex, valid_ex, args.out,
                       log=lambda msg: print(msg))
    except TrainingDiverged as e:
        _err(str(e))
        return 2
    print(f"best step {result.best_step} valid loss {result.best_valid_loss:.4f}")
    return 1 if (err1 or err2) else 0


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    cfg = load_config(args.config)
    manifest, arrays = load_checkpoint(args.ckpt)
    verify_config_match(manifest, cfg)
    vocab = Vocab.from_token_list(manifest.vocab)
    model = build_model(cfg, len(vocab))
    restore_params(model.named_parameters(), arrays)

    beam = args.beam if args.beam is not None else cfg.beam_size
    max_steps = args.max_steps if args.max_steps is not None else cfg.max_steps
    constraints = DecodeConstraints(
        no_repeat=cfg.no_repeat,
        trigram_blocking=args.triblk or cfg.trigram_blocking,
        repeat_exceptions=(cfg.task == "rotowire"),
    )

    errors: list[tuple[int, str]] = []
    rows = []
    if cfg.task == "cnndm":
        docs, errors = _load_documents(args.infile)
        for doc in docs:
            prep = prepare_cnndm(doc, vocab, max_doc_sents=cfg.max_doc_sents,
                                 max_sent_len=cfg.max_sent_len)
            if cfg.encoder == "etc":
                prep = trim_for_flat_budget(prep, cfg, vocab)
            scorer = ModelStepScorer(model, cfg, vocab, prep)
            result = beam_decode(scorer, beam, max_steps, constraints)
            chosen = sorted(s.unit for s in result.steps if s.kind == "unit")
            rows.append({
                "id": doc.doc_id,
                "plan": plan_to_json(result.steps),
                "log_prob": result.log_prob,
                "incomplete": result.incomplete,
                "summary_sentences": [doc.sentences[i] for i in chosen],
            })
    else:
        games, errors = _load_games(args.infile)
        for game in games:
            prep = prepare_rotowire(game, vocab, max_units=cfg.max_units,
                                    max_sent_len=cfg.max_sent_len)
            if cfg.encoder == "etc":
                prep = trim_for_flat_budget(prep, cfg, vocab)
            scorer = ModelStepScorer(model, cfg, vocab, prep)
            steps = greedy_decode_with_repeat_exceptions(scorer, max_steps)
            rows.append({"id": game.game_id, "plan": plan_to_json(steps)})
    _report_line_errors(args.infile, errors)
    write_jsonl(args.out, rows)
    return 1 if errors else 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_TOKEN_FIELDS = ("sentences", "summary_sentences", "abstract", "tokens")


def _row_tokens(row: dict) -> list[str]:
    for fld in _TOKEN_FIELDS:
        if fld in row:
            val = row[fld]
            if val and isinstance(val[0], list):
                return [str(t).lower() for sent in val for t in sent]
            return [str(t).lower() for t in val]
    raise ValueError(f"no token field among {_TOKEN_FIELDS}")


def cmd_eval(args) -> int:
    gen_rows, gerr = read_jsonl(args.gen)
    ref_rows, rerr = read_jsonl(args.ref)
    _report_line_errors(args.gen, gerr)
    _report_line_errors(args.ref, rerr)
    errors = list(gerr) + list(rerr)

    report: dict = {"task": args.task, "examples": {}}
    if args.task == "rouge":
        refs = {str(r.get("id")): r for r in ref_rows}
        f1_sums: dict[str, float] = {}
        n = 0
        for row in gen_rows:
            rid = str(row.get("id"))
            if rid not in refs:
                errors.append((0, f"id {rid} missing from reference file"))
                continue
            try:
                cand = _row_tokens(row)
                ref = _row_tokens(refs[rid])
            except ValueError as e:
                errors.append((0, f"id {rid}: {e}"))
                continue
            if args.stem:
                cand, ref = stem_tokens(cand), stem_tokens(ref)
            scores = {}
            for k in (1, 2, 3, 4):
                s = rouge_n(cand, ref, k)
                scores[f"rouge{k}"] = {"p": s.precision, "r": s.recall, "f1": s.f1}
            s = rouge_l(cand, ref)
            scores["rougeL"] = {"p": s.precision, "r": s.recall, "f1": s.f1}
            report["examples"][rid] = scores
            for key, val in scores.items():
                f1_sums[key] = f1_sums.get(key, 0.0) + val["f1"]
            n += 1
        report["count"] = n
        report["corpus"] = {k: v / max(n, 1) for k, v in f1_sums.items()}
    elif args.task == "plan":
        refs = {}
        for row in ref_rows:
            try:
                refs[str(row["id"])] = plan_from_json(row["plan"])
            except (KeyError, ValueError) as e:
                errors.append((0, f"reference plan: {e}"))
        sums = {"cs_p": 0.0, "cs_r": 0.0, "cs_f1": 0.0,
                "cs_filtered_f1": 0.0, "co": 0.0}
        n = 0
        for row in gen_rows:
            rid = str(row.get("id"))
            if rid not in refs:
                errors.append((0, f"id {rid} missing from reference file"))
                continue
            try:
                gen_plan = plan_from_json(row["plan"])
            except (KeyError, ValueError) as e:
                errors.append((0, f"id {rid}: {e}"))
                continue
            gen_recs = rotowire.plan_records(gen_plan)
            ref_recs = rotowire.plan_records(refs[rid])
            cs = cs_scores(gen_recs, ref_recs)
            csf = cs_scores(gen_recs, ref_recs, drop_name_city_date=True)
            co = co_score([rotowire.record_token(r) for r in gen_recs],
                          [rotowire.record_token(r) for r in ref_recs])
            report["examples"][rid] = {
                "cs": {"p": cs.precision, "r": cs.recall, "f1": cs.f1},
                "cs_filtered": {"p": csf.precision, "r": csf.recall, "f1": csf.f1},
                "co": co,
            }
            sums["cs_p"] += cs.precision
            sums["cs_r"] += cs.recall
            sums["cs_f1"] += cs.f1
            sums["cs_filtered_f1"] += csf.f1
            sums["co"] += co
            n += 1
        report["count"] = n
        report["corpus"] = {k: v / max(n, 1) for k, v in sums.items()}
    else:
        _err(f"unknown eval task {args.task!r}")
        return 2

    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 1 if errors else 0


# ---------------------------------------------------------------------------
# linearize / stats / selfcheck
# ---------------------------------------------------------------------------


def cmd_linearize(args) -> int:
    games, errors = _load_games(args.infile)
    _report_line_errors(args.infile, errors)
    rows = []
    for game in games:
        refs, units = rotowire.templated_units(game, max_units=10**9)
        rows.append({
            "id": game.game_id,
            "units": [" ".join(u) for u in units],
            "records": [rotowire.record_token(r) for r in refs],
        })
    write_jsonl(args.out, rows)
    return 1 if errors else 0


def cmd_stats(args) -> int:
    plans, errors = _load_plans(args.infile)
    _report_line_errors(args.infile, errors)
    stats = rotowire.plan_stats(list(plans.values()))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("length,count,density\n")
        total = sum(stats.length_histogram.values()) or 1
        for length in sorted(stats.length_histogram):
            count = stats.length_histogram[length]
            fh.write(f"{length},{count},{count / total}\n")
    print(json.dumps({
        "plans": stats.plans,
        "mean_entries": stats.mean_entries,
        "mean_sentences": stats.mean_sentences,
    }, sort_keys=True))
    return 1 if errors else 0


def cmd_selfcheck(_args) -> int:
    return 0 if run_fast_criteria(print) else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepsum",
        description="Stepwise extractive content planning trainer and tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="greedy extractive oracles for documents")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("train", help="train a stepwise scorer")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-plans")
    p.add_argument("--valid-plans")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode plans with a trained checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--triblk", action="store_true")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score generated summaries or plans")
    p.add_argument("--task", required=True, choices=["rouge", "plan"])
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stem", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("linearize", help="render games as templated unit strings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_linearize)

    p = sub.add_parser("selfcheck", help="run the invariant and gradient suite")
    p.set_defaults(fn=cmd_selfcheck)

    p = sub.add_parser("stats", help="plan length statistics and histogram")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, GameFormatError, OSError, ValueError) as e:
        _err(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
