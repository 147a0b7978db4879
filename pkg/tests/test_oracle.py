import numpy as np
import pytest

from stepsum.oracle import (
    brute_force_oracle,
    make_stepwise_examples,
    oracle_full,
    oracle_truncated,
    stepwise_examples_from_plan,
)
from stepsum.plan import BREAK_STEP, END_STEP, unit_step


def test_verbatim_sentence_wins_with_perfect_score():
    doc = [["alpha", "beta"], ["gamma", "delta", "epsilon"], ["zeta", "eta"]]
    result = oracle_full(doc, ["gamma", "delta", "epsilon"])
    assert result.selected == [1]
    assert result.score == pytest.approx(1.0)


def test_disjoint_reference_selects_nothing():
    doc = [["a", "b"], ["c", "d"]]
    result = oracle_full(doc, ["x", "y", "z"])
    assert result.selected == []
    assert result.score == 0.0


def test_greedy_matches_bruteforce_on_bigram_overlap_doc():
    doc = [
        "a b c d".split(),
        "c d e f".split(),
        "e f g h".split(),
        "g h a b".split(),
        "x y z w".split(),
        "b c d e".split(),
    ]
    reference = "a b c d e f g h".split()
    greedy = oracle_full(doc, reference, max_size=3)
    brute = brute_force_oracle(doc, reference, max_size=3)
    assert greedy.score == pytest.approx(brute.score, rel=1e-12)
    assert sorted(greedy.selected) == list(brute.selected)


def test_greedy_never_beats_bruteforce():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        vocab = [f"w{i}" for i in range(15)]
        doc = [[vocab[int(t)] for t in rng.integers(0, 15, 5)] for _ in range(7)]
        ref = [vocab[int(t)] for t in rng.integers(0, 15, 10)]
        g = oracle_full(doc, ref, max_size=3)
        b = brute_force_oracle(doc, ref, max_size=3)
        assert g.score <= b.score + 1e-12


def test_trace_monotone_and_strictly_improving():
    doc = ["a b".split(), "c d".split(), "e f".split()]
    ref = "a b c d".split()
    result = oracle_full(doc, ref)
    scores = [s for _, s in result.trace]
    assert scores == sorted(scores)
    assert len(set(scores)) == len(scores)  # each addition strictly improved


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        oracle_full([], ["a"])
    with pytest.raises(ValueError):
        oracle_full([["a"]], [])


def test_truncated_with_generous_budget_equals_full():
    doc = [["a", "b"], ["c", "d"], ["e", "f"]]
    ref = "c d".split()
    full = oracle_full(doc, ref)
    trunc = oracle_truncated(doc, ref, token_budget=100)
    assert trunc.selected == full.selected
    assert trunc.score == full.score


def test_truncated_zero_budget_is_empty():
    result = oracle_truncated([["a", "b"]], ["a"], token_budget=0)
    assert result.selected == []
    assert result.score == 0.0


def test_truncated_falls_back_to_prefix_sentence():
    doc = [["partial", "match", "here"], ["exact", "match", "sentence"]]
    ref = ["exact", "match", "sentence"]
    full = oracle_full(doc, ref)
    assert full.selected == [1]
    trunc = oracle_truncated(doc, ref, token_budget=3)
    assert trunc.selected == [0]  # only sentence 0 fits the budget
    assert trunc.score < full.score


def test_bruteforce_rejects_large_documents():
    doc = [["a"]] * 16
    with pytest.raises(ValueError):
        brute_force_oracle(doc, ["a"])


def test_bruteforce_single_sentence_cases():
    assert brute_force_oracle([["a", "b"]], ["a"]).selected == [0]
    assert brute_force_oracle([["a", "b"]], ["x"]).selected == []


def test_stepwise_examples_position_order():
    doc = [["s0"], ["s1"], ["s2"], ["s3"], ["s4"]]
    oracle = type("R", (), {"selected": [4, 1], "score": 1.0, "trace": []})()
    pairs = make_stepwise_examples(doc, oracle)
    assert pairs == [
        ((), unit_step(1)),
        ((unit_step(1),), unit_step(4)),
        ((unit_step(1), unit_step(4)), END_STEP),
    ]


def test_stepwise_examples_selection_order():
    doc = [["s0"], ["s1"], ["s2"], ["s3"], ["s4"]]
    oracle = type("R", (), {"selected": [4, 1], "score": 1.0, "trace": []})()
    pairs = make_stepwise_examples(doc, oracle, order="selection")
    assert pairs[0] == ((), unit_step(4))
    assert pairs[1] == ((unit_step(4),), unit_step(1))


def test_empty_oracle_yields_single_stop_example():
    doc = [["s0"]]
    oracle = type("R", (), {"selected": [], "score": 0.0, "trace": []})()
    pairs = make_stepwise_examples(doc, oracle)
    assert pairs == [((), END_STEP)]


def test_plan_with_breaks_one_example_per_element():
    plan = [unit_step(0), unit_step(1), BREAK_STEP, unit_step(2), BREAK_STEP,
            unit_step(3), unit_step(4), BREAK_STEP]
    pairs = stepwise_examples_from_plan(plan)
    assert len(pairs) == len(plan) + 1  # every element plus the final stop
    assert pairs[-1][1] == END_STEP
    assert pairs[2][1] == BREAK_STEP
    # round trip: concatenating targets reproduces the plan
    assert [t for _, t in pairs[:-1]] == plan


def test_targets_round_trip_reproduces_selection():
    doc = [[f"s{i}"] for i in range(6)]
    oracle = type("R", (), {"selected": [3, 0, 5], "score": 1.0, "trace": []})()
    pairs = make_stepwise_examples(doc, oracle)
    units = [t.unit for _, t in pairs if t.kind == "unit"]
    assert units == sorted(oracle.selected)


def test_oracle_index_outside_document_rejected():
    oracle = type("R", (), {"selected": [9], "score": 1.0, "trace": []})()
    with pytest.raises(ValueError):
        make_stepwise_examples([["a"]], oracle)
