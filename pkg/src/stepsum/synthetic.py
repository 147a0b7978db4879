"""Synthetic corpora for overfitting experiments and self-checks."""

from __future__ import annotations

import numpy as np

from .data import Document
from .plan import PlanStep, unit_step

SENTINEL = "sentinel"

_FILLER = [
    "alder", "basalt", "cobble", "dune", "ember", "fjord", "garnet", "heath",
    "inlet", "juniper", "kelp", "lagoon", "marsh", "nectar", "osier", "parsnip",
    "quarry", "russet", "slate", "tarn", "umber", "vetch", "willow", "yarrow",
    "zephyr", "bramble", "cairn", "delta", "eyrie", "fallow", "gorse", "holt",
]


def make_overfit_corpus(n_docs: int = 64, n_sents: int = 12, n_gold: int = 3,
                        sent_len: int = 6, seed: int = 7,
                        ) -> tuple[list[Document], dict[str, list[int]]]:
    """Documents where the gold plan is the sentinel-bearing sentences in order.

    Each document has ``n_gold`` sentences carrying a shared sentinel token at
    a random position; the gold plan selects exactly those sentences in
    document-position order.
    """
    rng = np.random.default_rng(seed)
    docs = []
    gold: dict[str, list[int]] = {}
    for d in range(n_docs):
        marked = sorted(rng.choice(n_sents, size=n_gold, replace=False).tolist())
        sentences = []
        for s in range(n_sents):
            words = [_FILLER[int(i)] for i in rng.integers(0, len(_FILLER), sent_len)]
            if s in marked:
                words[int(rng.integers(0, sent_len))] = SENTINEL
            sentences.append(words)
        doc_id = f"doc-{d:03d}"
        docs.append(Document(doc_id, sentences))
        gold[doc_id] = marked
    return docs, gold


def gold_plan(indices: list[int]) -> list[PlanStep]:
    return [unit_step(i) for i in indices]
