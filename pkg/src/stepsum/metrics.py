"""Evaluation mathematics: Rouge, BLEU, edit-distance ordering, record overlap.

Everything here is a pure function over token or record sequences. Rouge-L
uses the plain LCS over concatenated tokens, Rouge-N uses clipped n-gram
counts, and plan comparison uses multiset record intersection (selection)
and the complement of the normalized Damerau-Levenshtein distance
(ordering). The default edit distance is the restricted variant (optimal
string alignment), the one conventional for plan-ordering scores; the
unrestricted variant is available behind a flag.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import exp, log
from typing import Hashable, Sequence

from .plan import RecordRef
from .stemmer import stem_tokens

__all__ = [
    "RougeScore", "CsResult", "rouge_n", "rouge_l", "mean_rouge_f1",
    "dld", "co_score", "cs_scores", "bleu", "stem_tokens", "PLAN_FILTER_TYPES",
]

# dropped before content-selection scoring when the filter flag is on
PLAN_FILTER_TYPES = frozenset({
    "TEAM-NAME", "TEAM-CITY", "PLAYER-FIRST_NAME", "PLAYER-SECOND_NAME",
    "MATCH-DATE",
})


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False


@dataclass(frozen=True)
class CsResult:
    precision: float
    recall: float
    f1: float
    empty_generated: bool = False


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(reference) < n:
        return RougeScore(0.0, 0.0, 0.0, empty_reference=True)
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum((cand & ref).values())
    p = overlap / max(sum(cand.values()), 1) if cand else 0.0
    r = overlap / sum(ref.values())
    return RougeScore(p, r, _f1(p, r))


def _lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1."""
    if not reference:
        return RougeScore(0.0, 0.0, 0.0, empty_reference=True)
    if not candidate:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = _lcs_length(candidate, reference)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeScore(p, r, _f1(p, r))


def mean_rouge_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Arithmetic mean of Rouge-1, Rouge-2 and Rouge-L F1."""
    return (rouge_n(candidate, reference, 1).f1
            + rouge_n(candidate, reference, 2).f1
            + rouge_l(candidate, reference).f1) / 3.0


# ---------------------------------------------------------------------------
# edit distance and plan comparison
# ---------------------------------------------------------------------------


def dld(a: Sequence[Hashable], b: Sequence[Hashable], *,
        restricted: bool = True) -> int:
    """Damerau-Levenshtein distance (insert, delete, substitute, transpose).

    The default is the restricted (optimal string alignment) variant; pass
    ``restricted=False`` for the unrestricted distance, which is a true
    metric but allows edits inside previously transposed pairs.
    """
    if restricted:
        return _dld_osa(a, b)
    return _dld_unrestricted(a, b)


def _dld_osa(a: Sequence, b: Sequence) -> int:
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev2: list[int] | None = None
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if (i > 1 and j > 1 and a[i - 1] == b[j - 2]
                    and a[i - 2] == b[j - 1]):
                cur[j] = min(cur[j], prev2[j - 2] + 1)
        prev2, prev = prev, cur
    return prev[lb]


def _dld_unrestricted(a: Sequence, b: Sequence) -> int:
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    alphabet = {s: i for i, s in enumerate(dict.fromkeys(list(a) + list(b)))}
    inf = la + lb
    d = [[inf] * (lb + 2) for _ in range(la + 2)]
    d[1][1] = 0
    for i in range(la + 1):
        d[i + 1][1] = i
    for j in range(lb + 1):
        d[1][j + 1] = j
    last_row = [0] * len(alphabet)
    for i in range(1, la + 1):
        last_col = 0
        for j in range(1, lb + 1):
            i1 = last_row[alphabet[b[j - 1]]]
            j1 = last_col
            cost = 0 if a[i - 1] == b[j - 1] else 1
            if cost == 0:
                last_col = j
            d[i + 1][j + 1] = min(
                d[i][j] + cost,
                d[i + 1][j] + 1,
                d[i][j + 1] + 1,
                d[i1][j1] + (i - i1 - 1) + 1 + (j - j1 - 1),
            )
        last_row[alphabet[a[i - 1]]] = i
    return d[la + 1][lb + 1]


def co_score(gen: Sequence[Hashable], ref: Sequence[Hashable], *,
             restricted: bool = True) -> float:
    """Ordering agreement: 1 - normalized edit distance; both empty scores 1."""
    if not gen and not ref:
        return 1.0
    return 1.0 - dld(gen, ref, restricted=restricted) / max(len(gen), len(ref))


def cs_scores(gen: Sequence[RecordRef], ref: Sequence[RecordRef],
              drop_name_city_date: bool = False) -> CsResult:
    """Content-selection precision/recall over record multisets."""
    if drop_name_city_date:
        gen = [r for r in gen if r.type not in PLAN_FILTER_TYPES]
        ref = [r for r in ref if r.type not in PLAN_FILTER_TYPES]
    if not gen:
        return CsResult(0.0, 0.0, 0.0, empty_generated=True)
    overlap = sum((Counter(gen) & Counter(ref)).values())
    p = overlap / len(gen)
    r = overlap / len(ref) if ref else 0.0
    return CsResult(p, r, _f1(p, r))


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
         max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights and brevity penalty, no smoothing."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference corpora differ in length")
    if not candidates:
        return 0.0
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(candidates, references):
            cg = _ngrams(cand, n)
            rg = _ngrams(ref, n)
            matched += sum((cg & rg).values())
            total += sum(cg.values())
        if matched == 0 or total == 0:
            return 0.0
        log_sum += log(matched / total)
    bp = 1.0 if cand_len > ref_len else exp(1.0 - ref_len / cand_len)
    return bp * exp(log_sum / max_n)
