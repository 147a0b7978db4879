"""Attention blocks: dense masked multi-head, banded local, and global-local.

The banded long-to-long path evaluates scores only for key positions inside
each query's clipped window, so its cost is linear in sequence length for a
fixed radius. A module-level counter tracks how many (query, key) score
entries each call actually evaluates, per attention part, which lets tests
pin the sparse paths to their closed-form pattern sizes. Head count is a
constant factor and is excluded from the counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    MASK_NEG,
    Tensor,
    add,
    add_const,
    apply_op,
    bias_at,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    narrow,
    scale,
    softmax,
    transpose,
)

LABEL_MEMBER_OFFSET = 1   # label index 2*max_distance + 1: token belongs to the sentence
LABEL_OTHER_OFFSET = 2    # label index 2*max_distance + 2: any other long/global pair
NO_GLOBAL = -1            # sentinel sentence id for tokens past the global budget


class ScoreCounter:
    """Counts evaluated attention-score entries, keyed by attention part."""

    def __init__(self) -> None:
        self.counts: dict[str, int] = {}

    def add(self, part: str, n: int) -> None:
        self.counts[part] = self.counts.get(part, 0) + int(n)

    def get(self, part: str) -> int:
        return self.counts.get(part, 0)

    def reset(self) -> None:
        self.counts.clear()


score_counter = ScoreCounter()


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and sparsity settings shared by all attention calls of a model.

    ``max_distance`` bounds the clipped relative offsets; the two structural
    labels used by long/global links sit right after the 2*max_distance + 1
    positional labels, so the vocabulary must leave room for them.
    """

    num_heads: int
    model_dim: int
    local_radius: int
    relpos_vocab_size: int
    max_distance: int

    def __post_init__(self) -> None:
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.relpos_vocab_size < 3:
            raise ValueError("relpos_vocab_size must be at least 3")
        if self.local_radius < 0:
            raise ValueError("local_radius must be non-negative")
        if self.max_distance < 1:
            raise ValueError("max_distance must be at least 1")
        if 2 * self.max_distance + 3 > self.relpos_vocab_size:
            raise ValueError(
                f"relpos vocabulary {self.relpos_vocab_size} too small for "
                f"max_distance {self.max_distance} plus 2 structural labels"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def member_label(self) -> int:
        return 2 * self.max_distance + LABEL_MEMBER_OFFSET

    @property
    def other_label(self) -> int:
        return 2 * self.max_distance + LABEL_OTHER_OFFSET


class AttentionMask:
    """Boolean allowed-pairs matrix; rows with no allowed key are rejected."""

    def __init__(self, allowed: np.ndarray):
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {allowed.shape}")
        dead = np.flatnonzero(~allowed.any(axis=1))
        if dead.size:
            raise ValueError(f"mask query row {int(dead[0])} has no allowed keys")
        self.allowed = allowed

    @property
    def shape(self) -> tuple[int, ...]:
        return self.allowed.shape

    def popcount(self) -> int:
        return int(self.allowed.sum())


class RelPosLabels:
    """Integer label per (query, key) pair; masked pairs may hold any value."""

    def __init__(self, label: np.ndarray):
        label = np.asarray(label, dtype=np.int64)
        if label.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {label.shape}")
        if label.size and label.min() < 0:
            raise ValueError("labels must be non-negative")
        self.label = label


def relative_position_bucket(i: int, j: int, max_distance: int) -> int:
    """Label id for the clipped offset j - i, mapped into [0, 2*max_distance]."""
    if max_distance < 1:
        raise ValueError("max_distance must be at least 1")
    off = max(-max_distance, min(max_distance, j - i))
    return off + max_distance


def bucket_matrix(q_pos: np.ndarray, k_pos: np.ndarray, max_distance: int) -> np.ndarray:
    off = np.asarray(k_pos)[None, :] - np.asarray(q_pos)[:, None]
    return np.clip(off, -max_distance, max_distance) + max_distance


def local_attention_mask(n: int, radius: int) -> AttentionMask:
    if n < 1:
        raise ValueError("sequence length must be at least 1")
    idx = np.arange(n)
    return AttentionMask(np.abs(idx[:, None] - idx[None, :]) <= radius)


def banded_pair_count(n: int, radius: int) -> int:
    """Closed-form number of (i, j) pairs with |i - j| <= radius."""
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius, n - 1)
    return int((hi - lo + 1).sum())


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class MhaParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    relpos: Tensor | None = None  # [relpos_vocab_size x num_heads] bias table

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
        }
        if self.relpos is not None:
            out[f"{prefix}.relpos"] = self.relpos
        return out


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
        }


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


def init_mha(rng: np.random.Generator, dim: int, std: float,
             relpos_vocab: int | None = None, num_heads: int = 1) -> MhaParams:
    def w() -> Tensor:
        return Tensor(rng.normal(0.0, std, size=(dim, dim)), requires_grad=True)

    def b() -> Tensor:
        return Tensor(np.zeros(dim), requires_grad=True)

    relpos = None
    if relpos_vocab is not None:
        relpos = Tensor(rng.normal(0.0, std, size=(relpos_vocab, num_heads)),
                        requires_grad=True)
    return MhaParams(w(), b(), w(), b(), w(), b(), w(), b(), relpos)


def init_ffn(rng: np.random.Generator, dim: int, hidden: int, std: float) -> FfnParams:
    return FfnParams(
        Tensor(rng.normal(0.0, std, size=(dim, hidden)), requires_grad=True),
        Tensor(np.zeros(hidden), requires_grad=True),
        Tensor(rng.normal(0.0, std, size=(hidden, dim)), requires_grad=True),
        Tensor(np.zeros(dim), requires_grad=True),
    )


def init_layer_norm(dim: int) -> LayerNormParams:
    return LayerNormParams(
        Tensor(np.ones(dim), requires_grad=True),
        Tensor(np.zeros(dim), requires_grad=True),
    )


def feed_forward(x: Tensor, p: FfnParams) -> Tensor:
    return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2)


# ---------------------------------------------------------------------------
# dense multi-head attention
# ---------------------------------------------------------------------------


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                         mask: AttentionMask | np.ndarray,
                         params: MhaParams, num_heads: int,
                         labels: RelPosLabels | None = None) -> Tensor:
    """Masked scaled dot-product attention with optional relative-position bias.

    Inputs are [len x dim] or batched [... x len x dim]; the mask must
    broadcast to the score shape and every query row must keep at least one
    allowed key. Masked pairs receive a large negative additive term before
    the softmax, which underflows to an exact zero weight.
    """
    dim = q_in.shape[-1]
    if dim % num_heads != 0:
        raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
    dh = dim // num_heads
    q_len = q_in.shape[-2]
    k_len = k_in.shape[-2]

    if isinstance(mask, AttentionMask):
        allowed = mask.allowed
    else:
        allowed = np.asarray(mask, dtype=bool)
        rows = allowed.reshape(-1, allowed.shape[-1])
        if not rows.any(axis=1).all():
            raise ValueError("mask contains a query row with no allowed keys")
    if allowed.shape[-2:] != (q_len, k_len):
        raise ValueError(f"mask shape {allowed.shape} does not end in ({q_len}, {k_len})")

    batch = int(np.prod(q_in.shape[:-2], dtype=np.int64)) if q_in.data.ndim > 2 else 1
    score_counter.add("dense", batch * q_len * k_len)

    score_shape = q_in.shape[:-2] + (q_len, k_len)
    additive = np.where(np.broadcast_to(allowed, score_shape), 0.0, MASK_NEG)

    q = linear(q_in, params.wq, params.bq)
    k = linear(k_in, params.wk, params.bk)
    v = linear(v_in, params.wv, params.bv)

    heads = []
    for h in range(num_heads):
        qh = narrow(q, -1, h * dh, dh)
        kh = narrow(k, -1, h * dh, dh)
        vh = narrow(v, -1, h * dh, dh)
        s = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
        if labels is not None:
            if params.relpos is None:
                raise ValueError("labels given but params carry no relpos table")
            if labels.label.shape != (q_len, k_len):
                raise ValueError(
                    f"labels shape {labels.label.shape} != ({q_len}, {k_len})"
                )
            bias = bias_at(params.relpos, np.broadcast_to(labels.label, score_shape),
                           h)
            s = add(s, bias)
        s = add_const(s, additive)
        a = softmax(s, axis=-1)
        heads.append(matmul(a, vh))
    return linear(concat(heads, axis=-1), params.wo, params.bo)


# ---------------------------------------------------------------------------
# banded (local-window) attention primitives
# ---------------------------------------------------------------------------


@dataclass
class BandPattern:
    """Precomputed valid (query, key) pairs of a clipped local window.

    ``ii``/``jj`` index the long sequence and ``ww`` is the window slot
    j - i + radius. Pairs touching inactive (padding) positions are dropped
    at construction, so downstream ops never evaluate them. When every row
    owns at least one pair, segment boundaries for both pair orders are
    precomputed so the banded ops can use contiguous-segment reductions
    instead of scattered accumulation.
    """

    length: int
    radius: int
    ii: np.ndarray
    jj: np.ndarray
    ww: np.ndarray
    i_starts: np.ndarray | None = None
    j_order: np.ndarray | None = None
    j_starts: np.ndarray | None = None

    def __post_init__(self) -> None:
        counts = np.bincount(self.ii, minlength=self.length)
        if self.count and counts.min() > 0:
            self.i_starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            self.j_order = np.argsort(self.jj, kind="stable")
            jcounts = np.bincount(self.jj, minlength=self.length)
            self.j_starts = np.concatenate(([0], np.cumsum(jcounts)[:-1]))

    @property
    def width(self) -> int:
        return 2 * self.radius + 1

    @property
    def count(self) -> int:
        return int(self.ii.size)


def band_pattern(length: int, radius: int, active: np.ndarray | None = None) -> BandPattern:
    offs = np.arange(-radius, radius + 1)
    ii = np.repeat(np.arange(length), offs.size)
    jj = ii + np.tile(offs, length)
    keep = (jj >= 0) & (jj < length)
    if active is not None:
        act = np.asarray(active, dtype=bool)
        keep &= act[ii] & act[np.clip(jj, 0, length - 1)]
    ii, jj = ii[keep], jj[keep]
    return BandPattern(length, radius, ii, jj, jj - ii + radius)


def band_pattern_for_positions(positions: np.ndarray, radius: int) -> BandPattern:
    """Band pattern over a compacted stream.

    ``positions`` are the original (strictly increasing) sequence positions
    of the rows that remain after dropping padding; window membership and
    slot offsets are judged on those original positions, so compaction does
    not change which pairs attend or their relative-position labels.
    """
    pos = np.asarray(positions, dtype=np.int64)
    n = pos.size
    lo = np.searchsorted(pos, pos - radius, side="left")
    hi = np.searchsorted(pos, pos + radius, side="right")
    counts = hi - lo
    ii = np.repeat(np.arange(n), counts)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    jj = np.repeat(lo, counts) + (np.arange(int(counts.sum()))
                                  - np.repeat(starts, counts))
    return BandPattern(n, radius, ii, jj, pos[jj] - pos[ii] + radius)


def _segment_sum_i(pat: BandPattern, per_pair: np.ndarray) -> np.ndarray:
    """Sum pair values into query rows (pairs are stored query-major)."""
    if pat.i_starts is not None:
        return np.add.reduceat(per_pair, pat.i_starts, axis=0)
    out = np.zeros((pat.length, per_pair.shape[1]))
    np.add.at(out, pat.ii, per_pair)
    return out


def _segment_sum_j(pat: BandPattern, per_pair: np.ndarray) -> np.ndarray:
    """Sum pair values into key rows via the precomputed key-major order."""
    if pat.j_starts is not None:
        return np.add.reduceat(per_pair[pat.j_order], pat.j_starts, axis=0)
    out = np.zeros((pat.length, per_pair.shape[1]))
    np.add.at(out, pat.jj, per_pair)
    return out


def banded_scores(q: Tensor, k: Tensor, pat: BandPattern) -> Tensor:
    """Windowed scores laid out [len x (2r+1)]; absent slots hold the mask value."""
    if q.shape != k.shape or q.data.ndim != 2 or q.shape[0] != pat.length:
        raise ValueError(f"banded_scores got shapes {q.shape}, {k.shape}")
    qd, kd = q.data, k.data
    buf = np.full((pat.length, pat.width), MASK_NEG)
    buf[pat.ii, pat.ww] = np.einsum("nd,nd->n", qd[pat.ii], kd[pat.jj])

    def back(g, accum):
        gpairs = g[pat.ii, pat.ww][:, None]
        accum(q, _segment_sum_i(pat, gpairs * kd[pat.jj]))
        accum(k, _segment_sum_j(pat, gpairs * qd[pat.ii]))

    return apply_op(buf, (q, k), back, what="banded_scores")


def banded_apply(weights: Tensor, v: Tensor, pat: BandPattern) -> Tensor:
    """Weighted sum of windowed values: out[i] = sum_w weights[i, w] * v[j(i, w)]."""
    if weights.shape != (pat.length, pat.width) or v.shape[0] != pat.length:
        raise ValueError(f"banded_apply got shapes {weights.shape}, {v.shape}")
    wd, vd = weights.data, v.data
    out = _segment_sum_i(pat, wd[pat.ii, pat.ww][:, None] * vd[pat.jj])

    def back(g, accum):
        gw = np.zeros_like(wd)
        gw[pat.ii, pat.ww] = np.einsum("nd,nd->n", g[pat.ii], vd[pat.jj])
        accum(weights, gw)
        accum(v, _segment_sum_j(pat, wd[pat.ii, pat.ww][:, None] * g[pat.ii]))

    return apply_op(out, (weights, v), back, what="banded_apply")


def band_labels(pat: BandPattern, max_distance: int) -> np.ndarray:
    """Per-slot clipped-offset labels; identical for every query row."""
    offs = np.arange(-pat.radius, pat.radius + 1)
    row = np.clip(offs, -max_distance, max_distance) + max_distance
    return np.broadcast_to(row, (pat.length, pat.width)).copy()


# ---------------------------------------------------------------------------
# global-local attention
# ---------------------------------------------------------------------------


def membership_labels(sentence_id: np.ndarray, n_global: int,
                      cfg: AttentionConfig) -> np.ndarray:
    """[long x global] labels: belongs-to-sentence vs other."""
    member = sentence_id[:, None] == np.arange(n_global)[None, :]
    return np.where(member, cfg.member_label, cfg.other_label)


def glocal_attention(long: Tensor, glob: Tensor, sentence_id: np.ndarray,
                     params: MhaParams, cfg: AttentionConfig, *,
                     long_active: np.ndarray | None = None,
                     enable_long_global: bool = True,
                     pattern: BandPattern | None = None) -> tuple[Tensor, Tensor]:
    """Raw four-part attention over a (long, global) pair of streams.

    Long rows attend to their clipped local window plus every global token;
    global rows attend to all global and all active long tokens. Projection
    matrices are shared across all four parts; the parts differ only in
    their sparsity pattern and relative-position labels. Returns the two
    output-projected attention results, before any residual wiring.

    ``long_active`` marks real (non-padding) long positions; inactive rows
    are excluded from every pattern, so they receive no gradient and
    contribute to no other row. ``enable_long_global`` exists for gradient
    reachability probes; switching it off masks the long/global links in
    both directions. ``pattern`` lets a caller that compacted the long
    stream supply the band over original positions.
    """
    if glob.shape[0] == 0:
        raise ValueError("at least one global token is required")
    L = long.shape[0]
    G = glob.shape[0]
    dim = long.shape[1]
    if glob.shape[1] != dim:
        raise ValueError(f"stream dims disagree: {long.shape} vs {glob.shape}")
    sentence_id = np.asarray(sentence_id)
    if sentence_id.shape != (L,):
        raise ValueError(f"sentence_id shape {sentence_id.shape} != ({L},)")
    if sentence_id.max(initial=NO_GLOBAL) >= G:
        raise ValueError("sentence_id references a global token past the last one")
    if params.relpos is None:
        raise ValueError("global-local attention requires a relpos table")

    active = (np.ones(L, dtype=bool) if long_active is None
              else np.asarray(long_active, dtype=bool))

    pat = pattern if pattern is not None else band_pattern(L, cfg.local_radius, active)
    score_counter.add("long_to_long", pat.count)
    n_active = int(active.sum())
    if enable_long_global:
        score_counter.add("long_to_global", n_active * G)
        score_counter.add("global", G * G + G * n_active)
    else:
        score_counter.add("global", G * G)

    dh = cfg.head_dim
    inv_sqrt = 1.0 / math.sqrt(dh)

    ql = linear(long, params.wq, params.bq)
    kl = linear(long, params.wk, params.bk)
    vl = linear(long, params.wv, params.bv)
    qg = linear(glob, params.wq, params.bq)
    kg = linear(glob, params.wk, params.bk)
    vg = linear(glob, params.wv, params.bv)

    l2g_labels = membership_labels(sentence_id, G, cfg)
    g2l_labels = l2g_labels.T
    g2g_labels = bucket_matrix(np.arange(G), np.arange(G), cfg.max_distance)
    lband_labels = band_labels(pat, cfg.max_distance)

    # additive masks (0 where allowed)
    l2g_add = np.where(active[:, None] & enable_long_global, 0.0, MASK_NEG)
    l2g_add = np.broadcast_to(l2g_add, (L, G)).copy()
    g2l_add = np.where(active[None, :] & enable_long_global, 0.0, MASK_NEG)
    g2l_add = np.broadcast_to(g2l_add, (G, L)).copy()

    long_heads = []
    glob_heads = []
    for h in range(cfg.num_heads):
        qlh = narrow(ql, -1, h * dh, dh)
        klh = narrow(kl, -1, h * dh, dh)
        vlh = narrow(vl, -1, h * dh, dh)
        qgh = narrow(qg, -1, h * dh, dh)
        kgh = narrow(kg, -1, h * dh, dh)
        vgh = narrow(vg, -1, h * dh, dh)

        # long stream: [band | globals] share one softmax per query row
        s_band = scale(banded_scores(qlh, klh, pat), inv_sqrt)
        s_band = add(s_band, bias_at(params.relpos, lband_labels, h))
        s_l2g = scale(matmul(qlh, transpose(kgh)), inv_sqrt)
        s_l2g = add(s_l2g, bias_at(params.relpos, l2g_labels, h))
        s_l2g = add_const(s_l2g, l2g_add)
        a = softmax(concat([s_band, s_l2g], axis=1), axis=-1)
        out_band = banded_apply(narrow(a, 1, 0, pat.width), vlh, pat)
        out_l2g = matmul(narrow(a, 1, pat.width, G), vgh)
        long_heads.append(add(out_band, out_l2g))

        # global stream: [globals | long] share one softmax per query row
        s_g2g = scale(matmul(qgh, transpose(kgh)), inv_sqrt)
        s_g2g = add(s_g2g, bias_at(params.relpos, g2g_labels, h))
        s_g2l = scale(matmul(qgh, transpose(klh)), inv_sqrt)
        s_g2l = add(s_g2l, bias_at(params.relpos, g2l_labels, h))
        s_g2l = add_const(s_g2l, g2l_add)
        ag = softmax(concat([s_g2g, s_g2l], axis=1), axis=-1)
        out_g2g = matmul(narrow(ag, 1, 0, G), vgh)
        out_g2l = matmul(narrow(ag, 1, G, L), vlh)
        glob_heads.append(add(out_g2g, out_g2l))

    long_out = linear(concat(long_heads, axis=-1), params.wo, params.bo)
    glob_out = linear(concat(glob_heads, axis=-1), params.wo, params.bo)
    return long_out, glob_out


@dataclass
class GlocalLayerParams:
    attn: MhaParams
    ln_attn: LayerNormParams
    ffn: FfnParams
    ln_ffn: LayerNormParams

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.attn.named(f"{prefix}.attn"))
        out.update(self.ln_attn.named(f"{prefix}.ln_attn"))
        out.update(self.ffn.named(f"{prefix}.ffn"))
        out.update(self.ln_ffn.named(f"{prefix}.ln_ffn"))
        return out


def init_glocal_layer(rng: np.random.Generator, cfg: AttentionConfig,
                      ffn_dim: int, std: float) -> GlocalLayerParams:
    return GlocalLayerParams(
        attn=init_mha(rng, cfg.model_dim, std, cfg.relpos_vocab_size, cfg.num_heads),
        ln_attn=init_layer_norm(cfg.model_dim),
        ffn=init_ffn(rng, cfg.model_dim, ffn_dim, std),
        ln_ffn=init_layer_norm(cfg.model_dim),
    )


def etc_global_local_attention(long: Tensor, glob: Tensor, sentence_id: np.ndarray,
                               params: GlocalLayerParams, cfg: AttentionConfig, *,
                               long_active: np.ndarray | None = None,
                               enable_long_global: bool = True,
                               pattern: BandPattern | None = None,
                               ln_eps: float = 1e-6) -> tuple[Tensor, Tensor]:
    """One full global-local layer: attention, residuals, norms, feed-forward."""
    attn_l, attn_g = glocal_attention(
        long, glob, sentence_id, params.attn, cfg,
        long_active=long_active, enable_long_global=enable_long_global,
        pattern=pattern,
    )
    long_mid = layer_norm(add(long, attn_l), params.ln_attn.gain,
                          params.ln_attn.bias, ln_eps)
    glob_mid = layer_norm(add(glob, attn_g), params.ln_attn.gain,
                          params.ln_attn.bias, ln_eps)
    long_out = layer_norm(add(long_mid, feed_forward(long_mid, params.ffn)),
                          params.ln_ffn.gain, params.ln_ffn.bias, ln_eps)
    glob_out = layer_norm(add(glob_mid, feed_forward(glob_mid, params.ffn)),
                          params.ln_ffn.gain, params.ln_ffn.bias, ln_eps)
    return long_out, glob_out
