"""Trie-constrained beam search over a pluggable next-token scorer."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .sid import SemanticId, render_token
from .trie import Trie, lookup_ad


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class BeamCandidate:
    codes: tuple[int, ...]
    log_score: float

    @property
    def score(self) -> float:
        return math.exp(self.log_score)


@dataclass
class RetrievalList:
    entries: list[tuple[str, SemanticId, float]]
    beam_width: int

    def ad_ids(self) -> list[str]:
        return [ad_id for ad_id, _, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def _step_prob(scorer, context, prefix_tokens, level, codes, renormalize):
    """Per-code probabilities for the valid children at one layer."""
    dist = scorer.prob_dist(context, prefix_tokens)
    vocab = scorer.vocab
    probs = []
    for code in codes:
        p = float(dist[vocab.lookup(render_token(level, code))])
        if not math.isfinite(p) or p < 0.0:
            raise DecodeError(
                f"scorer contract violated: p={p} for token "
                f"{render_token(level, code)}"
            )
        probs.append(p)
    if renormalize:
        total = sum(probs)
        if total > 0.0:
            probs = [p / total for p in probs]
    return probs


def decode(scorer, context, trie: Trie, beam_width: int, renormalize: bool = False) -> RetrievalList:
    """Layer-by-layer beam expansion constrained to trie-valid children.

    After each layer the top beam_width candidates survive; ties break by
    higher score first, then lexicographic code sequence. Scores are
    cumulative products of per-step probabilities (log-sum internally).
    """
    if beam_width < 1:
        raise DecodeError(f"beam_width must be >= 1, got {beam_width}")
    if trie.ad_count == 0:
        raise DecodeError("empty inventory: trie holds no ads")

    beam = [BeamCandidate(codes=(), log_score=0.0)]
    node_of: dict[tuple[int, ...], object] = {(): trie.root}

    for level in range(trie.depth):
        expanded: list[BeamCandidate] = []
        next_nodes: dict[tuple[int, ...], object] = {}
        for cand in beam:
            node = node_of[cand.codes]
            codes = node.child_codes()
            if not codes:
                continue
            prefix_tokens = tuple(
                render_token(i, c) for i, c in enumerate(cand.codes)
            )
            probs = _step_prob(scorer, context, prefix_tokens, level, codes, renormalize)
            for code, p in zip(codes, probs):
                new_codes = cand.codes + (code,)
                log_p = math.log(p) if p > 0.0 else -math.inf
                expanded.append(
                    BeamCandidate(codes=new_codes, log_score=cand.log_score + log_p)
                )
                next_nodes[new_codes] = node.children[code]
        expanded.sort(key=lambda c: (-c.log_score, c.codes))
        beam = expanded[:beam_width]
        node_of = {c.codes: next_nodes[c.codes] for c in beam}

    entries = []
    for cand in beam:
        sid = SemanticId(cand.codes)
        ad_id = lookup_ad(trie, sid)
        if ad_id is None:
            continue
        entries.append((ad_id, sid, cand.score))
    return RetrievalList(entries=entries, beam_width=beam_width)


def decode_exhaustive(scorer, context, trie: Trie, renormalize: bool = False) -> RetrievalList:
    """Score every complete S-ID in the trie by exact per-step products.

    Independent oracle for decode: no pruning, full ranking.
    """
    results: list[tuple[str, SemanticId, float]] = []

    def rec(node, codes: tuple[int, ...], log_score: float):
        if node.end_of_ad is not None and len(codes) == trie.depth:
            results.append((node.end_of_ad, SemanticId(codes), math.exp(log_score)))
        child_codes = node.child_codes()
        if not child_codes:
            return
        level = len(codes)
        prefix_tokens = tuple(render_token(i, c) for i, c in enumerate(codes))
        probs = _step_prob(scorer, context, prefix_tokens, level, child_codes, renormalize)
        for code, p in zip(child_codes, probs):
            log_p = math.log(p) if p > 0.0 else -math.inf
            rec(node.children[code], codes + (code,), log_score + log_p)

    rec(trie.root, (), 0.0)
    results.sort(key=lambda e: (-e[2], e[1].codes))
    return RetrievalList(entries=results, beam_width=len(results))
