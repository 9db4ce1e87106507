"""Next-token scorers over the S-ID vocabulary.

Two implementations of the same contract: a count-based interpolated n-gram
scorer (deterministic, no gradients) and a small neural scorer with exact
analytic gradients used for preference optimization.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .vocab import Vocabulary

_WORD_RE = re.compile(r"<[^>\s]+>|\w+|[^\w\s]")


class ScorerError(RuntimeError):
    pass


def tokenize_text(text: str) -> list[str]:
    """Whitespace/punctuation tokenization keeping <...> markers whole."""
    return _WORD_RE.findall(text)


@dataclass(frozen=True)
class ScorerContext:
    tokens: tuple[str, ...] = ()
    bucket: tuple = ()

    @classmethod
    def from_prompt(cls, prompt: str, bucket: tuple = ()) -> "ScorerContext":
        return cls(tokens=tuple(tokenize_text(prompt)), bucket=bucket)


class NgramScorer:
    """Interpolated additive-smoothed count model.

    Counts are keyed by (context bucket, trailing prefix window); orders 0..N
    are mixed with fixed interpolation weights. Every distribution is exact
    over the full vocabulary and sums to 1.
    """

    def __init__(self, vocab: Vocabulary, smoothing_alpha: float = 0.1,
                 max_order: int = 2, interpolation: tuple[float, ...] | None = None):
        if smoothing_alpha <= 0:
            raise ScorerError("smoothing_alpha must be positive")
        self.vocab = vocab
        self.smoothing_alpha = smoothing_alpha
        self.max_order = max_order
        if interpolation is None:
            interpolation = tuple(2.0**o for o in range(max_order + 1))
        total = sum(interpolation)
        self.interpolation = tuple(w / total for w in interpolation)
        # (bucket, window) -> {token_id: count}
        self.counts: dict[tuple, dict[int, float]] = {}
        self.totals: dict[tuple, float] = {}

    def observe(self, bucket: tuple, prefix_tokens, next_token: str, weight: float = 1.0):
        tid = self.vocab.lookup(next_token)
        ids = tuple(self.vocab.lookup(t) for t in prefix_tokens)
        for order in range(self.max_order + 1):
            window = ids[len(ids) - order:] if order else ()
            key = (bucket, window)
            slot = self.counts.setdefault(key, {})
            slot[tid] = slot.get(tid, 0.0) + weight
            self.totals[key] = self.totals.get(key, 0.0) + weight

    def train(self, samples, weight: float = 1.0):
        """samples: iterable of (ScorerContext, response token list)."""
        for context, response in samples:
            for i, tok in enumerate(response):
                self.observe(context.bucket, response[:i], tok, weight)

    def prob_dist(self, context: ScorerContext, prefix_tokens) -> np.ndarray:
        v = len(self.vocab)
        alpha = self.smoothing_alpha
        ids = tuple(self.vocab.lookup(t) for t in prefix_tokens)
        dist = np.zeros(v)
        for order, w in enumerate(self.interpolation):
            window = ids[len(ids) - order:] if order else ()
            key = (context.bucket, window)
            counts = self.counts.get(key)
            total = self.totals.get(key, 0.0)
            component = np.full(v, alpha / (total + alpha * v))
            if counts:
                for tid, c in counts.items():
                    component[tid] += c / (total + alpha * v)
            dist += w * component
        return dist

    def save(self, path):
        payload = {
            "kind": "ngram",
            "version": 1,
            "smoothing_alpha": self.smoothing_alpha,
            "max_order": self.max_order,
            "interpolation": list(self.interpolation),
            "tokens": self.vocab.tokens,
            "counts": [
                [list(bucket), list(window), [[t, c] for t, c in slot.items()]]
                for (bucket, window), slot in self.counts.items()
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "NgramScorer":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("kind") != "ngram":
            raise ScorerError(f"not an ngram scorer snapshot: {path}")
        vocab = Vocabulary(
            id_of={t: i for i, t in enumerate(payload["tokens"])},
            tokens=payload["tokens"],
        )
        scorer = cls(
            vocab,
            payload["smoothing_alpha"],
            payload["max_order"],
            tuple(payload["interpolation"]),
        )
        for bucket, window, slot in payload["counts"]:
            key = (tuple(bucket), tuple(window))
            scorer.counts[key] = {int(t): float(c) for t, c in slot}
            scorer.totals[key] = sum(scorer.counts[key].values())
        return scorer


@dataclass
class NeuralScorer:
    """Tiny feedforward next-token model with exact analytic gradients.

    Input is the mean-pooled context embedding plus the mean-pooled prefix
    embedding plus a position (prefix length) embedding; one tanh hidden
    layer feeds a softmax over the full vocabulary.
    """

    vocab: Vocabulary
    embed_dim: int = 16
    hidden_dim: int = 32
    max_prefix: int = 8
    seed: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            rng = np.random.default_rng(self.seed)
            v, d, h = len(self.vocab), self.embed_dim, self.hidden_dim
            self.params = {
                "emb": rng.normal(0, 0.1, size=(v, d)),
                "pos": rng.normal(0, 0.1, size=(self.max_prefix + 1, d)),
                "w1": rng.normal(0, 1.0 / np.sqrt(d), size=(h, d)),
                "b1": np.zeros(h),
                "w2": rng.normal(0, 1.0 / np.sqrt(h), size=(v, h)),
                "b2": np.zeros(v),
            }

    def copy(self) -> "NeuralScorer":
        return NeuralScorer(
            vocab=self.vocab,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            max_prefix=self.max_prefix,
            seed=self.seed,
            params={k: v.copy() for k, v in self.params.items()},
        )

    def _ids(self, tokens) -> list[int]:
        return [self.vocab.lookup(t) for t in tokens]

    def _forward(self, ctx_ids, prefix_ids):
        p = self.params
        d = self.embed_dim
        pool = np.zeros(d)
        if ctx_ids:
            pool = pool + p["emb"][ctx_ids].mean(axis=0)
        if prefix_ids:
            pool = pool + p["emb"][prefix_ids].mean(axis=0)
        plen = min(len(prefix_ids), self.max_prefix)
        pool = pool + p["pos"][plen]
        pre = p["w1"] @ pool + p["b1"]
        h = np.tanh(pre)
        logits = p["w2"] @ h + p["b2"]
        logits = logits - logits.max()
        exp = np.exp(logits)
        probs = exp / exp.sum()
        return {"pool": pool, "pre": pre, "h": h, "probs": probs,
                "ctx_ids": ctx_ids, "prefix_ids": prefix_ids, "plen": plen}

    def prob_dist(self, context: ScorerContext, prefix_tokens) -> np.ndarray:
        cache = self._forward(self._ids(context.tokens), self._ids(prefix_tokens))
        return cache["probs"]

    def _backward_logits(self, cache, d_logits, grads):
        p = self.params
        grads["w2"] += np.outer(d_logits, cache["h"])
        grads["b2"] += d_logits
        d_h = p["w2"].T @ d_logits
        d_pre = d_h * (1.0 - cache["h"] ** 2)
        grads["w1"] += np.outer(d_pre, cache["pool"])
        grads["b1"] += d_pre
        d_pool = p["w1"].T @ d_pre
        ctx_ids, prefix_ids = cache["ctx_ids"], cache["prefix_ids"]
        if ctx_ids:
            share = d_pool / len(ctx_ids)
            for tid in ctx_ids:
                grads["emb"][tid] += share
        if prefix_ids:
            share = d_pool / len(prefix_ids)
            for tid in prefix_ids:
                grads["emb"][tid] += share
        grads["pos"][cache["plen"]] += d_pool

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def seq_logprob_and_grad(self, context: ScorerContext, response_tokens):
        """log P(response | context) = sum of per-step log conditionals,
        with its exact gradient."""
        ctx_ids = self._ids(context.tokens)
        resp_ids = self._ids(response_tokens)
        grads = self.zero_grads()
        logp = 0.0
        for i, tid in enumerate(resp_ids):
            cache = self._forward(ctx_ids, resp_ids[:i])
            probs = cache["probs"]
            logp += float(np.log(probs[tid]))
            d_logits = probs.copy()
            d_logits[tid] -= 1.0  # grad of -log p; negate below for log p
            self._backward_logits(cache, -d_logits, grads)
        return logp, grads

    def seq_logprob(self, context: ScorerContext, response_tokens) -> float:
        ctx_ids = self._ids(context.tokens)
        resp_ids = self._ids(response_tokens)
        logp = 0.0
        for i, tid in enumerate(resp_ids):
            cache = self._forward(ctx_ids, resp_ids[:i])
            logp += float(np.log(cache["probs"][tid]))
        return logp

    def cross_entropy_and_grad(self, context: ScorerContext, response_tokens):
        logp, grads = self.seq_logprob_and_grad(context, response_tokens)
        for g in grads.values():
            g *= -1.0
        return -logp, grads

    def apply_grads(self, grads, lr: float):
        for k in self.params:
            self.params[k] -= lr * grads[k]

    def save(self, path):
        payload = {
            "kind": "neural",
            "version": 1,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "max_prefix": self.max_prefix,
            "seed": self.seed,
            "tokens": self.vocab.tokens,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "NeuralScorer":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("kind") != "neural":
            raise ScorerError(f"not a neural scorer snapshot: {path}")
        vocab = Vocabulary(
            id_of={t: i for i, t in enumerate(payload["tokens"])},
            tokens=payload["tokens"],
        )
        return cls(
            vocab=vocab,
            embed_dim=payload["embed_dim"],
            hidden_dim=payload["hidden_dim"],
            max_prefix=payload["max_prefix"],
            seed=payload["seed"],
            params={k: np.array(v) for k, v in payload["params"].items()},
        )


def load_scorer(path):
    with open(path, encoding="utf-8") as fh:
        kind = json.load(fh).get("kind")
    if kind == "ngram":
        return NgramScorer.load(path)
    if kind == "neural":
        return NeuralScorer.load(path)
    raise ScorerError(f"unknown scorer snapshot kind {kind!r}")
