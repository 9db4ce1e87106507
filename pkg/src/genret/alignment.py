"""Staged-curriculum corpora, staged training, and DPO business alignment."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, render_description
from .prompting import BehaviorEvent, InterestSummary, UserProfile, augment, filter_events
from .scorer import NeuralScorer, NgramScorer, ScorerContext, ScorerError, tokenize_text
from .sid import SemanticId

STAGES = ("explicit", "implicit", "main")


class AlignmentError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusPair:
    prompt: str
    response: str
    stage: str
    bucket: tuple = ()
    user_id: str = ""


@dataclass(frozen=True)
class PreferenceTriplet:
    user: ScorerContext
    high_ad: SemanticId
    low_ad: SemanticId


def make_bucket(profile: UserProfile, summary: InterestSummary, events) -> tuple:
    """Compact n-gram context: age band, gender, top interest, last ad's
    level-1 code."""
    top_cat = summary.entries[0][0] if summary.entries else ""
    last_ad_code = -1
    for e in reversed(list(events)):
        if e.domain == "ad" and e.sid is not None:
            last_ad_code = e.sid.codes[0]
            break
    return (profile.age // 10, profile.gender, top_cat, last_ad_code)


def compact_context(profile: UserProfile, summary: InterestSummary, events,
                    history_ads: int = 8) -> ScorerContext:
    """Feature-view context: interest categories plus recent ad S-ID tokens."""
    tokens: list[str] = [f"cat:{c}" for c, _ in summary.entries[:3]]
    ad_events = [e for e in events if e.domain == "ad" and e.sid is not None]
    for e in ad_events[-history_ads:]:
        tokens.extend(e.sid.tokens())
    return ScorerContext(tokens=tuple(tokens), bucket=make_bucket(profile, summary, events))


def explicit_pairs(catalog: Catalog, sids: dict[str, SemanticId]) -> list[CorpusPair]:
    """One description -> S-ID pair per catalog ad."""
    pairs = []
    for ad in catalog:
        if ad.ad_id not in sids:
            raise AlignmentError(f"ad {ad.ad_id!r} has no assigned S-ID")
        prompt = (
            f'Given the ad\'s detailed description "{render_description(ad)}", '
            f"what is the corresponding ad?"
        )
        pairs.append(CorpusPair(prompt=prompt, response=sids[ad.ad_id].render(),
                                stage="explicit"))
    return pairs


def build_training_corpus(catalog: Catalog, sids: dict[str, SemanticId],
                          prompt_samples, stage: str) -> list[CorpusPair]:
    """Wrap one stage's material as corpus pairs.

    explicit ignores prompt_samples; implicit expects samples rendered with
    ad titles in place of S-IDs; main expects S-ID-history samples.
    """
    if stage not in STAGES:
        raise AlignmentError(f"unknown stage {stage!r}")
    if stage == "explicit":
        return explicit_pairs(catalog, sids)
    pairs = []
    for s in prompt_samples or []:
        SemanticId.parse(s.response)  # response must parse as a valid S-ID
        pairs.append(CorpusPair(prompt=s.prompt, response=s.response,
                                stage=stage, user_id=s.user_id))
    return pairs


def build_stage_corpora(catalog: Catalog, sids, profiles, events_by_user,
                        template_ids=(0,), strategies=("reuse",),
                        token_budget: int = 2096, seed: int = 0,
                        window_days: int = 90) -> dict[str, list[CorpusPair]]:
    """Build the explicit/implicit/main corpora from structured user data."""
    corpora: dict[str, list[CorpusPair]] = {s: [] for s in STAGES}
    corpora["explicit"] = explicit_pairs(catalog, sids)
    for uid in sorted(events_by_user):
        profile = profiles[uid]
        events = filter_events(events_by_user[uid], window_days)
        summary = summary_from_events(events_by_user[uid], catalog)
        bucket = make_bucket(profile, summary, events)
        for stage, use_sid in (("implicit", False), ("main", True)):
            samples = augment(events, profile, summary, uid, template_ids,
                              strategies, token_budget, seed, use_sid=use_sid)
            for s in samples:
                corpora[stage].append(CorpusPair(
                    prompt=s.prompt, response=s.response, stage=stage,
                    bucket=bucket, user_id=uid))
    return corpora


def summary_from_events(events, catalog: Catalog) -> InterestSummary:
    """Interaction counts per category; negative feedback folds into counts."""
    counts: dict[str, int] = {}
    for e in events:
        cat = None
        if e.domain == "ad" and e.ad_id is not None and e.ad_id in catalog:
            cat = catalog.get(e.ad_id).first_category
        elif e.domain == "content" and e.title:
            cat = e.title.split()[0]
        if cat:
            counts[cat] = counts.get(cat, 0) + 1
    return InterestSummary(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def _pair_to_sample(pair: CorpusPair, compact: bool = True):
    if compact and pair.stage == "main":
        # keep only S-ID and category tokens from the rendered prompt
        toks = [t for t in tokenize_text(pair.prompt)
                if "_" in t or t.startswith("cat:")]
        context = ScorerContext(tokens=tuple(toks), bucket=pair.bucket)
    else:
        context = ScorerContext(tokens=tuple(tokenize_text(pair.prompt)),
                                bucket=pair.bucket)
    response = list(SemanticId.parse(pair.response).tokens())
    return context, response


def train_staged(scorer, corpora: dict[str, list[CorpusPair]],
                 order=STAGES, stage_weights=None, epochs_per_stage=None,
                 learning_rate: float = 0.05, seed: int = 0):
    """Consume stage corpora strictly in the configured order.

    NgramScorer accumulates weighted counts; NeuralScorer runs gradient
    epochs per stage. Returns (scorer, stage_log).
    """
    stage_log = []
    rng = np.random.default_rng(seed)
    for stage in order:
        pairs = corpora.get(stage, [])
        if not pairs:
            stage_log.append({"stage": stage, "pairs": 0})
            continue
        samples = [_pair_to_sample(p) for p in pairs]
        if isinstance(scorer, NgramScorer):
            weight = (stage_weights or {}).get(stage, 1.0)
            scorer.train(samples, weight=weight)
            stage_log.append({"stage": stage, "pairs": len(pairs), "weight": weight})
        elif isinstance(scorer, NeuralScorer):
            epochs = (epochs_per_stage or {}).get(stage, 3)
            for _ in range(epochs):
                idx = rng.permutation(len(samples))
                for i in idx:
                    context, response = samples[i]
                    _, grads = scorer.cross_entropy_and_grad(context, response)
                    scorer.apply_grads(grads, learning_rate)
            stage_log.append({"stage": stage, "pairs": len(pairs), "epochs": epochs})
        else:
            raise AlignmentError(f"unsupported scorer type {type(scorer).__name__}")
    return scorer, stage_log


def build_preference_triplets(candidates_by_user: dict) -> list[PreferenceTriplet]:
    """candidates_by_user: user ScorerContext (or id->context) mapped to a
    list of (SemanticId, ecpm). One triplet per unordered pair with a strict
    ECPM inequality; equal-ECPM pairs are skipped."""
    triplets = []
    for user, candidates in candidates_by_user.items():
        context = user if isinstance(user, ScorerContext) else ScorerContext()
        for (sid_a, ecpm_a), (sid_b, ecpm_b) in itertools.combinations(candidates, 2):
            if ecpm_a == ecpm_b:
                continue
            high, low = (sid_a, sid_b) if ecpm_a > ecpm_b else (sid_b, sid_a)
            triplets.append(PreferenceTriplet(user=context, high_ad=high, low_ad=low))
    return triplets


def dpo_loss(policy: NeuralScorer, reference: NeuralScorer,
             triplet: PreferenceTriplet, beta: float = 0.1,
             variant: str = "log-ratio"):
    """DPO loss for one triplet with exact parameter gradients.

    prob-ratio uses raw sequence-probability ratios inside the sigmoid;
    log-ratio is the standard log-probability-ratio form.
    """
    ctx = triplet.user
    toks_h = list(triplet.high_ad.tokens())
    toks_l = list(triplet.low_ad.tokens())
    logp_h, grad_h = policy.seq_logprob_and_grad(ctx, toks_h)
    logp_l, grad_l = policy.seq_logprob_and_grad(ctx, toks_l)
    ref_h = reference.seq_logprob(ctx, toks_h)
    ref_l = reference.seq_logprob(ctx, toks_l)
    if not (math.isfinite(ref_h) and math.isfinite(ref_l)):
        raise AlignmentError("degenerate reference: zero sequence probability")

    if variant == "prob-ratio":
        rho_h = math.exp(logp_h - ref_h)
        rho_l = math.exp(logp_l - ref_l)
        inner = beta * (rho_h - rho_l)
        coef_h, coef_l = beta * rho_h, beta * rho_l
    elif variant == "log-ratio":
        inner = beta * ((logp_h - ref_h) - (logp_l - ref_l))
        coef_h, coef_l = beta, beta
    else:
        raise AlignmentError(f"unknown DPO variant {variant!r}")

    # loss = -log sigmoid(inner) = softplus(-inner)
    loss = math.log1p(math.exp(-abs(inner))) + max(-inner, 0.0)
    d_inner = -1.0 / (1.0 + math.exp(inner))  # -sigmoid(-inner)
    grads = {k: d_inner * (coef_h * grad_h[k] - coef_l * grad_l[k])
             for k in grad_h}
    return loss, grads


def preference_margin(policy: NeuralScorer, triplets) -> float:
    """Mean of log pi(a_h|u) - log pi(a_l|u) over the batch."""
    margins = [
        policy.seq_logprob(t.user, list(t.high_ad.tokens()))
        - policy.seq_logprob(t.user, list(t.low_ad.tokens()))
        for t in triplets
    ]
    return float(np.mean(margins)) if margins else 0.0


def dpo_update(policy: NeuralScorer, reference: NeuralScorer, triplets,
               beta: float = 0.1, learning_rate: float = 0.01, steps: int = 1,
               variant: str = "log-ratio"):
    """Batch gradient steps on the mean DPO loss; reference stays frozen.

    Returns (policy, mean_loss_per_step)."""
    losses = []
    for step in range(steps):
        if not triplets:
            losses.append(0.0)
            continue
        total = policy.zero_grads()
        loss_sum = 0.0
        for t in triplets:
            loss, grads = dpo_loss(policy, reference, t, beta, variant)
            loss_sum += loss
            for k in total:
                total[k] += grads[k] / len(triplets)
        mean_loss = loss_sum / len(triplets)
        if not math.isfinite(mean_loss):
            raise AlignmentError(f"non-finite DPO loss at step {step}")
        policy.apply_grads(total, learning_rate)
        losses.append(mean_loss)
    return policy, losses


def save_corpus(pairs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "prompt": p.prompt, "response": p.response, "stage": p.stage,
                "bucket": list(p.bucket), "user_id": p.user_id,
            }, ensure_ascii=False) + "\n")


def load_corpus(path) -> list[CorpusPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            pairs.append(CorpusPair(
                prompt=obj["prompt"], response=obj["response"],
                stage=obj["stage"], bucket=tuple(obj.get("bucket", ())),
                user_id=obj.get("user_id", "")))
    return pairs
