"""End-to-end reproducible pipeline with a content-hash manifest."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

from . import alignment, decoder, metrics, rqvae, synth, trie as trie_mod
from .catalog import load_catalog
from .embed import embed_catalog, load_embeddings, save_embeddings
from .prompting import load_events, load_profiles
from .scorer import NgramScorer, NeuralScorer
from .vocab import vocab_from_sids


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    out_dir: str = "pipeline_out"
    seed: int = 0
    synthetic: dict = field(default_factory=dict)
    embed_dim: int = 32
    embed_source: str = "hashed"  # or "file"
    embeddings_path: str | None = None
    rqvae: dict = field(default_factory=lambda: {
        "num_levels": 3, "codebook_size": 8, "latent_dim": 8, "epochs": 120,
    })
    scorer_kind: str = "ngram"
    stages: tuple = ("explicit", "implicit", "main")
    template_ids: tuple = (0,)
    strategies: tuple = ("reuse",)
    dpo_enabled: bool = False
    dpo_beta: float = 0.1
    dpo_variant: str = "log-ratio"
    dpo_steps: int = 20
    beam_width: int = 8
    renormalize: bool = False
    eval_k: tuple = (1, 4, 8)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        cfg = cls()
        for key, value in obj.items():
            if not hasattr(cfg, key):
                raise PipelineError("config", ValueError(f"unknown key {key!r}"))
            setattr(cfg, key, tuple(value) if isinstance(getattr(cfg, key), tuple) else value)
        return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self):
        self.entries: list[dict] = []

    def record(self, stage: str, path: str) -> None:
        self.entries.append({
            "stage": stage,
            "file": os.path.basename(path),
            "sha256": _sha256(path),
        })

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.entries, fh, indent=1)


def build_generate_fn(scorer, ad_trie, catalog, profiles, events_by_user,
                      beam_width: int, renormalize: bool = False):
    """Closure mapping a user id to an ordered retrieved ad_id list."""

    def generate(user_id: str, events=None):
        events = events_by_user.get(user_id, []) if events is None else events
        summary = alignment.summary_from_events(events, catalog)
        profile = profiles[user_id]
        context = alignment.compact_context(profile, summary, events)
        result = decoder.decode(scorer, context, ad_trie, beam_width, renormalize)
        return [(ad_id, float(score)) for ad_id, _, score in result.entries]

    return generate


def run_pipeline(config: PipelineConfig) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    manifest = Manifest()
    out = config.out_dir

    def stage(name):
        class _Stage:
            def __enter__(self):
                return None

            def __exit__(self, exc_type, exc, tb):
                if exc is not None:
                    raise PipelineError(name, exc) from exc

        return _Stage()

    with stage("gen-data"):
        spec = synth.SyntheticSpec(seed=config.seed, **config.synthetic)
        data_paths = synth.gen_data(spec, os.path.join(out, "data"))
        for p in data_paths.values():
            manifest.record("gen-data", p)
        catalog = load_catalog(data_paths["catalog"])
        profiles = load_profiles(data_paths["profiles"])
        truth = synth.load_truth(data_paths["truth"])
        ltr_labels = synth.load_ltr_labels(data_paths["ltr_labels"])

    with stage("embed"):
        if config.embed_source == "file":
            table = load_embeddings(config.embeddings_path, config.embed_dim)
        else:
            table = embed_catalog(catalog, config.embed_dim, config.seed)
        emb_path = os.path.join(out, "embeddings.tsv")
        save_embeddings(table, emb_path)
        manifest.record("embed", emb_path)

    with stage("index"):
        rq_config = rqvae.RqVaeConfig(seed=config.seed, **config.rqvae)
        model = rqvae.train(rq_config, table)
        sids = rqvae.assign_sids(model, table)
        model_path = os.path.join(out, "rqvae_model.json")
        sids_path = os.path.join(out, "sids.jsonl")
        rqvae.save_model(model, model_path)
        rqvae.save_sids(sids, sids_path)
        manifest.record("index", model_path)
        manifest.record("index", sids_path)
        collision_rate, max_collision, usage = rqvae.codebook_metrics(sids, rq_config)

    with stage("build-trie"):
        ad_trie = trie_mod.build(sids)
        trie_path = os.path.join(out, "trie.json")
        trie_mod.save_trie(ad_trie, trie_path)
        manifest.record("build-trie", trie_path)

    with stage("build-corpus"):
        events_by_user = load_events(data_paths["events"], sids)
        corpora = alignment.build_stage_corpora(
            catalog, sids, profiles, events_by_user,
            template_ids=config.template_ids, strategies=config.strategies,
            seed=config.seed)
        for name, pairs in corpora.items():
            path = os.path.join(out, f"corpus_{name}.jsonl")
            alignment.save_corpus(pairs, path)
            manifest.record("build-corpus", path)

    with stage("train"):
        vocab = vocab_from_sids(sids)
        if config.scorer_kind == "neural":
            scorer = NeuralScorer(vocab=vocab, seed=config.seed)
        else:
            scorer = NgramScorer(vocab)
        scorer, stage_log = alignment.train_staged(
            scorer, corpora, order=tuple(config.stages), seed=config.seed)
        scorer_path = os.path.join(out, "scorer.json")
        scorer.save(scorer_path)
        manifest.record("train", scorer_path)

    dpo_report = None
    if config.dpo_enabled:
        with stage("dpo"):
            policy = NeuralScorer(vocab=vocab, seed=config.seed)
            policy, _ = alignment.train_staged(
                policy, {"main": corpora["main"]}, order=("main",), seed=config.seed)
            reference = policy.copy()
            candidates = {}
            for uid, events in sorted(events_by_user.items()):
                summary = alignment.summary_from_events(events, catalog)
                context = alignment.compact_context(profiles[uid], summary, events)
                cands = []
                for e in events:
                    if e.domain == "ad" and e.ad_id in catalog and e.ad_id in sids:
                        cands.append((sids[e.ad_id], catalog.get(e.ad_id).ecpm))
                candidates[context] = cands[:4]
            triplets = alignment.build_preference_triplets(candidates)
            before = alignment.preference_margin(policy, triplets)
            policy, losses = alignment.dpo_update(
                policy, reference, triplets, config.dpo_beta,
                learning_rate=0.01, steps=config.dpo_steps,
                variant=config.dpo_variant)
            after = alignment.preference_margin(policy, triplets)
            policy_path = os.path.join(out, "dpo_policy.json")
            policy.save(policy_path)
            manifest.record("dpo", policy_path)
            dpo_report = {"triplets": len(triplets), "margin_before": before,
                          "margin_after": after}

    with stage("generate"):
        generate = build_generate_fn(scorer, ad_trie, catalog, profiles,
                                     events_by_user, config.beam_width,
                                     config.renormalize)
        results_path = os.path.join(out, "results.jsonl")
        retrieved: dict[str, list[str]] = {}
        with open(results_path, "w", encoding="utf-8") as fh:
            for uid in sorted(events_by_user):
                entries = generate(uid)
                retrieved[uid] = [ad_id for ad_id, _ in entries]
                for ad_id, score in entries:
                    fh.write(json.dumps({"user_id": uid, "ad_id": ad_id,
                                         "score": score}) + "\n")
        manifest.record("generate", results_path)

    with stage("eval"):
        cat_of = {ad.ad_id: ad.first_category for ad in catalog}
        records = [
            metrics.EvalRecord(user_id=uid, retrieved=retrieved[uid],
                               truth=truth[uid], categories=cat_of,
                               ltr_labels=ltr_labels.get(uid))
            for uid in sorted(retrieved)
        ]
        ks = tuple(config.eval_k)
        concentration, abundance, score = metrics.diversity(
            records, min(config.beam_width, max(ks)))
        ltrr_mean, ltrr_excluded = metrics.ltrr(records, max(ks))
        report = {
            "hr": {k: metrics.hit_ratio(records, k) for k in ks},
            "ndcg": {k: metrics.ndcg(records, k) for k in ks if k > 1},
            "diversity": {"concentration": concentration,
                          "abundance": abundance, "score": score},
            "ltrr": {max(ks): ltrr_mean, "excluded_users": ltrr_excluded},
            "codebook": {"collision_rate": collision_rate,
                         "max_collision": max_collision,
                         "usage_rate_per_level": usage},
            "dpo": dpo_report,
            # out_dir is a location, not content; keeping it out makes the
            # report byte-identical across runs that differ only in location
            "config": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in asdict(config).items() if k != "out_dir"},
        }
        report_path = os.path.join(out, "report.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
        manifest.record("eval", report_path)

    manifest.save(os.path.join(out, "manifest.json"))
    return report
