"""Command-line entry point wiring all stages into reproducible runs."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import alignment, decoder, metrics, rqvae, serving, synth, trie as trie_mod
from .catalog import load_catalog
from .embed import embed_catalog, load_embeddings, save_embeddings
from .pipeline import PipelineConfig, build_generate_fn, run_pipeline
from .prompting import load_events, load_profiles
from .scorer import NgramScorer, NeuralScorer, load_scorer
from .vocab import vocab_from_sids

log = logging.getLogger("genret")


def _cmd_gen_data(args):
    spec = synth.SyntheticSpec(
        num_categories=args.categories, ads_per_category=args.ads_per_category,
        num_users=args.users, events_per_user=args.events_per_user,
        seed=args.seed)
    paths = synth.gen_data(spec, args.out)
    print(json.dumps(paths, indent=1))


def _cmd_embed(args):
    catalog = load_catalog(args.catalog)
    if args.embed_source == "file":
        table = load_embeddings(args.embeddings, args.dim)
    else:
        table = embed_catalog(catalog, args.dim, args.seed)
    save_embeddings(table, args.out)
    log.info("embedded %d ads at dimension %d", len(table), args.dim)


def _cmd_index(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = rqvae.RqVaeConfig(**json.load(fh))
    else:
        cfg = rqvae.RqVaeConfig(num_levels=args.levels, codebook_size=args.codebook_size,
                                latent_dim=args.latent_dim, epochs=args.epochs,
                                seed=args.seed)
    table = load_embeddings(args.embeddings, args.dim)
    model = rqvae.train(cfg, table)
    sids = rqvae.assign_sids(model, table)
    import os

    os.makedirs(args.out, exist_ok=True)
    rqvae.save_model(model, os.path.join(args.out, "rqvae_model.json"))
    rqvae.save_sids(sids, os.path.join(args.out, "sids.jsonl"))
    collision, max_c, usage = rqvae.codebook_metrics(sids, cfg)
    print(json.dumps({"collision_rate": collision, "max_collision": max_c,
                      "usage_rate_per_level": usage}))


def _cmd_build_trie(args):
    sids = rqvae.load_sids(args.sids)
    ad_trie = trie_mod.build(sids)
    trie_mod.save_trie(ad_trie, args.out)
    log.info("trie of %d ads, depth %d", ad_trie.ad_count, ad_trie.depth)


def _cmd_build_corpus(args):
    catalog = load_catalog(args.catalog)
    sids = rqvae.load_sids(args.sids)
    profiles = load_profiles(args.profiles)
    events = load_events(args.events, sids)
    corpora = alignment.build_stage_corpora(
        catalog, sids, profiles, events,
        template_ids=tuple(int(t) for t in args.templates.split(",")),
        strategies=tuple(args.strategies.split(",")), seed=args.seed)
    import os

    os.makedirs(args.out, exist_ok=True)
    for name, pairs in corpora.items():
        alignment.save_corpus(pairs, os.path.join(args.out, f"corpus_{name}.jsonl"))
    print(json.dumps({name: len(pairs) for name, pairs in corpora.items()}))


def _cmd_train(args):
    sids = rqvae.load_sids(args.sids)
    vocab = vocab_from_sids(sids)
    corpora = {}
    for stage in args.stages.split(","):
        corpora[stage] = alignment.load_corpus(f"{args.corpus_dir}/corpus_{stage}.jsonl")
    if args.scorer == "neural":
        scorer = NeuralScorer(vocab=vocab, seed=args.seed)
    else:
        scorer = NgramScorer(vocab)
    scorer, stage_log = alignment.train_staged(
        scorer, corpora, order=tuple(args.stages.split(",")), seed=args.seed)
    scorer.save(args.out)
    print(json.dumps(stage_log))


def _cmd_dpo(args):
    policy = load_scorer(args.policy)
    reference = policy.copy()
    sids_by_id = rqvae.load_sids(args.sids)
    triplets = []
    with open(args.triplets, encoding="utf-8") as fh:
        from .scorer import ScorerContext

        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            triplets.append(alignment.PreferenceTriplet(
                user=ScorerContext(tokens=tuple(obj.get("context_tokens", ()))),
                high_ad=sids_by_id[obj["high_ad"]],
                low_ad=sids_by_id[obj["low_ad"]]))
    before = alignment.preference_margin(policy, triplets)
    policy, losses = alignment.dpo_update(
        policy, reference, triplets, beta=args.beta,
        learning_rate=args.learning_rate, steps=args.steps, variant=args.variant)
    after = alignment.preference_margin(policy, triplets)
    policy.save(args.out)
    print(json.dumps({"margin_before": before, "margin_after": after,
                      "final_loss": losses[-1] if losses else 0.0}))


def _cmd_generate(args):
    scorer = load_scorer(args.scorer)
    ad_trie = trie_mod.load_trie(args.trie)
    catalog = load_catalog(args.catalog)
    sids = rqvae.load_sids(args.sids)
    profiles = load_profiles(args.profiles)
    events = load_events(args.events, sids)
    generate = build_generate_fn(scorer, ad_trie, catalog, profiles, events,
                                 args.beam, args.renormalize)
    users = [args.user] if args.user else sorted(events)
    with open(args.out, "w", encoding="utf-8") as fh:
        for uid in users:
            for ad_id, score in generate(uid):
                fh.write(json.dumps({"user_id": uid, "ad_id": ad_id,
                                     "score": score}) + "\n")


def _cmd_eval(args):
    catalog = load_catalog(args.catalog)
    cat_of = {ad.ad_id: ad.first_category for ad in catalog}
    truth = synth.load_truth(args.truth)
    ltr = synth.load_ltr_labels(args.ltr_labels) if args.ltr_labels else {}
    retrieved: dict[str, list[str]] = {}
    with open(args.results, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                retrieved.setdefault(obj["user_id"], []).append(obj["ad_id"])
    records = [metrics.EvalRecord(user_id=uid, retrieved=ads, truth=truth[uid],
                                  categories=cat_of, ltr_labels=ltr.get(uid))
               for uid, ads in sorted(retrieved.items()) if uid in truth]
    ks = [int(k) for k in args.k.split(",")]
    report = {"hr": {k: metrics.hit_ratio(records, k) for k in ks},
              "ndcg": {k: metrics.ndcg(records, k) for k in ks if k > 1}}
    concentration, abundance, score = metrics.diversity(records, max(ks))
    report["diversity"] = {"concentration": concentration,
                           "abundance": abundance, "score": score}
    if ltr:
        mean, excluded = metrics.ltrr(records, max(ks))
        report["ltrr"] = {max(ks): mean, "excluded_users": excluded}
    print(json.dumps(report, indent=1))


def _cmd_simulate(args):
    trace = serving.load_trace(args.trace)
    users = sorted({r.user_id for r in trace})
    policy = serving.AdmissionPolicy(
        arpu_of={u: float(i) for i, u in enumerate(users)},
        budget_per_tick=args.budget)
    pool = serving.WorkerPool(args.workers)
    inventory = tuple(f"ad_{i}" for i in range(8))

    def generate_fn(user_id):
        return inventory

    report = serving.run_simulation(trace, generate_fn, policy, pool, args.ticks)
    print(json.dumps(report, indent=1))


def _cmd_pipeline(args):
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig()
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.dpo:
        config.dpo_enabled = True
    report = run_pipeline(config)
    print(json.dumps(report, indent=1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genret")
    parser.add_argument("--verbose", action="store_true",
                        help="structured logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--ads-per-category", type=int, default=8)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--events-per-user", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("embed", help="embed catalog descriptions")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-source", choices=("hashed", "file"), default="hashed")
    p.add_argument("--embeddings", help="TSV when --embed-source file")
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("index", help="train the quantizer and assign S-IDs")
    p.add_argument("--config", help="JSON quantizer config file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--codebook-size", type=int, default=8)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_index)

    p = sub.add_parser("build-trie", help="build the S-ID prefix tree")
    p.add_argument("--sids", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_build_trie)

    p = sub.add_parser("build-corpus", help="render staged training corpora")
    p.add_argument("--catalog", required=True)
    p.add_argument("--sids", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--templates", default="0")
    p.add_argument("--strategies", default="reuse")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_build_corpus)

    p = sub.add_parser("train", help="staged scorer training")
    p.add_argument("--sids", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--stages", default="explicit,implicit,main")
    p.add_argument("--scorer", choices=("ngram", "neural"), default="ngram")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("dpo", help="preference-align a neural scorer")
    p.add_argument("--policy", required=True)
    p.add_argument("--sids", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--variant", choices=("prob-ratio", "log-ratio"),
                   default="log-ratio")
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_dpo)

    p = sub.add_parser("generate", help="constrained-decode retrieval lists")
    p.add_argument("--scorer", required=True)
    p.add_argument("--trie", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--sids", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--user")
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("eval", help="score retrieval results")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--ltr-labels")
    p.add_argument("--k", default="1,4,8")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("simulate", help="run the serving simulator")
    p.add_argument("--trace", required=True)
    p.add_argument("--budget", type=int, default=1)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--ticks", type=int, default=100)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--dpo", action="store_true")
    p.set_defaults(fn=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s")
    try:
        args.fn(args)
    except Exception as exc:  # machine-readable failure object
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
