"""Batch pipeline driver: ingest -> graph -> train -> augment -> select -> eval.

Every command is a pure function of (config file, input files, master
seed); reruns write byte-identical outputs. The effective configuration is
echoed into the output directory next to each command's artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import pickle
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as aug
from . import graph as graphmod
from . import metrics as metricsmod
from . import selection as selmod
from .corpus import Corpus, build_vocab, load_pairs
from .embeddings import train_ppmi
from .keywords import extract_keywords, load_stoplist
from .seqmodel import train_ngram, train_scorer
from .wire import WireModel, WirePerspectivePredictor

CONFIG_ENV_VAR = "REPLYSHIFT_CONFIG"
CONFIG_VERSION = 1


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        version = raw.get("config_version")
        if version != CONFIG_VERSION:
            raise PipelineError(f"unsupported config_version: {version!r}")
        return cls(raw=raw, base_dir=path.parent)

    def _section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self._section("paths").get(key)
        if value is None:
            if required:
                raise PipelineError(f"config paths.{key} is missing")
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def get(self, dotted: str, default=None):
        node = self.raw
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def override(self, dotted: str, value) -> None:
        parts = dotted.split(".")
        node = self.raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    @property
    def out_dir(self) -> Path:
        return self.path("out_dir")

    @property
    def master_seed(self) -> int:
        return int(self.raw.get("master_seed", 0))

    def augmentation(self) -> aug.AugmentationConfig:
        a = self._section("augment")
        return aug.AugmentationConfig(
            k_init=int(a.get("k_init", 20)),
            cand_min=int(a.get("cand_min", 5)),
            cand_max=int(a.get("cand_max", 100)),
            temperature=float(a.get("temperature", 0.5)),
            max_len=int(a.get("max_len", 50)),
            master_seed=self.master_seed,
            noise_scope=a.get("noise_scope", "per_pair"),
            drop_identical=bool(a.get("drop_identical", True)))


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _validate_written(path, reader) -> None:
    """Re-read an output through its schema reader; exit 0 promises this."""
    try:
        reader(path)
    except Exception as exc:
        raise PipelineError(f"written output failed validation: {path}: {exc}") from exc


def _echo_config(config: PipelineConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_json(config.raw, out / "config_effective.json")


def _load_split(config: PipelineConfig, split: str, required: bool = True) -> Corpus | None:
    key = {"train": "train", "validation": "validation", "test": "test"}[split]
    path = config.path(key, required=required)
    if path is None:
        return None
    fmt = config.get("format", "jsonl")
    mode = config.get("tokenizer", "whitespace")
    return load_pairs(path, format=fmt, mode=mode, split=split)


def _load_stoplist(config: PipelineConfig) -> set[str]:
    path = config.path("stoplist", required=False)
    if path is None:
        return set()
    return load_stoplist(path)


def _models_dir(config: PipelineConfig) -> Path:
    d = config.out_dir / "models"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _save_model(model, path: Path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(model, fh, protocol=4)


def _load_model(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _backend_model(config: PipelineConfig, role: str):
    """A sequence model for one role: the trained n-gram pickle or a wire
    backend per the backends.<role> config entry (`ngram` or `wire:<spec>`)."""
    spec = config.get(f"backends.{role}", "ngram")
    if spec == "ngram":
        path = _models_dir(config) / f"{role}.pkl"
        if not path.exists():
            raise PipelineError(f"model file missing: {path} (run `train` first)")
        return _load_model(path)
    if isinstance(spec, str) and spec.startswith("wire:"):
        return WireModel(spec[len("wire:"):])
    raise PipelineError(f"unknown backend for {role}: {spec!r}")


def _embeddings(config: PipelineConfig):
    params = {"window": int(config.get("embedding.window", 5)),
              "dim": int(config.get("embedding.dim", 128)),
              "seed": int(config.get("embedding.seed", 0))}
    path = _models_dir(config) / "embeddings.pkl"
    if path.exists():
        saved = _load_model(path)
        if isinstance(saved, dict) and saved.get("params") == params:
            return saved["table"]
    train = _load_split(config, "train")
    emb = train_ppmi(train, **params)
    _save_model({"params": params, "table": emb}, path)
    return emb


def cmd_ingest(config: PipelineConfig) -> None:
    out = config.out_dir
    _echo_config(config, out)
    stats = {}
    for split, required in (("train", True), ("validation", False), ("test", False)):
        corpus = _load_split(config, split, required=required)
        if corpus is None:
            continue
        tokens = sum(len(p.post.tokens) + len(p.response.tokens) for p in corpus)
        stats[split] = {"pairs": len(corpus), "tokens": tokens}
    train = _load_split(config, "train")
    vocab = build_vocab(train, min_count=int(config.get("min_count", 1)))
    dump_json(vocab.to_json(), out / "vocab.json")
    stats["vocab_size"] = len(vocab)
    dump_json(stats, out / "corpus_stats.json")
    print(f"ingest: {stats}")


def cmd_graph(config: PipelineConfig) -> None:
    out = config.out_dir
    _echo_config(config, out)
    train = _load_split(config, "train")
    stoplist = _load_stoplist(config)
    emb = _embeddings(config)
    result = graphmod.build_graph(train, emb, stoplist,
                                  max_k=int(config.get("keywords.max_k", 5)))
    graphmod.write_graph(result.graph, out / "graph.jsonl")
    graphmod.write_assignments(result.assignments, out / "assignments.jsonl")
    _validate_written(out / "graph.jsonl", graphmod.read_graph)
    _validate_written(out / "assignments.jsonl", graphmod.read_assignments)
    stats = {"vertices": result.graph.num_vertices(),
             "edges": result.graph.num_edges(),
             "total_weight": result.graph.total_weight(),
             "assignments": len(result.assignments),
             "skipped": result.skipped}
    dump_json(stats, out / "graph_stats.json")
    print(f"graph: {stats['vertices']} vertices, {stats['edges']} edges, "
          f"{result.num_skipped} pairs skipped")


def cmd_train(config: PipelineConfig) -> None:
    out = config.out_dir
    _echo_config(config, out)
    train = _load_split(config, "train")
    vocab = build_vocab(train, min_count=int(config.get("min_count", 1)))
    order = int(config.get("ngram.order", 3))
    discount = float(config.get("ngram.discount", 0.4))
    models_dir = _models_dir(config)
    _embeddings(config)
    report = {"order": order, "discount": discount, "vocab_size": len(vocab)}
    if config.get("backends.generator", "ngram") == "ngram":
        assignments = graphmod.read_assignments(out / "assignments.jsonl")
        model = train_ngram(train, assignments, order, discount, vocab=vocab)
        _save_model(model, models_dir / "generator.pkl")
        report["generator_streams"] = len(assignments)
    for role, direction in (("forward", "forward"), ("backward", "backward")):
        if config.get(f"backends.{role}", "ngram") == "ngram":
            model = train_scorer(train, direction, order, discount, vocab=vocab)
            _save_model(model, models_dir / f"{role}.pkl")
    dump_json(report, out / "train_report.json")
    print(f"train: {report}")


def _predictor(config: PipelineConfig, emb, graph):
    spec = config.get("backends.predictor", "builtin")
    if spec == "builtin":
        return aug.BaselinePerspectivePredictor(emb, graph)
    if isinstance(spec, str) and spec.startswith("wire:"):
        return WirePerspectivePredictor(WireModel(spec[len("wire:"):]))
    raise PipelineError(f"unknown predictor backend: {spec!r}")


def cmd_augment(config: PipelineConfig, limit: int | None = None,
                workers: int | None = None) -> None:
    out = config.out_dir
    _echo_config(config, out)
    train = _load_split(config, "train")
    stoplist = _load_stoplist(config)
    emb = _embeddings(config)
    graph = graphmod.read_graph(out / "graph.jsonl")
    assignments = {a.pair_id: a for a in graphmod.read_assignments(out / "assignments.jsonl")}
    generator = _backend_model(config, "generator")
    predictor = _predictor(config, emb, graph)
    acfg = config.augmentation()
    max_k = int(config.get("keywords.max_k", 5))
    pairs = list(train)[:limit] if limit is not None else list(train)
    if workers is None:
        workers = int(config.get("workers", 1))

    def work(pair):
        assignment = assignments.get(pair.id)
        if assignment is None:
            report = aug.PairReport(pair_id=pair.id)
            report.skip("no_assignment")
            return report
        kx = extract_keywords(pair.post, stoplist, max_k)
        return aug.augment_pair(pair, kx, assignment, graph, generator,
                                predictor, acfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(work, pairs))
    else:
        reports = [work(p) for p in pairs]

    samples = [s for r in reports for s in r.samples]
    samples.sort(key=lambda s: (s.pair_id, s.focus, s.subset))
    aug.write_samples(samples, out / "augmented.jsonl")
    _validate_written(out / "augmented.jsonl", aug.read_samples)
    skips: dict[str, int] = {}
    for r in reports:
        for reason, n in r.skips.items():
            skips[reason] = skips.get(reason, 0) + n
    report = {"pairs_processed": len(pairs), "samples": len(samples), "skips": skips}
    dump_json(report, out / "augment_report.json")
    print(f"augment: {len(samples)} samples from {len(pairs)} pairs, skips={skips}")


def cmd_select(config: PipelineConfig, eta_override: float | None = None,
               m_per_post: int | None = None, samples_path=None) -> None:
    out = config.out_dir
    _echo_config(config, out)
    validation = _load_split(config, "validation")
    if validation is None or len(validation) < 2:
        raise PipelineError("selection needs a validation split with >= 2 pairs")
    samples = aug.read_samples(samples_path or out / "augmented.jsonl")
    fwd = _backend_model(config, "forward")
    bwd = _backend_model(config, "backward")
    if eta_override is not None:
        threshold = selmod.Threshold(eta=float(eta_override), accuracy=float("nan"))
        eta_source = "override"
    else:
        rng = np.random.default_rng(config.master_seed + 1)
        threshold = selmod.find_threshold(validation, fwd, rng)
        eta_source = "validation_search"
    scored = selmod.score_samples(samples, fwd, bwd)
    if m_per_post is None:
        m_per_post = int(config.get("selection.m_per_post", 3))
    kept = selmod.select(scored, threshold.eta, m_per_post)
    kept_ids = {s.sid for s in kept}
    with open(out / "scored.jsonl", "w", encoding="utf-8") as fh:
        for s in scored:
            rec = s.sample.to_json()
            rec.update({"fwd_ppl": s.fwd_ppl, "bwd_ppl": s.bwd_ppl,
                        "kept": s.sid in kept_ids})
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    aug.write_samples([s.sample for s in kept], out / "selected.jsonl")
    _validate_written(out / "selected.jsonl", aug.read_samples)
    report = {"eta": threshold.eta, "eta_source": eta_source,
              "validation_accuracy": threshold.accuracy,
              "scored": len(scored), "kept": len(kept),
              "m_per_post": m_per_post}
    dump_json(report, out / "threshold_report.json")
    print(f"select: kept {len(kept)}/{len(scored)} at eta={threshold.eta:.4g} "
          f"(acc={threshold.accuracy:.3f}, {eta_source})")


def _build_groups(samples, corpus) -> list[metricsmod.ResponseGroup]:
    by_pair = {p.id: p for p in corpus}
    grouped: dict[str, list] = {}
    order = []
    for s in samples:
        if s.pair_id not in grouped:
            grouped[s.pair_id] = []
            order.append(s.pair_id)
        grouped[s.pair_id].append(list(s.response))
    groups = []
    for pid in order:
        if not grouped[pid]:
            raise PipelineError(f"post {pid} has no responses")
        original = list(by_pair[pid].response.tokens) if pid in by_pair else None
        groups.append(metricsmod.ResponseGroup(post_id=pid,
                                               responses=grouped[pid],
                                               original=original))
    return groups


def cmd_eval(config: PipelineConfig, samples_path=None, ranked_path=None) -> None:
    out = config.out_dir
    _echo_config(config, out)
    train = _load_split(config, "train")
    samples = aug.read_samples(samples_path or out / "selected.jsonl")
    if not samples:
        raise PipelineError("no samples to evaluate")
    groups = _build_groups(samples, train)
    emb = _embeddings(config)
    report: dict = {"groups": len(groups), "samples": len(samples)}
    for n in (1, 2):
        for mode in ("intra", "inter"):
            vals = [metricsmod.distinct_n(g, n, mode) for g in groups]
            report[f"{mode}_dist_{n}"] = sum(vals) / len(vals)
            with_orig = [g for g in groups if g.original is not None]
            if with_orig:
                vals = [metricsmod.novelty_n(g, n, mode) for g in with_orig]
                report[f"{mode}_novelty_{n}"] = sum(vals) / len(vals)
    bleus = [metricsmod.bleu(resp, [g.original])
             for g in groups if g.original is not None for resp in g.responses]
    if bleus:
        report["bleu_vs_original"] = sum(bleus) / len(bleus)
    multi = [g for g in groups if len(g.responses) >= 2]
    if multi:
        vals = [metricsmod.group_semantic_diversity(emb, g.responses) for g in multi]
        report["semantic_f1_between_responses"] = sum(vals) / len(vals)
    if ranked_path is not None:
        queries = []
        with open(ranked_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    queries.append(metricsmod.RankedQuery(labels=obj["labels"],
                                                          scores=obj["scores"]))
        report["map"] = metricsmod.mean_avg_precision(queries)
        for k in (1, 2, 5):
            report[f"r10_at_{k}"] = metricsmod.recall_at_k(queries, k)
    dump_json(report, out / "eval_report.json")
    with open(out / "eval_groups.jsonl", "w", encoding="utf-8") as fh:
        for g in groups:
            rec = {"post_id": g.post_id, "responses": len(g.responses),
                   "intra_dist_1": metricsmod.distinct_n(g, 1, "intra")}
            if g.original is not None:
                rec["intra_novelty_1"] = metricsmod.novelty_n(g, 1, "intra")
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    print("eval: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.items())
                               if isinstance(v, float)))


def cmd_inspect(config: PipelineConfig, keyword: str | None = None,
                pair_id: str | None = None) -> None:
    out = config.out_dir
    if keyword is not None:
        graph = graphmod.read_graph(out / "graph.jsonl")
        neighbors = graph.neighbors(keyword)
        print(f"{keyword}: {len(neighbors)} neighbors")
        for z in neighbors:
            print(f"  -> {z}  (weight {graph.weight(keyword, z)})")
    if pair_id is not None:
        assignments = {a.pair_id: a for a in
                       graphmod.read_assignments(out / "assignments.jsonl")}
        a = assignments.get(pair_id)
        if a is None:
            print(f"pair {pair_id}: no assignment")
        else:
            print(f"pair {pair_id}: focus={a.focus} perspective={a.perspective}")
        aug_path = out / "augmented.jsonl"
        if aug_path.exists():
            for s in aug.read_samples(aug_path):
                if s.pair_id == pair_id:
                    print(f"  sample focus={s.focus} perspective={s.perspective} "
                          f"subset={s.subset}: {' '.join(s.response)}")
    if keyword is None and pair_id is None:
        raise PipelineError("inspect needs --keyword and/or --pair")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="replyshift",
                                 description="counterfactual dialogue augmentation pipeline")
    ap.add_argument("--config", default=None,
                    help=f"pipeline config file (or ${CONFIG_ENV_VAR})")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("ingest", "graph", "train"):
        sub.add_parser(name)
    p = sub.add_parser("augment")
    p.add_argument("--limit", type=int, default=None, help="process only the first N pairs")
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("select")
    p.add_argument("--eta", type=float, default=None, help="override the threshold search")
    p.add_argument("--m-per-post", type=int, default=None)
    p.add_argument("--samples", default=None, help="input samples file")
    p = sub.add_parser("eval")
    p.add_argument("--samples", default=None, help="input samples file")
    p.add_argument("--ranked", default=None, help="ranked-query JSONL for MAP / recall@k")
    p = sub.add_parser("inspect")
    p.add_argument("--keyword", default=None)
    p.add_argument("--pair", default=None)
    for p in sub.choices.values():
        p.add_argument("--out-dir", default=None, help="override paths.out_dir")
        p.add_argument("--master-seed", type=int, default=None)
    return ap


def run(argv=None) -> None:
    args = build_parser().parse_args(argv)
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path is None:
        raise PipelineError(f"no config given (use --config or ${CONFIG_ENV_VAR})")
    config = PipelineConfig.load(config_path)
    if getattr(args, "out_dir", None) is not None:
        config.override("paths.out_dir", args.out_dir)
    if getattr(args, "master_seed", None) is not None:
        config.override("master_seed", args.master_seed)
    if args.command == "ingest":
        cmd_ingest(config)
    elif args.command == "graph":
        cmd_graph(config)
    elif args.command == "train":
        cmd_train(config)
    elif args.command == "augment":
        cmd_augment(config, limit=args.limit, workers=args.workers)
    elif args.command == "select":
        eta = args.eta if args.eta is not None else config.get("selection.eta")
        if eta is not None:
            config.override("selection.eta", eta)
        if args.m_per_post is not None:
            config.override("selection.m_per_post", args.m_per_post)
        cmd_select(config, eta_override=eta, m_per_post=args.m_per_post,
                   samples_path=args.samples)
    elif args.command == "eval":
        cmd_eval(config, samples_path=args.samples, ranked_path=args.ranked)
    elif args.command == "inspect":
        cmd_inspect(config, keyword=args.keyword, pair_id=args.pair)


def main(argv=None) -> int:
    try:
        run(argv)
    except (PipelineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
