"""End-to-end experiment orchestration.

A run is a cascade of stages, each writing its artifact to the output
directory before the next stage starts: vocabulary/embedding table ->
reducer training -> reduced texts -> neighbor samples and bridged
sequences -> encoder training -> node embedding matrix H -> GNN training ->
evaluation. The GNN stage reads H back from disk, so the two trainable
halves stay fully decoupled (deleting the encoder checkpoint cannot change
the GNN result).

Every stage draws randomness from named streams of the single experiment
seed; reports are reproducible bit-for-bit apart from wall-clock timings.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import gnn as gnn_mod
from .data import SplitMask, SyntheticSpec, TextAttributedGraph, generate_synthetic, load_graph, save_graph
from .encoder import MiniLmParams, embed_all, init_lm_params, lm_accuracy, load_lm, save_lm, train_lm
from .gnn import (
    LinkPredSplit,
    evaluate_links,
    evaluate_nodes,
    init_sage_params,
    split_links,
    train_gnn,
    train_link_gnn,
)
from .numerics import rng_stream
from .reduction import (
    build_context,
    init_reduction_params,
    mean_max_score,
    reduce_graph,
    save_reduced,
    train_reducer,
)
from .sampler import NeighborSample, RwrConfig, rwr_sample
from .sequence import BridgeSequence, build_sequence, save_sequences
from .text import (
    EmbeddingTable,
    TokenMatrix,
    Vocabulary,
    build_vocab,
    embed_tokens,
    load_matrix,
    make_embedding_table,
    save_matrix,
    tokenize,
)

SCHEMA_VERSION = 1
TASKS = ("node-classification", "link-prediction")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    synthetic: SyntheticSpec | None = None
    nodes_file: str | None = None
    edges_file: str | None = None
    seed: int = 0
    task: str = "node-classification"
    reducer: str = "graph"
    k_prime: int = 16
    hops: int = 1
    beta: float = 0.1
    walk_steps: int = 16
    restart_prob: float = 0.5
    d: int = 64
    d_prime: int | None = None
    d_lm: int = 64
    d_ff: int | None = None
    attn_scale: str = "dprime"
    per_neighbor_sep: bool = False
    max_length: int = 512
    min_count: int = 1
    reducer_lr: float = 20.0
    reducer_epochs: int = 100
    reducer_patience: int = 10
    lm_lr: float = 0.1
    lm_epochs: int = 6
    lm_batch: int = 32
    gnn_hidden: int = 64
    gnn_lr: float = 0.05
    gnn_epochs: int = 200
    gnn_patience: int = 20

    def validate(self) -> None:
        if (self.synthetic is None) == (self.nodes_file is None):
            raise ConfigError("config needs exactly one of 'synthetic' or 'nodes_file'+'edges_file'")
        if self.nodes_file is not None and self.edges_file is None:
            raise ConfigError("'nodes_file' requires 'edges_file'")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.reducer not in bl.REDUCER_KINDS:
            raise ConfigError(f"unknown reducer {self.reducer!r}; choose from {bl.REDUCER_KINDS}")
        if self.attn_scale not in ("dprime", "d"):
            raise ConfigError("attn_scale must be 'dprime' or 'd'")
        if self.k_prime < 1 or self.hops < 0 or self.walk_steps < 0:
            raise ConfigError("k_prime >= 1, hops >= 0, walk_steps >= 0 required")
        if not (0.0 <= self.restart_prob < 1.0):
            raise ConfigError("restart_prob must lie in [0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        for name in ("d", "d_lm", "max_length", "gnn_hidden", "lm_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.synthetic is not None:
            self.synthetic.validate()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        cfg = replace(self, seed=seed)
        if cfg.synthetic is not None:
            cfg.synthetic = replace(cfg.synthetic, seed=seed)
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        if raw.get("synthetic") is not None:
            syn = dict(raw["synthetic"])
            syn_known = {f.name for f in fields(SyntheticSpec)}
            syn_unknown = set(syn) - syn_known
            if syn_unknown:
                raise ConfigError(f"unknown synthetic keys: {sorted(syn_unknown)}")
            if "seed" not in syn:
                syn["seed"] = raw.get("seed", 0)
            raw["synthetic"] = SyntheticSpec(**syn)
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_synthetic_config(**overrides) -> ExperimentConfig:
    """The default desk-scale experiment: a 4-class planted-partition graph
    with noise-heavy 100-token texts."""
    cfg = ExperimentConfig(synthetic=SyntheticSpec(), **overrides)
    cfg.synthetic = replace(cfg.synthetic, seed=cfg.seed)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Stage helpers
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    graph: TextAttributedGraph
    split: SplitMask
    vocab: Vocabulary
    table: EmbeddingTable
    token_mats: list[TokenMatrix]
    full_graph: TextAttributedGraph | None = None
    link_split: LinkPredSplit | None = None


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load or generate the graph, build vocabulary/embeddings, tokenize.

    For link prediction the edge split happens here, and every later stage
    sees only the train-edge graph.
    """
    if config.synthetic is not None:
        graph, split = generate_synthetic(config.synthetic)
    else:
        graph, split, _ = load_graph(config.nodes_file, config.edges_file)
    full_graph = None
    link_split = None
    if config.task == "link-prediction":
        link_split = split_links(graph, config.seed)
        full_graph = graph
        graph = graph.with_edges([tuple(e) for e in link_split.train_pos])
    vocab = build_vocab(graph.texts, config.min_count)
    table = make_embedding_table(vocab.size, config.d, config.seed)
    token_mats = [embed_tokens(i, tokenize(graph.texts[i], vocab), table)
                  for i in range(graph.n)]
    return PreparedData(graph, split, vocab, table, token_mats, full_graph, link_split)


def run_reducer_stage(config: ExperimentConfig, data: PreparedData):
    """Train (or skip, for baseline reducers) and apply token reduction."""
    stats = {"kind": config.reducer, "epochs_ran": None, "best_epoch": None,
             "best_val_ce": None, "final_train_loss": None, "final_train_ce": None,
             "final_train_kl": None, "mean_max_score": None}
    if config.reducer == "graph":
        params = init_reduction_params(
            config.d, data.graph.num_classes, config.seed,
            d_prime=config.d_prime, hops=config.hops, beta=config.beta,
            k_prime=config.k_prime, lr=config.reducer_lr,
            epochs=config.reducer_epochs, patience=config.reducer_patience,
            attn_scale=config.attn_scale,
        )
        trained, log = train_reducer(data.graph, data.token_mats,
                                     data.split.train, data.split.val, params)
        reduced = reduce_graph(data.graph, data.token_mats, trained)
        ctx = build_context(data.token_mats, data.graph, trained.hops)
        final = log.final()
        stats.update(epochs_ran=len(log.epochs), best_epoch=log.best_epoch,
                     best_val_ce=log.best_val_ce,
                     final_train_loss=final.get("train_loss"),
                     final_train_ce=final.get("train_ce"),
                     final_train_kl=final.get("train_kl"),
                     mean_max_score=mean_max_score(ctx, trained))
    else:
        reduced = bl.apply_baseline_reducer(config.reducer, data.token_mats,
                                            config.k_prime, config.seed)
    return reduced, stats


def sample_neighbors(config: ExperimentConfig, graph: TextAttributedGraph) -> list[NeighborSample]:
    """RWR sample per root with a per-root substream of the experiment seed."""
    rwr = RwrConfig(config.walk_steps, config.restart_prob, config.seed)
    return [rwr_sample(graph, i, rwr, rng_stream(config.seed, "sampler", i))
            for i in range(graph.n)]


def build_all_sequences(config, reduced, samples) -> list[BridgeSequence]:
    by_id = {r.node_id: r for r in reduced}
    return [build_sequence(s.root, by_id, s, config.max_length, config.per_neighbor_sep)
            for s in samples]


def token_accounting(config, data: PreparedData, samples, seqs) -> dict:
    orig = np.array([tm.length for tm in data.token_mats], dtype=np.int64)
    retained = np.minimum(orig, config.k_prime)
    seq_len = np.array([s.length for s in seqs], dtype=np.int64)
    unreduced = np.array(
        [orig[s.root] + (1 + int(orig[list(s.neighbors)].sum()) if s.neighbors else 0)
         for s in samples], dtype=np.int64)
    n = data.graph.n
    return {
        "original_mean": float(orig.mean()), "original_max": int(orig.max()),
        "retained_mean": float(retained.mean()), "retained_max": int(retained.max()),
        "sequence_mean": float(seq_len.mean()), "sequence_max": int(seq_len.max()),
        "reduced_total": int(seq_len.sum()),
        "unreduced_total": int(unreduced.sum()),
        "ratio": float(seq_len.sum() / unreduced.sum()),
        "budget_bound": int(n * (config.k_prime * (1 + config.walk_steps) + 1)),
    }


def standardize_features(X: np.ndarray) -> np.ndarray:
    """Column z-scoring (zero-variance columns pass through centred)."""
    mu = X.mean(axis=0, keepdims=True)
    sd = X.std(axis=0, keepdims=True)
    return (X - mu) / np.where(sd > 0, sd, 1.0)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

def _write_data_artifacts(out: Path, config: ExperimentConfig, data: PreparedData) -> None:
    save_graph(data.graph, data.split, out / "nodes.jsonl", out / "edges.txt")
    data.vocab.save(out / "vocab.jsonl")
    data.table.save(out / "embeddings.bin")
    if data.link_split is not None:
        rec = {k: [[int(u), int(v)] for u, v in getattr(data.link_split, k)]
               for k in ("train_pos", "val_pos", "test_pos", "train_neg", "val_neg", "test_neg")}
        rec["seed"] = data.link_split.seed
        (out / "linksplit.json").write_text(json.dumps(rec), encoding="utf-8")


def run_gnn_stage(config: ExperimentConfig, out: Path, graph: TextAttributedGraph,
                  split: SplitMask, link_split: LinkPredSplit | None) -> tuple[dict, dict]:
    """Train and evaluate the aggregator from the saved H file alone."""
    H = standardize_features(load_matrix(out / "H.bin"))
    stats: dict = {}
    if config.task == "node-classification":
        params = init_sage_params(H.shape[1], graph.num_classes, config.seed,
                                  hidden=config.gnn_hidden, lr=config.gnn_lr,
                                  epochs=config.gnn_epochs, patience=config.gnn_patience)
        trained, log = train_gnn(H, graph, graph.labels, split.train, split.val, params)
        gnn_mod.save_sage(trained, out / "gnn.ckpt")
        metrics = {"accuracy": evaluate_nodes(trained, H, graph, graph.labels, split)}
    else:
        params = init_sage_params(H.shape[1], config.gnn_hidden, config.seed,
                                  hidden=config.gnn_hidden, lr=config.gnn_lr,
                                  epochs=config.gnn_epochs, patience=config.gnn_patience)
        trained, log = train_link_gnn(H, graph, link_split, params)
        gnn_mod.save_sage(trained, out / "gnn.ckpt")
        metrics = {"auc": evaluate_links(trained, H, graph, link_split)}
    stats.update(epochs_ran=len(log.epochs), best_epoch=log.best_epoch,
                 best_val=log.best_val, stopped_early=log.stopped_early)
    return metrics, stats


def cmd_run(config: ExperimentConfig, out_dir: str | Path) -> dict:
    """Execute the full cascade; returns (and writes) the metrics report."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    def timed(name):
        class _T:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, *exc):
                timings[name] = time.perf_counter() - self_inner.t0

        return _T()

    try:
        with timed("prepare"):
            data = prepare_data(config)
            _write_data_artifacts(out, config, data)
        with timed("reduce"):
            reduced, reducer_stats = run_reducer_stage(config, data)
            save_reduced(reduced, out / "reduced.jsonl")
        with timed("sequences"):
            samples = sample_neighbors(config, data.graph)
            seqs = build_all_sequences(config, reduced, samples)
            save_sequences(seqs, out / "sequences.jsonl")
            tokens = token_accounting(config, data, samples, seqs)
        with timed("lm"):
            lm_params = init_lm_params(data.table, data.graph.num_classes, config.seed,
                                       d_lm=config.d_lm, d_ff=config.d_ff,
                                       lr=config.lm_lr, epochs=config.lm_epochs,
                                       batch_size=config.lm_batch)
            train_ids = np.asarray(data.split.train, dtype=np.intp)
            lm_trained, lm_log = train_lm([seqs[i] for i in train_ids],
                                          data.graph.labels[train_ids], lm_params, config.seed)
            save_lm(lm_trained, out / "lm.ckpt")
        with timed("embed"):
            emb = embed_all(seqs, lm_trained)
            save_matrix(emb.H, out / "H.bin")
        with timed("gnn"):
            metrics, gnn_stats = run_gnn_stage(config, out, data.graph, data.split, data.link_split)
    except Exception as exc:
        raise RuntimeError(f"pipeline stage failed: {exc}") from exc

    timings["total"] = time.perf_counter() - t_total
    report = {
        "schema": SCHEMA_VERSION,
        "command": "run",
        "task": config.task,
        "seed": config.seed,
        "config": config.to_dict(),
        "stages": {
            "reducer": reducer_stats,
            "lm": {"final_train_ce": lm_log.final().get("train_ce"),
                   "epochs_ran": len(lm_log.epochs),
                   "checkpoint_id": emb.checkpoint_id},
            "gnn": gnn_stats,
        },
        "metrics": metrics,
        "tokens": tokens,
        "timings": timings,
    }
    write_report(report, out / "metrics.json")
    append_run_index(out, report)
    return report


def write_report(report: dict, path: Path) -> None:
    path.write_text(json.dumps(report, indent=2), encoding="utf-8")


def append_run_index(out: Path, report: dict) -> None:
    index = out.parent / "runs_index.jsonl" if out.name else out / "runs_index.jsonl"
    rec = {"command": report.get("command"), "seed": report.get("seed"),
           "path": str(out), "written_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with index.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec) + "\n")


def strip_timings(report: dict) -> dict:
    """Report with every timing field removed (the determinism contract)."""
    out = json.loads(json.dumps(report))
    out.pop("timings", None)
    return out


# ---------------------------------------------------------------------------
# Reference runs used for the integration comparison
# ---------------------------------------------------------------------------

def run_lm_only(config: ExperimentConfig) -> dict:
    """Encoder trained on each node's own unreduced text; accuracy comes from
    the classifier head directly (no GNN, no neighbors)."""
    data = prepare_data(config)
    seqs = [BridgeSequence(root=i, token_ids=tm.token_ids,
                           provenance=np.full(tm.length, i, dtype=np.int64))
            for i, tm in enumerate(data.token_mats)]
    params = init_lm_params(data.table, data.graph.num_classes, config.seed,
                            d_lm=config.d_lm, d_ff=config.d_ff, lr=config.lm_lr,
                            epochs=config.lm_epochs, batch_size=config.lm_batch)
    train_ids = np.asarray(data.split.train, dtype=np.intp)
    trained, log = train_lm([seqs[i] for i in train_ids], data.graph.labels[train_ids],
                            params, config.seed)
    acc = {name: round(lm_accuracy([seqs[i] for i in ids], data.graph.labels[ids], trained), 4)
           for name, ids in (("train", data.split.train), ("val", data.split.val),
                             ("test", data.split.test))}
    return {"accuracy": acc, "final_train_ce": log.final().get("train_ce")}


def run_bow_gnn(config: ExperimentConfig, model: str = "sage") -> dict:
    """A graph model on standardized bag-of-words counts: the pipeline's own
    SAGE aggregator by default, or the reference GCN / MLP."""
    data = prepare_data(config)
    docs = [tm.token_ids for tm in data.token_mats]
    X = standardize_features(np.asarray(bl.bow_features(docs, data.vocab).todense()))
    if model == "sage":
        params = init_sage_params(X.shape[1], data.graph.num_classes, config.seed,
                                  hidden=config.gnn_hidden, lr=config.gnn_lr,
                                  epochs=config.gnn_epochs, patience=config.gnn_patience)
        trained, _ = train_gnn(X, data.graph, data.graph.labels,
                               data.split.train, data.split.val, params)
        return {"accuracy": evaluate_nodes(trained, X, data.graph, data.graph.labels, data.split)}
    params = bl.init_two_layer(X.shape[1], data.graph.num_classes, config.seed,
                               hidden=config.gnn_hidden, lr=config.gnn_lr,
                               epochs=config.gnn_epochs, patience=config.gnn_patience)
    _, result = bl.train_reference(X, data.graph, data.graph.labels, data.split, params, model)
    return {"accuracy": result.accuracy}


# ---------------------------------------------------------------------------
# Sweeps, ablations, link prediction tables, accounting
# ---------------------------------------------------------------------------

SWEEP_PARAMS = {"walk-steps": "walk_steps", "beta": "beta"}


def cmd_sweep(config: ExperimentConfig, parameter: str, values: list, out_dir: str | Path) -> dict:
    if parameter not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    out = Path(out_dir)
    rows = []
    for value in values:
        cfg = replace(config, **{SWEEP_PARAMS[parameter]: value})
        if cfg.synthetic is not None:
            cfg.synthetic = replace(cfg.synthetic)
        report = cmd_run(cfg, out / f"sweep_{SWEEP_PARAMS[parameter]}_{value}")
        rows.append({"value": value, "report": report})
    table = {"schema": SCHEMA_VERSION, "command": "sweep", "parameter": parameter,
             "seed": config.seed, "rows": rows}
    write_report(table, out / f"sweep_{SWEEP_PARAMS[parameter]}.json")
    return table


def cmd_ablate(config: ExperimentConfig, seeds: list[int], out_dir: str | Path) -> dict:
    """One full run per (reducer kind, seed); mean and std of test accuracy."""
    out = Path(out_dir)
    rows = []
    for kind in bl.REDUCER_KINDS:
        accs = []
        reports = []
        for seed in seeds:
            cfg = replace(config.with_seed(seed), reducer=kind)
            report = cmd_run(cfg, out / f"ablate_{kind}_seed{seed}")
            accs.append(report["metrics"]["accuracy"]["test"])
            reports.append(report)
        rows.append({"reducer": kind, "test_accs": accs,
                     "mean": float(np.mean(accs)), "std": float(np.std(accs))})
    table = {"schema": SCHEMA_VERSION, "command": "ablate", "seeds": list(seeds), "rows": rows}
    write_report(table, out / "ablate.json")
    return table


def cmd_linkpred(config: ExperimentConfig, seeds: list[int], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    cfg0 = replace(config, task="link-prediction")
    aucs = []
    rows = []
    for seed in seeds:
        cfg = cfg0.with_seed(seed)
        report = cmd_run(cfg, out / f"linkpred_seed{seed}")
        auc = report["metrics"]["auc"]
        rows.append({"seed": seed, "auc": auc})
        aucs.append(auc["test"])
    table = {"schema": SCHEMA_VERSION, "command": "linkpred", "seeds": list(seeds),
             "rows": rows, "test_mean": float(np.mean(aucs)), "test_std": float(np.std(aucs))}
    write_report(table, out / "linkpred.json")
    return table


def cmd_account(config: ExperimentConfig, walk_steps_values: list[int] | None = None,
                out_dir: str | Path | None = None) -> dict:
    """Token/cost accounting without any training: per-node original and
    retained token counts and the reduced/unreduced sequence totals at each
    walk-step value."""
    config.validate()
    data = prepare_data(config)
    values = walk_steps_values or [config.walk_steps]
    rows = []
    for steps in values:
        cfg = replace(config, walk_steps=steps)
        samples = sample_neighbors(cfg, data.graph)
        orig = np.array([tm.length for tm in data.token_mats], dtype=np.int64)
        retained = np.minimum(orig, cfg.k_prime)
        reduced_len = np.array(
            [retained[s.root] + (1 + int(retained[list(s.neighbors)].sum()) if s.neighbors else 0)
             for s in samples], dtype=np.int64)
        reduced_len = np.minimum(reduced_len, cfg.max_length)
        unreduced_len = np.array(
            [orig[s.root] + (1 + int(orig[list(s.neighbors)].sum()) if s.neighbors else 0)
             for s in samples], dtype=np.int64)
        rows.append({
            "walk_steps": steps,
            "reduced_total": int(reduced_len.sum()),
            "unreduced_total": int(unreduced_len.sum()),
            "ratio": float(reduced_len.sum() / unreduced_len.sum()),
            "budget_bound": int(data.graph.n * (cfg.k_prime * (1 + steps) + 1)),
            "sequence_mean": float(reduced_len.mean()),
            "sequence_max": int(reduced_len.max()),
        })
    report = {
        "schema": SCHEMA_VERSION,
        "command": "account",
        "seed": config.seed,
        "original_mean": float(np.mean([tm.length for tm in data.token_mats])),
        "original_max": int(max(tm.length for tm in data.token_mats)),
        "retained_mean": float(np.mean(np.minimum(
            [tm.length for tm in data.token_mats], config.k_prime))),
        "rows": rows,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "account.json")
    return report


def cmd_gen_synthetic(config: ExperimentConfig, out_dir: str | Path) -> dict:
    if config.synthetic is None:
        raise ConfigError("gen-synthetic requires a 'synthetic' section in the config")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph, split = generate_synthetic(config.synthetic)
    save_graph(graph, split, out / "nodes.jsonl", out / "edges.txt")
    return {"schema": SCHEMA_VERSION, "command": "gen-synthetic",
            "nodes": graph.n, "edges": len(graph.edges),
            "classes": graph.num_classes,
            "nodes_file": str(out / "nodes.jsonl"), "edges_file": str(out / "edges.txt")}
