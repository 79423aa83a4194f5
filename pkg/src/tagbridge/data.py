"""Text-attributed graph data model, JSONL/edge-list ingestion, deterministic
splits, and a synthetic generator that plants class signal in both the texts
and the edge structure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import rng_stream

SPLIT_NAMES = ("train", "val", "test")


class GraphParseError(ValueError):
    pass


@dataclass
class TextAttributedGraph:
    """Undirected graph whose nodes carry UTF-8 texts and class labels.

    Invariants: node ids are dense 0..n-1, no self-loops are stored, edges
    are deduplicated and held canonically as (u, v) with u < v, and the
    neighbor lists are symmetric and sorted.
    """

    texts: list[str]
    edges: list[tuple[int, int]]
    labels: np.ndarray
    num_classes: int
    neighbors: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.texts)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def has_edge(self, u: int, v: int) -> bool:
        if u > v:
            u, v = v, u
        return (u, v) in self._edge_set()

    def _edge_set(self) -> set[tuple[int, int]]:
        if not hasattr(self, "_edges_cached"):
            self._edges_cached = set(self.edges)
        return self._edges_cached

    def with_edges(self, edges: list[tuple[int, int]]) -> "TextAttributedGraph":
        """Same nodes, different edge set (e.g. restricted to train edges)."""
        return build_graph(self.texts, edges, self.labels, self.num_classes)


def build_graph(
    texts: list[str],
    edges: list[tuple[int, int]],
    labels,
    num_classes: int | None = None,
) -> TextAttributedGraph:
    """Normalize raw components into a TextAttributedGraph.

    Drops self-loops, deduplicates edges, builds symmetric sorted neighbor
    lists. Returns the graph; self-loop/duplicate counts are not kept here
    (load_graph reports them).
    """
    n = len(texts)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise GraphParseError(f"labels shape {labels.shape} does not match {n} nodes")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise GraphParseError("label out of range [0, C)")
    canon = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise GraphParseError(f"edge ({u}, {v}) references unknown node")
        if u == v:
            continue
        canon.add((u, v) if u < v else (v, u))
    edge_list = sorted(canon)
    nbr: list[list[int]] = [[] for _ in range(n)]
    for u, v in edge_list:
        nbr[u].append(v)
        nbr[v].append(u)
    neighbors = [np.array(sorted(ns), dtype=np.int64) for ns in nbr]
    return TextAttributedGraph(list(texts), edge_list, labels, num_classes, neighbors)


@dataclass
class SplitMask:
    """Disjoint train/val/test node-id sets (sorted arrays)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n: int) -> None:
        sets = [set(map(int, s)) for s in (self.train, self.val, self.test)]
        if len(sets[0]) == 0:
            raise ValueError("train split is empty")
        union: set[int] = set()
        for s in sets:
            if union & s:
                raise ValueError("splits overlap")
            union |= s
        if union and (min(union) < 0 or max(union) >= n):
            raise ValueError("split references unknown node")

    def as_dict(self) -> dict[str, list[int]]:
        return {"train": [int(i) for i in self.train],
                "val": [int(i) for i in self.val],
                "test": [int(i) for i in self.test]}


@dataclass
class LoadStats:
    self_loops_dropped: int = 0
    duplicate_edges_dropped: int = 0


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------
# nodes file: JSON Lines, one record per node:
#   {"id": int, "text": str, "label": int, "split": "train"|"val"|"test"}
# edges file: plain text, one "src dst" pair per line.
# Both UTF-8 with LF line endings; save_graph emits a canonical byte form
# (ids ascending, fixed key order, sorted canonical edges).

def load_graph(
    nodes_path: str | Path,
    edges_path: str | Path,
    num_classes: int | None = None,
) -> tuple[TextAttributedGraph, SplitMask, LoadStats]:
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    records: dict[int, tuple[str, int, str]] = {}
    with nodes_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphParseError(f"{nodes_path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                nid, text, label, split = int(rec["id"]), str(rec["text"]), int(rec["label"]), rec["split"]
            except (KeyError, TypeError, ValueError) as exc:
                raise GraphParseError(f"{nodes_path}:{lineno}: malformed record") from exc
            if split not in SPLIT_NAMES:
                raise GraphParseError(f"{nodes_path}:{lineno}: unknown split tag {split!r}")
            if nid in records:
                raise GraphParseError(f"{nodes_path}:{lineno}: duplicate node id {nid}")
            records[nid] = (text, label, split)
    n = len(records)
    if sorted(records) != list(range(n)):
        raise GraphParseError(f"{nodes_path}: node ids are not dense 0..{n - 1}")
    texts = [records[i][0] for i in range(n)]
    labels = np.array([records[i][1] for i in range(n)], dtype=np.int64)
    if num_classes is not None:
        for i in range(n):
            if labels[i] >= num_classes:
                raise GraphParseError(f"{nodes_path}: node {i} has label {labels[i]} >= C={num_classes}")

    stats = LoadStats()
    raw_edges: list[tuple[int, int]] = []
    with edges_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise GraphParseError(f"{edges_path}:{lineno}: expected 'src dst'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphParseError(f"{edges_path}:{lineno}: non-integer endpoint") from exc
            if not (0 <= u < n and 0 <= v < n):
                raise GraphParseError(f"{edges_path}:{lineno}: endpoint out of range")
            if u == v:
                stats.self_loops_dropped += 1
                continue
            raw_edges.append((u, v))
    canon = {(u, v) if u < v else (v, u) for u, v in raw_edges}
    stats.duplicate_edges_dropped = len(raw_edges) - len(canon)
    graph = build_graph(texts, sorted(canon), labels, num_classes)
    split = SplitMask(
        train=np.array(sorted(i for i in range(n) if records[i][2] == "train"), dtype=np.int64),
        val=np.array(sorted(i for i in range(n) if records[i][2] == "val"), dtype=np.int64),
        test=np.array(sorted(i for i in range(n) if records[i][2] == "test"), dtype=np.int64),
    )
    split.validate(n)
    return graph, split, stats


def save_graph(
    graph: TextAttributedGraph,
    split: SplitMask,
    nodes_path: str | Path,
    edges_path: str | Path,
) -> None:
    """Inverse of load_graph; deterministic field order and edge order."""
    split_of = {}
    for name, ids in zip(SPLIT_NAMES, (split.train, split.val, split.test)):
        for i in ids:
            split_of[int(i)] = name
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    nodes_path.parent.mkdir(parents=True, exist_ok=True)
    with nodes_path.open("w", encoding="utf-8", newline="\n") as fh:
        for i in range(graph.n):
            rec = {"id": i, "text": graph.texts[i], "label": int(graph.labels[i]),
                   "split": split_of.get(i, "test")}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with edges_path.open("w", encoding="utf-8", newline="\n") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Planted-partition graph with class-signal vocabularies.

    Edges are drawn independently with probability p_in inside a class and
    p_out across classes. Each node's text has `text_len` tokens:
    ceil(signal_fraction * text_len) drawn uniformly from the node's class
    signal vocabulary, the rest from a shared noise vocabulary, shuffled so
    signal carries no positional cue. The split is 60/20/20 stratified by
    class.
    """

    classes: int = 4
    nodes_per_class: int = 50
    p_in: float = 0.1
    p_out: float = 0.01
    signal_vocab_size: int = 32
    noise_vocab_size: int = 2000
    text_len: int = 100
    signal_fraction: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not (self.p_in > self.p_out >= 0.0):
            raise ValueError("require p_in > p_out >= 0")
        if not (0.0 < self.signal_fraction < 1.0):
            raise ValueError("signal_fraction must lie in (0, 1)")
        if self.text_len < 2:
            raise ValueError("text_len must be >= 2")
        if min(self.classes, self.nodes_per_class, self.signal_vocab_size, self.noise_vocab_size) < 1:
            raise ValueError("counts must be positive")


def signal_token(cls: int, j: int) -> str:
    return f"sig{cls}_{j}"


def noise_token(j: int) -> str:
    return f"noise{j}"


def generate_synthetic(spec: SyntheticSpec) -> tuple[TextAttributedGraph, SplitMask]:
    spec.validate()
    n = spec.classes * spec.nodes_per_class
    labels = np.repeat(np.arange(spec.classes), spec.nodes_per_class)

    rng_edges = rng_stream(spec.seed, "synth-edges")
    edges: list[tuple[int, int]] = []
    u = rng_edges.random(size=(n, n))
    for i in range(n):
        for j in range(i + 1, n):
            p = spec.p_in if labels[i] == labels[j] else spec.p_out
            if u[i, j] < p:
                edges.append((i, j))

    rng_text = rng_stream(spec.seed, "synth-text")
    n_signal = math.ceil(spec.signal_fraction * spec.text_len)
    texts: list[str] = []
    for i in range(n):
        c = int(labels[i])
        sig_ids = rng_text.integers(0, spec.signal_vocab_size, size=n_signal)
        noise_ids = rng_text.integers(0, spec.noise_vocab_size, size=spec.text_len - n_signal)
        tokens = [signal_token(c, int(j)) for j in sig_ids] + [noise_token(int(j)) for j in noise_ids]
        perm = rng_text.permutation(len(tokens))
        texts.append(" ".join(tokens[p] for p in perm))

    rng_split = rng_stream(spec.seed, "synth-split")
    train, val, test = [], [], []
    for c in range(spec.classes):
        ids = np.where(labels == c)[0]
        ids = rng_split.permutation(ids)
        n_tr = int(round(0.6 * len(ids)))
        n_va = int(round(0.2 * len(ids)))
        train.extend(ids[:n_tr])
        val.extend(ids[n_tr:n_tr + n_va])
        test.extend(ids[n_tr + n_va:])
    split = SplitMask(
        train=np.array(sorted(train), dtype=np.int64),
        val=np.array(sorted(val), dtype=np.int64),
        test=np.array(sorted(test), dtype=np.int64),
    )
    graph = build_graph(texts, edges, labels, spec.classes)
    split.validate(graph.n)
    return graph, split
