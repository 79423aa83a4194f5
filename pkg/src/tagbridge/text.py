"""Word-level tokenizer, vocabulary, and the frozen Gaussian embedding table
that supplies per-token representations to everything downstream.

The table is seeded and never mutated after construction; a checksum makes
frozen-ness testable across training runs.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import rng_stream

UNK, SEP = 0, 1
UNK_TOKEN, SEP_TOKEN = "[UNK]", "[SEP]"

_WORD_RE = re.compile(r"\w+", re.UNICODE)


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries."""
    return _WORD_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """token <-> id mapping with reserved ids [UNK]=0 and [SEP]=1."""

    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for tid, tok in enumerate(self.id_to_token):
                fh.write(json.dumps({"token": tok, "id": tid}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        id_to_token: list[str] = []
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["id"] != len(id_to_token):
                    raise ValueError("vocabulary file ids must be dense and ascending")
                id_to_token.append(rec["token"])
        if id_to_token[:2] != [UNK_TOKEN, SEP_TOKEN]:
            raise ValueError("vocabulary missing reserved [UNK]/[SEP] entries")
        return cls({t: i for i, t in enumerate(id_to_token)}, id_to_token)


def build_vocab(corpus: list[str], min_count: int = 1) -> Vocabulary:
    """Vocabulary over all corpus tokens with frequency >= min_count.

    Non-reserved ids are assigned by (frequency desc, token asc) so the
    mapping is deterministic.
    """
    if not corpus:
        raise ValueError("build_vocab: empty corpus")
    counts = Counter()
    for text in corpus:
        counts.update(split_words(text))
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    id_to_token = [UNK_TOKEN, SEP_TOKEN] + kept
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token)


def tokenize(text: str, vocab: Vocabulary) -> np.ndarray:
    """Token-id sequence for a text; empty results become a single [UNK]."""
    ids = [vocab.lookup(w) for w in split_words(text)]
    if not ids:
        ids = [UNK]
    return np.array(ids, dtype=np.int64)


def detokenize(ids: np.ndarray, vocab: Vocabulary) -> str:
    return " ".join(vocab.id_to_token[int(i)] for i in ids)


# ---------------------------------------------------------------------------
# Frozen embedding table
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    """V x d frozen token embeddings (seeded Gaussian, variance 1/sqrt(d))."""

    table: np.ndarray
    init_seed: int = 0

    def __post_init__(self):
        self.table.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.table).tobytes()).hexdigest()

    def save(self, path: str | Path) -> None:
        save_matrix(self.table, path)

    @classmethod
    def load(cls, path: str | Path, init_seed: int = 0) -> "EmbeddingTable":
        return cls(load_matrix(path), init_seed)


def make_embedding_table(vocab_size: int, dim: int, seed: int) -> EmbeddingTable:
    rng = rng_stream(seed, "embed-init")
    scale = (1.0 / np.sqrt(dim)) ** 0.5  # std of a N(0, 1/sqrt(d)) draw
    table = rng.normal(0.0, scale, size=(vocab_size, dim)).astype(np.float64)
    return EmbeddingTable(table, seed)


@dataclass
class TokenMatrix:
    """One node's token ids plus the gathered k_i x d embedding rows."""

    node_id: int
    token_ids: np.ndarray
    embeddings: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return len(self.token_ids)


def embed_tokens(node_id: int, token_ids: np.ndarray, table: EmbeddingTable) -> TokenMatrix:
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.size == 0:
        token_ids = np.array([UNK], dtype=np.int64)
    if token_ids.min() < 0 or token_ids.max() >= table.vocab_size:
        raise ValueError("embed_tokens: token id out of range")
    return TokenMatrix(node_id, token_ids, table.table[token_ids])


# ---------------------------------------------------------------------------
# Raw matrix file format: 8-byte header (rows, cols as little-endian int32)
# followed by row-major little-endian float64 data. Shared by the embedding
# table, the node-embedding matrix H, and all checkpoints.
# ---------------------------------------------------------------------------

def save_matrix(m: np.ndarray, path: str | Path) -> None:
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("save_matrix expects a 2-D array")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<ii", m.shape[0], m.shape[1]))
        fh.write(m.astype("<f8").tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        rows, cols = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"matrix file {path} is truncated")
    return data.reshape(rows, cols).astype(np.float64)
