"""Bridged-sequence construction: a node's reduced tokens, one separator,
then the reduced tokens of its sampled neighbors, with per-token provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .reduction import ReducedText
from .sampler import NeighborSample
from .text import SEP

SEP_PROVENANCE = -1


@dataclass
class BridgeSequence:
    root: int
    token_ids: np.ndarray
    provenance: np.ndarray  # source node id per token, -1 for separators

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def root_positions(self) -> np.ndarray:
        sep = np.where(self.provenance == SEP_PROVENANCE)[0]
        end = int(sep[0]) if len(sep) else self.length
        return np.arange(end)


def build_sequence(
    root: int,
    reduced: dict[int, ReducedText],
    sample: NeighborSample,
    max_length: int = 512,
    per_neighbor_sep: bool = False,
) -> BridgeSequence:
    """Concatenate root tokens, [SEP], then each sampled neighbor's tokens in
    sample order.

    An empty sample yields the root tokens alone (no dangling separator).
    `per_neighbor_sep` inserts a separator before every neighbor instead of
    the single post-root one. A hard `max_length` cap truncates from the
    tail.
    """
    if root not in reduced:
        raise LookupError(f"no reduced text for root {root}")
    ids: list[int] = [int(t) for t in reduced[root].kept_token_ids]
    prov: list[int] = [root] * len(ids)
    if sample.neighbors:
        ids.append(SEP)
        prov.append(SEP_PROVENANCE)
        for j in sample.neighbors:
            if j not in reduced:
                raise LookupError(f"no reduced text for sampled node {j}")
            if per_neighbor_sep and prov[-1] != SEP_PROVENANCE:
                ids.append(SEP)
                prov.append(SEP_PROVENANCE)
            ids.extend(int(t) for t in reduced[j].kept_token_ids)
            prov.extend([int(j)] * len(reduced[j].kept_token_ids))
    if max_length is not None and len(ids) > max_length:
        ids = ids[:max_length]
        prov = prov[:max_length]
    return BridgeSequence(
        root=root,
        token_ids=np.array(ids, dtype=np.int64),
        provenance=np.array(prov, dtype=np.int64),
    )


def save_sequences(seqs: list[BridgeSequence], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in seqs:
            rec = {"id": int(s.root),
                   "token_ids": [int(t) for t in s.token_ids],
                   "provenance": [int(p) for p in s.provenance]}
            fh.write(json.dumps(rec) + "\n")


def load_sequences(path: str | Path) -> list[BridgeSequence]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(BridgeSequence(
                root=int(rec["id"]),
                token_ids=np.array(rec["token_ids"], dtype=np.int64),
                provenance=np.array(rec["provenance"], dtype=np.int64),
            ))
    out.sort(key=lambda s: s.root)
    return out
