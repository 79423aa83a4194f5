"""Random-walk-with-restart neighbor sampling.

Each step either jumps back to the root (with the restart probability) or
moves to a uniformly random neighbor of the current node. Nodes other than
the root are recorded once, in first-visit order, which keeps the sample
roughly proximity-ordered for the sequence builder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TextAttributedGraph


@dataclass
class RwrConfig:
    walk_steps: int = 16
    restart_prob: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.walk_steps < 0:
            raise ValueError("walk_steps must be >= 0")
        if not (0.0 <= self.restart_prob < 1.0):
            raise ValueError("restart_prob must lie in [0, 1)")


@dataclass
class NeighborSample:
    root: int
    neighbors: list[int]  # unique, first-visit order, root excluded


def walk_trace(
    graph: TextAttributedGraph,
    root: int,
    steps: int,
    restart_prob: float,
    rng: np.random.Generator,
) -> list[int]:
    """The raw sequence of states visited after each of `steps` transitions."""
    if graph.degree(root) == 0:
        return []
    trace = []
    current = root
    for _ in range(steps):
        if rng.random() < restart_prob:
            current = root
        else:
            nbrs = graph.neighbors[current]
            current = int(nbrs[rng.integers(0, len(nbrs))])
        trace.append(current)
    return trace


def rwr_sample(
    graph: TextAttributedGraph,
    root: int,
    config: RwrConfig,
    rng: np.random.Generator,
) -> NeighborSample:
    config.validate()
    if not (0 <= root < graph.n):
        raise ValueError(f"root {root} out of range")
    seen: set[int] = set()
    ordered: list[int] = []
    for node in walk_trace(graph, root, config.walk_steps, config.restart_prob, rng):
        if node != root and node not in seen:
            seen.add(node)
            ordered.append(node)
    return NeighborSample(root=root, neighbors=ordered)
