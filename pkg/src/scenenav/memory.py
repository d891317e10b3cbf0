"""Per-environment memory bank and the cross-episode global graph."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .episodes import Instruction
from .world import NavGraph, UnknownNodeError


class InvalidRecordError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeRecord:
    """One executed episode: instruction X, observations O, actions A, trajectory P.

    ``observations`` holds the node ids at which the agent observed and decided
    (panoramas are recoverable from the environment); ``actions`` holds the
    move targets, so ``len(actions) == len(observations) - 1``.
    """

    instruction: Instruction
    observations: tuple[int, ...]
    actions: tuple[int, ...]
    trajectory: tuple[int, ...]
    episode_id: int | None = None

    def to_json(self) -> dict:
        return {"episode_id": self.episode_id, "instruction": self.instruction.to_json(),
                "observations": list(self.observations), "actions": list(self.actions),
                "trajectory": list(self.trajectory)}

    @classmethod
    def from_json(cls, d) -> "EpisodeRecord":
        return cls(Instruction.from_json(d["instruction"]),
                   tuple(d["observations"]), tuple(d["actions"]), tuple(d["trajectory"]),
                   d.get("episode_id"))


def check_record(record: EpisodeRecord, truth: NavGraph | None = None) -> None:
    if not record.trajectory or not record.observations:
        raise InvalidRecordError("record needs a non-empty trajectory and observations")
    if len(record.actions) != len(record.observations) - 1:
        raise InvalidRecordError(
            f"|A| = {len(record.actions)} but |O| = {len(record.observations)}; expected |A| = |O| - 1"
        )
    if truth is not None:
        for node in (*record.trajectory, *record.observations, *record.actions):
            if node not in truth:
                raise InvalidRecordError(f"node {node} not in environment {truth.env_id!r}")
        adj = truth.adjacency
        for a, b in zip(record.trajectory, record.trajectory[1:]):
            if b not in adj[a]:
                raise InvalidRecordError(f"trajectory step {a}->{b} is not an edge")


class MemoryBank:
    """Append-only store of executed episodes for one environment."""

    def __init__(self, env_id: str, truth: NavGraph | None = None):
        self.env_id = env_id
        self.truth = truth
        self._records: list[EpisodeRecord] = []

    def append(self, record: EpisodeRecord) -> "MemoryBank":
        check_record(record, self.truth)
        self._records.append(record)
        return self

    @property
    def records(self) -> tuple[EpisodeRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, idx: int) -> EpisodeRecord:
        return self._records[idx]

    def __iter__(self):
        return iter(self._records)

    def to_json(self) -> dict:
        return {"env_id": self.env_id, "records": [r.to_json() for r in self._records]}

    @classmethod
    def from_json(cls, d, truth: NavGraph | None = None) -> "MemoryBank":
        bank = cls(d["env_id"], truth)
        for r in d["records"]:
            bank.append(EpisodeRecord.from_json(r))
        return bank


def append_episode(bank: MemoryBank, record: EpisodeRecord) -> MemoryBank:
    return bank.append(record)


@dataclass
class GraphNode:
    position: tuple[float, float, float]
    landmark: int
    panorama: np.ndarray = field(repr=False)
    visited: bool = False


@dataclass
class GlobalGraph:
    alpha: int = 1
    nodes: dict[int, GraphNode] = field(default_factory=dict)
    edges: set[tuple[int, int]] = field(default_factory=set)
    episodes_since_reset: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def add_node(self, truth: NavGraph, node: int, visited: bool = False) -> None:
        if node not in truth:
            raise UnknownNodeError(f"node {node} not in environment {truth.env_id!r}")
        n = truth.nodes[node]
        prev = self.nodes.get(node)
        self.nodes[node] = GraphNode(n.position, n.landmark, n.panorama,
                                     visited or (prev is not None and prev.visited))

    def add_trajectory(self, truth: NavGraph, trajectory) -> None:
        for node in trajectory:
            self.add_node(truth, node, visited=True)
        for a, b in zip(trajectory, trajectory[1:]):
            if a != b:
                self.edges.add((min(a, b), max(a, b)))

    def adjacency(self) -> dict[int, dict[int, float]]:
        """Edge lengths recomputed from stored positions (equal to ground truth)."""
        adj: dict[int, dict[int, float]] = {n: {} for n in self.nodes}
        for a, b in self.edges:
            w = math.dist(self.nodes[a].position, self.nodes[b].position)
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def copy(self) -> "GlobalGraph":
        return GlobalGraph(self.alpha,
                           {k: GraphNode(v.position, v.landmark, v.panorama, v.visited) for k, v in self.nodes.items()},
                           set(self.edges), self.episodes_since_reset)

    def same_topology(self, other: "GlobalGraph") -> bool:
        return set(self.nodes) == set(other.nodes) and self.edges == other.edges


def window_start(k: int, alpha: int) -> int:
    """Index (exclusive, 1-based) where the accumulation window of episode ``k`` begins."""
    return ((k - 1) // alpha) * alpha if k > 0 else 0


def rebuild_global_graph(bank: MemoryBank, alpha: int, truth: NavGraph) -> GlobalGraph:
    """Union of trajectories for episodes ``(floor((k-1)/alpha)*alpha, k]``."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    k = len(bank)
    graph = GlobalGraph(alpha=alpha)
    start = window_start(k, alpha)
    for record in bank.records[start:k]:
        graph.add_trajectory(truth, record.trajectory)
    graph.episodes_since_reset = k - start
    return graph


def context_graph(bank: MemoryBank, alpha: int, truth: NavGraph) -> GlobalGraph:
    """Graph handed to the agent at the start of episode ``len(bank) + 1``.

    Once a window holds ``alpha`` episodes the next episode starts from an
    empty graph.
    """
    if len(bank) % alpha == 0:
        return GlobalGraph(alpha=alpha)
    return reset_visited(rebuild_global_graph(bank, alpha, truth))


def extend_global_graph(graph: GlobalGraph, truth: NavGraph, trajectory) -> GlobalGraph:
    """Incremental counterpart of :func:`rebuild_global_graph` after one more episode."""
    if graph.episodes_since_reset >= graph.alpha:
        graph = GlobalGraph(alpha=graph.alpha)
    graph.add_trajectory(truth, trajectory)
    graph.episodes_since_reset += 1
    return graph


def reset_visited(graph: GlobalGraph) -> GlobalGraph:
    for node in graph.nodes.values():
        node.visited = False
    return graph


def coverage(graph: GlobalGraph, truth: NavGraph) -> float:
    for node in graph.nodes:
        if node not in truth:
            raise UnknownNodeError(f"global graph node {node} missing from {truth.env_id!r}")
    if len(truth) == 0:
        return 0.0
    return len(graph.nodes) / len(truth)


def is_subgraph(graph: GlobalGraph, truth: NavGraph) -> bool:
    adj = truth.adjacency
    return all(n in truth for n in graph.nodes) and all(
        b in adj.get(a, ()) and a in graph.nodes and b in graph.nodes for a, b in graph.edges
    )


def proportion_graph(truth: NavGraph, p: float, rng: np.random.Generator) -> GlobalGraph:
    """Random ``round(p * N)`` ground-truth nodes with their induced edges."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"proportion must lie in [0, 1], got {p}")
    n = len(truth)
    count = int(round(p * n))
    chosen = sorted(int(x) for x in rng.choice(n, size=count, replace=False)) if count < n else list(range(n))
    graph = GlobalGraph(alpha=1)
    keep = set(chosen)
    for node in chosen:
        graph.add_node(truth, node)
    graph.edges = {e for e in truth.edges if e[0] in keep and e[1] in keep}
    return graph


def save_checkpoint(path: str | Path, bank: MemoryBank, alpha: int, extra: dict | None = None) -> None:
    doc = {"bank": bank.to_json(), "alpha": alpha,
           "episodes_since_reset": len(bank) - window_start(len(bank), alpha)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path, truth: NavGraph | None = None) -> tuple[MemoryBank, int, dict]:
    doc = json.loads(Path(path).read_text())
    bank = MemoryBank.from_json(doc.pop("bank"), truth)
    alpha = int(doc.pop("alpha"))
    doc.pop("episodes_since_reset", None)
    return bank, alpha, doc
