"""Procedural navigation environments and geodesic queries over them."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

LAYOUTS = ("residential-grid", "nonresidential-hall")

# salt for the landmark embedding table shared by every environment
_LANDMARK_SALT = 0x1A4D
# weight of the landmark component mixed into every view feature
_LANDMARK_SIGNAL = 0.6
_EDGE_RTOL = 1e-9


class InvalidSpecError(ValueError):
    pass


class InvalidGraphError(ValueError):
    pass


class UnknownNodeError(KeyError):
    pass


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    node_count: int = 30
    layout: str = "residential-grid"
    mean_edge_length: float = 2.25
    landmark_vocab_size: int = 128
    landmark_duplication_rate: float = 0.0
    view_count: int = 36
    feature_dim: int = 32

    def validate(self) -> None:
        if self.node_count < 1:
            raise InvalidSpecError(f"node_count must be >= 1, got {self.node_count}")
        if self.layout not in LAYOUTS:
            raise InvalidSpecError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if not self.mean_edge_length > 0:
            raise InvalidSpecError(f"mean_edge_length must be > 0, got {self.mean_edge_length}")
        if not 0.0 <= self.landmark_duplication_rate <= 1.0:
            raise InvalidSpecError(
                f"landmark_duplication_rate must lie in [0, 1], got {self.landmark_duplication_rate}"
            )
        if self.view_count < 1:
            raise InvalidSpecError(f"view_count must be >= 1, got {self.view_count}")
        if self.feature_dim < 1:
            raise InvalidSpecError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.landmark_vocab_size < 1:
            raise InvalidSpecError("landmark_vocab_size must be >= 1")
        if self.landmark_duplication_rate == 0 and self.landmark_vocab_size < self.node_count:
            raise InvalidSpecError(
                f"unique landmarks need landmark_vocab_size >= node_count "
                f"({self.landmark_vocab_size} < {self.node_count})"
            )

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "layout": self.layout,
            "mean_edge_length": self.mean_edge_length,
            "landmark_vocab_size": self.landmark_vocab_size,
            "landmark_duplication_rate": self.landmark_duplication_rate,
            "view_count": self.view_count,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvSpec":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass(frozen=True, eq=False)
class NavNode:
    id: int
    position: tuple[float, float, float]
    landmark: int
    panorama: np.ndarray = field(repr=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NavNode):
            return NotImplemented
        return (
            self.id == other.id
            and self.position == other.position
            and self.landmark == other.landmark
            and np.array_equal(self.panorama, other.panorama)
        )

    __hash__ = None


@dataclass(frozen=True)
class NavGraph:
    """Ground-truth connectivity graph. Immutable once validated.

    Derived tables (adjacency, edge lengths, all-pairs geodesics) are cached
    lazily; they are pure functions of the nodes and edges.
    """

    env_id: str
    nodes: tuple[NavNode, ...]
    edges: frozenset[tuple[int, int]]
    rng_seed: int = 0
    spec: EnvSpec | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "edges", frozenset((min(a, b), max(a, b)) for a, b in self.edges)
        )
        self._validate()

    def _validate(self) -> None:
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise InvalidGraphError(f"node ids must be 0..n-1 in order; slot {i} holds {node.id}")
            pano = node.panorama
            if pano.ndim != 2 or pano.shape[0] < 1:
                raise InvalidGraphError(f"node {i}: panorama must be a (V, D) array")
            norms = np.linalg.norm(pano, axis=1)
            if not np.allclose(norms, 1.0, rtol=0, atol=1e-9):
                raise InvalidGraphError(f"node {i}: view features must be unit norm")
            if self.spec is not None and not 0 <= node.landmark < self.spec.landmark_vocab_size:
                raise InvalidGraphError(f"node {i}: landmark {node.landmark} outside vocabulary")
        for a, b in self.edges:
            if a == b:
                raise InvalidGraphError(f"self-loop at node {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise InvalidGraphError(f"edge ({a}, {b}) references a missing node")
            if not self.edge_length(a, b) > 0:
                raise InvalidGraphError(f"edge ({a}, {b}) has non-positive length")
        if n and len(_reachable(self.adjacency, 0)) != n:
            raise InvalidGraphError(f"graph {self.env_id!r} is not connected")

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return isinstance(node_id, (int, np.integer)) and 0 <= node_id < len(self.nodes)

    def check_node(self, node_id: int) -> None:
        if node_id not in self:
            raise UnknownNodeError(f"node {node_id!r} not in graph {self.env_id!r}")

    def edge_length(self, a: int, b: int) -> float:
        pa, pb = self.nodes[a].position, self.nodes[b].position
        return math.dist(pa, pb)

    @cached_property
    def adjacency(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {node.id: {} for node in self.nodes}
        for a, b in sorted(self.edges):
            w = self.edge_length(a, b)
            adj[a][b] = w
            adj[b][a] = w
        return adj

    @cached_property
    def positions(self) -> np.ndarray:
        arr = np.array([node.position for node in self.nodes], dtype=np.float64).reshape(-1, 3)
        arr.setflags(write=False)
        return arr

    @cached_property
    def landmarks(self) -> tuple[int, ...]:
        return tuple(node.landmark for node in self.nodes)

    @cached_property
    def panorama_means(self) -> np.ndarray:
        """Unit-normalised mean view feature per node."""
        means = np.stack([node.panorama.mean(axis=0) for node in self.nodes])
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        means.setflags(write=False)
        return means

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs geodesic distances, row i from single-source Dijkstra at i."""
        n = len(self.nodes)
        out = np.empty((n, n), dtype=np.float64)
        for s in range(n):
            dist, _ = dijkstra(self.adjacency, s)
            for t in range(n):
                out[s, t] = dist[t]
        out.setflags(write=False)
        return out

    @property
    def feature_dim(self) -> int:
        return self.nodes[0].panorama.shape[1] if self.nodes else 0

    def to_json(self) -> dict:
        return {
            "env_id": self.env_id,
            "seed": self.rng_seed,
            "spec": self.spec.to_dict() if self.spec else None,
            "nodes": [
                {
                    "id": node.id,
                    "pos": list(node.position),
                    "landmark": node.landmark,
                    "views": node.panorama.tolist(),
                }
                for node in self.nodes
            ],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "NavGraph":
        try:
            nodes = tuple(
                _make_node(int(n["id"]), tuple(float(x) for x in n["pos"]), int(n["landmark"]),
                           np.asarray(n["views"], dtype=np.float64))
                for n in data["nodes"]
            )
            edges = frozenset((int(a), int(b)) for a, b in data["edges"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidGraphError(f"malformed environment document: {exc}") from exc
        spec = EnvSpec.from_dict(data["spec"]) if data.get("spec") else None
        return cls(env_id=str(data["env_id"]), nodes=nodes, edges=edges,
                   rng_seed=int(data.get("seed", 0)), spec=spec)


def _make_node(node_id: int, position, landmark: int, panorama: np.ndarray) -> NavNode:
    pano = np.array(panorama, dtype=np.float64)
    pano.setflags(write=False)
    return NavNode(id=node_id, position=tuple(float(x) for x in position),
                   landmark=int(landmark), panorama=pano)


def _reachable(adj: Mapping[int, Iterable[int]], start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def dijkstra(adj: Mapping[int, Mapping[int, float]], source: int, target: int | None = None):
    """Single-source shortest paths with lexicographic tie-breaking.

    Labels are ``(distance, path)`` tuples, so among equal-length paths the
    lexicographically smallest node sequence wins. Returns ``(dist, paths)``
    dicts covering the settled nodes; stops early once ``target`` settles.
    """
    best = {source: (0.0, (source,))}
    heap = [(0.0, (source,))]
    dist: dict[int, float] = {}
    paths: dict[int, tuple[int, ...]] = {}
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in dist:
            continue
        dist[u] = d
        paths[u] = path
        if u == target:
            break
        for v, w in adj[u].items():
            if v in dist:
                continue
            label = (d + w, path + (v,))
            cur = best.get(v)
            if cur is None or label < cur:
                best[v] = label
                heapq.heappush(heap, label)
    return dist, paths


def shortest_path(graph: NavGraph, a: int, b: int) -> tuple[list[int], float]:
    graph.check_node(a)
    graph.check_node(b)
    dist, paths = dijkstra(graph.adjacency, a, b)
    if b not in dist:
        raise UnreachableError(f"node {b} unreachable from {a} in {graph.env_id!r}")
    return list(paths[b]), dist[b]


def observation_at(graph: NavGraph, node: int) -> tuple[np.ndarray, int]:
    graph.check_node(node)
    n = graph.nodes[node]
    return n.panorama, n.landmark


def landmark_embedding(landmark: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([_LANDMARK_SALT, dim, landmark])
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _view_features(seed: int, node_id: int, landmark: int, views: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, node_id])
    noise = rng.standard_normal((views, dim))
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    feats = noise + _LANDMARK_SIGNAL * landmark_embedding(landmark, dim)
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    return feats


_STEPS4 = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _grow_cells(rng: np.random.Generator, seed_cell, count, occupied, allowed=None):
    """Randomly grow a 4-connected cell cluster; returns cells and tree edges."""
    cells = [seed_cell]
    occupied.add(seed_cell)
    tree = []
    while len(cells) < count:
        frontier = []
        for idx, (x, y) in enumerate(cells):
            for dx, dy in _STEPS4:
                c = (x + dx, y + dy)
                if c not in occupied and (allowed is None or allowed(c)):
                    frontier.append((c, idx))
        if not frontier:
            break
        frontier = sorted(set(frontier))
        c, parent = frontier[int(rng.integers(len(frontier)))]
        if c in occupied:
            continue
        occupied.add(c)
        cells.append(c)
        tree.append((parent, len(cells) - 1))
    return cells, tree


def _extra_edges(rng: np.random.Generator, cells, offset, existing, prob):
    index = {c: i for i, c in enumerate(cells)}
    extra = []
    for i, (x, y) in enumerate(cells):
        for dx, dy in ((1, 0), (0, 1)):
            j = index.get((x + dx, y + dy))
            if j is None:
                continue
            e = (offset + min(i, j), offset + max(i, j))
            if e not in existing and rng.random() < prob:
                extra.append(e)
    return extra


def _residential_layout(rng, n):
    occupied: set = set()
    cells, tree = _grow_cells(rng, (0, 0), n, occupied)
    edges = {(min(a, b), max(a, b)) for a, b in tree}
    edges.update(_extra_edges(rng, cells, 0, edges, 0.25))
    return cells, edges


def _hall_layout(rng, n):
    spine = max(1, min(n, int(round(n * 0.4))))
    cells = [(x, 0) for x in range(spine)]
    edges = {(i, i + 1) for i in range(spine - 1)}
    occupied = set(cells)
    remaining = n - spine
    while remaining > 0:
        anchors = [i for i, (x, y) in enumerate(cells[:spine])
                   for side in (1, -1) if (x, side) not in occupied]
        if not anchors:
            # corridor fully lined; hang the rest off the outermost rows
            anchors = list(range(len(cells)))
        anchor = anchors[int(rng.integers(len(anchors)))]
        ax, ay = cells[anchor]
        sides = [s for s in (1, -1) if (ax, ay + s) not in occupied] if ay == 0 else []
        if ay == 0 and sides:
            side = sides[int(rng.integers(len(sides)))]
            start = (ax, side)
        else:
            free = [(ax + dx, ay + dy) for dx, dy in _STEPS4
                    if (ax + dx, ay + dy) not in occupied and ay + dy != 0]
            if not free:
                continue
            start = free[int(rng.integers(len(free)))]
            side = 1 if start[1] > 0 else -1
        size = min(remaining, int(rng.integers(2, 6)))
        local, tree = _grow_cells(rng, start, size, occupied,
                                  allowed=lambda c, s=side: c[1] * s > 0)
        offset = len(cells)
        cells.extend(local)
        edges.add((min(anchor, offset), max(anchor, offset)))
        tree_edges = {(offset + a, offset + b) for a, b in tree}
        edges.update(tree_edges)
        edges.update(_extra_edges(rng, local, offset, tree_edges, 0.2))
        remaining -= len(local)
    return cells, edges


def generate_environment(seed: int, spec: EnvSpec, env_id: str | None = None) -> NavGraph:
    """Build a connected synthetic environment; pure in ``(seed, spec)``."""
    spec.validate()
    rng = np.random.default_rng([seed, 0xE1])
    n = spec.node_count
    if spec.layout == "residential-grid":
        cells, edges = _residential_layout(rng, n)
    else:
        cells, edges = _hall_layout(rng, n)

    s = spec.mean_edge_length
    jitter = rng.uniform(-0.12 * s, 0.12 * s, size=(n, 2))
    positions = [
        (x * s + jitter[i, 0], y * s + jitter[i, 1], 0.0) for i, (x, y) in enumerate(cells)
    ]

    landmarks = _assign_landmarks(rng, n, spec.landmark_vocab_size, spec.landmark_duplication_rate)
    nodes = tuple(
        _make_node(i, positions[i], landmarks[i],
                   _view_features(seed, i, landmarks[i], spec.view_count, spec.feature_dim))
        for i in range(n)
    )
    return NavGraph(env_id=env_id or f"env-{seed}", nodes=nodes, edges=frozenset(edges),
                    rng_seed=seed, spec=spec)


def _assign_landmarks(rng, n, vocab, dup_rate):
    fresh = [int(x) for x in rng.permutation(vocab)]
    out: list[int] = []
    for i in range(n):
        if out and (rng.random() < dup_rate or not fresh):
            out.append(out[int(rng.integers(len(out)))])
        else:
            out.append(fresh.pop())
    return out


def save_environment(graph: NavGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_json()))


def load_environment(path: str | Path) -> NavGraph:
    return NavGraph.from_json(json.loads(Path(path).read_text()))
