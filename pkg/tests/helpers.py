"""Small hand-built graphs and brute-force oracles shared by the test modules."""

import itertools
import math

import numpy as np

from scenenav.world import EnvSpec, NavGraph, _make_node


def unit_panorama(node_id, views=2, dim=4):
    rng = np.random.default_rng(node_id)
    v = rng.normal(size=(views, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_graph(positions, edges, landmarks=None, env_id="toy", vocab=128):
    landmarks = list(range(len(positions))) if landmarks is None else landmarks
    nodes = tuple(
        _make_node(i, (*p, 0.0)[:3] if len(p) == 2 else p, landmarks[i], unit_panorama(i))
        for i, p in enumerate(positions)
    )
    spec = EnvSpec(node_count=len(positions), landmark_vocab_size=vocab,
                   landmark_duplication_rate=0.0 if len(set(landmarks)) == len(landmarks) else 0.5,
                   view_count=2, feature_dim=4)
    return NavGraph(env_id=env_id, nodes=nodes, edges=frozenset(edges), rng_seed=0, spec=spec)


# offsets whose Euclidean lengths are exact dyadic rationals
_STEPS = [(1, 0), (0, 1), (0.75, 1.0), (1.0, 0.75), (0.5, 0), (0, 0.5)]


def random_dyadic_graph(rng, n):
    """Connected random graph whose edge lengths (and all path sums) are exact in floating point.

    Nodes sit at distinct points reached by dyadic steps, so every edge length
    is one of 0.5, 1, 1.25 and every sum of a few of them is exact: shortest
    path lengths then cannot depend on the order of addition.
    """
    positions = [(0.0, 0.0)]
    edges = set()
    taken = {(0.0, 0.0)}
    while len(positions) < n:
        base = int(rng.integers(len(positions)))
        dx, dy = _STEPS[int(rng.integers(len(_STEPS)))]
        sx, sy = rng.choice([-1, 1], size=2)
        p = (positions[base][0] + sx * dx, positions[base][1] + sy * dy)
        if p in taken:
            continue
        taken.add(p)
        positions.append(p)
        edges.add((base, len(positions) - 1))
    for _ in range(int(rng.integers(0, n + 1))):
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        d = math.dist(positions[a], positions[b])
        if d in (0.5, 1.0, 1.25):
            edges.add((min(a, b), max(a, b)))
    return make_graph(positions, edges)


def floyd_warshall(graph):
    n = len(graph)
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b in graph.edges:
        w = math.dist(graph.nodes[a].position, graph.nodes[b].position)
        d[a, b] = d[b, a] = w
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


def brute_force_dtw(dist, ref, pred):
    """Minimum over every monotone boundary-aligned alignment, summed left to right."""
    n, m = len(ref), len(pred)
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc = acc + dist[ref[i], pred[j]]
        if i == n - 1 and j == m - 1:
            best = min(best, acc)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def all_simple_paths(graph, a, b):
    adj = graph.adjacency
    out = []

    def dfs(path):
        if path[-1] == b:
            out.append(tuple(path))
            return
        for v in adj[path[-1]]:
            if v not in path:
                dfs(path + [v])

    dfs([a])
    return out


def path_sum(graph, path):
    return sum(graph.adjacency[u][v] for u, v in zip(path, path[1:]))


def random_walk(rng, graph, length):
    node = int(rng.integers(len(graph)))
    walk = [node]
    adj = graph.adjacency
    for _ in range(length - 1):
        nbrs = sorted(adj[walk[-1]])
        if not nbrs:
            break
        walk.append(int(nbrs[int(rng.integers(len(nbrs)))]))
    return walk


def pairs(seq):
    return itertools.combinations(seq, 2)
