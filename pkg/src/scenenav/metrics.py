"""Trajectory metrics (TL, NE, SR, SPL, nDTW) and run-level aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .world import NavGraph

SUCCESS_DISTANCE = 3.0
NDTW_THRESHOLD = 3.0
SLOPE_GROUP_SIZE = 50
METRIC_NAMES = ("tl", "ne", "sr", "spl", "ndtw")


@dataclass(frozen=True)
class EpisodeMetrics:
    tl: float
    ne: float
    success: int
    spl: float
    ndtw: float

    def as_row(self) -> dict:
        d = asdict(self)
        d["sr"] = d.pop("success")
        return d


def path_length(graph: NavGraph, trajectory: Sequence[int]) -> float:
    for node in trajectory:
        graph.check_node(node)
    adj = graph.adjacency
    total = 0.0
    for a, b in zip(trajectory, trajectory[1:]):
        w = adj[a].get(b)
        if w is None:
            raise ValueError(f"trajectory step {a}->{b} is not an edge of {graph.env_id!r}")
        total += w
    return total


def navigation_error(graph: NavGraph, stop: int, goal: int) -> float:
    graph.check_node(stop)
    graph.check_node(goal)
    return float(graph.distances[stop, goal])


def success(ne: float, threshold: float = SUCCESS_DISTANCE) -> int:
    return int(ne <= threshold)


def spl(succeeded: int, shortest_len: float, pred_len: float) -> float:
    if shortest_len < 0 or pred_len < 0:
        raise ValueError("path lengths must be non-negative")
    if shortest_len == 0:
        return float(succeeded)
    return succeeded * shortest_len / max(shortest_len, pred_len)


def dtw(graph: NavGraph, reference: Sequence[int], predicted: Sequence[int]) -> float:
    """Boundary-aligned DTW cost with match/insert/delete steps over geodesic distances."""
    if not reference or not predicted:
        raise ValueError("dtw needs non-empty paths")
    d = graph.distances
    n, m = len(reference), len(predicted)
    cost = np.full((n + 1, m + 1), np.inf)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        r = reference[i - 1]
        for j in range(1, m + 1):
            best = min(cost[i - 1, j - 1], cost[i - 1, j], cost[i, j - 1])
            cost[i, j] = best + d[r, predicted[j - 1]]
    return float(cost[n, m])


def ndtw(graph: NavGraph, reference: Sequence[int], predicted: Sequence[int],
         threshold: float = NDTW_THRESHOLD) -> float:
    return math.exp(-dtw(graph, reference, predicted) / (len(reference) * threshold))


def evaluate_episode(graph: NavGraph, reference: Sequence[int], trajectory: Sequence[int]) -> EpisodeMetrics:
    tl = path_length(graph, trajectory)
    ne = navigation_error(graph, trajectory[-1], reference[-1])
    ok = success(ne)
    shortest = float(graph.distances[reference[0], reference[-1]])
    return EpisodeMetrics(tl=tl, ne=ne, success=ok, spl=spl(ok, shortest, tl),
                          ndtw=ndtw(graph, reference, trajectory))


def adaptation_slope(per_episode_success: Sequence[float], group_size: int = SLOPE_GROUP_SIZE) -> float:
    """OLS slope of group-mean success against group index (trailing partial group dropped)."""
    values = np.asarray(per_episode_success, dtype=np.float64)
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if len(values) < 2 * group_size:
        raise ValueError(
            f"adaptation_slope needs at least {2 * group_size} episodes (2 groups of {group_size}), "
            f"got {len(values)}"
        )
    groups = len(values) // group_size
    means = values[: groups * group_size].reshape(groups, group_size).mean(axis=1)
    x = np.arange(groups, dtype=np.float64)
    xc = x - x.mean()
    return float(xc @ (means - means.mean()) / (xc @ xc))


def summarize(runs: Sequence[Mapping[str, float]]) -> dict[str, dict[str, float]]:
    """Mean and standard error (sample std / sqrt(n)) per metric across runs."""
    if not runs:
        raise ValueError("summarize needs at least one run")
    out = {}
    for key in runs[0]:
        vals = np.array([r[key] for r in runs], dtype=np.float64)
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out[key] = {"mean": float(vals.mean()), "stderr": se}
    return out
