"""Unsupervised parameter updates driven by the memory bank.

Three families share one contract: take parameters plus memory-derived data,
take a single gradient step, and report the objective before and after.

* entropy minimisation over recent decision points (``tent``, and ``sar``
  which first drops unreliable high-entropy samples);
* back-translation: pseudo-instructions for paths over visited nodes, then
  one imitation step;
* masked-token prediction on stored instructions with a separate language
  head that never touches the action scorer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agent import STOP, AgentState, PolicyParams, candidate_set, feature_matrix
from .episodes import MASK, Instruction, template_tokens, vocab_size
from .memory import GlobalGraph, MemoryBank
from .world import NavGraph, UnknownNodeError, dijkstra

STRATEGIES = ("none", "tent", "sar", "back_translation", "mlm")


@dataclass(frozen=True)
class AdaptConfig:
    strategy: str = "none"
    learning_rate: float = 0.01
    reliability_threshold: float | None = None
    bt_sample_count: int = 8
    mask_rate: float = 0.15
    interval: int = 10

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown adaptation strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.mask_rate < 1:
            raise ValueError("mask_rate must lie in (0, 1)")
        if self.strategy == "back_translation" and self.bt_sample_count < 1:
            raise ValueError("bt_sample_count must be >= 1")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")


@dataclass(frozen=True)
class UpdateStats:
    objective_before: float
    objective_after: float
    samples_used: int
    noop: bool = False


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


def sample_entropy(features: np.ndarray, theta: np.ndarray) -> float:
    logp = _log_softmax(features @ theta)
    return float(-(np.exp(logp) * logp).sum())


def entropy_objective(theta: np.ndarray, batch: Sequence[np.ndarray]) -> tuple[float, np.ndarray]:
    """Mean Shannon entropy of the action distributions and its gradient in theta."""
    total, grad = 0.0, np.zeros_like(theta)
    for feats in batch:
        logp = _log_softmax(feats @ theta)
        p = np.exp(logp)
        h = -float(p @ logp)
        total += h
        grad += feats.T @ (-p * (logp + h))
    n = max(len(batch), 1)
    return total / n, grad / n


def imitation_objective(theta: np.ndarray, samples: Sequence[tuple[np.ndarray, int]]) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of demonstrated actions and its gradient."""
    total, grad = 0.0, np.zeros_like(theta)
    for feats, action in samples:
        logp = _log_softmax(feats @ theta)
        total -= float(logp[action])
        p = np.exp(logp)
        p[action] -= 1.0
        grad += feats.T @ p
    n = max(len(samples), 1)
    return total / n, grad / n


def default_reliability_threshold(batch: Sequence[np.ndarray]) -> float:
    mean_k = float(np.mean([len(f) for f in batch]))
    return 0.4 * math.log(mean_k) if mean_k > 1 else 0.0


def entropy_adapt(params: PolicyParams, batch: Sequence[np.ndarray], config: AdaptConfig):
    """One descent step on mean entropy; ``sar`` keeps only samples below the reliability threshold."""
    batch = [np.asarray(f, dtype=np.float64) for f in batch if len(f) > 1]
    if config.strategy == "sar" and batch:
        threshold = config.reliability_threshold
        if threshold is None:
            threshold = default_reliability_threshold(batch)
        batch = [f for f in batch if sample_entropy(f, params.theta) < threshold]
    if not batch:
        return params, UpdateStats(float("nan"), float("nan"), 0, noop=True)
    before, grad = entropy_objective(params.theta, batch)
    theta = params.theta - config.learning_rate * grad
    after, _ = entropy_objective(theta, batch)
    return params.updated(theta), UpdateStats(before, after, len(batch))


def speaker_generate(graph: GlobalGraph, path: Sequence[int]) -> Instruction:
    """Rule-based speaker that reads landmarks and positions from the global graph only."""
    for node in path:
        if node not in graph.nodes:
            raise UnknownNodeError(f"node {node} is not in the global graph")
    tokens = template_tokens(path, lambda n: graph.nodes[n].position, lambda n: graph.nodes[n].landmark)
    return Instruction(tuple(tokens), "basic")


def demonstrations(env: NavGraph, graph: GlobalGraph, path: Sequence[int],
                   instruction: Instruction) -> list[tuple[np.ndarray, int]]:
    """Teacher-forced decision points for ``path`` inside the agent's own map.

    Only the global graph is known and nothing new is perceived.
    """
    state = AgentState(env=env, instruction=instruction, current=path[0],
                       known=graph.adjacency(), perceive=False)
    samples = []
    for i in range(len(path)):
        candidates = candidate_set(state)
        target = path[i + 1] if i + 1 < len(path) else STOP
        if target not in candidates:
            break
        samples.append((feature_matrix(state, candidates), candidates.index(target)))
        if target == STOP:
            break
        state.step += 1
        state.arrive(target)
    return samples


def sample_bt_paths(graph: GlobalGraph, count: int, rng: np.random.Generator) -> list[list[int]]:
    nodes = sorted(graph.nodes)
    adj = graph.adjacency()
    paths = []
    attempts = 0
    while len(paths) < count and attempts < 20 * count:
        attempts += 1
        a, b = (nodes[int(i)] for i in rng.choice(len(nodes), size=2, replace=False))
        dist, routes = dijkstra(adj, a, b)
        if b in dist:
            paths.append(list(routes[b]))
    return paths


def bt_adapt(params: PolicyParams, bank: MemoryBank, graph: GlobalGraph, env: NavGraph,
             config: AdaptConfig, seed: int):
    """Back-translation: speaker pseudo-labels on visited-node paths, one imitation step."""
    if len(graph.nodes) < 2:
        return params, UpdateStats(float("nan"), float("nan"), 0, noop=True)
    rng = np.random.default_rng([seed, 0xB7, len(bank)])
    samples = []
    for path in sample_bt_paths(graph, config.bt_sample_count, rng):
        samples += demonstrations(env, graph, path, speaker_generate(graph, path))
    if not samples:
        return params, UpdateStats(float("nan"), float("nan"), 0, noop=True)
    before, grad = imitation_objective(params.theta, samples)
    theta = params.theta - config.learning_rate * grad
    after, _ = imitation_objective(theta, samples)
    return params.updated(theta), UpdateStats(before, after, len(samples))


def mask_count(length: int, rate: float) -> int:
    # guard against float noise such as 0.15 * 20 = 3.0000000000000004
    return max(1, min(length, math.ceil(rate * length - 1e-9)))


def masked_batch(bank: MemoryBank, config: AdaptConfig, seed: int, vocab: int):
    """Context count vectors and masked targets for every stored instruction."""
    xs, ys = [], []
    for idx, record in enumerate(bank):
        tokens = np.asarray(record.instruction.tokens)
        rng = np.random.default_rng([seed, 0x31, idx])
        k = mask_count(len(tokens), config.mask_rate)
        masked = rng.choice(len(tokens), size=k, replace=False)
        context = tokens.copy()
        context[masked] = MASK
        x = np.bincount(context, minlength=vocab).astype(np.float64)
        for pos in sorted(masked):
            xs.append(x)
            ys.append(int(tokens[pos]))
    if not xs:
        return np.zeros((0, vocab)), np.zeros(0, dtype=int)
    return np.stack(xs), np.asarray(ys)


def mlm_objective(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean masked-token NLL of a linear classifier ``softmax(W x)`` and its gradient in W."""
    z = x @ weights.T
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].sum()) / n
    p = np.exp(logp)
    p[np.arange(n), y] -= 1.0
    return loss, p.T @ x / n


def init_language_head(landmark_vocab_size: int) -> np.ndarray:
    v = vocab_size(landmark_vocab_size)
    return np.zeros((v, v))


def mlm_adapt(weights: np.ndarray, bank: MemoryBank, config: AdaptConfig, seed: int):
    """One step on the masked-token head; the action scorer is not involved."""
    if len(bank) == 0:
        return weights, UpdateStats(float("nan"), float("nan"), 0, noop=True)
    x, y = masked_batch(bank, config, seed, weights.shape[1])
    before, grad = mlm_objective(weights, x, y)
    new = weights - config.learning_rate * grad
    after, _ = mlm_objective(new, x, y)
    return new, UpdateStats(before, after, len(y))
