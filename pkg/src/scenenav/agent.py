"""Global-action-space agent: candidate scoring, route planning, episode loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .episodes import (
    GO,
    LANDMARK_BASE,
    STOP_AT,
    TURN_LEFT,
    TURN_RIGHT,
    Episode,
    Instruction,
    is_landmark,
    oracle_decode,
    turn_side,
)
from .memory import EpisodeRecord, GlobalGraph, MemoryBank
from .world import NavGraph, UnreachableError, dijkstra, landmark_embedding

STOP = -1
DEFAULT_STEP_LIMIT = 15

FEATURES = (
    "next_landmark_match",
    "later_landmark_match",
    "goal_landmark_match",
    "instruction_cosine",
    "progress_to_target",
    "route_cost",
    "adjacent",
    "turn_agrees",
    "revisits_consumed_landmark",
    "stop_at_goal_landmark",
    "stop_bias",
    "stop_step_fraction",
)
NUM_FEATURES = len(FEATURES)


@dataclass
class PolicyParams:
    theta: np.ndarray
    version: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1:
            raise ValueError("theta must be a vector")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @classmethod
    def zeros(cls) -> "PolicyParams":
        return cls(np.zeros(NUM_FEATURES))

    def updated(self, theta: np.ndarray) -> "PolicyParams":
        return PolicyParams(theta, self.version + 1)

    def to_json(self) -> dict:
        return {"theta": [float(x) for x in self.theta], "version": self.version}

    @classmethod
    def from_json(cls, d) -> "PolicyParams":
        return cls(np.asarray(d["theta"], dtype=np.float64), int(d.get("version", 0)))


@lru_cache(maxsize=None)
def _token_vector(token: int, dim: int) -> np.ndarray:
    if is_landmark(token):
        return landmark_embedding(token - LANDMARK_BASE, dim)
    rng = np.random.default_rng([0x70C, dim, token])
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ParsedInstruction:
    """Clause view of an instruction as the agent reads it.

    Each landmark token closes a clause. ``turns[i]`` is the turn word of
    clause ``i`` (+1 left, -1 right, 0 straight) or None when the clause has
    no recognisable motion word, e.g. after persona rewording.
    """

    tokens: tuple[int, ...]
    landmarks: tuple[int, ...]
    turns: tuple[int | None, ...]
    clause_starts: tuple[int, ...]

    @property
    def goal_landmark(self) -> int | None:
        return self.landmarks[-1] if self.landmarks else None


def parse_instruction(inst: Instruction) -> ParsedInstruction:
    lms, turns, starts = [], [], []
    start, turn = 0, None
    for idx, t in enumerate(inst.tokens):
        if is_landmark(t):
            lms.append(t - LANDMARK_BASE)
            turns.append(turn)
            starts.append(start)
            start, turn = idx + 1, None
        elif t == GO and turn is None:
            turn = 0
        elif t == TURN_LEFT:
            turn = 1
        elif t == TURN_RIGHT:
            turn = -1
        elif t == STOP_AT:
            turn = None
    return ParsedInstruction(inst.tokens, tuple(lms), tuple(turns), tuple(starts))


@dataclass
class AgentState:
    env: NavGraph
    instruction: Instruction
    current: int
    known: dict[int, dict[int, float]]
    global_graph: GlobalGraph | None = None
    step: int = 0
    step_limit: int = DEFAULT_STEP_LIMIT
    episode_visited: set[int] = field(default_factory=set)
    trajectory: list[int] = field(default_factory=list)
    pointer: int = 0
    parsed: ParsedInstruction | None = None
    perceive: bool = True
    _routes: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.parsed is None:
            self.parsed = parse_instruction(self.instruction)
        if not self.trajectory:
            self.arrive(self.current)

    def observe(self, node: int) -> None:
        """Local observability: a node's ground-truth neighbours become known."""
        known = self.known
        here = known.setdefault(node, {})
        self._routes = None
        if not self.perceive:
            return
        for nbr, w in self.env.adjacency[node].items():
            here[nbr] = w
            known.setdefault(nbr, {})[node] = w

    def arrive(self, node: int) -> None:
        self.current = node
        self.trajectory.append(node)
        self.episode_visited.add(node)
        self.observe(node)
        lms = self.parsed.landmarks
        lm = self.env.landmarks[node]
        for j in range(self.pointer, len(lms)):
            if lms[j] == lm:
                self.pointer = j + 1
                break

    def routes(self):
        """Known-graph distances and routes from the current node (cached per position)."""
        if self._routes is None or self._routes[0] != self.current:
            dist, paths = dijkstra(self.known, self.current)
            self._routes = (self.current, dist, paths)
        return self._routes[1], self._routes[2]

    @property
    def scale(self) -> float:
        return self.env.spec.mean_edge_length if self.env.spec else 2.25


def initial_known(env: NavGraph, global_graph: GlobalGraph | None) -> dict[int, dict[int, float]]:
    if global_graph is None:
        return {}
    return global_graph.adjacency()


def candidate_set(state: AgentState) -> list[int]:
    dist, _ = state.routes()
    return sorted(n for n in dist if n not in state.episode_visited) + [STOP]


def feature_matrix(state: AgentState, candidates: Sequence[int]) -> np.ndarray:
    env = state.env
    lm_of = env.landmarks
    parsed = state.parsed
    lms = parsed.landmarks
    nl = len(lms)
    p = state.pointer
    cur = state.current
    s = state.scale
    dist, _ = state.routes()

    next_lm = lms[p] if p < nl else None
    later = set(lms[p + 1:nl - 1])
    consumed = set(lms[:p])
    goal = parsed.goal_landmark

    if p < nl:
        toks = parsed.tokens[parsed.clause_starts[p]:]
        emb = np.mean([_token_vector(t, env.feature_dim) for t in toks], axis=0)
        norm = np.linalg.norm(emb)
        cos = env.panorama_means @ (emb / norm) if norm > 0 else np.zeros(len(env))
    else:
        cos = np.zeros(len(env))

    # progress target: nearest known node carrying the furthest still-pending landmark
    target_dist = None
    for j in range(nl - 1, p - 1, -1):
        hits = [n for n in dist if lm_of[n] == lms[j]]
        if hits:
            target = min(hits, key=lambda n: (dist[n], n))
            target_dist, _ = dijkstra(state.known, target)
            break

    turn = None
    if p >= 1 and len(state.trajectory) >= 2 and parsed.turns[p - 1] is not None:
        turn = parsed.turns[p - 1]
        pos = env.positions
        heading = pos[cur, :2] - pos[state.trajectory[-2], :2]

    rows = np.zeros((len(candidates), NUM_FEATURES))
    cur_adj = state.known.get(cur, {})
    for i, c in enumerate(candidates):
        row = rows[i]
        if c == STOP:
            row[9] = float(lm_of[cur] == goal)
            row[10] = 1.0
            row[11] = state.step / max(state.step_limit, 1)
            continue
        lc = lm_of[c]
        row[0] = float(lc == next_lm)
        row[1] = float(lc in later)
        row[2] = float(lc == goal)
        row[3] = cos[c]
        if target_dist is not None:
            row[4] = (target_dist[cur] - target_dist[c]) / s
        row[5] = dist[c] / s
        row[6] = float(c in cur_adj)
        if turn is not None:
            row[7] = float(turn_side(heading, pos[c, :2] - pos[cur, :2]) == turn)
        row[8] = float(lc in consumed)
    return rows


def score_candidates(theta, state: AgentState, candidates: Sequence[int]) -> np.ndarray:
    theta = theta.theta if isinstance(theta, PolicyParams) else np.asarray(theta, dtype=np.float64)
    if theta.shape != (NUM_FEATURES,):
        raise ValueError(f"theta has shape {theta.shape}; expected ({NUM_FEATURES},)")
    return feature_matrix(state, candidates) @ theta


def select_action(logits: Sequence[float], candidates: Sequence[int]) -> int:
    if len(candidates) == 0 or len(logits) != len(candidates):
        raise ValueError("select_action needs equally many logits and candidates (at least one)")
    return candidates[int(np.argmax(np.asarray(logits)))]


def plan_route(known: dict[int, dict[int, float]], start: int, target: int) -> list[int]:
    if start not in known and start != target:
        raise UnreachableError(f"start node {start} is not in the known graph")
    if start == target:
        return [start]
    dist, paths = dijkstra(known, start, target)
    if target not in dist:
        raise UnreachableError(f"node {target} unreachable from {start} in the known graph")
    return list(paths[target])


class Policy(Protocol):
    def logits(self, state: AgentState, candidates: list[int], features: np.ndarray) -> np.ndarray: ...


class LinearPolicy:
    def __init__(self, params: PolicyParams):
        self.params = params

    def logits(self, state, candidates, features):
        return features @ self.params.theta


class OracleDecoderPolicy:
    """Reads the goal landmark straight from the instruction and heads for it."""

    def logits(self, state, candidates, features):
        goal = oracle_decode(state.instruction)
        lm_of = state.env.landmarks
        out = np.zeros(len(candidates))
        for i, c in enumerate(candidates):
            if c == STOP:
                out[i] = 2.0 if lm_of[state.current] == goal else -1.0
            elif lm_of[c] == goal:
                out[i] = 1.0
        return out


class ExpertPolicy:
    """Teacher with ground-truth access: minimise known route + true remaining distance."""

    def __init__(self, goal: int):
        self.goal = goal

    def choose(self, state: AgentState, candidates: list[int]) -> int:
        if state.current == self.goal:
            return candidates.index(STOP)
        dist, _ = state.routes()
        remaining = state.env.distances[:, self.goal]
        best, best_key = None, None
        for i, c in enumerate(candidates):
            if c == STOP:
                continue
            key = (dist[c] + remaining[c], -dist[c], c)
            if best_key is None or key < best_key:
                best, best_key = i, key
        return best if best is not None else candidates.index(STOP)

    def logits(self, state, candidates, features):
        out = np.zeros(len(candidates))
        out[self.choose(state, candidates)] = 1.0
        return out


@dataclass
class DecisionPoint:
    candidates: tuple[int, ...]
    features: np.ndarray
    logits: np.ndarray
    choice: int


@dataclass
class TrajectoryResult:
    episode_id: int
    trajectory: list[int]
    actions: list[int]
    stopped: bool
    decisions: list[DecisionPoint]
    record: EpisodeRecord

    @property
    def step_count(self) -> int:
        return len(self.decisions)

    def to_json(self) -> dict:
        return {"episode_id": self.episode_id, "trajectory": self.trajectory,
                "actions": self.actions, "stopped": self.stopped, "step_count": self.step_count}


def run_episode(env: NavGraph, episode: Episode, policy, global_graph: GlobalGraph | None = None,
                bank: MemoryBank | None = None, step_limit: int = DEFAULT_STEP_LIMIT) -> TrajectoryResult:
    """Execute one instruction; the record is appended to ``bank`` afterwards.

    ``global_graph`` is read, never mutated: the agent works on a private
    copy of its adjacency with every node unvisited.
    """
    if isinstance(policy, PolicyParams):
        policy = LinearPolicy(policy)
    env.check_node(episode.start)
    state = AgentState(env=env, instruction=episode.instruction, current=episode.start,
                       known=initial_known(env, global_graph), global_graph=global_graph,
                       step_limit=step_limit)
    observations = [episode.start]
    moves: list[int] = []
    actions: list[int] = []
    decisions: list[DecisionPoint] = []
    stopped = False
    while state.step < step_limit:
        candidates = candidate_set(state)
        feats = feature_matrix(state, candidates)
        logits = np.asarray(policy.logits(state, candidates, feats), dtype=np.float64)
        choice = select_action(logits, candidates)
        decisions.append(DecisionPoint(tuple(candidates), feats, logits, candidates.index(choice)))
        actions.append(choice)
        state.step += 1
        if choice == STOP:
            stopped = True
            break
        _, paths = state.routes()
        for node in paths[choice][1:]:
            state.arrive(node)
        moves.append(choice)
        observations.append(choice)
    record = EpisodeRecord(episode.instruction, tuple(observations), tuple(moves),
                           tuple(state.trajectory), episode.episode_id)
    if bank is not None:
        bank.append(record)
    return TrajectoryResult(episode.episode_id, list(state.trajectory), actions, stopped, decisions, record)
