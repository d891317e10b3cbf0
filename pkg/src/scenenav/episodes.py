"""Reference paths and symbolic instructions in three styles.

Token layout (ids):

    0..4     GO, TURN_LEFT, TURN_RIGHT, STOP_AT, MASK
    5..12    scene fillers
    13..32   persona synonyms, four per persona (one per verb)
    33..42   persona fillers, two slots per persona
    48..     landmarks (48 + landmark id)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .world import NavGraph, UnknownNodeError, dijkstra, shortest_path

GO, TURN_LEFT, TURN_RIGHT, STOP_AT, MASK = range(5)
VERBS = (GO, TURN_LEFT, TURN_RIGHT, STOP_AT)
SCENE_FILLERS = tuple(range(5, 13))
_SYN_BASE = 13
_PFILL_BASE = 33
LANDMARK_BASE = 48

PERSONAS = ("child", "keith", "moira", "rachel", "sheldon")
STYLES = ("basic", "scene", "user")

TURN_THRESHOLD_DEG = 30.0
_SCENE_SALT = 0x5CE
_PERSONA_SALT = 0x9E5


class MalformedInstructionError(ValueError):
    pass


class PathSamplingError(ValueError):
    pass


def landmark_token(landmark: int) -> int:
    return LANDMARK_BASE + landmark


def is_landmark(token: int) -> bool:
    return token >= LANDMARK_BASE


def vocab_size(landmark_vocab_size: int) -> int:
    return LANDMARK_BASE + landmark_vocab_size


def token_name(token: int) -> str:
    if token < 5:
        return ("GO", "TURN_LEFT", "TURN_RIGHT", "STOP_AT", "MASK")[token]
    if token in SCENE_FILLERS:
        return f"FILLER_{token - SCENE_FILLERS[0]}"
    if _SYN_BASE <= token < _PFILL_BASE:
        p, v = divmod(token - _SYN_BASE, 4)
        return f"{PERSONAS[p].upper()}_SYN_{v}"
    if _PFILL_BASE <= token < _PFILL_BASE + 2 * len(PERSONAS):
        p, v = divmod(token - _PFILL_BASE, 2)
        return f"{PERSONAS[p].upper()}_FILLER_{v}"
    if is_landmark(token):
        return f"L{token - LANDMARK_BASE}"
    return f"UNUSED_{token}"


@dataclass(frozen=True)
class Persona:
    name: str
    lexicon: dict  # verb -> synonym token
    fillers: tuple[int, ...]

    @property
    def inverse(self) -> dict:
        return {v: k for k, v in self.lexicon.items()}


def persona(name: str) -> Persona:
    if name not in PERSONAS:
        raise KeyError(f"unknown persona {name!r}; expected one of {PERSONAS}")
    idx = PERSONAS.index(name)
    rng = np.random.default_rng([_PERSONA_SALT, idx])
    slots = [_SYN_BASE + 4 * idx + int(j) for j in rng.permutation(4)]
    n_fill = int(rng.integers(0, 3))
    fillers = tuple(_PFILL_BASE + 2 * idx + j for j in range(n_fill))
    return Persona(name, dict(zip(VERBS, slots)), fillers)


@dataclass(frozen=True)
class Instruction:
    tokens: tuple[int, ...]
    style: str = "basic"
    persona: str | None = None
    source_path: int | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def normalized(self) -> tuple[int, ...]:
        """Content tokens after undoing the style (fillers dropped, synonyms mapped back)."""
        inverse = persona(self.persona).inverse if self.style == "user" and self.persona else {}
        out = []
        for t in self.tokens:
            t = inverse.get(t, t)
            if t in VERBS or is_landmark(t):
                out.append(t)
        return tuple(out)

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "style": self.style,
                "persona": self.persona, "source_path": self.source_path}

    @classmethod
    def from_json(cls, d) -> "Instruction":
        return cls(tuple(int(t) for t in d["tokens"]), d.get("style", "basic"),
                   d.get("persona"), d.get("source_path"))


@dataclass(frozen=True)
class Episode:
    episode_id: int
    instruction: Instruction
    reference_path: tuple[int, ...]

    @property
    def start(self) -> int:
        return self.reference_path[0]

    @property
    def goal(self) -> int:
        return self.reference_path[-1]

    def to_json(self) -> dict:
        return {"episode_id": self.episode_id, "instruction": self.instruction.to_json(),
                "reference_path": list(self.reference_path),
                "start": self.start, "goal": self.goal}

    @classmethod
    def from_json(cls, d) -> "Episode":
        ep = cls(int(d["episode_id"]), Instruction.from_json(d["instruction"]),
                 tuple(int(n) for n in d["reference_path"]))
        if ("start" in d and d["start"] != ep.start) or ("goal" in d and d["goal"] != ep.goal):
            raise ValueError(f"episode {ep.episode_id}: start/goal disagree with reference path")
        return ep


def _pair_hops(graph: NavGraph) -> dict[tuple[int, int], tuple[int, ...]]:
    out = {}
    for a in range(len(graph)):
        _, paths = dijkstra(graph.adjacency, a)
        for b, p in paths.items():
            if b != a:
                out[(a, b)] = p
    return out


def sample_paths(graph: NavGraph, n: int, hops: tuple[int, int] = (4, 7), seed: int = 0) -> list[tuple[int, ...]]:
    """Draw ``n`` shortest paths (with replacement) whose hop count lies in ``hops``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    lo, hi = hops
    if lo < 1 or hi < lo:
        raise PathSamplingError(f"invalid hop range {hops}")
    if n == 0:
        return []
    eligible = [p for _, p in sorted(_pair_hops(graph).items()) if lo <= len(p) - 1 <= hi]
    if not eligible:
        raise PathSamplingError(
            f"graph {graph.env_id!r} has no shortest path with {lo}..{hi} hops "
            f"({len(graph)} nodes)"
        )
    rng = np.random.default_rng([seed, 0x9A7])
    picks = rng.integers(len(eligible), size=n)
    return [eligible[int(i)] for i in picks]


def turn_side(h1, h2) -> int:
    """+1 for a left turn from heading ``h1`` to ``h2``, -1 for right, 0 within the threshold."""
    cross = h1[0] * h2[1] - h1[1] * h2[0]
    dot = h1[0] * h2[0] + h1[1] * h2[1]
    angle = math.degrees(math.atan2(abs(cross), dot))
    if angle <= TURN_THRESHOLD_DEG:
        return 0
    return 1 if cross > 0 else -1


def template_tokens(path: Sequence[int], position, landmark) -> list[int]:
    """``GO [TURN] L(n_i)`` per hop, then ``STOP_AT L(goal)``.

    ``position`` and ``landmark`` map node ids to coordinates and landmark ids,
    so the same template serves the ground-truth graph and the speaker.
    """
    if not path:
        raise ValueError("empty path")
    tokens: list[int] = []
    for i in range(len(path) - 1):
        tokens.append(GO)
        if i > 0:
            pa, pb, pc = position(path[i - 1]), position(path[i]), position(path[i + 1])
            side = turn_side((pb[0] - pa[0], pb[1] - pa[1]), (pc[0] - pb[0], pc[1] - pb[1]))
            if side:
                tokens.append(TURN_LEFT if side > 0 else TURN_RIGHT)
        tokens.append(landmark_token(landmark(path[i])))
    return tokens + [STOP_AT, landmark_token(landmark(path[-1]))]


def base_instruction(graph: NavGraph, path: Sequence[int], *, dropout: float = 0.0,
                     seed: int = 0, source_path: int | None = None) -> Instruction:
    """Basic-style instruction for ``path``.

    ``dropout`` removes non-terminal tokens independently; the final
    ``STOP_AT L(goal)`` pair is never dropped.
    """
    for node in path:
        graph.check_node(node)
    tokens = template_tokens(path, lambda n: graph.nodes[n].position, lambda n: graph.nodes[n].landmark)
    if dropout > 0 and len(tokens) > 2:
        rng = np.random.default_rng([seed, 0xD0, *path])
        keep = rng.random(len(tokens) - 2) >= dropout
        tokens = [t for t, k in zip(tokens, keep) if k] + tokens[-2:]
    return Instruction(tuple(tokens), "basic", None, source_path)


def style_transform(inst: Instruction, style: str, persona_name: str | None = None) -> Instruction:
    if inst.style != "basic":
        raise ValueError(f"style_transform expects a basic instruction, got {inst.style!r}")
    if style == "basic":
        return inst
    if style == "scene":
        rng = np.random.default_rng([_SCENE_SALT, *inst.tokens])
        out = []
        for t in inst.tokens:
            if t in (GO, STOP_AT):
                out.append(SCENE_FILLERS[int(rng.integers(len(SCENE_FILLERS)))])
            out.append(t)
        return Instruction(tuple(out), "scene", None, inst.source_path)
    if style == "user":
        if persona_name is None:
            raise KeyError("user style requires a persona")
        p = persona(persona_name)
        out = list(p.fillers) + [p.lexicon.get(t, t) for t in inst.tokens]
        return Instruction(tuple(out), "user", persona_name, inst.source_path)
    raise ValueError(f"unknown style {style!r}")


def validate_instruction(inst: Instruction) -> tuple[int, ...]:
    content = inst.normalized()
    if content.count(STOP_AT) != 1:
        raise MalformedInstructionError(f"expected exactly one STOP_AT, found {content.count(STOP_AT)}")
    if len(content) < 2 or content[-2] != STOP_AT or not is_landmark(content[-1]):
        raise MalformedInstructionError("STOP_AT must be followed by exactly one landmark at the tail")
    return content


def oracle_decode(inst: Instruction) -> int:
    """Goal landmark id named after STOP_AT."""
    return validate_instruction(inst)[-1] - LANDMARK_BASE


def make_episodes(graph: NavGraph, n: int, *, style: str = "basic", persona_name: str | None = None,
                  hops: tuple[int, int] = (4, 7), seed: int = 0, dropout: float = 0.0) -> list[Episode]:
    paths = sample_paths(graph, n, hops, seed)
    episodes = []
    for i, path in enumerate(paths):
        basic = base_instruction(graph, path, dropout=dropout, seed=seed * 100003 + i, source_path=i)
        inst = style_transform(basic, style, persona_name)
        episodes.append(Episode(i, inst, tuple(path)))
    return episodes


def check_episode(graph: NavGraph, ep: Episode) -> None:
    for node in ep.reference_path:
        if node not in graph:
            raise UnknownNodeError(f"episode {ep.episode_id}: node {node} not in {graph.env_id!r}")
    _, length = shortest_path(graph, ep.start, ep.goal)
    ref = 0.0
    for a, b in zip(ep.reference_path, ep.reference_path[1:]):
        ref += graph.adjacency[a][b]
    if ref != length:
        raise ValueError(f"episode {ep.episode_id}: reference path is not a shortest path")
    validate_instruction(ep.instruction)


def save_episodes(episodes: Iterable[Episode], path: str | Path, landmark_vocab_size: int) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_json()) + "\n")
    vocab = {str(t): token_name(t) for t in range(vocab_size(landmark_vocab_size))}
    path.with_suffix(".vocab.json").write_text(json.dumps(vocab, indent=1))


def load_episodes(path: str | Path) -> list[Episode]:
    with Path(path).open() as fh:
        return [Episode.from_json(json.loads(line)) for line in fh if line.strip()]
