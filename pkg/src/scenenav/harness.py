"""Experiment orchestration: suites, policy training, sessions, ablations, reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .adapt import AdaptConfig, bt_adapt, entropy_adapt, init_language_head, mlm_adapt
from .agent import (
    DEFAULT_STEP_LIMIT,
    NUM_FEATURES,
    ExpertPolicy,
    LinearPolicy,
    OracleDecoderPolicy,
    PolicyParams,
    run_episode,
)
from .episodes import PERSONAS, Episode, make_episodes
from .memory import (
    GlobalGraph,
    MemoryBank,
    coverage,
    extend_global_graph,
    load_checkpoint,
    proportion_graph,
    rebuild_global_graph,
    save_checkpoint,
)
from .metrics import METRIC_NAMES, SLOPE_GROUP_SIZE, adaptation_slope, evaluate_episode, summarize
from .world import EnvSpec, NavGraph, generate_environment

log = logging.getLogger(__name__)

ALPHA_VALUES = (1, 50, 100, 150)
PROPORTION_VALUES = (0.25, 0.5, 0.75, 1.0)
TRAIN_STRATEGIES = ("empty-graph", "full-graph", "buffer")
UNBOUNDED_ALPHA = 2**31 - 1
PHASE_COVERAGE = 0.9

METRICS_COLUMNS = ("env_id", "repeat", "episode_idx", "episode_id", "style",
                   "tl", "ne", "sr", "spl", "ndtw", "coverage")
ADAPT_COLUMNS = ("env_id", "repeat", "episode_idx", "strategy", "objective_before",
                 "objective_after", "samples_used", "theta_norm")
REPORT_FILES = ("config.json", "summary.json", "metrics.csv")


class ArtifactError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class MemoryMode:
    kind: str = "gr"
    value: float = 50

    def __post_init__(self):
        if self.kind not in ("none", "gr", "proportion"):
            raise ValueError(f"unknown memory mode {self.kind!r}")
        if self.kind == "gr" and self.value != 0 and (int(self.value) != self.value or self.value < 1):
            raise ValueError(f"gr alpha must be an integer >= 1, got {self.value}")
        if self.kind == "proportion" and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"proportion must lie in [0, 1], got {self.value}")

    @property
    def alpha(self) -> int:
        """Buffer threshold; plain ``gr`` never re-initializes."""
        return int(self.value) if self.value else UNBOUNDED_ALPHA

    @classmethod
    def parse(cls, text: str) -> "MemoryMode":
        """``none``, ``gr`` (retain everything), ``gr:50`` or ``proportion:0.5``."""
        kind, _, value = text.partition(":")
        if kind == "none":
            return cls("none", 0)
        if kind == "gr" and not value:
            return cls("gr", 0)
        if not value:
            raise ValueError(f"memory mode {text!r} needs a value, e.g. gr:50 or proportion:0.5")
        if kind == "gr" and int(value) < 1:
            raise ValueError(f"gr alpha must be an integer >= 1, got {value}")
        return cls(kind, int(value) if kind == "gr" else float(value))

    def __str__(self) -> str:
        if self.kind == "none" or (self.kind == "gr" and not self.value):
            return self.kind
        return f"gr:{int(self.value)}" if self.kind == "gr" else f"proportion:{self.value:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    eval_envs: int = 12
    train_envs: int = 8
    val_envs: int = 2
    node_range: tuple[int, int] = (25, 60)
    landmark_duplication_rate: float = 0.0
    instruction_dropout: float = 0.25
    view_count: int = 36
    feature_dim: int = 32
    episodes: int = 600
    hops: tuple[int, int] = (4, 7)
    styles: tuple[str, ...] = ("basic", "scene", "user")
    memory: str = "gr:50"
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    repeats: int = 3
    step_limit: int = DEFAULT_STEP_LIMIT
    train_strategy: str = "buffer:50"
    train_episodes: int = 200
    policy: str | None = None
    oracle: bool = False
    out: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.eval_envs < 1:
            raise ValueError("eval_envs must be >= 1")
        MemoryMode.parse(self.memory)
        parse_strategy(self.train_strategy)

    @property
    def memory_mode(self) -> MemoryMode:
        return MemoryMode.parse(self.memory)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node_range"] = list(self.node_range)
        d["hops"] = list(self.hops)
        d["styles"] = list(self.styles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "adapt" in d and isinstance(d["adapt"], dict):
            d["adapt"] = AdaptConfig(**d["adapt"])
        for key in ("node_range", "hops", "styles"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def parse_strategy(text: str) -> tuple[str, int | None]:
    name, _, value = text.partition(":")
    if name not in TRAIN_STRATEGIES:
        raise ValueError(f"unknown training strategy {text!r}; expected one of {TRAIN_STRATEGIES}")
    if name == "buffer":
        alpha = int(value) if value else 50
        if alpha < 1:
            raise ValueError("buffer alpha must be >= 1")
        return name, alpha
    return name, None


def env_spec_for(config: ExperimentConfig, index: int, seed: int, layout: str) -> EnvSpec:
    lo, hi = config.node_range
    n = int(np.random.default_rng([seed, 0x5E]).integers(lo, hi + 1))
    return EnvSpec(node_count=n, layout=layout, landmark_duplication_rate=config.landmark_duplication_rate,
                   view_count=config.view_count, feature_dim=config.feature_dim)


def eval_environments(config: ExperimentConfig) -> list[NavGraph]:
    envs = []
    half = (config.eval_envs + 1) // 2
    for i in range(config.eval_envs):
        seed = config.seed * 1000 + i
        layout = "residential-grid" if i < half else "nonresidential-hall"
        tag = "R" if i < half else "N"
        envs.append(generate_environment(seed, env_spec_for(config, i, seed, layout), f"eval-{tag}{i:02d}"))
    return envs


def train_environments(config: ExperimentConfig, count: int | None = None, offset: int = 500,
                       prefix: str = "train") -> list[NavGraph]:
    envs = []
    for j in range(config.train_envs if count is None else count):
        seed = config.seed * 1000 + offset + j
        layout = "residential-grid" if j % 2 == 0 else "nonresidential-hall"
        envs.append(generate_environment(seed, env_spec_for(config, j, seed, layout), f"{prefix}-{offset + j}"))
    return envs


def validation_environments(config: ExperimentConfig) -> list[NavGraph]:
    """Held-out environments used only for model selection."""
    return train_environments(config, config.val_envs, offset=800, prefix="val")


def persona_for(env: NavGraph) -> str:
    return PERSONAS[env.rng_seed % len(PERSONAS)]


def episodes_for(env: NavGraph, config: ExperimentConfig, style: str, count: int | None = None) -> list[Episode]:
    return make_episodes(env, config.episodes if count is None else count, style=style,
                         persona_name=persona_for(env) if style == "user" else None,
                         hops=config.hops, seed=env.rng_seed, dropout=config.instruction_dropout)


# ---------------------------------------------------------------- training


class _Labeller:
    """Acts with ``actor`` while recording the expert's choice at every decision point."""

    def __init__(self, actor, goal: int):
        self.actor = actor
        self.expert = ExpertPolicy(goal)
        self.samples = []

    def logits(self, state, candidates, features):
        self.samples.append((features, self.expert.choose(state, candidates)))
        return self.actor.logits(state, candidates, features)


def collect_demonstrations(env: NavGraph, episodes: Sequence[Episode], strategy: str,
                           step_limit: int = DEFAULT_STEP_LIMIT, theta: np.ndarray | None = None):
    """Expert-labelled decision points under the strategy's graph context.

    With ``theta`` unset the expert drives (teacher forcing); otherwise the
    linear policy drives and the expert only labels (one DAgger round).
    Returns the ``(features, action)`` samples and the context of every episode.
    """
    name, alpha = parse_strategy(strategy)
    memory = GlobalGraph(alpha=alpha) if name == "buffer" else None
    full = proportion_graph(env, 1.0, np.random.default_rng(0)) if name == "full-graph" else None
    samples, contexts = [], []
    for ep in episodes:
        if name == "buffer":
            ctx = GlobalGraph(alpha=alpha) if memory.episodes_since_reset >= alpha else memory
        else:
            ctx = full
        contexts.append(ctx.copy() if ctx is not None and ctx is memory else ctx)
        actor = ExpertPolicy(ep.goal) if theta is None else LinearPolicy(PolicyParams(theta))
        labeller = _Labeller(actor, ep.goal)
        result = run_episode(env, ep, labeller, ctx, step_limit=step_limit)
        samples += labeller.samples
        if memory is not None:
            memory = extend_global_graph(memory, env, result.trajectory)
    return samples, contexts


def _pad(samples):
    kmax = max(len(f) for f, _ in samples)
    feats = np.zeros((len(samples), kmax, NUM_FEATURES))
    mask = np.full((len(samples), kmax), -np.inf)
    acts = np.empty(len(samples), dtype=int)
    for i, (f, a) in enumerate(samples):
        feats[i, :len(f)] = f
        mask[i, :len(f)] = 0.0
        acts[i] = a
    return feats, mask, acts


def fit_theta(samples, l2: float = 1e-3) -> np.ndarray:
    """Maximum-likelihood linear scorer with an L2 penalty (L-BFGS)."""
    feats, mask, acts = _pad(samples)
    rows = np.arange(len(acts))

    def objective(theta):
        z = feats @ theta + mask
        zmax = z.max(axis=1, keepdims=True)
        logp = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
        loss = -logp[rows, acts].mean() + l2 * theta @ theta
        p = np.exp(logp)
        p[rows, acts] -= 1.0
        grad = np.einsum("nk,nkf->f", p, feats) / len(acts) + 2 * l2 * theta
        return loss, grad

    res = minimize(objective, np.zeros(NUM_FEATURES), jac=True, method="L-BFGS-B")
    return res.x


def train_policy(train_envs: Sequence[NavGraph], strategy: str = "buffer:50", seed: int = 0,
                 episodes_per_env: int = 200, dropout: float = 0.25, hops=(4, 7),
                 step_limit: int = DEFAULT_STEP_LIMIT, l2: float = 1e-3,
                 dagger_rounds: int = 1, validation_envs: Sequence[NavGraph] = (),
                 validation_episodes: int = 100) -> PolicyParams:
    """Imitation of the expert under the chosen graph-context strategy.

    Teacher-forced demonstrations come first; each DAgger round then rolls out
    the current policy and relabels the states it visits with expert actions.
    With validation environments, the fit (one per round) with the best mean
    validation SPL is returned; ties go to the earlier fit.
    """
    if not train_envs:
        raise ValueError("train_policy needs at least one training environment")
    config = ExperimentConfig(seed=seed, instruction_dropout=dropout, hops=tuple(hops),
                              episodes=episodes_per_env, step_limit=step_limit, train_strategy=strategy)
    per_env = [(env, episodes_for(env, config, "basic")) for env in train_envs]
    samples = []
    for env, eps in per_env:
        samples += collect_demonstrations(env, eps, strategy, step_limit)[0]
    fits = [fit_theta(samples, l2)]
    for _ in range(dagger_rounds):
        for env, eps in per_env:
            samples += collect_demonstrations(env, eps, strategy, step_limit, fits[-1])[0]
        fits.append(fit_theta(samples, l2))
    if not validation_envs or len(fits) == 1:
        return PolicyParams(fits[-1])
    val_config = replace(config, episodes=validation_episodes)
    memory = validation_memory(strategy)
    scores = [validation_spl(PolicyParams(theta), validation_envs, val_config, memory) for theta in fits]
    return PolicyParams(fits[int(np.argmax(scores))])


def validation_memory(strategy: str) -> MemoryMode:
    """The evaluation memory mode matching a training graph-context strategy."""
    name, alpha = parse_strategy(strategy)
    if name == "buffer":
        return MemoryMode("gr", alpha)
    return MemoryMode.parse("none" if name == "empty-graph" else "proportion:1.0")


def validation_spl(params: PolicyParams, envs: Sequence[NavGraph], config: ExperimentConfig,
                   memory: MemoryMode) -> float:
    spl = []
    for env in envs:
        rows = Session(env, episodes_for(env, config, "basic"), params, memory, seed=env.rng_seed,
                       step_limit=config.step_limit).run()
        spl += [r["spl"] for r in rows]
    return float(np.mean(spl))


def resolve_policy(config: ExperimentConfig) -> PolicyParams:
    if config.policy:
        return PolicyParams.from_json(json.loads(Path(config.policy).read_text()))
    return train_policy(train_environments(config), config.train_strategy, config.seed,
                        episodes_per_env=config.train_episodes, dropout=config.instruction_dropout,
                        hops=config.hops, step_limit=config.step_limit,
                        validation_envs=validation_environments(config))


# ---------------------------------------------------------------- sessions


class Session:
    """Sequential execution of one episode stream in one environment.

    Owns the memory bank, the global graph, and the adapted parameters.
    Everything random is keyed by ``(seed, repeat, episode index)`` so a
    session restored from a checkpoint continues identically.
    """

    def __init__(self, env: NavGraph, episodes: Sequence[Episode], params: PolicyParams,
                 memory: MemoryMode, adapt: AdaptConfig | None = None, *, seed: int = 0,
                 repeat: int = 0, step_limit: int = DEFAULT_STEP_LIMIT, policy=None):
        self.env = env
        self.episodes = list(episodes)
        self.params = params
        self.memory = memory
        self.adapt = adapt or AdaptConfig()
        self.seed = seed
        self.repeat = repeat
        self.step_limit = step_limit
        self.fixed_policy = policy
        self.bank = MemoryBank(env.env_id, env)
        alpha = memory.alpha if memory.kind == "gr" else 1
        self.graph = GlobalGraph(alpha=alpha)
        self.language_head = None
        self.adapt_log: list[dict] = []

    @property
    def position(self) -> int:
        return len(self.bank)

    def context(self) -> GlobalGraph | None:
        k = self.position
        if self.memory.kind == "none":
            return None
        if self.memory.kind == "gr":
            return GlobalGraph(alpha=self.graph.alpha) if k % self.graph.alpha == 0 else self.graph
        rng = np.random.default_rng([self.seed, self.repeat, k, 0x9909])
        return proportion_graph(self.env, self.memory.value, rng)

    def step(self) -> tuple[dict, object]:
        k = self.position
        ep = self.episodes[k]
        ctx = self.context()
        policy = self.fixed_policy or LinearPolicy(self.params)
        result = run_episode(self.env, ep, policy, ctx, self.bank, self.step_limit)
        if self.memory.kind == "gr":
            self.graph = extend_global_graph(self.graph, self.env, result.trajectory)
            cov = coverage(self.graph, self.env)
        elif self.memory.kind == "proportion":
            cov = coverage(ctx, self.env)
        else:
            cov = 0.0
        m = evaluate_episode(self.env, ep.reference_path, result.trajectory)
        row = {"env_id": self.env.env_id, "repeat": self.repeat, "episode_idx": k,
               "episode_id": ep.episode_id, "style": ep.instruction.style, **m.as_row(), "coverage": cov}
        if self.fixed_policy is None:
            self._adapt(result)
        return row, result

    def _adapt(self, result) -> None:
        cfg = self.adapt
        k = self.position
        stats = None
        if cfg.strategy in ("tent", "sar"):
            self.params, stats = entropy_adapt(self.params, [d.features for d in result.decisions], cfg)
        elif cfg.strategy == "back_translation" and k % cfg.interval == 0:
            graph = self.graph if self.memory.kind == "gr" else rebuild_global_graph(self.bank, max(k, 1), self.env)
            self.params, stats = bt_adapt(self.params, self.bank, graph, self.env, cfg,
                                          seed=hash_seed(self.seed, self.repeat, k))
        elif cfg.strategy == "mlm" and k % cfg.interval == 0:
            if self.language_head is None:
                self.language_head = init_language_head(self.env.spec.landmark_vocab_size)
            self.language_head, stats = mlm_adapt(self.language_head, self.bank, cfg,
                                                  seed=hash_seed(self.seed, self.repeat, k))
        if stats is not None:
            self.adapt_log.append({
                "env_id": self.env.env_id, "repeat": self.repeat, "episode_idx": k - 1,
                "strategy": cfg.strategy, "objective_before": stats.objective_before,
                "objective_after": stats.objective_after, "samples_used": stats.samples_used,
                "theta_norm": float(np.linalg.norm(self.params.theta)),
            })

    def run(self, count: int | None = None) -> list[dict]:
        stop = len(self.episodes) if count is None else min(len(self.episodes), self.position + count)
        rows = []
        while self.position < stop:
            rows.append(self.step()[0])
        return rows

    def save(self, path: str | Path) -> None:
        extra = {"params": self.params.to_json(), "memory": str(self.memory), "repeat": self.repeat,
                 "seed": self.seed, "graph_alpha": self.graph.alpha}
        if self.language_head is not None:
            extra["language_head"] = self.language_head.tolist()
        save_checkpoint(path, self.bank, self.graph.alpha, extra)

    @classmethod
    def restore(cls, path: str | Path, env: NavGraph, episodes: Sequence[Episode],
                adapt: AdaptConfig | None = None, step_limit: int = DEFAULT_STEP_LIMIT) -> "Session":
        bank, alpha, extra = load_checkpoint(path, env)
        session = cls(env, episodes, PolicyParams.from_json(extra["params"]),
                      MemoryMode.parse(extra["memory"]), adapt, seed=extra["seed"],
                      repeat=extra["repeat"], step_limit=step_limit)
        session.bank = bank
        if session.memory.kind == "gr":
            session.graph = rebuild_global_graph(bank, alpha, env)
        if "language_head" in extra:
            session.language_head = np.asarray(extra["language_head"])
        return session


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def shuffled(episodes: Sequence[Episode], seed: int, repeat: int) -> list[Episode]:
    order = np.random.default_rng([seed, repeat, 0x5F]).permutation(len(episodes))
    return [episodes[int(i)] for i in order]


# ---------------------------------------------------------------- experiments


@dataclass
class SplitReport:
    split: str
    metrics: dict
    coverage_curve: list[float]
    adaptation_slope: float | None
    env_slopes: dict
    env_sr: dict
    wall_clock: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def split_name(env: NavGraph, style: str) -> str:
    tag = "R" if env.spec.layout == "residential-grid" else "N"
    return f"Test-{tag}-{style.capitalize()}"


def run_sessions(config: ExperimentConfig, params: PolicyParams, envs: Sequence[NavGraph],
                 policy=None, checkpoint_dir: Path | None = None) -> tuple[list[dict], list[dict]]:
    """Every (environment, style, repeat) session in a fixed order.

    With ``checkpoint_dir`` set, each finished session leaves its memory bank there.
    """
    rows, adapt_rows = [], []
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    mode = config.memory_mode
    for env in envs:
        for style in config.styles:
            base = episodes_for(env, config, style)
            for rep in range(config.repeats):
                session = Session(env, shuffled(base, env.rng_seed, rep), params, mode, config.adapt,
                                  seed=env.rng_seed, repeat=rep, step_limit=config.step_limit, policy=policy)
                rows += session.run()
                adapt_rows += session.adapt_log
                if checkpoint_dir is not None:
                    session.save(checkpoint_dir / f"{env.env_id}_{style}_r{rep}.json")
        log.info("finished %s", env.env_id)
    return rows, adapt_rows


def aggregate(rows: Sequence[dict], repeats: int) -> dict[str, SplitReport]:
    """Group per-episode rows into split reports with mean +- stderr over repeats."""
    by_split: dict[str, list[dict]] = {}
    for r in rows:
        tag = r["env_id"].split("-")[1][0]
        by_split.setdefault(f"Test-{tag}-{r['style'].capitalize()}", []).append(r)
    by_split["all"] = list(rows)
    reports = {}
    for name, group in sorted(by_split.items()):
        per_repeat = []
        for rep in range(repeats):
            sel = [r for r in group if r["repeat"] == rep]
            per_repeat.append({m: float(np.mean([r[m] for r in sel])) for m in METRIC_NAMES})
        cov_curve, env_slopes, env_sr = _curves(group, repeats)
        slopes = [s for s in env_slopes.values() if s is not None]
        reports[name] = SplitReport(
            split=name, metrics=summarize(per_repeat),
            coverage_curve=cov_curve,
            adaptation_slope=float(np.mean(slopes)) if slopes else None,
            env_slopes=env_slopes, env_sr=env_sr,
        )
    return reports


def adaptation_phase(coverage_curve: Sequence[float], threshold: float = PHASE_COVERAGE,
                     group_size: int = SLOPE_GROUP_SIZE) -> int | None:
    """Number of leading episodes regressed for the adaptation slope.

    The phase lasts until coverage first reaches ``threshold``, rounded up to
    whole groups and never shorter than two groups; streams that never reach
    the threshold use every episode. ``None`` when the stream is too short.
    """
    n = len(coverage_curve)
    if n < 2 * group_size:
        return None
    hits = np.flatnonzero(np.asarray(coverage_curve) >= threshold)
    if hits.size == 0:
        return n - n % group_size
    groups = max(2, -(-(int(hits[0]) + 1) // group_size))
    return min(groups * group_size, n - n % group_size)


def _curves(group, repeats):
    streams: dict[tuple, list[dict]] = {}
    for r in group:
        streams.setdefault((r["env_id"], r["style"], r["repeat"]), []).append(r)
    length = max(len(s) for s in streams.values())
    cov = np.zeros(length)
    count = np.zeros(length)
    env_slopes: dict[str, list[float]] = {}
    env_sr: dict[str, list[float]] = {}
    for (env_id, style, _), stream in sorted(streams.items()):
        stream.sort(key=lambda r: r["episode_idx"])
        c = np.array([r["coverage"] for r in stream])
        cov[:len(c)] += c
        count[:len(c)] += 1
        succ = [r["sr"] for r in stream]
        key = f"{env_id}/{style}"
        env_sr.setdefault(key, []).append(float(np.mean(succ)))
        phase = adaptation_phase(c)
        if phase is not None:
            env_slopes.setdefault(key, []).append(adaptation_slope(succ[:phase], SLOPE_GROUP_SIZE))
    curve = (cov / np.maximum(count, 1)).tolist()
    slopes = {k: float(np.mean(v)) for k, v in env_slopes.items()}
    for key in env_sr:
        slopes.setdefault(key, None)
    return curve, slopes, {k: float(np.mean(v)) for k, v in env_sr.items()}


def write_csv(path: Path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in r.items() if k in columns})


def run_experiment(config: ExperimentConfig, params: PolicyParams | None = None) -> dict[str, SplitReport]:
    """Run every (environment, style, repeat) session and write artifacts to ``config.out``."""
    start = time.perf_counter()
    policy = None
    if config.oracle:
        policy = OracleDecoderPolicy()
        params = params or PolicyParams.zeros()
    elif params is None:
        params = resolve_policy(config)
    envs = eval_environments(config)
    ckpt = Path(config.out) / "checkpoints" if config.out else None
    rows, adapt_rows = run_sessions(config, params, envs, policy, ckpt)
    reports = aggregate(rows, config.repeats)
    elapsed = time.perf_counter() - start
    for rep in reports.values():
        rep.wall_clock = elapsed
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        (out / "policy.json").write_text(json.dumps(params.to_json()))
        write_csv(out / "metrics.csv", rows, METRICS_COLUMNS)
        write_csv(out / "adaptation_log.csv", adapt_rows, ADAPT_COLUMNS)
        (out / "summary.json").write_text(json.dumps(
            {name: rep.to_json() for name, rep in reports.items()}, indent=2, sort_keys=True))
    return reports


def ablate(config: ExperimentConfig, axis: str, params: PolicyParams | None = None,
           values: Sequence | None = None) -> list[dict]:
    """Run the experiment once per axis value; returns one comparison row per value."""
    if axis == "alpha":
        values = values or ALPHA_VALUES
        modes = [f"gr:{int(v)}" for v in values]
    elif axis == "proportion":
        values = values or PROPORTION_VALUES
        modes = [f"proportion:{float(v):g}" for v in values]
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; expected 'alpha' or 'proportion'")
    if params is None and not config.oracle:
        params = resolve_policy(config)
    table = []
    for value, mode in zip(values, modes):
        out = str(Path(config.out) / mode.replace(":", "_")) if config.out else None
        reports = run_experiment(replace(config, memory=mode, out=out), params)
        row = {"axis": axis, "value": value, "memory": mode}
        for name, rep in reports.items():
            for metric in ("sr", "spl", "ndtw"):
                row[f"{name}:{metric}"] = rep.metrics[metric]["mean"]
                row[f"{name}:{metric}_se"] = rep.metrics[metric]["stderr"]
        table.append(row)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        cols = list(table[0])
        write_csv(out / f"ablation_{axis}.csv", table, cols)
        lines = [f"| {axis} | SR | SPL | nDTW |", "|---|---|---|---|"]
        for row in table:
            lines.append("| {} | {} | {} | {} |".format(
                row["value"], *(_pm(row[f"all:{m}"], row[f"all:{m}_se"]) for m in ("sr", "spl", "ndtw"))))
        (out / f"ablation_{axis}.md").write_text("\n".join(lines) + "\n")
    return table


def _pm(mean: float, se: float) -> str:
    return f"{100 * mean:.1f} ± {100 * se:.1f}"


def report(output_dir: str | Path) -> str:
    """Render ``report.md`` and ``report.csv`` from a finished experiment directory."""
    out = Path(output_dir)
    missing = [f for f in REPORT_FILES if not (out / f).is_file()]
    if missing:
        raise ArtifactError(f"{out}: missing experiment artifacts {missing} (expected {list(REPORT_FILES)})")
    summary = json.loads((out / "summary.json").read_text())
    lines = ["# Results", "", "| Split | SR | SPL | nDTW | TL | NE | slope |", "|---|---|---|---|---|---|---|"]
    rows = []
    for name in sorted(summary):
        if name == "all":
            continue
        rep = summary[name]
        m = rep["metrics"]
        slope = rep["adaptation_slope"]
        lines.append("| {} | {} | {} | {} | {:.2f} ± {:.2f} | {:.2f} ± {:.2f} | {} |".format(
            name, _pm(m["sr"]["mean"], m["sr"]["stderr"]), _pm(m["spl"]["mean"], m["spl"]["stderr"]),
            _pm(m["ndtw"]["mean"], m["ndtw"]["stderr"]), m["tl"]["mean"], m["tl"]["stderr"],
            m["ne"]["mean"], m["ne"]["stderr"], "n/a" if slope is None else f"{slope:+.4f}"))
        rows.append({"split": name, **{f"{k}_{s}": m[k][s] for k in METRIC_NAMES for s in ("mean", "stderr")},
                     "adaptation_slope": slope})
    curve = summary.get("all", next(iter(summary.values())))["coverage_curve"]
    marks = [i for i in (0, 49, 99, 199, 299, 399, 499, 599) if i < len(curve)]
    lines += ["", "## Graph coverage", "", "| Episode | " + " | ".join(str(i + 1) for i in marks) + " |",
              "|---|" + "---|" * len(marks),
              "| Coverage (%) | " + " | ".join(f"{100 * curve[i]:.1f}" for i in marks) + " |"]
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text)
    cols = list(rows[0]) if rows else ["split"]
    write_csv(out / "report.csv", rows, cols)
    return text
