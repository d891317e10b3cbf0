import math

import numpy as np
import pytest

from scenenav.adapt import (
    AdaptConfig,
    UpdateStats,
    bt_adapt,
    default_reliability_threshold,
    demonstrations,
    entropy_adapt,
    entropy_objective,
    imitation_objective,
    init_language_head,
    mask_count,
    masked_batch,
    mlm_adapt,
    mlm_objective,
    sample_bt_paths,
    sample_entropy,
    speaker_generate,
)
from scenenav.agent import NUM_FEATURES, PolicyParams, run_episode
from scenenav.episodes import MASK, make_episodes, oracle_decode
from scenenav.memory import GlobalGraph, MemoryBank, extend_global_graph
from scenenav.world import EnvSpec, UnknownNodeError, generate_environment


def random_batch(rng, size=None):
    size = size or int(rng.integers(1, 10))
    return [rng.normal(size=(int(rng.integers(2, 9)), NUM_FEATURES)) for _ in range(size)]


def relative_error(numeric, analytic):
    return np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture(scope="module")
def session():
    env = generate_environment(4, EnvSpec(node_count=35))
    bank = MemoryBank(env.env_id, env)
    graph = GlobalGraph(alpha=1000)
    theta = np.random.default_rng(0).normal(size=NUM_FEATURES)
    for ep in make_episodes(env, 30, seed=1, dropout=0.2):
        res = run_episode(env, ep, PolicyParams(theta), graph, bank)
        graph = extend_global_graph(graph, env, res.trajectory)
    return env, bank, graph


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig("dance")
    with pytest.raises(ValueError):
        AdaptConfig("tent", learning_rate=0.0)
    with pytest.raises(ValueError):
        AdaptConfig("mlm", mask_rate=1.0)
    with pytest.raises(ValueError):
        AdaptConfig("back_translation", bt_sample_count=0)


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        batch = random_batch(rng)
        theta = rng.normal(size=NUM_FEATURES)
        _, grad = entropy_objective(theta, batch)
        num = central_difference(lambda t: entropy_objective(t, batch)[0], theta)
        assert relative_error(num, grad) < 1e-5


def test_imitation_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        batch = random_batch(rng)
        samples = [(f, int(rng.integers(len(f)))) for f in batch]
        theta = rng.normal(size=NUM_FEATURES)
        _, grad = imitation_objective(theta, samples)
        num = central_difference(lambda t: imitation_objective(t, samples)[0], theta)
        assert relative_error(num, grad) < 1e-5


def test_mlm_gradient_matches_directional_finite_differences():
    rng = np.random.default_rng(3)
    v = 20
    for _ in range(100):
        w = rng.normal(scale=0.3, size=(v, v))
        x = rng.integers(0, 3, size=(6, v)).astype(float)
        y = rng.integers(0, v, size=6)
        _, grad = mlm_objective(w, x, y)
        d = rng.normal(size=(v, v))
        h = 1e-6
        num = (mlm_objective(w + h * d, x, y)[0] - mlm_objective(w - h * d, x, y)[0]) / (2 * h)
        ana = float((grad * d).sum())
        assert abs(num - ana) <= 1e-5 * max(abs(ana), 1e-8)


def test_tent_step_reduces_entropy():
    rng = np.random.default_rng(4)
    config = AdaptConfig("tent", learning_rate=1e-3)
    for _ in range(100):
        batch = random_batch(rng)
        params = PolicyParams(rng.normal(size=NUM_FEATURES))
        new, stats = entropy_adapt(params, batch, config)
        assert stats.objective_after < stats.objective_before
        assert entropy_objective(new.theta, batch)[0] == stats.objective_after
        assert new.version == params.version + 1


def test_entropy_of_uniform_distribution():
    f = np.zeros((4, NUM_FEATURES))
    assert sample_entropy(f, np.ones(NUM_FEATURES)) == pytest.approx(math.log(4))
    h, grad = entropy_objective(np.ones(NUM_FEATURES), [f])
    assert h == pytest.approx(math.log(4)) and not grad.any()


def test_single_candidate_samples_are_ignored():
    params = PolicyParams.zeros()
    new, stats = entropy_adapt(params, [np.ones((1, NUM_FEATURES))], AdaptConfig("tent"))
    assert stats.noop and stats.samples_used == 0
    assert new is params


def test_sar_filters_high_entropy_samples():
    rng = np.random.default_rng(5)
    theta = rng.normal(size=NUM_FEATURES)
    batch = random_batch(rng, 30)
    threshold = float(np.median([sample_entropy(f, theta) for f in batch]))
    _, stats = entropy_adapt(PolicyParams(theta), batch, AdaptConfig("sar", reliability_threshold=threshold))
    kept = [f for f in batch if sample_entropy(f, theta) < threshold]
    assert stats.samples_used == len(kept) < len(batch)
    assert stats.objective_before == entropy_objective(theta, kept)[0]


def test_sar_zero_threshold_is_a_noop():
    rng = np.random.default_rng(6)
    params = PolicyParams(rng.normal(size=NUM_FEATURES))
    new, stats = entropy_adapt(params, random_batch(rng, 10), AdaptConfig("sar", reliability_threshold=0.0))
    assert stats.noop and np.array_equal(new.theta, params.theta)


def test_default_threshold_scales_with_candidate_count():
    batch = [np.zeros((5, NUM_FEATURES))] * 3
    assert default_reliability_threshold(batch) == pytest.approx(0.4 * math.log(5))


def test_speaker_reads_only_the_global_graph(session):
    env, bank, graph = session
    nodes = sorted(graph.nodes)
    path = [nodes[0]]
    inst = speaker_generate(graph, path)
    assert oracle_decode(inst) == graph.nodes[nodes[0]].landmark
    missing = next(n for n in range(len(env)) if n not in graph.nodes) if len(graph) < len(env) else None
    if missing is not None:
        with pytest.raises(UnknownNodeError):
            speaker_generate(graph, [nodes[0], missing])


def test_bt_demonstrations_follow_the_path(session):
    env, bank, graph = session
    for path in sample_bt_paths(graph, 5, np.random.default_rng(0)):
        demos = demonstrations(env, graph, path, speaker_generate(graph, path))
        assert 1 <= len(demos) <= len(path)


def test_bt_step_increases_likelihood(session):
    env, bank, graph = session
    params = PolicyParams(np.random.default_rng(7).normal(size=NUM_FEATURES))
    new, stats = bt_adapt(params, bank, graph, env, AdaptConfig("back_translation", learning_rate=1e-2), seed=3)
    assert stats.samples_used > 0
    assert stats.objective_after < stats.objective_before  # negative log-likelihood went down


def test_bt_with_empty_graph_is_a_noop(session):
    env, bank, _ = session
    params = PolicyParams.zeros()
    new, stats = bt_adapt(params, bank, GlobalGraph(), env, AdaptConfig("back_translation"), seed=0)
    assert stats.noop and new is params


def test_mask_count():
    assert mask_count(20, 0.15) == 3
    assert mask_count(6, 0.15) == 1
    assert mask_count(1, 0.15) == 1
    assert mask_count(7, 0.15) == 2


def test_masked_batch_masks_fifteen_percent(session):
    env, bank, _ = session
    config = AdaptConfig("mlm")
    v = init_language_head(env.spec.landmark_vocab_size).shape[1]
    x, y = masked_batch(bank, config, seed=0, vocab=v)
    expected = sum(mask_count(len(r.instruction.tokens), 0.15) for r in bank)
    assert len(y) == expected == len(x)
    assert all(row[MASK] >= 1 for row in x)


def test_mlm_step_increases_likelihood_and_leaves_policy_alone(session):
    env, bank, _ = session
    head = init_language_head(env.spec.landmark_vocab_size)
    new, stats = mlm_adapt(head, bank, AdaptConfig("mlm", learning_rate=0.1), seed=1)
    assert stats.objective_after < stats.objective_before
    assert new.shape == head.shape and not np.array_equal(new, head)
    empty = MemoryBank(env.env_id)
    same, s2 = mlm_adapt(head, empty, AdaptConfig("mlm"), seed=1)
    assert s2.noop and same is head


def test_update_stats_fields():
    s = UpdateStats(1.0, 0.5, 3)
    assert not s.noop and s.samples_used == 3
