#!/usr/bin/env python3
"""
SAC pieces: replay sampling, mixed batches, Bellman targets, temperature
gradient and full update steps.
"""

import math

import numpy as np
import pytest
from scipy.stats import chisquare

from mopa_pd.autodiff import Tape
from mopa_pd.config import SACConfig
from mopa_pd.errors import ContractViolation
from mopa_pd.replay import Batch, ReplayBuffer, Transition
from mopa_pd.sac import (
    agent_from_checkpoint,
    alpha_gradient,
    build_state_agent,
    critic_targets,
    sample_mixed_batch,
)

STATE_DIM, ACTION_DIM = 5, 2


def _transition(marker: float, done: bool = False, reward: float = 0.0) -> Transition:
    s = np.full(STATE_DIM, marker, dtype=np.float32)
    return Transition(s=s, o=None, a=np.zeros(ACTION_DIM), r=reward, s2=s.copy(), o2=None, done=done)


def _buffer(marker: float, n: int, capacity: int = 1000) -> ReplayBuffer:
    buffer = ReplayBuffer(capacity)
    buffer.extend(_transition(marker) for _ in range(n))
    return buffer


def test_replay_fifo_eviction_and_read_only():
    buffer = ReplayBuffer(3)
    for i in range(5):
        buffer.add(_transition(float(i), done=(i == 1)))
    assert len(buffer) == 3
    assert [t.s[0] for t in buffer.transitions()] == [2.0, 3.0, 4.0]
    buffer.freeze()
    with pytest.raises(ContractViolation):
        buffer.add(_transition(9.0))
    with pytest.raises(ContractViolation):
        ReplayBuffer(0)


def test_replay_episode_split():
    buffer = ReplayBuffer(10)
    for i, done in enumerate([False, True, False, False, True, False]):
        buffer.add(_transition(float(i), done=done))
    assert [len(e) for e in buffer.episodes()] == [2, 3, 1]


def test_uniform_sampling():
    buffer = _buffer(0.0, 10)
    counts = np.bincount(buffer.sample_indices(20_000, np.random.default_rng(0)), minlength=10)
    assert chisquare(counts).pvalue > 1e-3
    with pytest.raises(ContractViolation):
        ReplayBuffer(4).sample(1, np.random.default_rng(0))


def test_mixed_batch_quarter_expert():
    expert, agent = _buffer(1.0, 50), _buffer(0.0, 500)
    batch = sample_mixed_batch(expert, agent, 256, np.random.default_rng(0))
    assert len(batch) == 256 and batch.n_expert == 64
    assert np.all(batch.s[:64] == 1.0) and np.all(batch.s[64:] == 0.0)

    small = sample_mixed_batch(expert, agent, 10, np.random.default_rng(0))
    assert small.n_expert == math.ceil(10 / 4) == 3


def test_mixed_batch_falls_back_when_one_buffer_is_empty():
    agent = _buffer(0.0, 20)
    batch = sample_mixed_batch(ReplayBuffer(10), agent, 16, np.random.default_rng(0))
    assert len(batch) == 16 and batch.n_expert == 0
    with pytest.raises(ContractViolation):
        sample_mixed_batch(ReplayBuffer(10), ReplayBuffer(10), 16, np.random.default_rng(0))


def test_alpha_gradient_sign():
    # entropy 1 above a target of -3: the gradient pushes log_alpha down
    assert alpha_gradient(np.array([-1.0, -1.0]), -3.0) == pytest.approx(4.0)
    assert alpha_gradient(np.array([5.0]), -5.0) == pytest.approx(0.0)


def test_critic_targets_terminal_and_bootstrap():
    cfg = SACConfig(hidden=16, reward_scale=1.0)
    agent = build_state_agent(STATE_DIM, ACTION_DIM, 0.5, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    transitions = [
        Transition(s=rng.normal(size=STATE_DIM).astype(np.float32), o=None, a=np.zeros(ACTION_DIM),
                   r=float(i), s2=rng.normal(size=STATE_DIM).astype(np.float32), o2=None, done=True)
        for i in range(4)
    ]
    terminal = Batch.from_transitions(transitions)
    y = critic_targets(terminal, agent.actor, agent.critics, agent.temp, cfg, rng)
    assert np.allclose(y, [0.0, 1.0, 2.0, 3.0])

    agent.critics.q1_target = {k: np.zeros_like(v) for k, v in agent.critics.q1_target.items()}
    agent.critics.q2_target = {k: np.zeros_like(v) for k, v in agent.critics.q2_target.items()}
    ongoing = Batch.from_transitions([
        Transition(t.s, None, t.a, t.r, t.s2, None, done=False) for t in transitions
    ])
    y = critic_targets(ongoing, agent.actor, agent.critics, agent.temp, cfg, None, deterministic=True)
    _, logp2 = agent.actor.sample(Tape(), ongoing.s2, None, deterministic=True)
    expected = ongoing.r + cfg.gamma * (0.0 - agent.temp.alpha * logp2.value)
    assert np.allclose(y, expected, atol=1e-5)


def test_update_step_changes_parameters():
    cfg = SACConfig(hidden=16, batch_size=8, lr=1e-3)
    agent = build_state_agent(STATE_DIM, ACTION_DIM, 0.5, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    buffer = ReplayBuffer(100)
    for _ in range(32):
        s = rng.normal(size=STATE_DIM).astype(np.float32)
        buffer.add(Transition(s, None, rng.uniform(-0.5, 0.5, ACTION_DIM), float(rng.normal()),
                              rng.normal(size=STATE_DIM).astype(np.float32), None, False))
    before_actor = agent.actor.params['fc0.weight'].copy()
    before_target = agent.critics.q1_target['fc2.bias'].copy()
    stats = agent.update(Batch.from_transitions(buffer.sample(8, rng)), rng)
    assert set(stats) == {'critic_loss', 'actor_loss', 'log_alpha'}
    assert all(np.isfinite(v) for v in stats.values())
    assert not np.array_equal(agent.actor.params['fc0.weight'], before_actor)
    assert not np.array_equal(agent.critics.q1_target['fc2.bias'], before_target)
    assert stats['log_alpha'] != cfg.init_log_alpha
    assert agent.updates == 1


def test_actions_respect_bound():
    cfg = SACConfig(hidden=16)
    agent = build_state_agent(STATE_DIM, ACTION_DIM, 0.3, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = agent.act(rng.normal(size=STATE_DIM) * 10, rng)
        assert a.shape == (ACTION_DIM,) and np.all(np.abs(a) <= 0.3)


def test_agent_rebuilt_from_checkpoint_groups():
    cfg = SACConfig(hidden=16, init_log_alpha=0.0)
    agent = build_state_agent(STATE_DIM, ACTION_DIM, 1.0, cfg, np.random.default_rng(0))
    meta = {'kind': 'mopa', 'state_dim': STATE_DIM, 'action_dim': ACTION_DIM, 'bound': 1.0,
            'hidden': 16, 'log_alpha': -0.63}
    rebuilt = agent_from_checkpoint(agent.checkpoint_groups(), meta, cfg)
    s = np.linspace(-1.0, 1.0, STATE_DIM)
    assert np.array_equal(rebuilt.act(s, None, deterministic=True), agent.act(s, None, deterministic=True))
    assert rebuilt.temp.log_alpha == -0.63
    with pytest.raises(ContractViolation):
        agent_from_checkpoint({'actor': agent.actor.params}, meta, cfg)
    with pytest.raises(ContractViolation):
        agent_from_checkpoint(agent.checkpoint_groups(), {'kind': 'mopa'}, cfg)


if __name__ == "__main__":
    test_replay_fifo_eviction_and_read_only()
    test_replay_episode_split()
    test_uniform_sampling()
    test_mixed_batch_quarter_expert()
    test_mixed_batch_falls_back_when_one_buffer_is_empty()
    test_alpha_gradient_sign()
    test_critic_targets_terminal_and_bootstrap()
    test_update_step_changes_parameters()
    test_actions_respect_bound()
    test_agent_rebuilt_from_checkpoint_groups()
    print("All SAC tests passed.")
