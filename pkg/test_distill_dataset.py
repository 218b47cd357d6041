#!/usr/bin/env python3
"""
Demonstration datasets, behavioral cloning and Stage-2 initialization.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from mopa_pd.config import ArmSpec, BCTrainConfig, EnvConfig, PlannerConfig, SACConfig, Stage2Config, Task
from mopa_pd.dataset import MANIFEST, RECORDS, load_dataset, save_dataset
from mopa_pd.distill import (
    bc_loss,
    collect_demos,
    collect_expert_buffer,
    expert_buffer_from_demos,
    init_asym_agent,
    init_bc_params,
    rollout_transitions,
    select_epoch,
    stage2_train,
    train_bc,
    visual_spec,
)
from mopa_pd.env import action_dim, state_dim
from mopa_pd.errors import ConfigurationError, ExpertBufferEmpty, MissingArtifact
from mopa_pd.mopa_agent import AugmentedActionSpace
from mopa_pd.networks import NetworkSpec, copy_params, forward_values
from mopa_pd.replay import ReplayBuffer, Transition
from mopa_pd.sac import Actor, CriticPair

HIDDEN = 16


def _tmp(tmp_path: Path, name: str) -> Path:
    if tmp_path is None:
        tmp_path = Path("work/tests") / name
        tmp_path.mkdir(parents=True, exist_ok=True)
    return tmp_path


def _config(horizon: int = 10) -> EnvConfig:
    return EnvConfig(
        task=Task.PUSH,
        arm=ArmSpec(link_lengths=[0.5, 0.5], joint_limits=[(-math.pi, math.pi)] * 2),
        epsilon=0.1,
        image_size=16,
        # behind the base: out of reach for short episodes
        object_region=(-0.6, -0.6, 0.6, 0.6),
        goal_region=(-0.5, -0.5, 0.6, 0.6),
        init_q_center=[0.0, 0.0],
        init_q_noise=0.0,
        horizon=horizon,
    )


def _random_transitions(cfg: EnvConfig, episodes: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(episodes):
        transitions, _ = rollout_transitions(lambda outcome: rng.uniform(-0.1, 0.1, 2), cfg, seed + i)
        out.extend(transitions)
    return out


def _marker(value: float, done: bool, success: bool) -> Transition:
    s = np.full(3, value, dtype=np.float32)
    return Transition(s=s, o=None, a=np.zeros(2), r=0.0, s2=s, o2=None, done=done, success=success)


def test_dataset_round_trip_is_bit_exact(tmp_path: Path = None):
    tmp = _tmp(tmp_path, "dataset")
    cfg = _config()
    transitions = _random_transitions(cfg, 2)
    save_dataset(tmp / "demos", transitions, task='push', seed=3, image_size=cfg.image_size)
    buffer, layout = load_dataset(tmp / "demos")

    assert buffer.read_only and len(buffer) == len(transitions) == 20
    assert layout.has_images and layout.seed == 3 and layout.task == 'push'
    for original, loaded in zip(transitions, buffer.transitions()):
        assert np.array_equal(loaded.s, original.s.astype(np.float32))
        assert np.array_equal(loaded.a, original.a.astype(np.float32))
        assert np.array_equal(loaded.s2, original.s2.astype(np.float32))
        assert loaded.r == float(np.float32(original.r))
        assert (loaded.done, loaded.success) == (original.done, original.success)
        assert np.array_equal(loaded.o.image, original.o.image)
        assert np.array_equal(loaded.o2.joint_features, original.o2.joint_features)
    assert [len(e) for e in buffer.episodes()] == [10, 10]


def test_empty_and_broken_datasets(tmp_path: Path = None):
    tmp = _tmp(tmp_path, "dataset_errors")
    save_dataset(tmp / "empty", [], task='push', seed=0, image_size=16)
    buffer, _ = load_dataset(tmp / "empty")
    assert len(buffer) == 0

    with pytest.raises(MissingArtifact):
        load_dataset(tmp / "nowhere")

    save_dataset(tmp / "cut", _random_transitions(_config(horizon=3), 1), task='push', seed=0, image_size=16)
    records = tmp / "cut" / RECORDS
    records.write_bytes(records.read_bytes()[:-4])
    with pytest.raises(ConfigurationError):
        load_dataset(tmp / "cut")

    (tmp / "cut" / MANIFEST).write_text("format = something-else\n")
    with pytest.raises(ConfigurationError):
        load_dataset(tmp / "cut")


def test_collect_demos_keeps_low_level_image_transitions():
    cfg = _config(horizon=6)
    spaces = AugmentedActionSpace(delta_q_step=0.1, delta_q_mp=1.0)
    actor = Actor.create(NetworkSpec.state_mlp(state_dim(cfg), 2 * action_dim(cfg), hidden=HIDDEN),
                         spaces.delta_q_mp, 1e-3, np.random.default_rng(0))
    demos = collect_demos(actor, cfg, spaces, PlannerConfig(), n_transitions=15, seed=1)
    assert demos.read_only and len(demos) == 15
    for t in demos.transitions():
        assert np.max(np.abs(t.a)) <= spaces.delta_q_step + 1e-9
        assert t.o.image.shape == (cfg.image_size, cfg.image_size, 3)
        assert t.o2.image is not None
    again = collect_demos(actor, cfg, spaces, PlannerConfig(), n_transitions=15, seed=1)
    assert all(np.array_equal(a.s, b.s) for a, b in zip(demos.transitions(), again.transitions()))
    assert len(collect_demos(actor, cfg, spaces, PlannerConfig(), n_transitions=0)) == 0


def test_select_epoch_prefers_the_earliest_best():
    assert select_epoch([0.2, 0.6, 0.6, 0.4]) == 1
    assert select_epoch([0.0, 0.0]) == 0
    assert select_epoch([np.nan, 0.3, np.nan]) == 1
    assert select_epoch([np.nan, np.nan]) is None
    assert select_epoch([]) is None


def test_bc_loss_vanishes_on_own_predictions():
    cfg = _config()
    spec = visual_spec(cfg, HIDDEN)
    params = init_bc_params(spec, np.random.default_rng(0), log_std_init=-1.0)
    rng = np.random.default_rng(1)
    images = rng.uniform(size=(4, 16, 16, 3)).astype(np.float32)
    joints = rng.normal(size=(4, 7)).astype(np.float32)
    mean = forward_values(spec, params, (images, joints))[:, :2]
    actions = np.tanh(mean) * np.float32(0.1)
    assert float(bc_loss(spec, params, images, joints, actions, 0.1).value) == pytest.approx(0.0, abs=1e-12)
    assert float(bc_loss(spec, params, images, joints, actions + 0.01, 0.1).value) == pytest.approx(1e-4, rel=1e-3)


def test_bc_init_pins_the_log_std_head():
    cfg = _config()
    spec = visual_spec(cfg, HIDDEN)
    params = init_bc_params(spec, np.random.default_rng(0), log_std_init=-1.0)
    rng = np.random.default_rng(2)
    out = forward_values(spec, params, (rng.uniform(size=(3, 16, 16, 3)), rng.normal(size=(3, 7))))
    assert np.allclose(out[:, 2:], -1.0)


def test_train_bc_selects_the_validated_epoch():
    cfg = _config()
    demos = ReplayBuffer(100)
    demos.extend(_random_transitions(cfg, 2))
    bc_cfg = BCTrainConfig(batch_size=8, epochs=3, val_episodes=1, val_seeds=1)
    scores = iter([0.1, 0.5, 0.5])
    seen = []

    def validator(candidate):
        seen.append(copy_params(candidate))
        return next(scores)

    params, report = train_bc(demos, bc_cfg, cfg, seed=0, hidden=HIDDEN, validator=validator)
    assert report.selected_epoch == 1
    assert all(np.array_equal(params[k], seen[1][k]) for k in params)
    assert not all(np.array_equal(params[k], seen[2][k]) for k in params)
    assert list(report.epochs.columns) == ['epoch', 'lr', 'train_loss', 'test_loss', 'val_success']
    assert report.epochs['train_loss'].notna().all()
    assert set(params) == set(init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(0), -1.0))
    assert report.to_dict()['selected_epoch'] == 1

    with pytest.raises(ConfigurationError):
        train_bc(demos, BCTrainConfig(batch_size=512, epochs=1), cfg, hidden=HIDDEN)


def _mopa_critics(cfg: EnvConfig, seed: int = 5) -> CriticPair:
    critics = CriticPair.create(state_dim(cfg), action_dim(cfg), 3e-4, np.random.default_rng(seed), HIDDEN)
    # targets deliberately differ from the online networks
    critics.q1_target = {k: v + 1.0 for k, v in critics.q1_target.items()}
    return critics


def test_init_asym_agent_copies_weights_and_offsets_alpha():
    cfg = _config()
    sac_cfg = SACConfig(hidden=HIDDEN)
    bc_params = init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(3), -1.0)
    critics = _mopa_critics(cfg)
    agent = init_asym_agent(bc_params, critics, -0.63, cfg, sac_cfg, Stage2Config(alpha_offset=2.0))

    assert agent.temp.log_alpha == pytest.approx(-2.63)
    assert all(np.array_equal(agent.actor.params[k], bc_params[k]) for k in bc_params)
    assert agent.actor.params['fc0.weight'] is not bc_params['fc0.weight']
    for name in ('q1', 'q1_target'):
        assert all(np.array_equal(getattr(agent.critics, name)[k], critics.q1[k]) for k in critics.q1)
    for name in ('q2', 'q2_target'):
        assert all(np.array_equal(getattr(agent.critics, name)[k], critics.q2[k]) for k in critics.q2)
    assert agent.actor.bound == cfg.delta_q_step


def test_init_asym_agent_without_weights_is_fresh():
    cfg = _config()
    bc_params = init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(3), -1.0)
    agent = init_asym_agent(bc_params, _mopa_critics(cfg), 0.0, cfg, SACConfig(hidden=HIDDEN),
                            Stage2Config(init_weights=False, alpha_offset=0.0), bc_cfg=BCTrainConfig(log_std_init=-2.5))
    assert not np.array_equal(agent.actor.params['fc0.weight'], bc_params['fc0.weight'])
    assert agent.temp.log_alpha == 0.0
    # the fresh actor takes its log-std head from the run's BC settings
    spec = visual_spec(cfg, HIDDEN)
    last, d = len(spec.fc_dims()) - 2, spec.output_dim // 2
    assert np.all(agent.actor.params[f'fc{last}.bias'][d:] == np.float32(-2.5))


def test_init_asym_agent_reports_shape_mismatches():
    cfg = _config()
    wrong_actor = init_bc_params(visual_spec(cfg, 2 * HIDDEN), np.random.default_rng(3), -1.0)
    with pytest.raises(ConfigurationError, match='actor/fc0.weight'):
        init_asym_agent(wrong_actor, _mopa_critics(cfg), 0.0, cfg, SACConfig(hidden=HIDDEN), Stage2Config())
    with pytest.raises(ConfigurationError):
        init_asym_agent(None, None, 0.0, cfg, SACConfig(hidden=HIDDEN), Stage2Config())


def test_expert_buffer_from_demos_keeps_successful_episodes():
    demos = ReplayBuffer(100)
    demos.extend([_marker(1, False, False), _marker(1, True, True),
                  _marker(2, True, False),
                  _marker(3, False, False), _marker(3, False, False), _marker(3, True, True)])
    buffer = expert_buffer_from_demos(demos, n_trajectories=100)
    assert buffer.read_only
    assert [t.s[0] for t in buffer.transitions()] == [1, 1, 3, 3, 3]
    assert len(expert_buffer_from_demos(demos, n_trajectories=1)) == 2

    failures = ReplayBuffer(10)
    failures.add(_marker(2, True, False))
    with pytest.raises(ExpertBufferEmpty):
        expert_buffer_from_demos(failures)


def test_unsuccessful_policy_yields_no_expert_buffer():
    # two steps of 0.1 rad cannot bring the end-effector near the object
    cfg = _config(horizon=2)
    params = init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(0), -1.0)
    with pytest.raises(ExpertBufferEmpty):
        collect_expert_buffer(visual_spec(cfg, HIDDEN), params, cfg, n_trajectories=2, retry_factor=1)


def test_stage2_refuses_an_empty_expert_buffer():
    cfg = _config()
    bc_params = init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(3), -1.0)
    agent = init_asym_agent(bc_params, _mopa_critics(cfg), 0.0, cfg, SACConfig(hidden=HIDDEN), Stage2Config())
    with pytest.raises(ExpertBufferEmpty):
        stage2_train(agent, cfg, ReplayBuffer(1), SACConfig(hidden=HIDDEN), Stage2Config(), steps=5)


def test_stage2_short_run():
    cfg = _config(horizon=5)
    sac_cfg = SACConfig(hidden=HIDDEN, batch_size=8)
    bc_params = init_bc_params(visual_spec(cfg, HIDDEN), np.random.default_rng(3), -1.0)
    agent = init_asym_agent(bc_params, _mopa_critics(cfg), 0.0, cfg, sac_cfg, Stage2Config())
    expert = ReplayBuffer(100)
    expert.extend(_random_transitions(cfg, 2))
    stage2_cfg = Stage2Config(eval_every=5, eval_episodes=1)
    result = stage2_train(agent, cfg, expert.freeze(), sac_cfg, stage2_cfg, steps=10, seed=0)
    assert result.env_steps == 10
    assert len(result.log) == 2
    assert list(result.evals['step']) == [5, 10]
    assert agent.updates == 10


if __name__ == "__main__":
    test_dataset_round_trip_is_bit_exact()
    test_empty_and_broken_datasets()
    test_collect_demos_keeps_low_level_image_transitions()
    test_select_epoch_prefers_the_earliest_best()
    test_bc_loss_vanishes_on_own_predictions()
    test_bc_init_pins_the_log_std_head()
    test_train_bc_selects_the_validated_epoch()
    test_init_asym_agent_copies_weights_and_offsets_alpha()
    test_init_asym_agent_without_weights_is_fresh()
    test_init_asym_agent_reports_shape_mismatches()
    test_expert_buffer_from_demos_keeps_successful_episodes()
    test_unsuccessful_policy_yields_no_expert_buffer()
    test_stage2_refuses_an_empty_expert_buffer()
    test_stage2_short_run()
    print("All distillation tests passed.")
