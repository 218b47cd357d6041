#!/usr/bin/env python3
"""
Parameter layouts, Adam, learning-rate schedule, Polyak averaging and
checkpoint archives.
"""

from pathlib import Path

import numpy as np
import pytest

from mopa_pd.checkpoint import load_checkpoint, save_checkpoint
from mopa_pd.errors import ConfigurationError, ContractViolation, MissingArtifact
from mopa_pd.networks import NetworkSpec, copy_params, init_params
from mopa_pd.optim import AdamState, adam_step, lr_schedule_step, soft_update


def _tmp(tmp_path: Path = None) -> Path:
    if tmp_path is None:
        tmp_path = Path("work/tests")
        tmp_path.mkdir(parents=True, exist_ok=True)
    return tmp_path


def test_state_mlp_layout():
    spec = NetworkSpec.state_mlp(17, 6)
    params = init_params(spec, np.random.default_rng(0))
    assert params['fc0.weight'].shape == (17, 256)
    assert params['fc1.weight'].shape == (256, 256)
    assert params['fc2.weight'].shape == (256, 6)
    assert params['fc2.bias'].shape == (6,)
    assert all(p.dtype == np.float32 for p in params.values())
    bound = 1.0 / np.sqrt(17)
    assert np.all(np.abs(params['fc0.weight']) <= bound)


def test_visual_actor_layout():
    spec = NetworkSpec.visual_actor(joint_dim=10, output_dim=6, image_size=32)
    assert spec.conv_sizes() == [16, 8, 4]
    assert spec.flat_dim == 64 * 4 * 4
    params = init_params(spec, np.random.default_rng(0))
    assert params['conv0.weight'].shape == (16, 3, 3, 3)
    assert params['conv2.weight'].shape == (64, 32, 3, 3)
    assert params['fc0.weight'].shape == (1024 + 10, 256)


def test_init_is_seeded():
    spec = NetworkSpec.state_mlp(4, 2, hidden=8)
    a = init_params(spec, np.random.default_rng(5))
    b = init_params(spec, np.random.default_rng(5))
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_adam_first_step_moves_by_lr():
    params = {'w': np.array([1.0, -2.0, 0.5], dtype=np.float32)}
    grads = {'w': np.array([0.3, -4.0, 0.0], dtype=np.float32)}
    state = AdamState.for_params(params, lr=0.01)
    updated = adam_step(params, grads, state)
    # bias-corrected first step is lr * sign(g)
    assert np.allclose(updated['w'], [0.99, -1.99, 0.5], atol=1e-6)
    assert state.step == 1
    assert np.array_equal(params['w'], [1.0, -2.0, 0.5])


def test_adam_minimizes_a_quadratic():
    params = {'w': np.array([3.0, -1.5], dtype=np.float32)}
    state = AdamState.for_params(params, lr=0.05)
    for _ in range(500):
        params = adam_step(params, {'w': 2.0 * params['w']}, state)
    assert np.all(np.abs(params['w']) < 0.1)


def test_adam_rejects_mismatched_gradients():
    params = {'w': np.zeros(2, dtype=np.float32)}
    state = AdamState.for_params(params, lr=0.1)
    with pytest.raises(ContractViolation):
        adam_step(params, {'w': np.zeros(3, dtype=np.float32)}, state)
    with pytest.raises(ContractViolation):
        adam_step(params, {'v': np.zeros(2, dtype=np.float32)}, state)


def test_step_decay_schedule():
    state = AdamState.for_params({'w': np.zeros(1, dtype=np.float32)}, lr=5e-4)
    assert lr_schedule_step(state, 0) == pytest.approx(5e-4)
    assert lr_schedule_step(state, 4) == pytest.approx(5e-4)
    assert lr_schedule_step(state, 5) == pytest.approx(5e-4 * 0.99)
    assert lr_schedule_step(state, 139) == pytest.approx(5e-4 * 0.99 ** 27)
    assert state.lr == pytest.approx(5e-4 * 0.99 ** 27)
    with pytest.raises(ContractViolation):
        lr_schedule_step(state, -1)


def test_soft_update():
    target = {'w': np.zeros(3, dtype=np.float32)}
    source = {'w': np.ones(3, dtype=np.float32)}
    assert np.allclose(soft_update(target, source, 0.005)['w'], 0.005)
    assert np.array_equal(soft_update(target, source, 1.0)['w'], source['w'])
    with pytest.raises(ContractViolation):
        soft_update(target, source, 0.0)


def test_checkpoint_round_trip_is_bit_exact(tmp_path: Path = None):
    tmp = _tmp(tmp_path)
    rng = np.random.default_rng(0)
    actor = init_params(NetworkSpec.state_mlp(5, 4, hidden=8), rng)
    critic = init_params(NetworkSpec.state_mlp(7, 1, hidden=8), rng)
    groups = {'actor': actor, 'q1': critic, 'q1_target': copy_params(critic)}
    path = save_checkpoint(tmp / "agent.ckpt", groups, {'kind': 'mopa', 'log_alpha': -0.63})

    loaded, meta = load_checkpoint(path)
    assert meta == {'kind': 'mopa', 'log_alpha': -0.63}
    assert loaded.keys() == groups.keys()
    for group, params in groups.items():
        for name, value in params.items():
            assert loaded[group][name].dtype == np.float32
            assert np.array_equal(loaded[group][name], value)


def test_checkpoint_errors(tmp_path: Path = None):
    tmp = _tmp(tmp_path)
    with pytest.raises(MissingArtifact):
        load_checkpoint(tmp / "missing.ckpt")
    bogus = tmp / "bogus.ckpt"
    bogus.write_bytes(b"not a zip archive")
    with pytest.raises(ConfigurationError):
        load_checkpoint(bogus)


if __name__ == "__main__":
    test_state_mlp_layout()
    test_visual_actor_layout()
    test_init_is_seeded()
    test_adam_first_step_moves_by_lr()
    test_adam_minimizes_a_quadratic()
    test_adam_rejects_mismatched_gradients()
    test_step_decay_schedule()
    test_soft_update()
    test_checkpoint_round_trip_is_bit_exact()
    test_checkpoint_errors()
    print("All network and optimizer tests passed.")
