#!/usr/bin/env python3
"""
Flat config files, overrides, run manifests and the command line.
"""

import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mopa_pd.cli import EXIT_ERROR, EXIT_MISSING, EXIT_OK, build_parser, main
from mopa_pd.config import (
    Obstacle,
    Task,
    build_run_config,
    default_env_config,
    load_run_config,
    parse_flat_config,
    parse_overrides,
    shipped_config_path,
)
from mopa_pd.errors import ConfigurationError, MissingArtifact
from mopa_pd.manifest import RunManifest, config_hash


def _tmp(tmp_path: Path, name: str) -> Path:
    if tmp_path is None:
        tmp_path = Path("work/tests") / name
        tmp_path.mkdir(parents=True, exist_ok=True)
    return tmp_path


def test_parse_flat_config():
    values = parse_flat_config("""
# comment line
task = lift
sac.lr = 0.001   # trailing comment
sac.lr = 0.002
""")
    assert values == {'task': 'lift', 'sac.lr': '0.002'}
    with pytest.raises(ConfigurationError):
        parse_flat_config("task lift")
    with pytest.raises(ConfigurationError):
        parse_flat_config(" = 3")


def test_parse_overrides():
    assert parse_overrides(['seed=3', 'planner.extend_step = 0.1']) == {'seed': '3', 'planner.extend_step': '0.1'}
    with pytest.raises(ConfigurationError):
        parse_overrides(['seed'])


def test_build_run_config_sections_and_env_keys():
    cfg = build_run_config({'task': 'push', 'seed': '7', 'sac.batch_size': '64', 'horizon': '100',
                            'env.epsilon': '0.2', 'dr.lighting_gain': '0.8, 1.2', 'stage2.smoothing': 'false'})
    assert cfg.seed == 7
    assert cfg.sac.batch_size == 64
    assert cfg.env.horizon == 100 and cfg.env.epsilon == 0.2
    assert cfg.env.dr.lighting_gain == (0.8, 1.2)
    assert cfg.stage2.smoothing is False
    assert build_run_config({'dr.lighting_gain': '0.7:1.3'}).env.dr.lighting_gain == (0.7, 1.3)
    assert build_run_config({'arm.base': '0.1 : -0.2'}).env.arm.base == (0.1, -0.2)
    # untouched keys keep the task defaults
    assert cfg.env.obstacles == default_env_config(Task.PUSH).obstacles


def test_obstacle_keys_replace_the_scene():
    cfg = build_run_config({'obstacle.1': 'circle 0.2 0.7 0.05', 'obstacle.0': 'rect 0.6 0.8 -0.1 0.1'})
    assert cfg.env.obstacles == [Obstacle.box(0.6, 0.8, -0.1, 0.1), Obstacle.disk(0.2, 0.7, 0.05)]
    with pytest.raises(ConfigurationError):
        build_run_config({'obstacle.first': 'rect 0 1 0 1'})
    with pytest.raises(ConfigurationError):
        Obstacle.parse('triangle 0 0 1')
    with pytest.raises(ConfigurationError):
        Obstacle.parse('rect 1 0 0 1')


def test_invalid_values_are_configuration_errors():
    # a two-link arm no longer matches the three-angle start pose
    with pytest.raises(ConfigurationError):
        build_run_config({'arm.link_lengths': '0.5, 0.5'})
    with pytest.raises(ConfigurationError):
        build_run_config({'sac.gamma': '1.5'})
    with pytest.raises(ConfigurationError):
        build_run_config({'task': 'stack'})
    with pytest.raises(ConfigurationError):
        build_run_config({'sac.lr.extra': '1'})


def test_shipped_configs_load():
    for task in Task:
        cfg = load_run_config(shipped_config_path(task))
        assert cfg.env.task == task
        defaults = default_env_config(task).obstacles
        assert len(cfg.env.obstacles) == len(defaults)
        for mine, theirs in zip(cfg.env.obstacles, defaults):
            assert mine.kind == theirs.kind
            assert np.allclose(mine.rect or mine.center, theirs.rect or theirs.center, atol=1e-5)
    push = load_run_config(shipped_config_path(Task.PUSH), {'seed': '4'}, task='lift')
    assert push.env.task == Task.LIFT and push.seed == 4
    with pytest.raises(ConfigurationError):
        load_run_config(Path("work/tests/no-such.cfg"))


def test_config_hash_is_stable():
    a = load_run_config(shipped_config_path(Task.PUSH))
    b = load_run_config(shipped_config_path(Task.PUSH))
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(a.model_copy(update={'seed': 1}))


def test_manifest_round_trip(tmp_path: Path = None):
    tmp = _tmp(tmp_path, "manifest")
    cfg = build_run_config({'seed': '2'})
    manifest = RunManifest.start('eval', cfg, ['eval', '--seed', '2'])
    manifest.results = {'asr': 0.5}
    manifest.outputs['episodes'] = 'episodes.csv'
    manifest.write(tmp)
    again = RunManifest.read(tmp)
    assert again == manifest
    assert again.seeds == [2] and again.config_hash == config_hash(cfg)
    with pytest.raises(MissingArtifact):
        RunManifest.read(tmp / "nowhere")


def test_usage_errors_exit_with_two():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(['eval', '--task', 'stack'])
    assert info.value.code == 2


def test_missing_and_invalid_inputs(tmp_path: Path = None):
    tmp = _tmp(tmp_path, "cli-errors")
    os.environ['MOPA_PD_OUT'] = str(tmp)
    assert main(['eval', '--policy', str(tmp / 'missing.ckpt')]) == EXIT_MISSING
    assert main(['eval']) == EXIT_ERROR
    assert main(['eval', '--policy', 'x.ckpt', '--set', 'sac.gamma=2']) == EXIT_ERROR
    # planner step must exceed the direct step bound
    assert main(['train-mopa', '--set', 'mopa.delta_q_mp=0.05', '--run-name', 'bad-space']) == EXIT_ERROR


def test_plan_command_writes_waypoints(tmp_path: Path = None):
    tmp = _tmp(tmp_path, "cli-plan")
    os.environ['MOPA_PD_OUT'] = str(tmp)
    code = main(['plan', '--task', 'push', '--start', '0.9,0.3,-0.8', '--goal', '2.0,0.3,-0.8',
                 '--run-name', 'plan'])
    assert code == EXIT_OK
    waypoints = pd.read_csv(tmp / 'plan' / 'waypoints.csv')
    assert list(waypoints.columns) == ['q0', 'q1', 'q2']
    assert np.allclose(waypoints.iloc[0], [0.9, 0.3, -0.8])
    assert np.allclose(waypoints.iloc[-1], [2.0, 0.3, -0.8])

    manifest = RunManifest.read(tmp / 'plan')
    assert manifest.command == 'plan' and manifest.results['found'] is True
    assert manifest.outputs['waypoints'].endswith('waypoints.csv')

    bad = main(['plan', '--task', 'push', '--start', '0.9,a,-0.8', '--goal', '2.0,0.3,-0.8', '--run-name', 'bad'])
    assert bad == EXIT_ERROR


if __name__ == "__main__":
    test_parse_flat_config()
    test_parse_overrides()
    test_build_run_config_sections_and_env_keys()
    test_obstacle_keys_replace_the_scene()
    test_invalid_values_are_configuration_errors()
    test_shipped_configs_load()
    test_config_hash_is_stable()
    test_manifest_round_trip()
    test_usage_errors_exit_with_two()
    test_missing_and_invalid_inputs()
    test_plan_command_writes_waypoints()
    print("All CLI and config tests passed.")
