#!/usr/bin/env python3
"""
mopa-pd command line.

Subcommands run one pipeline stage each and write their artifacts plus a
manifest.json into a run directory under $MOPA_PD_OUT (default ./output):

  train-mopa      state-based SAC on the motion-planner-augmented action space
  collect-demos   roll out a MoPA-RL checkpoint into a demonstration dataset
  train-bc        visual behavioral cloning on a demonstration dataset
  collect-expert  fill the expert buffer with successful BC rollouts
  distill         stage-2 asymmetric SAC from the BC actor and MoPA-RL critics
  eval            ASR / AEL / ADR of a checkpoint
  transfer-eval   evaluation on the distractor scenarios
  smoothness      paired end-effector smoothness of two checkpoints
  plan            one RRT-Connect query, waypoints as CSV
  plot            learning curves from training-log CSVs

Exit codes: 0 success, 1 handled error, 2 usage error, 3 missing input.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import orjson
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from mopa_pd.checkpoint import load_checkpoint, save_checkpoint
from mopa_pd.config import RunConfig, load_run_config, parse_overrides
from mopa_pd.dataset import load_dataset, save_dataset
from mopa_pd.distill import (
    VisualPolicy,
    collect_demos,
    collect_expert_buffer,
    expert_buffer_from_demos,
    init_asym_agent,
    stage2_checkpoint_meta,
    stage2_train,
    train_bc,
)
from mopa_pd.env import action_dim, joint_feature_dim
from mopa_pd.errors import ConfigurationError, ContractViolation, ExpertBufferEmpty, MissingArtifact, TrainingDiverged
from mopa_pd.evaluation import (
    SCENARIOS,
    Policy,
    evaluate,
    paired_rollouts,
    smoothness,
    summary_frame,
    transfer_eval,
)
from mopa_pd.manifest import RunManifest
from mopa_pd.mopa_agent import AugmentedActionSpace, MoPAPolicy, mopa_checkpoint_meta, train_mopa
from mopa_pd.networks import NetworkSpec
from mopa_pd.planner import discretize_path, path_length, rrt_connect, shortcut
from mopa_pd.plotting import plot_ee_traces, plot_learning_curves
from mopa_pd.sac import SACAgent, agent_from_checkpoint

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 3


# -------------------------------------------------------------------------
# Shared plumbing
# -------------------------------------------------------------------------

def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise ConfigurationError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"{what} not found: {p}")
    return p


def _run_config(args) -> RunConfig:
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides['seed'] = str(args.seed)
    if args.dr:
        overrides['dr.enabled'] = 'true'
    if getattr(args, 'alpha_offset', None) is not None:
        overrides['stage2.alpha_offset'] = str(args.alpha_offset)
    if getattr(args, 'no_init', False):
        overrides['stage2.init_weights'] = 'false'
    if getattr(args, 'no_smoothing', False):
        overrides['stage2.smoothing'] = 'false'
    config_path = _require(args.config, 'config') if args.config else None
    return load_run_config(config_path, overrides, args.task)


def _run_dir(args, cfg: RunConfig) -> Path:
    root = Path(os.environ.get('MOPA_PD_OUT', './output'))
    name = args.run_name or f"{args.command}-{cfg.env.task.value}-seed{cfg.seed}"
    run_dir = root / name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _check_task(meta: Dict, cfg: RunConfig, path: Path) -> None:
    task = meta.get('task')
    if task is not None and task != cfg.env.task.value:
        raise ConfigurationError(f"{path} was trained on '{task}', configuration is '{cfg.env.task.value}'")


def _spaces(cfg: RunConfig) -> AugmentedActionSpace:
    try:
        return AugmentedActionSpace.from_configs(cfg.env, cfg.mopa)
    except ValidationError as e:
        raise ConfigurationError(f"invalid augmented action space:\n{e}") from e


def _load_agent(path: Path, cfg: RunConfig, lr: Optional[float] = None) -> Tuple[SACAgent, Dict]:
    groups, meta = load_checkpoint(path)
    _check_task(meta, cfg, path)
    return agent_from_checkpoint(groups, meta, cfg.sac, lr), meta


def _load_visual_actor(path: Path, cfg: RunConfig) -> Tuple[NetworkSpec, Dict[str, np.ndarray]]:
    groups, meta = load_checkpoint(path)
    _check_task(meta, cfg, path)
    if 'actor' not in groups:
        raise ConfigurationError(f"{path} holds no actor weights")
    if meta.get('kind') not in ('bc', 'visual'):
        raise ConfigurationError(f"{path} is a '{meta.get('kind')}' checkpoint, expected a visual actor")
    spec = NetworkSpec.visual_actor(int(meta['joint_dim']), 2 * int(meta['action_dim']),
                                    int(meta['image_size']), int(meta.get('hidden', cfg.sac.hidden)))
    return spec, groups['actor']


def load_policy(path: Path, cfg: RunConfig) -> Policy:
    """Evaluation policy for any checkpoint kind: mopa, bc or visual."""
    _, meta = load_checkpoint(path)
    if meta.get('kind') == 'mopa':
        agent, _ = _load_agent(path, cfg)
        return MoPAPolicy(agent.actor, _spaces(cfg), cfg.planner, cfg.sac.gamma)
    spec, params = _load_visual_actor(path, cfg)
    return VisualPolicy(spec, params, cfg.env.delta_q_step, cfg.sac.gamma)


def _write_frame(frame: pd.DataFrame, path: Path) -> str:
    frame.to_csv(path, index=False)
    return str(path)


# -------------------------------------------------------------------------
# Subcommands
# -------------------------------------------------------------------------

def cmd_train_mopa(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    result = train_mopa(cfg.env, _spaces(cfg), cfg.sac, args.steps, cfg.planner, cfg.mopa, cfg.seed, run_dir)
    ckpt = save_checkpoint(run_dir / 'mopa.ckpt', result.agent.checkpoint_groups(),
                           mopa_checkpoint_meta(cfg.env, _spaces(cfg), result.agent, result.env_steps))
    manifest.outputs.update({'checkpoint': str(ckpt),
                             'train_log': _write_frame(result.log, run_dir / 'train_log.csv')})
    manifest.final_log_alpha = result.final_log_alpha
    manifest.results = {'env_steps': result.env_steps, 'episodes': int(len(result.log))}


def cmd_collect_demos(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    policy_path = _require(args.policy, 'policy')
    agent, _ = _load_agent(policy_path, cfg)
    demos = collect_demos(agent.actor, cfg.env, _spaces(cfg), cfg.planner, args.transitions,
                          cfg.seed, cfg.sac.gamma)
    out = save_dataset(run_dir / 'demos', demos.transitions(), cfg.env.task.value, cfg.seed, cfg.env.image_size)
    manifest.inputs['policy'] = str(policy_path)
    manifest.outputs['dataset'] = str(out)
    manifest.results = {'transitions': len(demos), 'max_abs_action': demos.max_abs_action()}


def cmd_train_bc(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    dataset_path = _require(args.dataset, 'dataset')
    demos, _ = load_dataset(dataset_path)
    params, report = train_bc(demos, cfg.bc, cfg.env, cfg.seed, cfg.sac.hidden)
    meta = {
        'kind': 'bc',
        'task': cfg.env.task.value,
        'joint_dim': joint_feature_dim(cfg.env),
        'action_dim': action_dim(cfg.env),
        'image_size': cfg.env.image_size,
        'bound': cfg.env.delta_q_step,
        'hidden': cfg.sac.hidden,
        'selected_epoch': report.selected_epoch,
    }
    ckpt = save_checkpoint(run_dir / 'bc.ckpt', {'actor': params}, meta)
    (run_dir / 'bc_report.json').write_bytes(orjson.dumps(report.to_dict(), option=orjson.OPT_INDENT_2 |
                                                          orjson.OPT_SERIALIZE_NUMPY))
    manifest.inputs['dataset'] = str(dataset_path)
    manifest.outputs.update({'checkpoint': str(ckpt), 'report': str(run_dir / 'bc_report.json'),
                             'epochs': _write_frame(report.epochs, run_dir / 'bc_epochs.csv')})
    manifest.results = {'selected_epoch': report.selected_epoch,
                        'bc_wall_clock_seconds': report.wall_clock_seconds}


def _expert_buffer(args, cfg: RunConfig, manifest: RunManifest):
    if not cfg.stage2.smoothing:
        dataset_path = _require(args.dataset, 'dataset')
        manifest.inputs['dataset'] = str(dataset_path)
        demos, _ = load_dataset(dataset_path)
        return expert_buffer_from_demos(demos, cfg.stage2.expert_trajectories)
    bc_path = _require(args.bc, 'bc')
    manifest.inputs['bc'] = str(bc_path)
    spec, params = _load_visual_actor(bc_path, cfg)
    return collect_expert_buffer(spec, params, cfg.env, cfg.stage2.expert_trajectories,
                                 cfg.stage2.expert_retry_factor, cfg.seed)


def cmd_collect_expert(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    expert = _expert_buffer(args, cfg, manifest)
    out = save_dataset(run_dir / 'expert', expert.transitions(), cfg.env.task.value, cfg.seed, cfg.env.image_size)
    manifest.outputs['expert'] = str(out)
    manifest.results = {'transitions': len(expert), 'trajectories': len(expert.episodes())}


def cmd_distill(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    mopa_path = _require(args.mopa, 'mopa')
    manifest.inputs['mopa'] = str(mopa_path)
    mopa_agent, mopa_meta = _load_agent(mopa_path, cfg)

    if args.expert:
        expert_path = _require(args.expert, 'expert')
        manifest.inputs['expert'] = str(expert_path)
        expert, _ = load_dataset(expert_path)
    else:
        expert = _expert_buffer(args, cfg, manifest)

    bc_params = None
    if cfg.stage2.init_weights:
        bc_path = _require(args.bc, 'bc')
        manifest.inputs['bc'] = str(bc_path)
        _, bc_params = _load_visual_actor(bc_path, cfg)

    final_log_alpha = float(mopa_meta.get('log_alpha', mopa_agent.temp.log_alpha))
    agent = init_asym_agent(bc_params, mopa_agent.critics, final_log_alpha, cfg.env, cfg.sac, cfg.stage2, cfg.seed,
                            bc_cfg=cfg.bc)
    result = stage2_train(agent, cfg.env, expert, cfg.sac, cfg.stage2, args.steps, cfg.seed, run_dir)
    ckpt = save_checkpoint(run_dir / 'visual.ckpt', result.agent.checkpoint_groups(),
                           stage2_checkpoint_meta(cfg.env, result.agent, result.env_steps))
    manifest.outputs.update({
        'checkpoint': str(ckpt),
        'train_log': _write_frame(result.log, run_dir / 'stage2_log.csv'),
        'eval_log': _write_frame(result.evals, run_dir / 'stage2_eval.csv'),
    })
    manifest.final_log_alpha = result.agent.temp.log_alpha
    manifest.results = {'env_steps': result.env_steps, 'milestone_step': result.milestone_step,
                        'init_log_alpha': final_log_alpha - cfg.stage2.alpha_offset}


def cmd_eval(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    policy_path = _require(args.policy, 'policy')
    manifest.inputs['policy'] = str(policy_path)
    metrics, log = evaluate(load_policy(policy_path, cfg), cfg.env, args.episodes, args.seeds)
    manifest.outputs.update({
        'episodes': _write_frame(log, run_dir / 'episodes.csv'),
        'summary': _write_frame(pd.DataFrame([metrics.as_dict()]), run_dir / 'summary.csv'),
    })
    manifest.results = metrics.as_dict()
    print(f"ASR {metrics.asr:.3f}  AEL {metrics.ael:.1f}  ADR {metrics.adr:.2f}")


def cmd_transfer_eval(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    policy_path = _require(args.policy, 'policy')
    manifest.inputs['policy'] = str(policy_path)
    results = transfer_eval(load_policy(policy_path, cfg), cfg.env, args.scenarios, args.episodes, args.seeds)
    for sid, (_, log) in results.items():
        manifest.outputs[f'episodes_{sid}'] = _write_frame(log, run_dir / f'episodes_{sid}.csv')
    summary = summary_frame(results)
    manifest.outputs['summary'] = _write_frame(summary, run_dir / 'transfer_summary.csv')
    manifest.results = {sid: m.as_dict() for sid, (m, _) in results.items()}
    print(summary.to_string(index=False))


def cmd_smoothness(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    path_a, path_b = _require(args.policy_a, 'policy-a'), _require(args.policy_b, 'policy-b')
    manifest.inputs.update({'policy_a': str(path_a), 'policy_b': str(path_b)})
    traj_a, traj_b = paired_rollouts(load_policy(path_a, cfg), load_policy(path_b, cfg), cfg.env, args.pairs)
    report = smoothness(traj_a, traj_b, cfg.env.arm)
    manifest.outputs['pairs'] = _write_frame(report.to_frame(), run_dir / 'smoothness.csv')
    if traj_a:
        svg = plot_ee_traces(cfg.env.arm, cfg.env.obstacles, {'a': traj_a[0], 'b': traj_b[0]},
                             run_dir / 'ee_traces.svg', cfg.env.view)
        manifest.outputs['traces'] = str(svg)
    manifest.results = {'fraction_a_smoother': report.fraction_a_smoother}
    print(f"a smoother than b in {report.fraction_a_smoother:.0%} of {len(traj_a)} pairs")


def _angles(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(',')])
    except ValueError as e:
        raise ConfigurationError(f"--{what} expects comma-separated radians, got '{text}'") from e


def cmd_plan(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    start, goal = _angles(args.start, 'start'), _angles(args.goal, 'goal')
    planner_cfg = cfg.planner.model_copy(update={'seed': cfg.seed})
    path = rrt_connect(start, goal, cfg.env.arm, cfg.env.obstacles, planner_cfg)
    if path is None:
        manifest.results = {'found': False}
        raise ConfigurationError("no collision-free path found")
    if not args.no_shortcut:
        path = shortcut(path, cfg.env.arm, cfg.env.obstacles, planner_cfg)
    columns = [f'q{i}' for i in range(cfg.env.arm.n_joints)]
    frame = pd.DataFrame(path.waypoints, columns=columns)
    manifest.outputs['waypoints'] = _write_frame(frame, run_dir / 'waypoints.csv')
    steps = discretize_path(path, cfg.env.delta_q_step)
    manifest.results = {'found': True, 'waypoints': len(path), 'length': path_length(path),
                        'direct_steps': len(steps)}
    print(f"path with {len(path)} waypoints, length {path_length(path):.3f} rad, {len(steps)} direct steps")


def cmd_plot(args, cfg: RunConfig, run_dir: Path, manifest: RunManifest) -> None:
    logs = {}
    for item in args.logs:
        label, sep, path = item.partition('=')
        path = path if sep else label
        label = label if sep else Path(path).stem
        logs[label] = pd.read_csv(_require(path, 'logs'))
        manifest.inputs[label] = path
    svg = plot_learning_curves(logs, run_dir / f'curves_{args.y}.svg', args.y, args.window)
    manifest.outputs.update({'figure': str(svg), 'data': str(svg.with_suffix('.csv'))})


COMMANDS = {
    'train-mopa': cmd_train_mopa,
    'collect-demos': cmd_collect_demos,
    'train-bc': cmd_train_bc,
    'collect-expert': cmd_collect_expert,
    'distill': cmd_distill,
    'eval': cmd_eval,
    'transfer-eval': cmd_transfer_eval,
    'smoothness': cmd_smoothness,
    'plan': cmd_plan,
    'plot': cmd_plot,
}


# -------------------------------------------------------------------------
# Argument parsing
# -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--task', choices=['push', 'lift', 'assembly'], help='Task (overrides the config file)')
    common.add_argument('--env', dest='task', choices=['push', 'lift', 'assembly'], help=argparse.SUPPRESS)
    common.add_argument('--config', help='Flat key = value config file')
    common.add_argument('--set', action='append', metavar='KEY=VALUE', help='Override one config key (repeatable)')
    common.add_argument('--seed', type=int, help='Seed for every random stream of the run')
    common.add_argument('--dr', action='store_true', help='Enable domain randomization')
    common.add_argument('--run-name', help='Run directory name under $MOPA_PD_OUT')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')

    parser = argparse.ArgumentParser(
        prog='mopa-pd',
        description='Motion-planner-augmented RL and its distillation into a visual policy',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s train-mopa --task push --steps 200000 --seed 0
  %(prog)s collect-demos --policy output/train-mopa-push-seed0/mopa.ckpt --transitions 100000
  %(prog)s distill --mopa mopa.ckpt --bc bc.ckpt --expert output/collect-expert-push-seed0/expert
  %(prog)s eval --policy visual.ckpt --env push --episodes 100 --seeds 5
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train-mopa', parents=[common], help='Train the MoPA-RL expert')
    p.add_argument('--steps', type=int, default=200_000, help='Environment steps (default: 200000)')

    p = sub.add_parser('collect-demos', parents=[common], help='Build the demonstration dataset')
    p.add_argument('--policy', help='MoPA-RL checkpoint')
    p.add_argument('--transitions', type=int, default=100_000, help='Dataset size (default: 100000)')

    p = sub.add_parser('train-bc', parents=[common], help='Visual behavioral cloning')
    p.add_argument('--dataset', help='Demonstration dataset directory')

    for name, help_text in (('collect-expert', 'Fill the expert buffer'), ('distill', 'Stage-2 training')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--bc', help='BC checkpoint')
        p.add_argument('--dataset', help='Demonstration dataset (used with --no-smoothing)')
        p.add_argument('--no-smoothing', action='store_true', help='Expert buffer from MoPA-RL demonstrations')
        if name == 'distill':
            p.add_argument('--mopa', help='MoPA-RL checkpoint (critics and final alpha)')
            p.add_argument('--expert', help='Expert buffer directory from collect-expert')
            p.add_argument('--steps', type=int, default=150_000, help='Environment steps (default: 150000)')
            p.add_argument('--alpha-offset', type=float, help='log alpha offset below the MoPA-RL final')
            p.add_argument('--no-init', action='store_true', help='Start actor and critics from scratch')

    for name in ('eval', 'transfer-eval'):
        p = sub.add_parser(name, parents=[common], help='Evaluate a checkpoint')
        p.add_argument('--policy', help='Checkpoint (mopa, bc or visual)')
        p.add_argument('--episodes', type=int, default=100, help='Episodes per seed (default: 100)')
        p.add_argument('--seeds', type=int, default=5, help='Evaluation seeds (default: 5)')
        if name == 'transfer-eval':
            p.add_argument('--scenarios', nargs='+', default=list(SCENARIOS), choices=list(SCENARIOS))

    p = sub.add_parser('smoothness', parents=[common], help='Paired end-effector smoothness')
    p.add_argument('--policy-a', help='First checkpoint (e.g. BC)')
    p.add_argument('--policy-b', help='Second checkpoint (e.g. MoPA-RL)')
    p.add_argument('--pairs', type=int, default=50, help='Paired start states (default: 50)')

    p = sub.add_parser('plan', parents=[common], help='Single RRT-Connect query')
    p.add_argument('--start', required=True, help='Start angles, comma separated')
    p.add_argument('--goal', required=True, help='Goal angles, comma separated')
    p.add_argument('--no-shortcut', action='store_true', help='Skip shortcutting')

    p = sub.add_parser('plot', parents=[common], help='Learning curves from training logs')
    p.add_argument('logs', nargs='+', help='LABEL=path.csv or path.csv')
    p.add_argument('--y', default='success', help='Column to plot (default: success)')
    p.add_argument('--window', type=int, default=20, help='Rolling-mean window (default: 20)')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(message)s')

    started = time.time()
    try:
        cfg = _run_config(args)
        run_dir = _run_dir(args, cfg)
        manifest = RunManifest.start(args.command, cfg, sys.argv[1:] if argv is None else argv)
        COMMANDS[args.command](args, cfg, run_dir, manifest)
    except MissingArtifact as e:
        logger.error(f"Missing input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigurationError, ContractViolation, TrainingDiverged, ExpertBufferEmpty) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    manifest.wall_clock_seconds = time.time() - started
    manifest.write(run_dir)
    logger.info(f"{args.command} finished in {manifest.wall_clock_seconds:.1f}s; outputs in {run_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
