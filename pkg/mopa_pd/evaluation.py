#!/usr/bin/env python3
"""
Evaluation metrics, smoothness statistics and transfer scenarios.

A policy is any callable (env_cfg, seed) -> EpisodeRecord. evaluate()
runs it over several seeds, keeps one row per episode in a DataFrame and
derives the metrics from that frame alone, so a saved CSV reproduces the
same numbers through metrics_from_log().
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mopa_pd.config import ArmSpec, EnvConfig, ScenarioSpec
from mopa_pd.env import StepOutcome, reset, step_direct
from mopa_pd.errors import ConfigurationError, ContractViolation
from mopa_pd.geometry import forward_kinematics_batch

logger = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000
SEED_STRIDE = 10_000
EPISODE_COLUMNS = ['seed', 'episode', 'success', 'length', 'discounted_return']


@dataclass
class EpisodeRecord:
    seed: int
    success: bool
    length: int
    discounted_return: float
    rewards: List[float] = field(default_factory=list)
    q_trajectory: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Metrics:
    asr: float
    ael: float
    adr: float
    n_episodes: int
    n_seeds: int

    def as_dict(self) -> Dict[str, float]:
        return {'asr': self.asr, 'ael': self.ael, 'adr': self.adr,
                'n_episodes': self.n_episodes, 'n_seeds': self.n_seeds}


Policy = Callable[[EnvConfig, int], EpisodeRecord]


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    """sum_t gamma^t r_t."""
    rewards = np.asarray(list(rewards), dtype=np.float64)
    if rewards.size == 0:
        return 0.0
    return float(np.sum(rewards * gamma ** np.arange(rewards.size)))


def run_episode(env_cfg: EnvConfig, seed: int,
                act: Callable[[StepOutcome], np.ndarray],
                gamma: float = 0.99, with_image: bool = True) -> EpisodeRecord:
    """Roll out a direct-action policy until the episode ends."""
    outcome = reset(env_cfg, seed, with_image)
    rewards = []
    qs = [outcome.state.q.angles]
    while not outcome.done:
        outcome = step_direct(outcome.state, act(outcome), env_cfg, with_image)
        rewards.append(outcome.reward)
        qs.append(outcome.state.q.angles)
    return EpisodeRecord(
        seed=seed,
        success=outcome.success,
        length=outcome.state.step_count,
        discounted_return=discounted_return(rewards, gamma),
        rewards=rewards,
        q_trajectory=np.asarray(qs),
    )


def metrics_from_log(log: pd.DataFrame, horizon: int) -> Metrics:
    """ASR, AEL (horizon when nothing succeeded) and ADR from per-episode rows."""
    if log.empty:
        raise ContractViolation("no episodes to aggregate")
    success = log['success'].astype(bool)
    asr = float(success.mean())
    ael = float(log.loc[success, 'length'].mean()) if success.any() else float(horizon)
    return Metrics(
        asr=asr,
        ael=ael,
        adr=float(log['discounted_return'].mean()),
        n_episodes=int(len(log)),
        n_seeds=int(log['seed_index'].nunique()) if 'seed_index' in log else int(log['seed'].nunique()),
    )


def evaluation_seeds(n_seeds: int, episodes: int, seed_base: int = EVAL_SEED_BASE) -> List[Tuple[int, int, int]]:
    """(seed index, episode index, env seed) triples, disjoint from training seeds."""
    return [
        (s, e, seed_base + s * SEED_STRIDE + e)
        for s in range(n_seeds) for e in range(episodes)
    ]


def evaluate(policy: Policy, env_cfg: EnvConfig, episodes: int = 100, seeds: int = 5,
             seed_base: int = EVAL_SEED_BASE) -> Tuple[Metrics, pd.DataFrame]:
    """Run episodes x seeds evaluation episodes and aggregate."""
    rows = []
    for seed_index, episode, env_seed in evaluation_seeds(seeds, episodes, seed_base):
        record = policy(env_cfg, env_seed)
        rows.append({
            'seed_index': seed_index,
            'seed': env_seed,
            'episode': episode,
            'success': bool(record.success),
            'length': int(record.length),
            'discounted_return': float(record.discounted_return),
        })
    log = pd.DataFrame(rows, columns=['seed_index'] + EPISODE_COLUMNS)
    metrics = metrics_from_log(log, env_cfg.horizon)
    logger.info(
        f"Evaluated {metrics.n_episodes} episodes on '{env_cfg.scenario.name}': "
        f"ASR={metrics.asr:.3f} AEL={metrics.ael:.1f} ADR={metrics.adr:.2f}"
    )
    return metrics, log


# -------------------------------------------------------------------------
# Smoothness
# -------------------------------------------------------------------------

@dataclass
class SmoothnessReport:
    path_length_a: np.ndarray
    path_length_b: np.ndarray
    msa_a: np.ndarray
    msa_b: np.ndarray

    @property
    def fraction_a_smoother(self) -> float:
        if len(self.msa_a) == 0:
            return 0.0
        return float(np.mean(self.msa_a < self.msa_b))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'pair': np.arange(len(self.msa_a)),
            'path_length_a': self.path_length_a,
            'path_length_b': self.path_length_b,
            'msa_a': self.msa_a,
            'msa_b': self.msa_b,
            'a_smoother': self.msa_a < self.msa_b,
        })


def end_effector_series(arm: ArmSpec, trajectory: np.ndarray) -> np.ndarray:
    return forward_kinematics_batch(arm, np.asarray(trajectory, dtype=np.float64))[:, -1]


def trajectory_stats(points: np.ndarray) -> Tuple[float, float]:
    """(path length, mean squared second difference) of a point series."""
    points = np.asarray(points, dtype=np.float64)
    length = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1))) if len(points) > 1 else 0.0
    if len(points) < 3:
        return length, 0.0
    accel = points[2:] - 2.0 * points[1:-1] + points[:-2]
    return length, float(np.mean(np.sum(accel * accel, axis=1)))


def smoothness(trajectories_a: Sequence[np.ndarray], trajectories_b: Sequence[np.ndarray],
               arm: ArmSpec, start_tolerance: float = 1e-9) -> SmoothnessReport:
    """Pairwise end-effector smoothness of joint trajectories sharing start states."""
    if len(trajectories_a) != len(trajectories_b):
        raise ContractViolation(
            f"unpaired inputs: {len(trajectories_a)} vs {len(trajectories_b)} trajectories"
        )
    stats = {'la': [], 'lb': [], 'ma': [], 'mb': []}
    for i, (ta, tb) in enumerate(zip(trajectories_a, trajectories_b)):
        ta, tb = np.asarray(ta), np.asarray(tb)
        if np.max(np.abs(ta[0] - tb[0])) > start_tolerance:
            raise ContractViolation(f"pair {i} does not share a start configuration")
        la, ma = trajectory_stats(end_effector_series(arm, ta))
        lb, mb = trajectory_stats(end_effector_series(arm, tb))
        stats['la'].append(la)
        stats['lb'].append(lb)
        stats['ma'].append(ma)
        stats['mb'].append(mb)
    return SmoothnessReport(
        path_length_a=np.asarray(stats['la']),
        path_length_b=np.asarray(stats['lb']),
        msa_a=np.asarray(stats['ma']),
        msa_b=np.asarray(stats['mb']),
    )


def paired_rollouts(policy_a: Policy, policy_b: Policy, env_cfg: EnvConfig, n_pairs: int = 50,
                    seed_base: int = EVAL_SEED_BASE) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Joint trajectories of two policies started from the same reset seeds."""
    traj_a, traj_b = [], []
    for i in range(n_pairs):
        seed = seed_base + i
        traj_a.append(policy_a(env_cfg, seed).q_trajectory)
        traj_b.append(policy_b(env_cfg, seed).q_trajectory)
    return traj_a, traj_b


# -------------------------------------------------------------------------
# Transfer scenarios
# -------------------------------------------------------------------------

SCENARIOS: Dict[str, ScenarioSpec] = {
    'original': ScenarioSpec(name='original'),
    'scenario1': ScenarioSpec(
        name='scenario1',
        n_distractors=3,
        background_color=[0.30, 0.22, 0.35],
    ),
    'scenario2': ScenarioSpec(
        name='scenario2',
        n_distractors=3,
        background_color=[0.30, 0.22, 0.35],
        obstacle_visual_scale=1.25,
        obstacle_stripes=True,
    ),
}


def scenario_config(env_cfg: EnvConfig, scenario_id: str) -> EnvConfig:
    """Environment for one transfer scenario: randomization off, appearance perturbed."""
    if scenario_id not in SCENARIOS:
        raise ConfigurationError(
            f"unknown scenario '{scenario_id}' (available: {', '.join(SCENARIOS)})"
        )
    dr = env_cfg.dr.model_copy(update={'enabled': False})
    return env_cfg.model_copy(update={'scenario': SCENARIOS[scenario_id], 'dr': dr})


def transfer_eval(policy: Policy, env_cfg: EnvConfig,
                  scenario_ids: Sequence[str] = ('original', 'scenario1', 'scenario2'),
                  episodes: int = 100, seeds: int = 5) -> Dict[str, Tuple[Metrics, pd.DataFrame]]:
    configs = {sid: scenario_config(env_cfg, sid) for sid in scenario_ids}
    return {sid: evaluate(policy, cfg, episodes, seeds) for sid, cfg in configs.items()}


def summary_frame(results: Dict[str, Tuple[Metrics, pd.DataFrame]]) -> pd.DataFrame:
    return pd.DataFrame([{'scenario': sid, **m.as_dict()} for sid, (m, _) in results.items()])
