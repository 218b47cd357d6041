#!/usr/bin/env python3
"""
Motion-planner-augmented action space and the state-based MoPA-RL trainer.

An augmented action is a joint displacement of up to delta_q_mp. Small
displacements (|a|_inf <= delta_q_step on the joints) run as one direct
step; larger ones are planned with RRT-Connect, shortcut and replayed as a
sequence of direct sub-steps. Every sub-step is recorded as an ordinary
Transition so MP executions can later be flattened into a demonstration
dataset.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from mopa_pd.checkpoint import save_checkpoint
from mopa_pd.config import EnvConfig, MoPAConfig, PlannerConfig, SACConfig, Task
from mopa_pd.env import StepOutcome, action_dim, reset, state_dim, step_direct
from mopa_pd.errors import ContractViolation
from mopa_pd.evaluation import EpisodeRecord, discounted_return
from mopa_pd.geometry import clamp_angles, config_collides
from mopa_pd.planner import discretize_path, rrt_connect, shortcut
from mopa_pd.replay import Batch, ReplayBuffer, Transition
from mopa_pd.sac import Actor, SACAgent, build_state_agent

logger = logging.getLogger(__name__)

MP_SHRINK = 0.8
MP_SHRINK_TRIES = 5
ACTION_TOLERANCE = 1e-9


class AugmentedActionSpace(BaseModel):
    model_config = {"frozen": True}

    delta_q_step: float = Field(gt=0.0)
    delta_q_mp: float = Field(gt=0.0)

    @model_validator(mode='after')
    def validate_order(self) -> 'AugmentedActionSpace':
        if not self.delta_q_mp > self.delta_q_step:
            raise ValueError(
                f'delta_q_mp ({self.delta_q_mp}) must exceed delta_q_step ({self.delta_q_step})'
            )
        return self

    @classmethod
    def from_configs(cls, env_cfg: EnvConfig, mopa_cfg: MoPAConfig) -> 'AugmentedActionSpace':
        return cls(delta_q_step=env_cfg.delta_q_step, delta_q_mp=mopa_cfg.delta_q_mp)


@dataclass
class AugmentedTransition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool
    steps: List[Transition]
    success: bool = False
    used_planner: bool = False
    fallback: Optional[str] = None
    blocked: bool = False


def _mp_target(q: np.ndarray, joint: np.ndarray, env_cfg: EnvConfig) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """Collision-free clamp(q + a), shrinking a by MP_SHRINK up to MP_SHRINK_TRIES times."""
    for _ in range(MP_SHRINK_TRIES + 1):
        goal = clamp_angles(env_cfg.arm, q + joint)
        if not config_collides(env_cfg.arm, goal, env_cfg.obstacles):
            return goal, joint
        joint = joint * MP_SHRINK
    return None, joint


def dispatch(action: np.ndarray, current: StepOutcome, env_cfg: EnvConfig,
             spaces: AugmentedActionSpace, planner_cfg: PlannerConfig, gamma: float,
             rng: np.random.Generator, with_image: bool = True) -> Tuple[AugmentedTransition, StepOutcome]:
    """Execute one augmented action; returns the transition and the final outcome."""
    a = np.asarray(action, dtype=np.float64)
    k = env_cfg.arm.n_joints
    step = spaces.delta_q_step
    if a.shape != (action_dim(env_cfg),):
        raise ContractViolation(f"expected augmented action of shape ({action_dim(env_cfg)},), got {a.shape}")
    if np.max(np.abs(a)) > spaces.delta_q_mp + ACTION_TOLERANCE:
        raise ContractViolation(f"|a|_inf = {np.max(np.abs(a)):.4f} exceeds delta_q_mp {spaces.delta_q_mp}")

    joint, grip = a[:k], np.clip(a[k:], -step, step)
    q = current.state.q.angles
    fallback = None
    used_planner = False

    if np.max(np.abs(joint)) <= step:
        sub_actions = [np.concatenate([joint, grip])]
    else:
        goal, target = _mp_target(q, joint, env_cfg)
        path = None
        if goal is None:
            fallback = 'goal-in-collision'
        elif np.max(np.abs(target)) > step:
            cfg = planner_cfg.model_copy(update={'seed': int(rng.integers(2**31 - 1))})
            path = rrt_connect(q, goal, env_cfg.arm, env_cfg.obstacles, cfg)
            if path is None:
                fallback = 'planner-failure'
            else:
                path = shortcut(path, env_cfg.arm, env_cfg.obstacles, cfg)
        if path is not None:
            used_planner = True
            moves = discretize_path(path, step) or [np.zeros(k)]
            sub_actions = [
                np.concatenate([m, grip if i == 0 else np.zeros_like(grip)]) for i, m in enumerate(moves)
            ]
        elif fallback is None:
            # shrunk target is collision-free and within one direct step
            sub_actions = [np.concatenate([target, grip])]
        else:
            logger.debug(f"MP fallback ({fallback}); executing a truncated direct step")
            sub_actions = [np.concatenate([np.clip(joint, -step, step), grip])]

    steps: List[Transition] = []
    reward = 0.0
    blocked = False
    outcome = current
    for i, sub in enumerate(sub_actions):
        nxt = step_direct(outcome.state, sub, env_cfg, with_image)
        steps.append(Transition(
            s=outcome.state_vec, o=outcome.obs, a=sub, r=nxt.reward,
            s2=nxt.state_vec, o2=nxt.obs, done=nxt.done, success=nxt.success,
        ))
        reward += gamma ** i * nxt.reward
        outcome = nxt
        if nxt.done:
            break
        if used_planner and nxt.blocked:
            blocked = True
            logger.debug(f"MP execution blocked at sub-step {i}")
            break

    transition = AugmentedTransition(
        s=current.state_vec, a=a, r=reward, s2=outcome.state_vec, done=outcome.done,
        steps=steps, success=outcome.success, used_planner=used_planner,
        fallback=fallback, blocked=blocked,
    )
    return transition, outcome


def rollout_augmented(actor: Actor, env_cfg: EnvConfig, spaces: AugmentedActionSpace,
                      planner_cfg: PlannerConfig, seed: int, rng: np.random.Generator,
                      gamma: float = 0.99, deterministic: bool = False,
                      with_image: bool = False) -> List[AugmentedTransition]:
    """One episode of the state actor on the augmented action space."""
    outcome = reset(env_cfg, seed, with_image)
    episode: List[AugmentedTransition] = []
    while not outcome.done:
        a = actor.act(outcome.state_vec, rng, deterministic)
        transition, outcome = dispatch(a, outcome, env_cfg, spaces, planner_cfg, gamma, rng, with_image)
        episode.append(transition)
    return episode


def flatten(episode: List[AugmentedTransition]) -> List[Transition]:
    return [t for aug in episode for t in aug.steps]


class MoPAPolicy:
    """Evaluation adapter: deterministic state actor acting through dispatch."""

    def __init__(self, actor: Actor, spaces: AugmentedActionSpace, planner_cfg: PlannerConfig,
                 gamma: float = 0.99, deterministic: bool = True):
        self.actor = actor
        self.spaces = spaces
        self.planner_cfg = planner_cfg
        self.gamma = gamma
        self.deterministic = deterministic

    def __call__(self, env_cfg: EnvConfig, seed: int) -> EpisodeRecord:
        rng = np.random.default_rng(seed)
        episode = rollout_augmented(self.actor, env_cfg, self.spaces, self.planner_cfg, seed, rng,
                                    self.gamma, self.deterministic)
        steps = flatten(episode)
        rewards = [t.r for t in steps]
        start = reset(env_cfg, seed, with_image=False).state.q.angles
        qs = [start] + [_angles_from_state_vec(t.s2, env_cfg.arm.n_joints) for t in steps]
        return EpisodeRecord(
            seed=seed,
            success=bool(episode and episode[-1].success),
            length=len(steps),
            discounted_return=discounted_return(rewards, self.gamma),
            rewards=rewards,
            q_trajectory=np.asarray(qs),
        )


def _angles_from_state_vec(s: np.ndarray, k: int) -> np.ndarray:
    sc = np.asarray(s[:2 * k], dtype=np.float64).reshape(k, 2)
    return np.arctan2(sc[:, 0], sc[:, 1])


@dataclass
class MoPAResult:
    agent: SACAgent
    final_log_alpha: float
    log: pd.DataFrame
    env_steps: int
    checkpoints: List[Path] = field(default_factory=list)

    @property
    def actor(self) -> Actor:
        return self.agent.actor

    @property
    def critics(self):
        return self.agent.critics


def mopa_checkpoint_meta(env_cfg: EnvConfig, spaces: AugmentedActionSpace, agent: SACAgent,
                         env_steps: int) -> dict:
    return {
        'kind': 'mopa',
        'task': env_cfg.task.value,
        'state_dim': state_dim(env_cfg),
        'action_dim': action_dim(env_cfg),
        'bound': spaces.delta_q_mp,
        'hidden': agent.cfg.hidden,
        'log_alpha': agent.temp.log_alpha,
        'env_steps': env_steps,
    }


def train_mopa(env_cfg: EnvConfig, spaces: AugmentedActionSpace, sac_cfg: SACConfig, steps: int,
               planner_cfg: Optional[PlannerConfig] = None, mopa_cfg: Optional[MoPAConfig] = None,
               seed: int = 0, out_dir: Optional[Path] = None) -> MoPAResult:
    """
    SAC on the augmented MDP with state inputs for actor and critic.

    steps counts low-level environment steps; MP sub-steps consume the
    budget. One gradient update runs per augmented transition once the
    buffer holds a full batch.
    """
    planner_cfg = planner_cfg or PlannerConfig()
    mopa_cfg = mopa_cfg or MoPAConfig()
    rng = np.random.default_rng(seed)
    d = action_dim(env_cfg)
    agent = build_state_agent(state_dim(env_cfg), d, spaces.delta_q_mp, sac_cfg, rng, lr=mopa_cfg.lr)
    buffer = ReplayBuffer(sac_cfg.buffer_capacity)

    rows = []
    checkpoints: List[Path] = []
    losses = {'critic_loss': np.nan, 'actor_loss': np.nan}
    env_steps = 0
    episode = 0
    next_checkpoint = mopa_cfg.checkpoint_every
    started = time.time()

    def new_episode() -> StepOutcome:
        return reset(env_cfg, int(rng.integers(2**31 - 1)), with_image=False)

    outcome = new_episode() if steps > 0 else None
    rewards: List[float] = []
    while env_steps < steps:
        if env_steps < mopa_cfg.warmup_steps:
            a = rng.uniform(-spaces.delta_q_mp, spaces.delta_q_mp, d)
        else:
            a = agent.act(outcome.state_vec, rng)
        aug, outcome = dispatch(a, outcome, env_cfg, spaces, planner_cfg, sac_cfg.gamma, rng, with_image=False)
        buffer.add(Transition(s=aug.s, o=None, a=aug.a, r=aug.r, s2=aug.s2, o2=None,
                              done=aug.done, success=aug.success))
        env_steps += len(aug.steps)
        rewards.extend(t.r for t in aug.steps)

        if len(buffer) >= sac_cfg.batch_size:
            for _ in range(sac_cfg.updates_per_env_step):
                batch = Batch.from_transitions(buffer.sample(sac_cfg.batch_size, rng))
                update = agent.update(batch, rng)
                losses = {'critic_loss': update['critic_loss'], 'actor_loss': update['actor_loss']}

        if aug.done or env_steps >= steps:
            row = {
                'step': env_steps,
                'episode': episode,
                'episode_return': float(np.sum(rewards)),
                'discounted_return': discounted_return(rewards, sac_cfg.gamma),
                'success': bool(aug.success),
                'length': outcome.state.step_count,
                'log_alpha': agent.temp.log_alpha,
                'alpha': agent.temp.alpha,
                **losses,
            }
            rows.append(row)
            logger.info(
                f"[mopa] step {env_steps} episode {episode} return {row['episode_return']:.2f} "
                f"success {row['success']} alpha {row['alpha']:.4f}"
            )
            episode += 1
            rewards = []
            if env_steps < steps:
                outcome = new_episode()

        if out_dir is not None and env_steps >= next_checkpoint:
            path = save_checkpoint(Path(out_dir) / f'mopa_{env_steps:08d}.ckpt', agent.checkpoint_groups(),
                                   mopa_checkpoint_meta(env_cfg, spaces, agent, env_steps))
            checkpoints.append(path)
            next_checkpoint += mopa_cfg.checkpoint_every

    log = pd.DataFrame(rows, columns=['step', 'episode', 'episode_return', 'discounted_return', 'success',
                                      'length', 'log_alpha', 'alpha', 'critic_loss', 'actor_loss'])
    logger.info(
        f"MoPA-RL finished: {env_steps} env steps, {episode} episodes, final log_alpha "
        f"{agent.temp.log_alpha:.4f}, {time.time() - started:.1f}s"
    )
    return MoPAResult(agent=agent, final_log_alpha=agent.temp.log_alpha, log=log,
                      env_steps=env_steps, checkpoints=checkpoints)
