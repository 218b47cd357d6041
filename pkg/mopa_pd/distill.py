#!/usr/bin/env python3
"""
Two-stage distillation of a MoPA-RL expert into a visual direct-action policy.

Stage 1 flattens MoPA-RL executions into a demonstration dataset and fits
the visual actor to it by behavioral cloning, picking the earliest epoch
with the best validation success rate. Stage 2 seeds an expert buffer with
successful BC rollouts, copies the BC actor and the MoPA-RL critics into an
asymmetric SAC agent, and fine-tunes it on 1:3 expert/agent batches.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mopa_pd import autodiff as ad
from mopa_pd.autodiff import ParamSet, Tape, backward
from mopa_pd.checkpoint import save_checkpoint
from mopa_pd.config import BCTrainConfig, EnvConfig, PlannerConfig, SACConfig, Stage2Config
from mopa_pd.env import (
    StepOutcome,
    action_dim,
    joint_feature_dim,
    reset,
    state_dim,
    step_direct,
)
from mopa_pd.errors import ConfigurationError, ContractViolation, ExpertBufferEmpty, TrainingDiverged
from mopa_pd.evaluation import EpisodeRecord, discounted_return, evaluate, run_episode
from mopa_pd.mopa_agent import AugmentedActionSpace, flatten, rollout_augmented
from mopa_pd.networks import NetworkSpec, copy_params, forward, init_params, sample_action, split_head
from mopa_pd.optim import AdamState, adam_step, assert_finite, lr_schedule_step
from mopa_pd.replay import ReplayBuffer, Transition
from mopa_pd.sac import Actor, CriticPair, SACAgent, TemperatureState, default_target_entropy, sample_mixed_batch

logger = logging.getLogger(__name__)

ZERO_SUCCESS_WINDOW = 50
VALIDATION_SEED_BASE = 2_000_000
STAGE2_EVAL_SEED_BASE = 3_000_000


def visual_spec(env_cfg: EnvConfig, hidden: int = 256) -> NetworkSpec:
    return NetworkSpec.visual_actor(joint_feature_dim(env_cfg), 2 * action_dim(env_cfg),
                                    env_cfg.image_size, hidden)


class VisualPolicy:
    """Deterministic visual actor as an evaluation policy (env_cfg, seed) -> EpisodeRecord."""

    def __init__(self, spec: NetworkSpec, params: ParamSet, bound: float, gamma: float = 0.99):
        self.spec = spec
        self.params = params
        self.bound = bound
        self.gamma = gamma

    def act(self, outcome: StepOutcome) -> np.ndarray:
        inputs = (outcome.obs.image[None], outcome.obs.joint_features[None])
        a = sample_action(self.spec, self.params, inputs, self.bound, deterministic=True)[0]
        return np.clip(a, -self.bound, self.bound)

    def __call__(self, env_cfg: EnvConfig, seed: int) -> EpisodeRecord:
        return run_episode(env_cfg, seed, self.act, self.gamma, with_image=True)


def rollout_transitions(act: Callable[[StepOutcome], np.ndarray], env_cfg: EnvConfig,
                        seed: int) -> Tuple[List[Transition], bool]:
    """One rendered direct-action episode recorded as Transitions."""
    outcome = reset(env_cfg, seed, with_image=True)
    transitions = []
    while not outcome.done:
        a = act(outcome)
        nxt = step_direct(outcome.state, a, env_cfg, with_image=True)
        transitions.append(Transition(s=outcome.state_vec, o=outcome.obs, a=np.asarray(a, dtype=np.float64),
                                      r=nxt.reward, s2=nxt.state_vec, o2=nxt.obs,
                                      done=nxt.done, success=nxt.success))
        outcome = nxt
    return transitions, outcome.success


# -------------------------------------------------------------------------
# Stage 1: demonstrations and behavioral cloning
# -------------------------------------------------------------------------

def collect_demos(actor: Actor, env_cfg: EnvConfig, spaces: AugmentedActionSpace,
                  planner_cfg: PlannerConfig, n_transitions: int, seed: int = 0,
                  gamma: float = 0.99, deterministic: bool = True) -> ReplayBuffer:
    """Roll out the MoPA-RL actor and keep the flattened low-level transitions."""
    if n_transitions <= 0:
        return ReplayBuffer(1).freeze()
    rng = np.random.default_rng(seed)
    demos = ReplayBuffer(n_transitions)
    episodes = successes = 0
    while len(demos) < n_transitions:
        episode_seed = int(rng.integers(2**31 - 1))
        episode = rollout_augmented(actor, env_cfg, spaces, planner_cfg, episode_seed, rng,
                                    gamma, deterministic, with_image=True)
        steps = flatten(episode)
        demos.extend(steps[:n_transitions - len(demos)])
        episodes += 1
        successes += int(bool(episode) and episode[-1].success)
        if episodes == ZERO_SUCCESS_WINDOW and successes == 0:
            logger.warning(f"MoPA-RL actor had no success in {ZERO_SUCCESS_WINDOW} episodes; collecting anyway")
    logger.info(f"Collected {len(demos)} transitions from {episodes} episodes "
                f"({successes} successful)")
    return demos.freeze()


@dataclass
class BCReport:
    epochs: pd.DataFrame
    selected_epoch: Optional[int]
    wall_clock_seconds: float

    def to_dict(self) -> Dict:
        return {
            'selected_epoch': self.selected_epoch,
            'wall_clock_seconds': self.wall_clock_seconds,
            'epochs': self.epochs.to_dict(orient='records'),
        }


def select_epoch(val_success: Sequence[float]) -> Optional[int]:
    """Earliest epoch reaching the maximum validation success rate."""
    scores = np.asarray(val_success, dtype=np.float64)
    if scores.size == 0 or np.all(np.isnan(scores)):
        return None
    return int(np.nanargmax(scores))


def bc_loss(spec: NetworkSpec, params: ParamSet, images: np.ndarray, joints: np.ndarray,
            actions: np.ndarray, bound: float, tape: Optional[Tape] = None):
    """MSE between tanh(mean) * bound and the demonstrated actions; returns the loss node."""
    tape = tape or Tape()
    mean, _ = split_head(forward(spec, params, (images, joints), tape))
    pred = ad.tanh(mean) * np.float32(bound)
    return ad.mean(ad.square(pred - actions.astype(np.float32)))


def init_bc_params(spec: NetworkSpec, rng: np.random.Generator, log_std_init: float) -> ParamSet:
    """Fresh visual actor whose log-std head outputs log_std_init for every input."""
    params = init_params(spec, rng)
    last = len(spec.fc_dims()) - 2
    d = spec.output_dim // 2
    params[f'fc{last}.weight'][:, d:] = 0.0
    params[f'fc{last}.bias'][d:] = log_std_init
    return params


def _stack(transitions: List[Transition]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if any(t.o is None or t.o.image is None for t in transitions):
        raise ContractViolation("behavioral cloning needs rendered observations in every transition")
    images = np.stack([t.o.image for t in transitions]).astype(np.float32)
    joints = np.stack([t.o.joint_features for t in transitions]).astype(np.float32)
    actions = np.stack([t.a for t in transitions]).astype(np.float32)
    return images, joints, actions


def _eval_loss(spec, params, images, joints, actions, bound, chunk: int = 1024) -> float:
    if len(actions) == 0:
        return float('nan')
    total = 0.0
    for i in range(0, len(actions), chunk):
        sl = slice(i, i + chunk)
        loss = bc_loss(spec, params, images[sl], joints[sl], actions[sl], bound)
        total += float(loss.value) * len(actions[sl])
    return total / len(actions)


def train_bc(demos: ReplayBuffer, cfg: BCTrainConfig, env_cfg: EnvConfig, seed: int = 0,
             hidden: int = 256, validator: Optional[Callable[[ParamSet], float]] = None
             ) -> Tuple[ParamSet, BCReport]:
    """
    Fit the visual actor to the demonstrations.

    validator maps candidate weights to a success rate; by default it runs
    cfg.val_episodes x cfg.val_seeds deterministic rollouts. The returned
    weights are those of select_epoch() over the per-epoch success rates.
    """
    transitions = demos.transitions()
    if len(transitions) < cfg.batch_size:
        raise ConfigurationError(
            f"dataset holds {len(transitions)} transitions, fewer than one batch ({cfg.batch_size})"
        )
    started = time.time()
    rng = np.random.default_rng(seed)
    spec = visual_spec(env_cfg, hidden)
    bound = env_cfg.delta_q_step
    images, joints, actions = _stack(transitions)

    order = rng.permutation(len(transitions))
    n_train = int(round(len(order) * cfg.train_fraction))
    train_idx, test_idx = order[:n_train], order[n_train:]

    params = init_bc_params(spec, rng, cfg.log_std_init)
    opt = AdamState.for_params(params, cfg.lr)
    if validator is None and cfg.val_episodes * cfg.val_seeds > 0:
        def validator(candidate: ParamSet) -> float:
            metrics, _ = evaluate(VisualPolicy(spec, candidate, bound), env_cfg,
                                  cfg.val_episodes, cfg.val_seeds, VALIDATION_SEED_BASE)
            return metrics.asr

    rows = []
    best: Optional[ParamSet] = None
    best_success = -np.inf
    for epoch in range(cfg.epochs):
        lr = lr_schedule_step(opt, epoch, cfg.scheduler_step, cfg.scheduler_decay)
        shuffled = rng.permutation(train_idx)
        losses = []
        for i in range(0, len(shuffled), cfg.batch_size):
            idx = shuffled[i:i + cfg.batch_size]
            tape = Tape()
            loss = bc_loss(spec, params, images[idx], joints[idx], actions[idx], bound, tape)
            try:
                params = adam_step(params, backward(tape, loss), opt)
                assert_finite(params, 'bc')
            except FloatingPointError as e:
                raise TrainingDiverged(f"BC epoch {epoch}: {e}") from e
            losses.append(float(loss.value))
        test_loss = _eval_loss(spec, params, images[test_idx], joints[test_idx], actions[test_idx], bound)
        success = validator(params) if validator is not None else float('nan')
        if success > best_success:
            best, best_success = copy_params(params), success
        rows.append({'epoch': epoch, 'lr': lr, 'train_loss': float(np.mean(losses)),
                     'test_loss': test_loss, 'val_success': success})
        logger.info(f"[bc] epoch {epoch} train {rows[-1]['train_loss']:.6f} test {test_loss:.6f} "
                    f"val_success {success:.3f}")

    frame = pd.DataFrame(rows, columns=['epoch', 'lr', 'train_loss', 'test_loss', 'val_success'])
    selected = select_epoch(frame['val_success'].to_numpy()) if rows else None
    if selected is None and rows:
        selected = len(rows) - 1
        logger.warning("No validation rollouts configured; keeping the final epoch")
    chosen = best if best is not None else params
    report = BCReport(epochs=frame, selected_epoch=selected, wall_clock_seconds=time.time() - started)
    logger.info(f"BC finished in {report.wall_clock_seconds:.1f}s, selected epoch {selected}")
    return chosen, report


# -------------------------------------------------------------------------
# Stage 2: expert buffer, weight initialization and asymmetric SAC
# -------------------------------------------------------------------------

def collect_expert_buffer(spec: NetworkSpec, params: ParamSet, env_cfg: EnvConfig,
                          n_trajectories: int = 100, retry_factor: int = 10,
                          seed: int = 0) -> ReplayBuffer:
    """Successful deterministic BC rollouts only; read-only once filled."""
    rng = np.random.default_rng(seed)
    policy = VisualPolicy(spec, params, env_cfg.delta_q_step)
    kept: List[Transition] = []
    n_success = 0
    budget = n_trajectories * retry_factor
    for attempt in range(budget):
        transitions, success = rollout_transitions(policy.act, env_cfg, int(rng.integers(2**31 - 1)))
        if success:
            kept.extend(transitions)
            n_success += 1
            if n_success == n_trajectories:
                break
    if n_success == 0:
        raise ExpertBufferEmpty(f"BC policy never succeeded in {budget} episodes")
    if n_success < n_trajectories:
        logger.warning(f"Expert buffer holds {n_success}/{n_trajectories} trajectories after {budget} episodes")
    buffer = ReplayBuffer(len(kept))
    buffer.extend(kept)
    logger.info(f"Expert buffer: {n_success} trajectories, {len(kept)} transitions")
    return buffer.freeze()


def expert_buffer_from_demos(demos: ReplayBuffer, n_trajectories: int = 100) -> ReplayBuffer:
    """Unsmoothed variant: successful MoPA-RL trajectories straight from the dataset."""
    episodes = [ep for ep in demos.episodes() if ep and ep[-1].success][:n_trajectories]
    if not episodes:
        raise ExpertBufferEmpty("demonstration dataset holds no successful trajectory")
    kept = [t for ep in episodes for t in ep]
    buffer = ReplayBuffer(len(kept))
    buffer.extend(kept)
    logger.info(f"Expert buffer from demonstrations: {len(episodes)} trajectories, {len(kept)} transitions")
    return buffer.freeze()


def _shape_mismatches(expected: ParamSet, actual: ParamSet, label: str) -> List[str]:
    problems = []
    for name in sorted(set(expected) | set(actual)):
        if name not in actual:
            problems.append(f"{label}/{name}: missing")
        elif name not in expected:
            problems.append(f"{label}/{name}: unexpected")
        elif expected[name].shape != actual[name].shape:
            problems.append(f"{label}/{name}: {actual[name].shape} != {expected[name].shape}")
    return problems


def init_asym_agent(bc_params: Optional[ParamSet], mopa_critics: Optional[CriticPair], final_log_alpha: float,
                    env_cfg: EnvConfig, sac_cfg: SACConfig, stage2_cfg: Stage2Config,
                    seed: int = 0, bc_cfg: Optional[BCTrainConfig] = None) -> SACAgent:
    """
    Visual actor + state critics for Stage 2.

    With init_weights the actor is a copy of the BC weights and all four
    critic tensors sets are copies of the MoPA-RL online critics; otherwise
    both start fresh, the actor with bc_cfg.log_std_init. log alpha starts
    alpha_offset below the MoPA-RL final.
    """
    rng = np.random.default_rng(seed)
    spec = visual_spec(env_cfg, sac_cfg.hidden)
    fresh_actor = init_bc_params(spec, rng, (bc_cfg or BCTrainConfig()).log_std_init)
    fresh_critics = CriticPair.create(state_dim(env_cfg), action_dim(env_cfg), sac_cfg.lr, rng, sac_cfg.hidden)

    if stage2_cfg.init_weights:
        if bc_params is None or mopa_critics is None:
            raise ConfigurationError("weight initialization needs both the BC actor and the MoPA-RL critics")
        problems = _shape_mismatches(fresh_actor, bc_params, 'actor')
        problems += _shape_mismatches(fresh_critics.q1, mopa_critics.q1, 'q1')
        problems += _shape_mismatches(fresh_critics.q2, mopa_critics.q2, 'q2')
        if problems:
            raise ConfigurationError("incompatible weights for initialization: " + '; '.join(problems))
        actor = Actor.create(spec, env_cfg.delta_q_step, sac_cfg.lr, rng, params=copy_params(bc_params))
        critics = CriticPair.from_params(
            fresh_critics.spec, copy_params(mopa_critics.q1), copy_params(mopa_critics.q2),
            copy_params(mopa_critics.q1), copy_params(mopa_critics.q2), sac_cfg.lr,
        )
    else:
        actor = Actor.create(spec, env_cfg.delta_q_step, sac_cfg.lr, rng, params=fresh_actor)
        critics = fresh_critics

    log_alpha = final_log_alpha - stage2_cfg.alpha_offset
    temp = TemperatureState.create(log_alpha, default_target_entropy(sac_cfg, action_dim(env_cfg)), sac_cfg.lr)
    logger.info(f"Stage-2 agent: init_weights={stage2_cfg.init_weights} log_alpha={log_alpha:.3f}")
    return SACAgent(actor=actor, critics=critics, temp=temp, cfg=sac_cfg)


@dataclass
class Stage2Result:
    agent: SACAgent
    log: pd.DataFrame
    evals: pd.DataFrame
    milestone_step: Optional[int]
    env_steps: int
    checkpoints: List[Path] = field(default_factory=list)


def stage2_train(agent: SACAgent, env_cfg: EnvConfig, expert: ReplayBuffer, sac_cfg: SACConfig,
                 stage2_cfg: Stage2Config, steps: int, seed: int = 0,
                 out_dir: Optional[Path] = None) -> Stage2Result:
    """Asymmetric SAC: image actor, state critics, one update per env step on 1:3 batches."""
    if len(expert) == 0:
        raise ExpertBufferEmpty("stage 2 needs a non-empty expert buffer")
    rng = np.random.default_rng(seed)
    agent_buffer = ReplayBuffer(stage2_cfg.agent_buffer_capacity)
    bound = env_cfg.delta_q_step

    rows, eval_rows = [], []
    checkpoints: List[Path] = []
    milestone = None
    losses = {'critic_loss': np.nan, 'actor_loss': np.nan}
    rewards: List[float] = []
    episode = 0
    started = time.time()
    outcome = reset(env_cfg, int(rng.integers(2**31 - 1)), with_image=True) if steps > 0 else None

    for step in range(1, steps + 1):
        a = agent.act(outcome.obs, rng)
        nxt = step_direct(outcome.state, a, env_cfg, with_image=True)
        agent_buffer.add(Transition(s=outcome.state_vec, o=outcome.obs, a=a, r=nxt.reward,
                                    s2=nxt.state_vec, o2=nxt.obs, done=nxt.done, success=nxt.success))
        rewards.append(nxt.reward)
        outcome = nxt

        for _ in range(sac_cfg.updates_per_env_step):
            batch = sample_mixed_batch(expert, agent_buffer, sac_cfg.batch_size, rng)
            update = agent.update(batch, rng)
            losses = {'critic_loss': update['critic_loss'], 'actor_loss': update['actor_loss']}

        if outcome.done:
            rows.append({'step': step, 'episode': episode, 'episode_return': float(np.sum(rewards)),
                         'discounted_return': discounted_return(rewards, sac_cfg.gamma),
                         'success': bool(outcome.success), 'length': outcome.state.step_count,
                         'log_alpha': agent.temp.log_alpha, 'alpha': agent.temp.alpha, **losses})
            logger.info(f"[stage2] step {step} episode {episode} return {rows[-1]['episode_return']:.2f} "
                        f"success {outcome.success} alpha {agent.temp.alpha:.4f}")
            episode += 1
            rewards = []
            outcome = reset(env_cfg, int(rng.integers(2**31 - 1)), with_image=True)

        if stage2_cfg.eval_episodes > 0 and step % stage2_cfg.eval_every == 0:
            policy = VisualPolicy(agent.actor.spec, agent.actor.params, bound, sac_cfg.gamma)
            metrics, _ = evaluate(policy, env_cfg, stage2_cfg.eval_episodes, 1, STAGE2_EVAL_SEED_BASE)
            eval_rows.append({'step': step, **metrics.as_dict()})
            if milestone is None and metrics.asr >= stage2_cfg.milestone_asr:
                milestone = step
                logger.info(f"[stage2] ASR {metrics.asr:.3f} reached the milestone at step {step}")

        if out_dir is not None and step % stage2_cfg.checkpoint_every == 0:
            path = save_checkpoint(Path(out_dir) / f'stage2_{step:08d}.ckpt', agent.checkpoint_groups(),
                                   stage2_checkpoint_meta(env_cfg, agent, step))
            checkpoints.append(path)

    log = pd.DataFrame(rows, columns=['step', 'episode', 'episode_return', 'discounted_return', 'success',
                                      'length', 'log_alpha', 'alpha', 'critic_loss', 'actor_loss'])
    evals = pd.DataFrame(eval_rows, columns=['step', 'asr', 'ael', 'adr', 'n_episodes', 'n_seeds'])
    logger.info(f"Stage 2 finished: {steps} env steps, {episode} episodes, {time.time() - started:.1f}s")
    return Stage2Result(agent=agent, log=log, evals=evals, milestone_step=milestone,
                        env_steps=steps, checkpoints=checkpoints)


def stage2_checkpoint_meta(env_cfg: EnvConfig, agent: SACAgent, env_steps: int) -> dict:
    return {
        'kind': 'visual',
        'task': env_cfg.task.value,
        'joint_dim': joint_feature_dim(env_cfg),
        'state_dim': state_dim(env_cfg),
        'action_dim': action_dim(env_cfg),
        'image_size': env_cfg.image_size,
        'bound': env_cfg.delta_q_step,
        'hidden': agent.cfg.hidden,
        'log_alpha': agent.temp.log_alpha,
        'env_steps': env_steps,
    }
