#!/usr/bin/env python3
"""
Soft Actor-Critic updates with pluggable actor inputs.

The critics always read the state vector. The actor reads either the
state vector (state-based MoPA-RL agent) or the (image, joint features)
observation (asymmetric visual agent). Log-probabilities are those of the
unit action tanh(u); actions reaching the critics are scaled to the
actor's bound in radians.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from mopa_pd import autodiff as ad
from mopa_pd.autodiff import Node, ParamSet, Tape, backward, strip_prefix
from mopa_pd.config import SACConfig
from mopa_pd.env import Observation
from mopa_pd.errors import ContractViolation, TrainingDiverged
from mopa_pd.networks import (
    NetworkKind,
    NetworkSpec,
    copy_params,
    forward,
    gaussian_tanh_sample,
    init_params,
    split_head,
)
from mopa_pd.optim import AdamState, adam_step, assert_finite, soft_update
from mopa_pd.replay import Batch, ReplayBuffer

logger = logging.getLogger(__name__)

ACTOR = 'actor/'
CRITIC_GROUPS = ('q1', 'q2', 'q1_target', 'q2_target')

_fallback_warned = set()


@dataclass
class TemperatureState:
    log_alpha: float
    target_entropy: float
    opt: AdamState

    @classmethod
    def create(cls, log_alpha: float, target_entropy: float, lr: float) -> 'TemperatureState':
        opt = AdamState.for_params({'log_alpha': np.zeros(1, dtype=np.float64)}, lr)
        return cls(log_alpha=float(log_alpha), target_entropy=float(target_entropy), opt=opt)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


@dataclass
class Actor:
    """Gaussian-tanh policy over a state-mlp or visual-actor network."""
    spec: NetworkSpec
    params: ParamSet
    bound: float
    opt: AdamState

    @classmethod
    def create(cls, spec: NetworkSpec, bound: float, lr: float, rng: np.random.Generator,
               params: Optional[ParamSet] = None) -> 'Actor':
        params = init_params(spec, rng) if params is None else params
        return cls(spec=spec, params=params, bound=bound, opt=AdamState.for_params(params, lr))

    @property
    def is_visual(self) -> bool:
        return self.spec.kind == NetworkKind.VISUAL_ACTOR

    @property
    def action_dim(self) -> int:
        return self.spec.output_dim // 2

    def batch_inputs(self, batch: Batch, next_obs: bool = False):
        if not self.is_visual:
            return batch.s2 if next_obs else batch.s
        if not batch.has_observations:
            raise ContractViolation("visual actor needs observations but the batch has none")
        return (batch.images2, batch.joints2) if next_obs else (batch.images, batch.joints)

    def single_inputs(self, inputs: Union[np.ndarray, Observation]):
        if self.is_visual:
            if not isinstance(inputs, Observation) or inputs.image is None:
                raise ContractViolation("visual actor needs an Observation with an image")
            return inputs.image[None], inputs.joint_features[None]
        if isinstance(inputs, Observation):
            raise ContractViolation("state actor needs a state vector, got an Observation")
        return np.asarray(inputs, dtype=np.float32)[None]

    def head(self, tape: Tape, inputs) -> Tuple[Node, Node]:
        return split_head(forward(self.spec, self.params, inputs, tape, ACTOR))

    def sample(self, tape: Tape, inputs, rng: Optional[np.random.Generator],
               deterministic: bool = False, noise: Optional[np.ndarray] = None) -> Tuple[Node, Node]:
        mean, log_std = self.head(tape, inputs)
        return gaussian_tanh_sample(mean, log_std, rng, self.bound, noise=noise, deterministic=deterministic)

    def act(self, inputs: Union[np.ndarray, Observation], rng: Optional[np.random.Generator],
            deterministic: bool = False) -> np.ndarray:
        action, _ = self.sample(Tape(), self.single_inputs(inputs), rng, deterministic)
        return np.clip(action.value[0].astype(np.float64), -self.bound, self.bound)


@dataclass
class CriticPair:
    spec: NetworkSpec
    q1: ParamSet
    q2: ParamSet
    q1_target: ParamSet
    q2_target: ParamSet
    opt1: AdamState
    opt2: AdamState

    @classmethod
    def create(cls, state_dim: int, action_dim: int, lr: float, rng: np.random.Generator,
               hidden: int = 256) -> 'CriticPair':
        spec = NetworkSpec.state_mlp(state_dim + action_dim, 1, hidden)
        q1, q2 = init_params(spec, rng), init_params(spec, rng)
        return cls.from_params(spec, q1, q2, copy_params(q1), copy_params(q2), lr)

    @classmethod
    def from_params(cls, spec: NetworkSpec, q1: ParamSet, q2: ParamSet,
                    q1_target: ParamSet, q2_target: ParamSet, lr: float) -> 'CriticPair':
        return cls(spec=spec, q1=q1, q2=q2, q1_target=q1_target, q2_target=q2_target,
                   opt1=AdamState.for_params(q1, lr), opt2=AdamState.for_params(q2, lr))

    def q_values(self, tape: Tape, s, a, target: bool = False) -> Tuple[Node, Node]:
        """Twin Q values, each (N, 1). a may be a tape node (actor path) or an array."""
        x = ad.concat([ad.lift(tape, s), ad.lift(tape, a)], axis=1)
        if target:
            return (forward(self.spec, self.q1_target, x, tape, 'q1_target/'),
                    forward(self.spec, self.q2_target, x, tape, 'q2_target/'))
        return (forward(self.spec, self.q1, x, tape, 'q1/'),
                forward(self.spec, self.q2, x, tape, 'q2/'))

    def groups(self) -> Dict[str, ParamSet]:
        return {name: getattr(self, name) for name in CRITIC_GROUPS}


def _require_batch(batch: Batch) -> None:
    if batch is None or len(batch) == 0:
        raise ContractViolation("empty batch")


def critic_targets(batch: Batch, actor: Actor, critics: CriticPair, temp: TemperatureState,
                   cfg: SACConfig, rng: Optional[np.random.Generator],
                   deterministic: bool = False) -> np.ndarray:
    """y = r * reward_scale + gamma * (1 - done) * (min Q'(s', a') - alpha * log pi(a'))."""
    tape = Tape()
    a2, logp2 = actor.sample(tape, actor.batch_inputs(batch, next_obs=True), rng, deterministic)
    q1t, q2t = critics.q_values(tape, batch.s2, a2.value, target=True)
    soft_value = np.minimum(q1t.value, q2t.value)[:, 0] - temp.alpha * logp2.value
    bootstrap = cfg.gamma * (1.0 - batch.done) * soft_value
    return (batch.r * cfg.reward_scale + bootstrap).astype(np.float32)


def critic_update(batch: Batch, actor: Actor, critics: CriticPair, temp: TemperatureState,
                  cfg: SACConfig, rng: Optional[np.random.Generator]) -> float:
    """One Adam step on both critics plus the Polyak target update; returns the summed MSE."""
    _require_batch(batch)
    y = critic_targets(batch, actor, critics, temp, cfg, rng)[:, None]
    tape = Tape()
    q1, q2 = critics.q_values(tape, batch.s, batch.a)
    loss = ad.mean(ad.square(q1 - y)) + ad.mean(ad.square(q2 - y))
    grads = backward(tape, loss)
    critics.q1 = adam_step(critics.q1, strip_prefix(grads, 'q1/'), critics.opt1)
    critics.q2 = adam_step(critics.q2, strip_prefix(grads, 'q2/'), critics.opt2)
    critics.q1_target = soft_update(critics.q1_target, critics.q1, cfg.tau)
    critics.q2_target = soft_update(critics.q2_target, critics.q2, cfg.tau)
    return float(loss.value)


def actor_update(batch: Batch, actor: Actor, critics, temp: TemperatureState,
                 cfg: SACConfig, rng: Optional[np.random.Generator]) -> float:
    """
    One Adam step on E[alpha * log pi(a|o) - min Q(s, a)], a reparameterized.

    critics is anything with q_values(tape, s, a) -> (q1, q2).
    """
    _require_batch(batch)
    tape = Tape()
    a, logp = actor.sample(tape, actor.batch_inputs(batch), rng)
    q1, q2 = critics.q_values(tape, batch.s, a)
    q = ad.reshape(ad.minimum(q1, q2), (len(batch),))
    loss = ad.mean(temp.alpha * logp - q)
    grads = backward(tape, loss)
    actor.params = adam_step(actor.params, strip_prefix(grads, ACTOR), actor.opt)
    return float(loss.value)


def alpha_gradient(logp: np.ndarray, target_entropy: float) -> float:
    """d/d(log alpha) of E[-log_alpha * (log pi + target_entropy)]."""
    return float(-np.mean(np.asarray(logp, dtype=np.float64) + target_entropy))


def alpha_update(batch: Batch, actor: Actor, temp: TemperatureState,
                 rng: Optional[np.random.Generator]) -> float:
    _require_batch(batch)
    _, logp = actor.sample(Tape(), actor.batch_inputs(batch), rng)
    grad = alpha_gradient(logp.value, temp.target_entropy)
    params = adam_step({'log_alpha': np.array([temp.log_alpha])}, {'log_alpha': np.array([grad])}, temp.opt)
    temp.log_alpha = float(params['log_alpha'][0])
    if not math.isfinite(temp.log_alpha):
        raise FloatingPointError("non-finite log_alpha")
    return temp.log_alpha


def sample_mixed_batch(expert: ReplayBuffer, agent: ReplayBuffer, batch_size: int,
                       rng: np.random.Generator) -> Batch:
    """ceil(batch_size / 4) expert transitions plus the remainder from the agent buffer."""
    if len(expert) == 0 and len(agent) == 0:
        raise ContractViolation("both buffers are empty")
    n_expert = math.ceil(batch_size / 4)
    if len(expert) == 0 or len(agent) == 0:
        source, n_expert = (agent, 0) if len(expert) == 0 else (expert, batch_size)
        which = 'expert' if len(expert) == 0 else 'agent'
        if which not in _fallback_warned:
            logger.warning(f"{which} buffer is empty; drawing the whole batch from the other buffer")
            _fallback_warned.add(which)
        return Batch.from_transitions(source.sample(batch_size, rng), n_expert=n_expert)
    transitions = expert.sample(n_expert, rng) + agent.sample(batch_size - n_expert, rng)
    return Batch.from_transitions(transitions, n_expert=n_expert)


@dataclass
class SACAgent:
    actor: Actor
    critics: CriticPair
    temp: TemperatureState
    cfg: SACConfig
    updates: int = 0

    def act(self, inputs, rng: Optional[np.random.Generator], deterministic: bool = False) -> np.ndarray:
        return self.actor.act(inputs, rng, deterministic)

    def update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        """Critic, actor, then temperature; raises TrainingDiverged on NaN/Inf."""
        try:
            critic_loss = critic_update(batch, self.actor, self.critics, self.temp, self.cfg, rng)
            actor_loss = actor_update(batch, self.actor, self.critics, self.temp, self.cfg, rng)
            log_alpha = alpha_update(batch, self.actor, self.temp, rng)
            assert_finite(self.actor.params, 'actor')
            for name, params in self.critics.groups().items():
                assert_finite(params, name)
        except FloatingPointError as e:
            raise TrainingDiverged(f"update {self.updates}: {e}") from e
        self.updates += 1
        return {'critic_loss': critic_loss, 'actor_loss': actor_loss, 'log_alpha': log_alpha}

    def checkpoint_groups(self) -> Dict[str, ParamSet]:
        groups = {'actor': self.actor.params}
        groups.update(self.critics.groups())
        groups['temperature'] = {'log_alpha': np.array([self.temp.log_alpha], dtype=np.float32)}
        return groups


def default_target_entropy(cfg: SACConfig, action_dim: int) -> float:
    return float(-action_dim) if cfg.target_entropy is None else cfg.target_entropy


def build_state_agent(state_dim: int, action_dim: int, bound: float, cfg: SACConfig,
                      rng: np.random.Generator, lr: Optional[float] = None) -> SACAgent:
    """Symmetric agent: actor and critics both read the state vector."""
    lr = cfg.lr if lr is None else lr
    actor = Actor.create(NetworkSpec.state_mlp(state_dim, 2 * action_dim, cfg.hidden), bound, lr, rng)
    critics = CriticPair.create(state_dim, action_dim, lr, rng, cfg.hidden)
    temp = TemperatureState.create(cfg.init_log_alpha, default_target_entropy(cfg, action_dim), lr)
    return SACAgent(actor=actor, critics=critics, temp=temp, cfg=cfg)


def agent_from_checkpoint(groups: Dict[str, ParamSet], meta: Dict, cfg: SACConfig,
                          lr: Optional[float] = None) -> SACAgent:
    """Rebuild an agent saved by checkpoint_groups(); meta must carry the network dimensions."""
    lr = cfg.lr if lr is None else lr
    missing = [name for name in ('actor',) + CRITIC_GROUPS if name not in groups]
    if missing:
        raise ContractViolation(f"checkpoint lacks groups {missing}")
    try:
        d, hidden = int(meta['action_dim']), int(meta.get('hidden', cfg.hidden))
        if meta.get('kind') == 'visual':
            spec = NetworkSpec.visual_actor(int(meta['joint_dim']), 2 * d, int(meta['image_size']), hidden)
        else:
            spec = NetworkSpec.state_mlp(int(meta['state_dim']), 2 * d, hidden)
        critic_spec = NetworkSpec.state_mlp(int(meta['state_dim']) + d, 1, hidden)
        bound = float(meta['bound'])
    except KeyError as e:
        raise ContractViolation(f"checkpoint metadata lacks {e}") from e
    actor = Actor.create(spec, bound, lr, np.random.default_rng(0), params=dict(groups['actor']))
    critics = CriticPair.from_params(critic_spec, dict(groups['q1']), dict(groups['q2']),
                                     dict(groups['q1_target']), dict(groups['q2_target']), lr)
    if 'log_alpha' in meta:
        log_alpha = float(meta['log_alpha'])
    elif 'temperature' in groups:
        log_alpha = float(groups['temperature']['log_alpha'][0])
    else:
        log_alpha = cfg.init_log_alpha
    temp = TemperatureState.create(log_alpha, default_target_entropy(cfg, d), lr)
    return SACAgent(actor=actor, critics=critics, temp=temp, cfg=cfg)
