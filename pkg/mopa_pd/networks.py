#!/usr/bin/env python3
"""
Network architectures and the Gaussian-tanh policy head.

Two kinds of network are supported:
- state-mlp: in -> 256 -> 256 -> out, ReLU. Used by the state actor and
  every critic.
- visual-actor: three 3x3 stride-2 convolutions (16/32/64 channels) on the
  image, flattened and concatenated with the joint features, followed by
  256 -> 256 -> out fully connected layers with LeakyReLU.

Linear weights are stored as (in, out) so a layer is x @ W + b.
"""

import logging
import math
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from mopa_pd import autodiff as ad
from mopa_pd.autodiff import Node, ParamSet, Tape
from mopa_pd.errors import ContractViolation

logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2 = math.log(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NetworkKind(str, Enum):
    STATE_MLP = "state-mlp"
    VISUAL_ACTOR = "visual-actor"


class NetworkSpec(BaseModel):
    model_config = {"frozen": True}

    kind: NetworkKind
    input_dim: int = Field(gt=0, description="State width (state-mlp) or joint-feature width (visual-actor)")
    output_dim: int = Field(gt=0)
    hidden: int = Field(default=256, gt=0)
    image_size: int = Field(default=32, ge=8)
    channels: Tuple[int, int, int] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    padding: int = 1

    @classmethod
    def state_mlp(cls, input_dim: int, output_dim: int, hidden: int = 256) -> 'NetworkSpec':
        return cls(kind=NetworkKind.STATE_MLP, input_dim=input_dim, output_dim=output_dim, hidden=hidden)

    @classmethod
    def visual_actor(cls, joint_dim: int, output_dim: int, image_size: int = 32,
                     hidden: int = 256) -> 'NetworkSpec':
        return cls(kind=NetworkKind.VISUAL_ACTOR, input_dim=joint_dim, output_dim=output_dim,
                   image_size=image_size, hidden=hidden)

    @property
    def activation(self) -> str:
        return 'relu' if self.kind == NetworkKind.STATE_MLP else 'leaky_relu'

    def conv_sizes(self):
        """Spatial size after each convolution."""
        sizes = []
        size = self.image_size
        for _ in self.channels:
            size = (size + 2 * self.padding - self.kernel) // self.stride + 1
            sizes.append(size)
        return sizes

    @property
    def flat_dim(self) -> int:
        return self.channels[-1] * self.conv_sizes()[-1] ** 2

    def fc_dims(self):
        first = self.input_dim if self.kind == NetworkKind.STATE_MLP else self.flat_dim + self.input_dim
        return [first, self.hidden, self.hidden, self.output_dim]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParamSet:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    params: ParamSet = {}
    if spec.kind == NetworkKind.VISUAL_ACTOR:
        c_in = 3
        for i, c_out in enumerate(spec.channels):
            fan_in = c_in * spec.kernel * spec.kernel
            bound = 1.0 / math.sqrt(fan_in)
            params[f'conv{i}.weight'] = rng.uniform(-bound, bound, (c_out, c_in, spec.kernel, spec.kernel)).astype(np.float32)
            params[f'conv{i}.bias'] = rng.uniform(-bound, bound, (c_out,)).astype(np.float32)
            c_in = c_out
    dims = spec.fc_dims()
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / math.sqrt(d_in)
        params[f'fc{i}.weight'] = rng.uniform(-bound, bound, (d_in, d_out)).astype(np.float32)
        params[f'fc{i}.bias'] = rng.uniform(-bound, bound, (d_out,)).astype(np.float32)
    return params


def _activate(spec: NetworkSpec, x: Node) -> Node:
    return ad.relu(x) if spec.activation == 'relu' else ad.leaky_relu(x)


def _check_shape(name: str, value: np.ndarray, expected: Tuple) -> None:
    if value.ndim != len(expected) or any(e is not None and e != v for e, v in zip(expected, value.shape)):
        raise ContractViolation(f"{name} has shape {value.shape}, expected {expected}")


def forward(spec: NetworkSpec, params: ParamSet, inputs, tape: Tape, prefix: str = '') -> Node:
    """
    Record a forward pass on the tape.

    inputs is an (N, input_dim) array/node for state-mlp and an
    (images (N, S, S, 3), joint_features (N, J)) pair for visual-actor.
    """
    p = tape.params_from(params, prefix)
    if spec.kind == NetworkKind.STATE_MLP:
        x = ad.lift(tape, inputs)
        _check_shape('state input', x.value, (None, spec.input_dim))
    else:
        if not isinstance(inputs, tuple) or len(inputs) != 2:
            raise ContractViolation("visual-actor expects (images, joint_features)")
        images, joints = inputs
        if images is None:
            raise ContractViolation("visual-actor input is missing the image channel")
        images = np.asarray(images)
        _check_shape('image input', images, (None, spec.image_size, spec.image_size, 3))
        joints = np.asarray(joints)
        _check_shape('joint input', joints, (images.shape[0], spec.input_dim))
        h = tape.constant(np.transpose(images, (0, 3, 1, 2)))
        for i in range(len(spec.channels)):
            h = _activate(spec, ad.conv2d(h, p[f'conv{i}.weight'], p[f'conv{i}.bias'],
                                          stride=spec.stride, padding=spec.padding))
        h = ad.reshape(h, (h.shape[0], -1))
        x = ad.concat([h, tape.constant(joints)], axis=1)

    n_layers = len(spec.fc_dims()) - 1
    for i in range(n_layers):
        x = ad.matmul(x, p[f'fc{i}.weight']) + p[f'fc{i}.bias']
        if i < n_layers - 1:
            x = _activate(spec, x)
    return x


def forward_values(spec: NetworkSpec, params: ParamSet, inputs) -> np.ndarray:
    """Forward pass without keeping a tape around."""
    return forward(spec, params, inputs, Tape()).value


def split_head(out: Node) -> Tuple[Node, Node]:
    """Gaussian head output (N, 2d) -> mean (N, d), log_std (N, d)."""
    d = out.shape[1] // 2
    return ad.columns(out, 0, d), ad.columns(out, d, 2 * d)


def gaussian_tanh_sample(mean: Node, log_std: Node, rng: Optional[np.random.Generator] = None,
                         bound: Union[float, np.ndarray] = 1.0, noise: Optional[np.ndarray] = None,
                         deterministic: bool = False) -> Tuple[Node, Node]:
    """
    Reparameterized tanh-squashed Gaussian sample.

    Returns (action scaled to bound, log-probability of the unit action
    tanh(u)). The tanh correction is log(1 - tanh(u)^2) written in the
    stable form 2 (log 2 - u - softplus(-2u)).
    """
    tape = mean.tape
    log_std = ad.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        z = np.zeros(mean.shape, dtype=tape.dtype)
    elif noise is not None:
        z = np.asarray(noise, dtype=tape.dtype).reshape(mean.shape)
    else:
        if rng is None:
            raise ContractViolation("stochastic sampling needs an rng or explicit noise")
        z = rng.standard_normal(mean.shape).astype(tape.dtype)
    u = mean + ad.exp(log_std) * z
    squashed = ad.tanh(u)
    gauss = np.sum(-0.5 * z * z - HALF_LOG_2PI, axis=1) - ad.sum(log_std, axis=1)
    correction = 2.0 * (LOG_2 - u - ad.softplus(-2.0 * u))
    log_prob = gauss - ad.sum(correction, axis=1)
    return squashed * np.asarray(bound, dtype=tape.dtype), log_prob


def sample_action(spec: NetworkSpec, params: ParamSet, inputs, bound: float,
                  rng: Optional[np.random.Generator] = None,
                  deterministic: bool = False) -> np.ndarray:
    """Numpy-level policy call for rollouts; returns (N, d) actions."""
    tape = Tape()
    mean, log_std = split_head(forward(spec, params, inputs, tape))
    action, _ = gaussian_tanh_sample(mean, log_std, rng, bound, deterministic=deterministic)
    return action.value.astype(np.float64)


def copy_params(params: ParamSet) -> ParamSet:
    return {name: value.copy() for name, value in params.items()}
