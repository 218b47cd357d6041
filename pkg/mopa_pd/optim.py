#!/usr/bin/env python3
"""
Adam, the BC step-decay learning-rate schedule and Polyak target updates.
"""

import logging
from dataclasses import dataclass

import numpy as np

from mopa_pd.autodiff import ParamSet
from mopa_pd.errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet
    lr: float
    base_lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamSet, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> 'AdamState':
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            lr=lr, base_lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def _check_match(params: ParamSet, other: ParamSet, what: str) -> None:
    if params.keys() != other.keys():
        missing = sorted(set(params) ^ set(other))
        raise ContractViolation(f"{what} names differ from parameters: {missing}")
    for name, p in params.items():
        if p.shape != other[name].shape:
            raise ContractViolation(
                f"{what} '{name}' has shape {other[name].shape}, parameter has {p.shape}"
            )


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState) -> ParamSet:
    """One bias-corrected Adam step. Returns new arrays; moments update in place."""
    _check_match(params, grads, 'gradient')
    _check_match(params, state.m, 'first moment')
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    updated: ParamSet = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        updated[name] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return updated


def lr_schedule_step(state: AdamState, epoch: int, step_size: int = 5, decay: float = 0.99) -> float:
    """lr = base_lr * decay ** (epoch // step_size)."""
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    state.lr = state.base_lr * decay ** (epoch // step_size)
    return state.lr


def soft_update(target: ParamSet, source: ParamSet, tau: float) -> ParamSet:
    """(1 - tau) * target + tau * source, as new arrays."""
    if not 0.0 < tau <= 1.0:
        raise ContractViolation(f"tau must be in (0, 1], got {tau}")
    _check_match(target, source, 'source')
    if tau == 1.0:
        return {name: source[name].copy() for name in target}
    return {
        name: ((1.0 - tau) * t + tau * source[name]).astype(t.dtype)
        for name, t in target.items()
    }


def assert_finite(params: ParamSet, label: str) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite values in {label}/{name}")
