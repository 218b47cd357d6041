#!/usr/bin/env python3
"""
Transitions, the bounded FIFO replay buffer and stacked training batches.

One ReplayBuffer class serves as the demonstration dataset, the expert
buffer and the agent buffer. Observations are optional: state-based
training stores None in the o/o2 slots.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional

import numpy as np

from mopa_pd.env import Observation
from mopa_pd.errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    o: Optional[Observation]
    a: np.ndarray
    r: float
    s2: np.ndarray
    o2: Optional[Observation]
    done: bool
    success: bool = False


class ReplayBuffer:
    """Ring buffer of transitions with FIFO eviction at capacity."""

    def __init__(self, capacity: int, read_only: bool = False):
        if capacity <= 0:
            raise ContractViolation(f"capacity must be > 0, got {capacity}")
        self.capacity = capacity
        self.read_only = read_only
        self._items: List[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, transition: Transition) -> None:
        if self.read_only:
            raise ContractViolation("buffer is read-only")
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def extend(self, transitions: Iterable[Transition]) -> None:
        for t in transitions:
            self.add(t)

    def freeze(self) -> 'ReplayBuffer':
        self.read_only = True
        return self

    def transitions(self) -> List[Transition]:
        """Oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions())

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform with replacement."""
        if len(self._items) == 0:
            raise ContractViolation("cannot sample from an empty buffer")
        return rng.integers(0, len(self._items), size=n)

    def sample(self, n: int, rng: np.random.Generator) -> List[Transition]:
        return [self._items[i] for i in self.sample_indices(n, rng)]

    def episodes(self) -> List[List[Transition]]:
        """Split the stored transitions at done flags (oldest first)."""
        out: List[List[Transition]] = []
        current: List[Transition] = []
        for t in self.transitions():
            current.append(t)
            if t.done:
                out.append(current)
                current = []
        if current:
            out.append(current)
        return out

    def max_abs_action(self) -> float:
        if not self._items:
            return 0.0
        return float(max(np.max(np.abs(t.a)) for t in self._items))


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    images: Optional[np.ndarray] = None
    joints: Optional[np.ndarray] = None
    images2: Optional[np.ndarray] = None
    joints2: Optional[np.ndarray] = None
    n_expert: int = 0

    def __len__(self) -> int:
        return len(self.r)

    @property
    def has_observations(self) -> bool:
        return self.images is not None and self.images2 is not None

    @classmethod
    def from_transitions(cls, transitions: List[Transition], n_expert: int = 0) -> 'Batch':
        if not transitions:
            raise ContractViolation("empty batch")
        with_obs = all(
            t.o is not None and t.o2 is not None and t.o.image is not None and t.o2.image is not None
            for t in transitions
        )
        batch = cls(
            s=np.stack([t.s for t in transitions]).astype(np.float32),
            a=np.stack([t.a for t in transitions]).astype(np.float32),
            r=np.array([t.r for t in transitions], dtype=np.float32),
            s2=np.stack([t.s2 for t in transitions]).astype(np.float32),
            done=np.array([t.done for t in transitions], dtype=np.float32),
            n_expert=n_expert,
        )
        if with_obs:
            batch.images = np.stack([t.o.image for t in transitions])
            batch.joints = np.stack([t.o.joint_features for t in transitions])
            batch.images2 = np.stack([t.o2.image for t in transitions])
            batch.joints2 = np.stack([t.o2.joint_features for t in transitions])
        return batch
