#!/usr/bin/env python3
"""
On-disk demonstration dataset.

A dataset directory holds two files:

  manifest.txt  -- `key = value` lines: format, version, task, seed, count,
                   state_dim, action_dim, joint_dim, image_size, has_images,
                   record_floats
  records.bin   -- `count` fixed-size records of little-endian float32 in
                   transition order

Record layout (floats):
  s[state_dim] a[action_dim] r s2[state_dim] done success
  joints[joint_dim] joints2[joint_dim]
  image[H*W*3] image2[H*W*3]        (only when has_images = 1)
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from mopa_pd.env import Observation
from mopa_pd.errors import ConfigurationError, ContractViolation, MissingArtifact
from mopa_pd.replay import ReplayBuffer, Transition

logger = logging.getLogger(__name__)

FORMAT = 'mopa-pd-dataset'
VERSION = 1
DTYPE = '<f4'
MANIFEST = 'manifest.txt'
RECORDS = 'records.bin'


@dataclass(frozen=True)
class DatasetLayout:
    task: str
    seed: int
    state_dim: int
    action_dim: int
    joint_dim: int
    image_size: int
    has_images: bool

    @property
    def image_floats(self) -> int:
        return self.image_size * self.image_size * 3 if self.has_images else 0

    @property
    def record_floats(self) -> int:
        return 2 * self.state_dim + self.action_dim + 3 + 2 * self.joint_dim + 2 * self.image_floats

    def slices(self) -> Dict[str, slice]:
        sizes = [
            ('s', self.state_dim), ('a', self.action_dim), ('r', 1), ('s2', self.state_dim),
            ('done', 1), ('success', 1), ('joints', self.joint_dim), ('joints2', self.joint_dim),
            ('image', self.image_floats), ('image2', self.image_floats),
        ]
        out, offset = {}, 0
        for name, size in sizes:
            out[name] = slice(offset, offset + size)
            offset += size
        return out


def layout_for(transitions: List[Transition], task: str, seed: int, image_size: int) -> DatasetLayout:
    first = transitions[0]
    has_images = all(t.o is not None and t.o.image is not None and t.o2 is not None
                     and t.o2.image is not None for t in transitions)
    if first.o is None:
        raise ContractViolation("dataset transitions need joint-feature observations")
    return DatasetLayout(
        task=task,
        seed=seed,
        state_dim=len(first.s),
        action_dim=len(first.a),
        joint_dim=len(first.o.joint_features),
        image_size=image_size,
        has_images=has_images,
    )


def _encode(t: Transition, layout: DatasetLayout) -> np.ndarray:
    parts = [t.s, t.a, [t.r], t.s2, [float(t.done)], [float(t.success)],
             t.o.joint_features, t.o2.joint_features]
    if layout.has_images:
        parts += [np.ravel(t.o.image), np.ravel(t.o2.image)]
    record = np.concatenate([np.ravel(np.asarray(p, dtype=np.float32)) for p in parts])
    if record.size != layout.record_floats:
        raise ContractViolation(
            f"transition encodes to {record.size} floats, layout expects {layout.record_floats}"
        )
    return record


def _decode(record: np.ndarray, layout: DatasetLayout, sl: Dict[str, slice]) -> Transition:
    hw = (layout.image_size, layout.image_size, 3)
    image = record[sl['image']].reshape(hw) if layout.has_images else None
    image2 = record[sl['image2']].reshape(hw) if layout.has_images else None
    return Transition(
        s=record[sl['s']].copy(),
        o=Observation(image=None if image is None else image.copy(), joint_features=record[sl['joints']].copy()),
        a=record[sl['a']].copy(),
        r=float(record[sl['r']][0]),
        s2=record[sl['s2']].copy(),
        o2=Observation(image=None if image2 is None else image2.copy(), joint_features=record[sl['joints2']].copy()),
        done=bool(record[sl['done']][0]),
        success=bool(record[sl['success']][0]),
    )


def _write_manifest(path: Path, layout: DatasetLayout, count: int) -> None:
    values = {
        'format': FORMAT,
        'version': VERSION,
        'task': layout.task,
        'seed': layout.seed,
        'count': count,
        'state_dim': layout.state_dim,
        'action_dim': layout.action_dim,
        'joint_dim': layout.joint_dim,
        'image_size': layout.image_size,
        'has_images': int(layout.has_images),
        'record_floats': layout.record_floats,
        'dtype': DTYPE,
    }
    path.write_text(''.join(f'{k} = {v}\n' for k, v in values.items()))


def _read_manifest(path: Path) -> Tuple[DatasetLayout, int]:
    values = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise ConfigurationError(f"{path}: malformed manifest line '{line}'")
        values[key.strip()] = value.strip()
    if values.get('format') != FORMAT:
        raise ConfigurationError(f"{path}: unexpected format '{values.get('format')}'")
    try:
        layout = DatasetLayout(
            task=values['task'],
            seed=int(values['seed']),
            state_dim=int(values['state_dim']),
            action_dim=int(values['action_dim']),
            joint_dim=int(values['joint_dim']),
            image_size=int(values['image_size']),
            has_images=bool(int(values['has_images'])),
        )
        count = int(values['count'])
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"{path}: incomplete manifest ({e})") from e
    if int(values.get('record_floats', layout.record_floats)) != layout.record_floats:
        raise ConfigurationError(f"{path}: record size does not match the declared dimensions")
    return layout, count


def save_dataset(directory: Union[str, Path], transitions: List[Transition], task: str,
                 seed: int, image_size: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    transitions = list(transitions)
    if transitions:
        layout = layout_for(transitions, task, seed, image_size)
        blob = np.stack([_encode(t, layout) for t in transitions]).astype(DTYPE)
    else:
        layout = DatasetLayout(task=task, seed=seed, state_dim=0, action_dim=0, joint_dim=0,
                               image_size=image_size, has_images=False)
        blob = np.zeros((0, layout.record_floats), dtype=DTYPE)
    (directory / RECORDS).write_bytes(blob.tobytes())
    _write_manifest(directory / MANIFEST, layout, len(transitions))
    logger.info(f"Saved {len(transitions)} transitions to {directory} ({blob.nbytes} bytes)")
    return directory


def load_dataset(directory: Union[str, Path], capacity: int = None) -> Tuple[ReplayBuffer, DatasetLayout]:
    """Returns a read-only buffer holding the records in file order."""
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise MissingArtifact(f"dataset manifest not found: {manifest}")
    layout, count = _read_manifest(manifest)
    raw = (directory / RECORDS).read_bytes() if count else b''
    expected = count * layout.record_floats * 4
    if len(raw) != expected:
        raise ConfigurationError(f"{directory}: records.bin holds {len(raw)} bytes, expected {expected}")
    records = np.frombuffer(raw, dtype=DTYPE).reshape(count, layout.record_floats)
    buffer = ReplayBuffer(capacity or max(count, 1))
    sl = layout.slices()
    buffer.extend(_decode(r.astype(np.float32), layout, sl) for r in records)
    logger.info(f"Loaded {count} transitions from {directory}")
    return buffer.freeze(), layout
