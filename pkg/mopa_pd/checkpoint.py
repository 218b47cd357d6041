#!/usr/bin/env python3
"""
Checkpoint archives.

A checkpoint is a zip file with two members:
- header.json: format version, free-form metadata and one entry per tensor
  (group, name, shape, dtype '<f4', byte offset, byte length);
- tensors.bin: the raw little-endian float32 payloads, back to back.

Tensors are grouped ('actor', 'q1', 'q1_target', ...) so one archive can
hold a whole agent.
"""

import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import orjson

from mopa_pd.autodiff import ParamSet
from mopa_pd.errors import ConfigurationError, MissingArtifact

logger = logging.getLogger(__name__)

FORMAT = 'mopa-pd-checkpoint'
VERSION = 1
DTYPE = '<f4'


def save_checkpoint(path: Union[str, Path], groups: Dict[str, ParamSet],
                    meta: Dict[str, Any] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for group, params in groups.items():
        for name, value in params.items():
            raw = np.ascontiguousarray(value, dtype=DTYPE).tobytes()
            entries.append({
                'group': group,
                'name': name,
                'shape': list(np.shape(value)),
                'dtype': DTYPE,
                'offset': offset,
                'nbytes': len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
    header = {'format': FORMAT, 'version': VERSION, 'meta': meta or {}, 'tensors': entries}
    with zipfile.ZipFile(path, 'w', compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr('header.json', orjson.dumps(header, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
        zf.writestr('tensors.bin', b''.join(chunks))
    logger.info(f"Saved checkpoint {path} ({len(entries)} tensors, {offset} bytes)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, ParamSet], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = orjson.loads(zf.read('header.json'))
            blob = zf.read('tensors.bin')
    except (zipfile.BadZipFile, KeyError) as e:
        raise ConfigurationError(f"{path} is not a checkpoint archive: {e}") from e
    if header.get('format') != FORMAT:
        raise ConfigurationError(f"{path}: unexpected format '{header.get('format')}'")

    groups: Dict[str, ParamSet] = {}
    for entry in header['tensors']:
        start, stop = entry['offset'], entry['offset'] + entry['nbytes']
        if stop > len(blob):
            raise ConfigurationError(f"{path}: tensor '{entry['group']}/{entry['name']}' is truncated")
        value = np.frombuffer(blob[start:stop], dtype=entry['dtype']).reshape(entry['shape'])
        groups.setdefault(entry['group'], {})[entry['name']] = value.astype(np.float32)
    return groups, header.get('meta', {})
