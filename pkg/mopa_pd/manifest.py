#!/usr/bin/env python3
"""
Run manifests: one manifest.json per run directory.
"""

import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

import orjson
from pydantic import BaseModel, Field

from mopa_pd import __version__
from mopa_pd.config import RunConfig
from mopa_pd.errors import MissingArtifact

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON dump of a run configuration."""
    payload = orjson.dumps(cfg.model_dump(mode='json'), option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(payload).hexdigest()


class RunManifest(BaseModel):
    command: str
    argv: List[str] = []
    config_hash: str
    config: Dict = {}
    seeds: List[int] = []
    code_version: str = __version__
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    final_log_alpha: Optional[float] = None
    results: Dict = {}
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_clock_seconds: float = 0.0

    @classmethod
    def start(cls, command: str, cfg: RunConfig, argv: Optional[List[str]] = None) -> 'RunManifest':
        return cls(command=command, argv=list(argv or []), config_hash=config_hash(cfg),
                   config=cfg.model_dump(mode='json'), seeds=[cfg.seed])

    def write(self, run_dir: Union[str, Path]) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(orjson.dumps(self.model_dump(mode='json'),
                                      option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
        logger.info(f"Wrote run manifest {path}")
        return path

    @classmethod
    def read(cls, run_dir: Union[str, Path]) -> 'RunManifest':
        path = Path(run_dir)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise MissingArtifact(f"run manifest not found: {path}")
        return cls.model_validate(orjson.loads(path.read_bytes()))
