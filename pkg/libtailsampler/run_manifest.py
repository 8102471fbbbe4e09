#!/usr/bin/env python3
"""
Run manifest

Written as run-manifest.json next to every output set. The digest covers
everything that determines the outputs (subcommand, resolved config,
seeds, input and output file digests, tool version) and leaves out the
wall-clock times, so two runs of the same command compare equal.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from . import __version__
from .jsonl_io import dumps, file_digest, write_json

MANIFEST_NAME = "run-manifest.json"


@dataclass
class RunManifest:
    subcommand: str
    config: Dict[str, Any]
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)
    finished_at: Optional[float] = None
    tool_version: str = __version__
    # output files whose content carries wall-clock timings
    volatile_outputs: List[str] = field(default_factory=list)

    def add_input(self, name: str, path: Union[str, Path]) -> None:
        self.inputs[name] = str(path)

    def add_output(self, name: str, path: Union[str, Path], volatile: bool = False) -> None:
        self.outputs[name] = str(path)
        if volatile:
            self.volatile_outputs.append(name)

    def _file_digests(self, files: Dict[str, str], skip: List[str]) -> Dict[str, Optional[str]]:
        digests: Dict[str, Optional[str]] = {}
        for name, path in sorted(files.items()):
            if name in skip:
                continue
            digests[name] = file_digest(path) if Path(path).is_file() else None
        return digests

    def digest(self) -> str:
        payload = {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "inputs": self._file_digests(self.inputs, []),
            "outputs": self._file_digests(self.outputs, self.volatile_outputs),
            "tool_version": self.tool_version,
        }
        return hashlib.sha256(dumps(json.loads(json.dumps(payload, sort_keys=True))).encode("utf-8")).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "volatile_outputs": self.volatile_outputs,
            "input_digests": self._file_digests(self.inputs, []),
            "output_digests": self._file_digests(self.outputs, []),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "tool_version": self.tool_version,
            "digest": self.digest(),
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        if self.finished_at is None:
            self.finished_at = time.time()
        path = Path(out_dir) / MANIFEST_NAME
        write_json(path, self.to_dict())
        return path
