"""
CSV data files and JSON summaries for one subcommand run.

Outputs are a pure function of the config: no timestamps, floats written with repr,
keys sorted. Every CSV opens with a comment line carrying the version and config hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, is_dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON-ready copy: Fractions as strings, numpy scalars and arrays as Python values."""
    if is_dataclass(value) and not isinstance(value, type):
        value = asdict(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else repr(f)
    return value


def config_hash(config: Any) -> str:
    canonical = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


class ReportWriter:
    """
    Writes the data files of one command into output_dir.

    Args:
        output_dir: Target directory (created on first write).
        command: Subcommand name, used in headers and the summary file name.
        config: The full experiment config, hashed into every header.
    """

    def __init__(self, output_dir: str | Path, command: str, config: Any):
        self.output_dir = Path(output_dir)
        self.command = command
        self.config = config
        self.hash = config_hash(config)
        self.written: list[Path] = []

    @property
    def header(self) -> str:
        return f"# quenched-lab {__version__} command={self.command} config_sha256={self.hash}"

    def _path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        self.written.append(path)
        return path

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self._path(name)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(self.header + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            count = 0
            for row in rows:
                writer.writerow([_cell(v) for v in row])
                count += 1
        logger.info("Wrote %s (%d rows)", path, count)
        return path

    def write_summary(self, results: dict[str, Any]) -> Path:
        path = self._path(f"{self.command}.json")
        document = {
            "meta": {
                "version": __version__,
                "command": self.command,
                "config_sha256": self.hash,
                "config": _plain(self.config),
            },
            "results": _plain(results),
        }
        with path.open("w", encoding="utf-8") as fh:
            json.dump(document, fh, indent=2, sort_keys=True)
            fh.write("\n")
        logger.info("Wrote %s", path)
        return path
