"""
Run artifacts written to an output directory.

Everything is serialized with sorted keys and no timestamps, so the same
command and seed reproduce the same bytes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Sequence

from .adversaries import export_log
from .protocol_engine import RunResult

logger = logging.getLogger(__name__)


def dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def distribution_json(counts: Counter, shots: int, reference: dict[str, float] | None = None) -> dict:
    total = max(shots, 1)
    payload = {
        "shots": shots,
        "counts": dict(sorted(counts.items())),
        "frequencies": {outcome: count / total for outcome, count in sorted(counts.items())},
    }
    if reference is not None:
        payload["reference"] = {outcome: p for outcome, p in sorted(reference.items()) if p > 1e-12}
    return payload


class ArtifactWriter:
    """Writes the files of one run into `out_dir`, creating it if needed."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.written: list[Path] = []

    def _write(self, name: str, text: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        self.written.append(path)
        logger.debug("wrote %s", path)
        return path

    def distribution(self, counts: Counter, shots: int, reference: dict[str, float] | None = None) -> Path:
        return self._write("distribution.json", dumps(distribution_json(counts, shots, reference)))

    def run(self, result: RunResult, summary: dict) -> list[Path]:
        paths = [
            self._write("transcript.jsonl", result.transcript.to_jsonl()),
            self._write("summary.json", dumps(summary)),
        ]
        for name, view in result.server_views().items():
            paths.append(self._write(f"server_view_{name}.json", dumps(view)))
        server = getattr(result.run, "server", None)
        if server is not None and server.log:
            paths.append(self._write("adversary_log.json", export_log(server) + "\n"))
        return paths

    def verification(self, report: dict) -> Path:
        return self._write("verification.json", dumps(report))

    def csv(self, name: str, text: str) -> Path:
        return self._write(name, text)

    def names(self) -> Sequence[str]:
        return [path.name for path in self.written]
