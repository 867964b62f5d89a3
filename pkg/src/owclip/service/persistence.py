"""Durable state helpers: atomic JSON snapshots and append-only event logs."""

from __future__ import annotations

import json
import os
from pathlib import Path


def atomic_write_json(path, payload) -> None:
    """Write JSON via a temp file + rename so readers never see a torn file."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def append_event(path, event: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(event, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_events(path) -> list[dict]:
    events = []
    if not Path(path).exists():
        return events
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events
