"""Append-only leaderboard stored as line-delimited JSON."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional


@dataclass(frozen=True)
class LeaderboardEntry:
    team: str
    submitted_at: str
    cohort_ap: dict
    digest: str
    predictions_digest: str
    duplicate: bool = False


def predictions_digest(records) -> str:
    blob = json.dumps(records, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class LeaderboardStore:
    """Single-writer store; the file is replayed on construction.

    A resubmission of already-seen predictions is stored with
    ``duplicate=True``.
    """

    def __init__(self, path, clock: Optional[Callable[[], str]] = None):
        self.path = Path(path)
        self.clock = clock or _utcnow
        self._lock = threading.Lock()
        self._entries = []
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    self._entries.append(LeaderboardEntry(**json.loads(line)))

    def append(self, team: str, cohort_ap: dict, pred_digest: str) -> LeaderboardEntry:
        with self._lock:
            seq = len(self._entries)
            stamp = self.clock()
            digest = hashlib.sha256(f"{seq}|{team}|{stamp}|{pred_digest}".encode()).hexdigest()
            entry = LeaderboardEntry(
                team=team,
                submitted_at=stamp,
                cohort_ap=dict(cohort_ap),
                digest=digest,
                predictions_digest=pred_digest,
                duplicate=any(e.predictions_digest == pred_digest for e in self._entries),
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
                fh.flush()
            self._entries.append(entry)
            return entry

    def entries(self) -> list:
        with self._lock:
            return list(self._entries)

    def ranked(self) -> list:
        """Entries by All-AP, best first; submission order breaks ties."""

        def key(e):
            ap = e.cohort_ap.get("all")
            return -(ap if ap is not None else -1.0)

        return sorted(self.entries(), key=key)
