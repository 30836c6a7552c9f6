"""Append-only JSON-lines event log and its CSV extractor.

Every line is one JSON object with at least ``event`` (``config``, ``step``,
``phase``, ``epoch``, ``episode``, ``run``) and ``v`` (format version).
Training events also carry ``global_step``, which never decreases within a
log file.
Step events carry ``step``, ``epoch``, ``phase``, ``action`` (4 floats or
null), ``weights`` (4 floats), ``gates`` (4 ints or null) and ``losses``
(``fin``/``res``/``fea``/``rel``).  Phase events carry the phase reward
``reward`` and the dev metrics; epoch and episode events carry dev metrics.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Iterator

LOG_VERSION = 1


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "tolist"):
        return _clean(value.tolist())
    return value


class MetricsLog:
    """Buffered writer; flushed on phase, episode and run boundaries."""

    FLUSH_EVENTS = frozenset({"phase", "episode", "run", "config", "epoch"})

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._fh = None
        self.events: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")

    def emit(self, event: str, **fields) -> None:
        record = {"event": event, "v": LOG_VERSION, **_clean(fields)}
        self.events.append(record)
        if self._fh is not None:
            try:
                self._fh.write(json.dumps(record, sort_keys=True) + "\n")
                if event in self.FLUSH_EVENTS:
                    self._fh.flush()
            except OSError as exc:
                raise OSError(f"metrics log write failed; {self.path} holds a partial log") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class NullLog(MetricsLog):
    def __init__(self):
        super().__init__(None)

    def emit(self, event: str, **fields) -> None:
        pass


def read_events(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def _lookup(record: dict, dotted: str):
    cur = record
    for part in dotted.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            return None
    return cur


def extract_metric(events: Iterable[dict], metric: str, event: str | None = None) -> list[tuple[int, float]]:
    """``(row, value)`` pairs for every event carrying ``metric`` (dotted paths allowed)."""
    rows = []
    for i, rec in enumerate(events):
        if event is not None and rec.get("event") != event:
            continue
        value = _lookup(rec, metric)
        if value is None or isinstance(value, (dict, list)):
            continue
        rows.append((rec.get("global_step", i), value))
    return rows


def to_csv(events: Iterable[dict], metrics: list[str], event: str | None = None) -> str:
    events = list(events)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "event", "step"] + metrics)
    index = 0
    for rec in events:
        if event is not None and rec.get("event") != event:
            continue
        values = [_lookup(rec, m) for m in metrics]
        if all(v is None or isinstance(v, (dict, list)) for v in values):
            continue
        step = rec.get("global_step", index)
        writer.writerow([index, rec.get("event"), step] + ["" if v is None else v for v in values])
        index += 1
    return buf.getvalue()
