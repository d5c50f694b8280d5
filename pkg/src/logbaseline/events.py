"""Streaming ingest of newline-delimited nested key-value telemetry records.

Each input line is one JSON record describing an object (PROCESS, FLOW,
FILE, ...) and an action taken on it, with extra context keys either at the
top level or nested inside property bags.  Ingest flattens every record into
a fixed 27-field view so that downstream tokenization is positional.
"""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional

log = logging.getLogger(__name__)

# Canonical field order.  Slot 27 (duration) is computed from flow start/end
# times; it never appears verbatim in the source records.
FIELD_NAMES = (
    "action",
    "command_line",
    "dest_ip",
    "dest_port",
    "direction",
    "file_path",
    "image_path",
    "info_class",
    "key",
    "l4protocol",
    "logon_id",
    "module_path",
    "new_path",
    "object",
    "parent_image_path",
    "path",
    "principal",
    "requesting_domain",
    "requesting_logon_id",
    "requesting_user",
    "sid",
    "task_name",
    "type",
    "user",
    "user_name",
    "value",
    "duration",
)
NUM_FIELDS = len(FIELD_NAMES)

_FIELD_SET = frozenset(FIELD_NAMES)
_META_KEYS = frozenset({"id", "hostname", "timestamp", "pid", "ppid"})


@dataclass
class RawEvent:
    """One flattened telemetry record with the 27 canonical fields."""

    event_id: str
    hostname: str
    timestamp: int  # milliseconds since epoch
    object: str
    action: str
    pid: Optional[int]
    ppid: Optional[int]
    fields: dict[str, str]

    def field_values(self) -> list[str]:
        """Field values in canonical order."""
        return [self.fields[name] for name in FIELD_NAMES]


@dataclass
class StreamStats:
    read: int = 0
    yielded: int = 0
    skipped: int = 0
    filtered: int = 0


def _to_int(value) -> Optional[int]:
    if value is None or value == "":
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        return None


def _flatten_leaves(obj: dict, out: dict) -> None:
    """Collect leaf key/value pairs from nested dicts, keyed by leaf name."""
    for key, value in obj.items():
        if isinstance(value, dict):
            _flatten_leaves(value, out)
        else:
            out[key] = value


def parse_event(line: str) -> Optional[RawEvent]:
    """Parse one record line into a RawEvent, or None if it must be skipped.

    Keys outside the canonical 27 are dropped.  Nested property bags are
    flattened by leaf key name; a top-level key wins over a nested one of
    the same name.  Flow start/end times, when both present, are converted
    to a duration in milliseconds.
    """
    line = line.strip()
    if not line:
        return None
    try:
        record = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None
    if not isinstance(record, dict):
        return None

    flat: dict = {}
    _flatten_leaves(record, flat)
    # Top-level scalars take precedence over nested leaves of the same name.
    for key, value in record.items():
        if not isinstance(value, dict):
            flat[key] = value

    timestamp = _to_int(flat.get("timestamp"))
    if timestamp is None:
        return None

    fields = {}
    for name in FIELD_NAMES:
        value = flat.get(name)
        fields[name] = "" if value is None else str(value)

    if not fields["duration"]:
        start = _to_int(flat.get("start_time"))
        end = _to_int(flat.get("end_time"))
        if start is not None and end is not None and end >= start:
            fields["duration"] = str(end - start)

    return RawEvent(
        event_id=str(flat.get("id", "")),
        hostname=str(flat.get("hostname", "")),
        timestamp=timestamp,
        object=fields["object"],
        action=fields["action"],
        pid=_to_int(flat.get("pid")),
        ppid=_to_int(flat.get("ppid")),
        fields=fields,
    )


def _open_text(path: str) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def stream_corpus(
    path: str,
    host: Optional[str] = None,
    t_start: Optional[int] = None,
    t_end: Optional[int] = None,
    stats: Optional[StreamStats] = None,
) -> Iterator[RawEvent]:
    """Yield RawEvents from a newline-delimited record file in file order.

    Applies host equality and [t_start, t_end) timestamp filters when given.
    Malformed lines are counted and logged, never fatal; an unreadable file
    is.  Pass a StreamStats to observe read/yielded/skipped/filtered counts.
    """
    if stats is None:
        stats = StreamStats()
    with _open_text(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            stats.read += 1
            event = parse_event(line)
            if event is None:
                stats.skipped += 1
                log.warning("%s:%d: skipping malformed record", path, lineno)
                continue
            if host is not None and event.hostname != host:
                stats.filtered += 1
                continue
            if t_start is not None and event.timestamp < t_start:
                stats.filtered += 1
                continue
            if t_end is not None and event.timestamp >= t_end:
                stats.filtered += 1
                continue
            stats.yielded += 1
            yield event
