"""Field-value normalization into vocabulary terms.

Turns each of the 27 record fields into exactly one term: empty values
become NULL_TERM, paths collapse to their file name, ports and subnets are
bucketed, and everything else is namespaced by its field name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional

from .events import FIELD_NAMES, NUM_FIELDS, RawEvent

NULL_TERM = "NULL_TERM"
OBSCURE_TERM = "OBSCURE_TERM"
EPHEMERAL_PORT = "EPHEMERAL_PORT"

# Fields whose values are filesystem paths or registry keys; reduced to the
# last path component and left unprefixed so the same file name unifies
# across fields.
PATH_FIELDS = frozenset(
    {
        "file_path",
        "image_path",
        "module_path",
        "new_path",
        "parent_image_path",
        "path",
        "key",
    }
)
PORT_FIELDS = frozenset({"dest_port"})

_IPV4_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")


@dataclass(frozen=True)
class PreprocConfig:
    """Tokenization knobs: duration buckets, ephemeral floor, rare floor."""

    dur_small_ms: int = 1_000  # durations below this are SMALL
    dur_large_ms: int = 60_000  # durations at or above this are LARGE
    ephemeral_floor: int = 49151  # ports strictly above are ephemeral
    rare_floor: int = 10  # vocab terms seen fewer times are folded

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PreprocConfig":
        kwargs = {}
        for name in ("dur_small_ms", "dur_large_ms", "ephemeral_floor", "rare_floor"):
            if name in mapping:
                kwargs[name] = int(mapping[name])
        return cls(**kwargs)


@dataclass
class TermRecord:
    """A record's 27 normalized terms plus evaluation metadata."""

    terms: list[str]
    hostname: str
    timestamp: int
    label: Optional[str] = None  # "benign" | "malicious" | None


@dataclass
class TokenizedRecord:
    token_ids: list[int]
    hostname: str
    timestamp: int
    label: Optional[str] = None


def _basename(value: str) -> str:
    parts = re.split(r"[\\/]+", value)
    for part in reversed(parts):
        if part:
            return part
    return value


def normalize_field(field_name: str, raw_value: str, config: PreprocConfig) -> str:
    """Map one (field, value) pair to its term.  Total: never fails."""
    if raw_value == "":
        return NULL_TERM

    if field_name == "command_line":
        executable = raw_value.split()[0] if raw_value.split() else raw_value
        return _basename(executable)

    if field_name in PATH_FIELDS:
        return _basename(raw_value)

    if field_name in PORT_FIELDS:
        try:
            port = int(raw_value)
        except ValueError:
            port = None
        if port is not None and port > config.ephemeral_floor:
            return EPHEMERAL_PORT
        return f"{field_name.upper()}_{raw_value}"

    if field_name == "dest_ip":
        match = _IPV4_RE.match(raw_value)
        if match and all(0 <= int(octet) <= 255 for octet in match.groups()):
            a, b, c, _ = match.groups()
            return f"IP_{a}.{b}.{c}"
        return f"{field_name.upper()}_{raw_value}"

    if field_name == "duration":
        try:
            duration = int(raw_value)
        except ValueError:
            return f"{field_name.upper()}_{raw_value}"
        if duration < config.dur_small_ms:
            return "DUR_SMALL"
        if duration < config.dur_large_ms:
            return "DUR_MEDIUM"
        return "DUR_LARGE"

    return f"{field_name.upper()}_{raw_value}"


def tokenize(event: RawEvent, config: PreprocConfig) -> TermRecord:
    """Normalize all 27 fields of an event in canonical order."""
    terms = [
        normalize_field(name, event.fields[name], config) for name in FIELD_NAMES
    ]
    return TermRecord(
        terms=terms,
        hostname=event.hostname,
        timestamp=event.timestamp,
        label=None,
    )


def index(record: TermRecord, vocab) -> TokenizedRecord:
    """Map terms to vocabulary indices; unknown terms get OBSCURE_TERM."""
    return TokenizedRecord(
        token_ids=[vocab.index_of(term) for term in record.terms],
        hostname=record.hostname,
        timestamp=record.timestamp,
        label=record.label,
    )


# --- term-stream files: 27 terms + host + timestamp + label, tab-separated ---

def write_term_stream(records: Iterator[TermRecord], handle: IO[str]) -> int:
    count = 0
    for record in records:
        label = record.label or ""
        handle.write(
            "\t".join(record.terms)
            + f"\t{record.hostname}\t{record.timestamp}\t{label}\n"
        )
        count += 1
    return count


def read_term_stream(handle: IO[str]) -> Iterator[TermRecord]:
    for lineno, line in enumerate(handle, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != NUM_FIELDS + 3:
            raise ValueError(
                f"term-stream line {lineno}: expected {NUM_FIELDS + 3} columns, "
                f"got {len(parts)}"
            )
        yield TermRecord(
            terms=parts[:NUM_FIELDS],
            hostname=parts[NUM_FIELDS],
            timestamp=int(parts[NUM_FIELDS + 1]),
            label=parts[NUM_FIELDS + 2] or None,
        )
