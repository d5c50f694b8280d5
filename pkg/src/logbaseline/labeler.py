"""Benign/malicious labeling via process ancestry and network rules.

Ground truth lists seed (malicious agent) processes as (host, pid, window)
rows.  An event is malicious if its acting process is a seed or descends
from one and the event falls inside the seed's window, or if it matches a
network rule (host + ip-prefix-or-port + window).
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .events import RawEvent

log = logging.getLogger(__name__)

BENIGN = "benign"
MALICIOUS = "malicious"


@dataclass(frozen=True)
class Seed:
    hostname: str
    pid: int
    start: int
    end: int


@dataclass(frozen=True)
class NetRule:
    hostname: str
    kind: str  # "ip" (prefix match on dest_ip) or "port" (dest_port equality)
    value: str
    start: int
    end: int


@dataclass
class GroundTruth:
    seeds: list[Seed]
    net_rules: list[NetRule]


def load_ground_truth(path: str) -> GroundTruth:
    """Read the ground-truth CSV: host,pid,window_start,window_end,kind.

    kind is "seed" (pid column holds a process id), "net_ip" (pid column
    holds an IPv4 prefix) or "net_port" (pid column holds a port number).
    """
    seeds: list[Seed] = []
    rules: list[NetRule] = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            start = int(row["window_start"])
            end = int(row["window_end"])
            if end < start:
                raise ValueError(f"ground truth window ends before it starts: {row}")
            kind = row["kind"]
            if kind == "seed":
                seeds.append(Seed(row["host"], int(row["pid"]), start, end))
            elif kind == "net_ip":
                rules.append(NetRule(row["host"], "ip", row["pid"], start, end))
            elif kind == "net_port":
                rules.append(NetRule(row["host"], "port", row["pid"], start, end))
            else:
                raise ValueError(f"unknown ground truth kind: {kind!r}")
    return GroundTruth(seeds=seeds, net_rules=rules)


@dataclass
class ProcessInstance:
    hostname: str
    pid: int
    first_seen: int
    parent: Optional["ProcessInstance"] = None


class ProcessForest:
    """Process instances keyed by (host, pid, first_seen); pid reuse keeps
    one instance per creation event."""

    def __init__(self):
        # (host, pid) -> parallel lists of first_seen (sorted) and instances
        self._by_pid: dict[tuple[str, int], tuple[list[int], list[ProcessInstance]]] = {}
        self.skipped = 0

    def _add(self, instance: ProcessInstance) -> None:
        key = (instance.hostname, instance.pid)
        times, instances = self._by_pid.setdefault(key, ([], []))
        pos = bisect.bisect_right(times, instance.first_seen)
        times.insert(pos, instance.first_seen)
        instances.insert(pos, instance)

    def lookup(self, hostname: str, pid: int, timestamp: int) -> Optional[ProcessInstance]:
        """Instance for this pid with the greatest first_seen <= timestamp."""
        entry = self._by_pid.get((hostname, pid))
        if entry is None:
            return None
        times, instances = entry
        pos = bisect.bisect_right(times, timestamp)
        if pos == 0:
            return None
        return instances[pos - 1]

    def instances(self) -> Iterator[ProcessInstance]:
        for _, insts in self._by_pid.values():
            yield from insts


def build_process_forest(events: Iterable[RawEvent]) -> ProcessForest:
    """One ProcessInstance per PROCESS/CREATE event, linked to the parent
    instance live at creation time."""
    forest = ProcessForest()
    for event in events:
        if event.object != "PROCESS" or event.action != "CREATE":
            continue
        if event.pid is None:
            forest.skipped += 1
            log.warning("process creation without pid at t=%d", event.timestamp)
            continue
        parent = None
        if event.ppid is not None:
            parent = forest.lookup(event.hostname, event.ppid, event.timestamp)
        forest._add(
            ProcessInstance(
                hostname=event.hostname,
                pid=event.pid,
                first_seen=event.timestamp,
                parent=parent,
            )
        )
    return forest


def _seed_window(
    instance: Optional[ProcessInstance],
    seed_index: dict[tuple[str, int, int], Seed],
    cache: dict[int, Optional[Seed]],
) -> Optional[Seed]:
    """Seed governing this instance (itself or an ancestor), if any."""
    chain = []
    found: Optional[Seed] = None
    node = instance
    while node is not None:
        if id(node) in cache:
            found = cache[id(node)]
            break
        seed = seed_index.get((node.hostname, node.pid, node.first_seen))
        if seed is not None:
            found = seed
            chain.append(node)
            break
        chain.append(node)
        node = node.parent
    for node in chain:
        cache[id(node)] = found
    return found


def label_events(
    events: Iterable[RawEvent],
    forest: ProcessForest,
    truth: GroundTruth,
) -> Iterator[tuple[RawEvent, str]]:
    """Yield (event, label) pairs; label is "benign" or "malicious"."""
    # Resolve each seed row to concrete process instances created inside
    # its window.
    seed_index: dict[tuple[str, int, int], Seed] = {}
    for instance in forest.instances():
        for seed in truth.seeds:
            if (
                instance.hostname == seed.hostname
                and instance.pid == seed.pid
                and seed.start <= instance.first_seen <= seed.end
            ):
                seed_index[(instance.hostname, instance.pid, instance.first_seen)] = seed
    cache: dict[int, Optional[Seed]] = {}

    for event in events:
        label = BENIGN
        if event.pid is not None:
            instance = forest.lookup(event.hostname, event.pid, event.timestamp)
            seed = _seed_window(instance, seed_index, cache)
            if seed is not None and seed.start <= event.timestamp <= seed.end:
                label = MALICIOUS
        if label == BENIGN:
            for rule in truth.net_rules:
                if rule.hostname != event.hostname:
                    continue
                if not (rule.start <= event.timestamp <= rule.end):
                    continue
                if rule.kind == "ip" and event.fields["dest_ip"].startswith(rule.value):
                    label = MALICIOUS
                    break
                if rule.kind == "port" and event.fields["dest_port"] == rule.value:
                    label = MALICIOUS
                    break
        yield event, label
