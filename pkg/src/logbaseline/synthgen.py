"""Deterministic synthetic telemetry corpora with injected attack behavior.

Benign records are drawn from stable per-process profiles (fixed DLL pools,
port sets, /24 subnets) so a model can learn the baseline; attack records
inside configured windows use novel executables, rare ports, and a process
chain rooted at a seeded agent, making them detectable as vocabulary
outliers.  The generator also emits the ground-truth CSV the labeler
consumes, and keeps its own bookkeeping of which test events are malicious
so the label pipeline can be checked closed-loop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DAY_MS = 86_400_000
HOUR_MS = 3_600_000

ATTACK_SUBNET = "203.0.113"
ATTACK_PORTS = ("4444", "3389")


@dataclass
class ScenarioConfig:
    n_train_records: int = 200_000
    n_test_records: int = 100_000
    hosts: tuple[str, ...] = ("host-01", "host-02")
    attacked_host: str = "host-01"
    span_ms: int = 3 * DAY_MS  # each of the train and test periods
    start_ms: int = 1_600_000_000_000
    # (start, end) offsets into the test period
    attack_windows: tuple[tuple[int, int], ...] = (
        (10 * HOUR_MS, 11 * HOUR_MS),
        (30 * HOUR_MS, 31 * HOUR_MS),
        (55 * HOUR_MS, 56 * HOUR_MS),
    )
    attack_intensity: float = 0.004  # fraction of test records that are malicious
    seed: int = 7

    def validate(self) -> None:
        if not 0.0 <= self.attack_intensity <= 1.0:
            raise ValueError("attack_intensity must be in [0, 1]")
        for start, end in self.attack_windows:
            if not 0 <= start < end <= self.span_ms:
                raise ValueError(f"attack window ({start}, {end}) outside test span")
        if self.attacked_host not in self.hosts:
            raise ValueError("attacked_host must be one of hosts")
        if self.n_train_records <= 0 or self.n_test_records <= 0:
            raise ValueError("record counts must be positive")


@dataclass
class GenSummary:
    train_path: Path
    test_path: Path
    truth_path: Path
    n_train: int
    n_test: int
    n_malicious: int
    malicious_ids: set[str]


# Per-process benign behavior profiles.
_PROFILES = [
    {
        "name": "chrome.exe",
        "weight": 0.30,
        "activities": (("flow", 0.7), ("module", 0.3)),
        "subnets": ("142.250.72", "151.101.65", "104.16.32"),
        "ports": ("443", "443", "80"),
        "dlls": [f"chrome_res_{i:03d}.dll" for i in range(40)],
        "files": [],
        "keys": [],
    },
    {
        "name": "winword.exe",
        "weight": 0.20,
        "activities": (("file", 0.55), ("module", 0.45)),
        "subnets": (),
        "ports": (),
        "dlls": [f"mso_core_{i:02d}.dll" for i in range(25)],
        "files": [f"report_{i:03d}.docx" for i in range(30)],
        "keys": [],
    },
    {
        "name": "outlook.exe",
        "weight": 0.15,
        "activities": (("flow", 0.5), ("file", 0.3), ("module", 0.2)),
        "subnets": ("40.97.128",),
        "ports": ("993", "443"),
        "dlls": [f"mapi_ext_{i:02d}.dll" for i in range(15)],
        "files": [f"~attach_{i:04x}.tmp" for i in range(25)],
        "keys": [],
    },
    {
        "name": "svchost.exe",
        "weight": 0.20,
        "activities": (("flow", 0.5), ("registry", 0.5)),
        "subnets": ("10.0.24", "10.0.25"),
        "ports": ("135", "445"),
        "dlls": [],
        "files": [],
        "keys": [f"HKLM\\Software\\Services\\Svc{i:02d}\\Start" for i in range(20)],
    },
    {
        "name": "updater.exe",
        "weight": 0.15,
        "activities": (("flow", 0.4), ("file", 0.6)),
        "subnets": ("23.56.113",),
        "ports": ("80", "443"),
        "dlls": [],
        "files": [f"update_{i:03d}.mum" for i in range(20)]
        + [f"patch_{i:03d}.cat" for i in range(20)],
        "keys": [],
    },
]

_RARE_DLLS = [f"rare_plugin_{i}.dll" for i in range(6)]

_ZIPF_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _zipf_pick(rng: np.random.Generator, n: int, a: float = 1.0) -> int:
    """Skewed index draw, P(i) proportional to 1/(i+1)^a: the head of each
    pool dominates, keeping the baseline predictable, while the tail keeps
    the score distribution finely grained."""
    key = (n, a)
    probs = _ZIPF_CACHE.get(key)
    if probs is None:
        probs = 1.0 / np.arange(1, n + 1) ** a
        probs /= probs.sum()
        _ZIPF_CACHE[key] = probs
    return int(rng.choice(n, p=probs))


class _World:
    """Per-host process table and field pools for one corpus period."""

    def __init__(self, hosts: tuple[str, ...], span_start: int):
        self.span_start = span_start
        self.hosts = tuple(hosts)
        self.users = [f"user{i:02d}" for i in range(12)]
        self.sids = [f"S-1-5-21-1111-{1000 + i}" for i in range(12)]
        # one logon session per (user, host): mostly predictable from the
        # record's user token, so it diversifies scores without raising the
        # irreducible loss floor much
        self.logon_ids = [f"0x{0x3e7 + 17 * i:05x}" for i in range(12 * len(hosts))]
        # (host, profile index) -> pid
        self.pids: dict[tuple[str, int], int] = {}
        self.setup_events: list[dict] = []
        for host in hosts:
            self.setup_events.append(
                {
                    "hostname": host,
                    "timestamp": span_start,
                    "object": "PROCESS",
                    "action": "CREATE",
                    "pid": 4,
                    "ppid": None,
                    "properties": {
                        "image_path": "C:\\Windows\\explorer.exe",
                        "command_line": "C:\\Windows\\explorer.exe",
                    },
                }
            )
            for i, profile in enumerate(_PROFILES):
                pid = 100 + 10 * i
                self.pids[(host, i)] = pid
                self.setup_events.append(
                    {
                        "hostname": host,
                        "timestamp": span_start + 1000 * (i + 1),
                        "object": "PROCESS",
                        "action": "CREATE",
                        "pid": pid,
                        "ppid": 4,
                        "properties": {
                            "image_path": f"C:\\PROGRA~1\\{profile['name']}",
                            "parent_image_path": "C:\\Windows\\explorer.exe",
                            "command_line": f"C:\\PROGRA~1\\{profile['name']}",
                        },
                    }
                )


def _benign_record(world: _World, host: str, ts: int, rng: np.random.Generator) -> dict:
    pidx = rng.choice(len(_PROFILES), p=_PROFILE_WEIGHTS)
    profile = _PROFILES[pidx]
    kinds, kind_weights = zip(*profile["activities"])
    kind = kinds[rng.choice(len(kinds), p=np.asarray(kind_weights))]
    user_i = _zipf_pick(rng, len(world.users), a=2.0)
    host_i = world.hosts.index(host)
    properties = {
        "user": world.users[user_i],
        "sid": world.sids[user_i],
        "logon_id": world.logon_ids[user_i + 12 * host_i],
    }
    record = {
        "hostname": host,
        "timestamp": ts,
        "pid": world.pids[(host, pidx)],
        "ppid": 4,
        "properties": properties,
    }
    if kind == "flow":
        record["object"], record["action"] = "FLOW", "MESSAGE"
        subnet = profile["subnets"][_zipf_pick(rng, len(profile["subnets"]), a=1.5)]
        properties["dest_ip"] = f"{subnet}.{int(rng.integers(1, 255))}"
        properties["dest_port"] = profile["ports"][_zipf_pick(rng, len(profile["ports"]))]
        properties["l4protocol"] = "6"
        properties["direction"] = "outbound"
        # duration mixture: mostly sub-second, some medium, few long
        draw = rng.random()
        if draw < 0.7:
            duration = int(rng.integers(5, 900))
        elif draw < 0.95:
            duration = int(rng.integers(1_000, 59_000))
        else:
            duration = int(rng.integers(60_000, 600_000))
        record["start_time"] = ts
        record["end_time"] = ts + duration
    elif kind == "module":
        record["object"], record["action"] = "MODULE", "LOAD"
        dll = profile["dlls"][_zipf_pick(rng, len(profile["dlls"]))]
        properties["module_path"] = f"C:\\Program Files\\{profile['name'][:-4]}\\{dll}"
    elif kind == "file":
        record["object"], record["action"] = "FILE", "WRITE"
        name = profile["files"][_zipf_pick(rng, len(profile["files"]))]
        properties["file_path"] = f"C:\\Users\\{properties['user']}\\Documents\\{name}"
    else:  # registry
        record["object"], record["action"] = "REGISTRY", "EDIT"
        properties["key"] = profile["keys"][_zipf_pick(rng, len(profile["keys"]))]
        properties["value"] = str(int(rng.integers(0, 4)))
        properties["type"] = "REG_DWORD"
    return record


_PROFILE_WEIGHTS = np.array([p["weight"] for p in _PROFILES])
_PROFILE_WEIGHTS = _PROFILE_WEIGHTS / _PROFILE_WEIGHTS.sum()


def _attack_records(
    world: _World,
    host: str,
    window: tuple[int, int],
    widx: int,
    n_records: int,
    rng: np.random.Generator,
) -> tuple[list[dict], list[dict]]:
    """Returns (malicious records, ground-truth rows) for one attack window."""
    start, end = window
    agent_pid = 20_000 + widx
    child_pids = [21_000 + 10 * widx, 21_001 + 10 * widx]
    records: list[dict] = []

    records.append(
        {
            "hostname": host,
            "timestamp": start + 60_000,
            "object": "PROCESS",
            "action": "CREATE",
            "pid": agent_pid,
            "ppid": 4,
            "properties": {
                "image_path": "C:\\Users\\user03\\AppData\\Roaming\\svcupdate.exe",
                "parent_image_path": "C:\\Windows\\explorer.exe",
                "command_line": "C:\\Users\\user03\\AppData\\Roaming\\svcupdate.exe -q",
            },
        }
    )
    child_images = ("C:\\Windows\\System32\\powershell.exe", "C:\\Users\\user03\\AppData\\recon_probe.exe")
    for pid, image in zip(child_pids, child_images):
        records.append(
            {
                "hostname": host,
                "timestamp": start + 120_000 + (pid % 10) * 1000,
                "object": "PROCESS",
                "action": "CREATE",
                "pid": pid,
                "ppid": agent_pid,
                "properties": {
                    "image_path": image,
                    "parent_image_path": "C:\\Users\\user03\\AppData\\Roaming\\svcupdate.exe",
                    "command_line": image,
                },
            }
        )

    n_sweep = max(2, n_records // 25)  # net-rule-only records (benign process)
    n_activity = max(0, n_records - len(records) - n_sweep)
    actors = [agent_pid] + child_pids
    parent_of = {agent_pid: 4, child_pids[0]: agent_pid, child_pids[1]: agent_pid}
    mal_dlls = ["implant_core.dll", "keylog_hook.dll", "tunnel_proxy.dll"]
    for i in range(n_activity):
        ts = int(rng.integers(start + 180_000, end - 60_000))
        pid = actors[int(rng.integers(len(actors)))]
        properties = {"user": "user03", "sid": world.sids[3]}
        record = {
            "hostname": host,
            "timestamp": ts,
            "pid": pid,
            "ppid": parent_of[pid],
            "properties": properties,
        }
        draw = rng.random()
        if draw < 0.5:
            record["object"], record["action"] = "FLOW", "MESSAGE"
            properties["dest_ip"] = f"{ATTACK_SUBNET}.{int(rng.integers(1, 255))}"
            properties["dest_port"] = ATTACK_PORTS[int(rng.integers(len(ATTACK_PORTS)))]
            properties["l4protocol"] = "6"
            properties["direction"] = "outbound"
            record["start_time"] = ts
            record["end_time"] = ts + int(rng.integers(5, 400))
        elif draw < 0.75:
            record["object"], record["action"] = "MODULE", "LOAD"
            properties["module_path"] = (
                f"C:\\Users\\user03\\AppData\\{mal_dlls[int(rng.integers(len(mal_dlls)))]}"
            )
        elif draw < 0.9:
            record["object"], record["action"] = "FILE", "WRITE"
            properties["file_path"] = f"C:\\Users\\user03\\AppData\\staging_{i % 40:03d}.bin"
        else:
            record["object"], record["action"] = "REGISTRY", "EDIT"
            properties["key"] = f"HKLM\\Software\\Persist\\Run{i % 8}"
            properties["value"] = "C:\\Users\\user03\\AppData\\Roaming\\svcupdate.exe"
            properties["type"] = "REG_SZ"
        records.append(record)

    # Ping-sweep-like flows by a benign system process; caught only by the
    # network rule, not by ancestry.
    svchost_pid = world.pids[(host, 3)]
    for i in range(n_sweep):
        ts = int(rng.integers(start + 180_000, end - 60_000))
        records.append(
            {
                "hostname": host,
                "timestamp": ts,
                "pid": svchost_pid,
                "ppid": 4,
                "object": "FLOW",
                "action": "MESSAGE",
                "start_time": ts,
                "end_time": ts + 20,
                "properties": {
                    "dest_ip": f"{ATTACK_SUBNET}.{int(rng.integers(1, 255))}",
                    "dest_port": "445",
                    "l4protocol": "6",
                    "direction": "outbound",
                    "user": "SYSTEM",
                },
            }
        )

    truth_rows = [
        {
            "host": host,
            "pid": str(agent_pid),
            "window_start": str(start),
            "window_end": str(end),
            "kind": "seed",
        },
        {
            "host": host,
            "pid": ATTACK_SUBNET + ".",
            "window_start": str(start),
            "window_end": str(end),
            "kind": "net_ip",
        },
    ]
    return records, truth_rows


def _write_ndjson(records: list[dict], path: Path, id_prefix: str) -> list[str]:
    """Sort by time, assign sequential ids, write one JSON object per line."""
    order = sorted(range(len(records)), key=lambda i: (records[i]["timestamp"], i))
    ids = [""] * len(records)
    with open(path, "w", encoding="utf-8") as handle:
        for seq, i in enumerate(order):
            record = dict(records[i])
            record["id"] = f"{id_prefix}-{seq:08d}"
            ids[i] = record["id"]
            if record.get("ppid") is None:
                record.pop("ppid", None)
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    return ids


def generate(config: ScenarioConfig, out_dir) -> GenSummary:
    """Write train.ndjson (benign only), test.ndjson, and ground_truth.csv."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    hosts = tuple(config.hosts)

    # --- training period: benign only ---
    train_start = config.start_ms
    world = _World(hosts, train_start)
    train_records = list(world.setup_events)
    n_rare = 3 * len(_RARE_DLLS)
    n_benign = config.n_train_records - len(train_records) - n_rare
    if n_benign < 0:
        raise ValueError("n_train_records too small for the scenario scaffolding")
    for _ in range(n_benign):
        host = hosts[int(rng.integers(len(hosts)))]
        ts = train_start + int(rng.integers(0, config.span_ms))
        train_records.append(_benign_record(world, host, ts, rng))
    for dll in _RARE_DLLS:  # below the rare floor; exercises OBSCURE folding
        for _ in range(3):
            host = hosts[int(rng.integers(len(hosts)))]
            ts = train_start + int(rng.integers(0, config.span_ms))
            record = _benign_record(world, host, ts, rng)
            record["object"], record["action"] = "MODULE", "LOAD"
            record["properties"]["module_path"] = f"C:\\Program Files\\Legacy\\{dll}"
            train_records.append(record)
    train_path = out / "train.ndjson"
    _write_ndjson(train_records, train_path, "tr")

    # --- test period: benign plus attacks in windows on the attacked host ---
    test_start = config.start_ms + config.span_ms
    test_world = _World(hosts, test_start)
    test_records = list(test_world.setup_events)
    n_malicious_target = round(config.n_test_records * config.attack_intensity)
    truth_rows: list[dict] = []
    malicious_indices: list[int] = []
    if n_malicious_target > 0 and config.attack_windows:
        per_window = np.full(len(config.attack_windows), n_malicious_target // len(config.attack_windows))
        per_window[: n_malicious_target % len(config.attack_windows)] += 1
        for widx, (window, n_window) in enumerate(zip(config.attack_windows, per_window)):
            absolute = (test_start + window[0], test_start + window[1])
            records, rows = _attack_records(
                test_world, config.attacked_host, absolute, widx, int(n_window), rng
            )
            malicious_indices.extend(range(len(test_records), len(test_records) + len(records)))
            test_records.extend(records)
            truth_rows.extend(rows)
    n_benign_test = config.n_test_records - len(test_records)
    if n_benign_test < 0:
        raise ValueError("n_test_records too small for the configured attacks")
    for _ in range(n_benign_test):
        host = hosts[int(rng.integers(len(hosts)))]
        ts = test_start + int(rng.integers(0, config.span_ms))
        test_records.append(_benign_record(test_world, host, ts, rng))
    test_path = out / "test.ndjson"
    test_ids = _write_ndjson(test_records, test_path, "te")
    malicious_ids = {test_ids[i] for i in malicious_indices}

    truth_path = out / "ground_truth.csv"
    with open(truth_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["host", "pid", "window_start", "window_end", "kind"]
        )
        writer.writeheader()
        writer.writerows(truth_rows)

    return GenSummary(
        train_path=train_path,
        test_path=test_path,
        truth_path=truth_path,
        n_train=len(train_records),
        n_test=len(test_records),
        n_malicious=len(malicious_ids),
        malicious_ids=malicious_ids,
    )
