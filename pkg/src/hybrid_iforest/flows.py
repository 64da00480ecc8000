"""Network-flow records and their 50-feature encoding.

Flow files are delimiter-separated text with a header row. Column names
follow the ISCX 2012 flow export::

    appName, protocolName, direction, source, destination, sourcePort,
    destinationPort, sourceTCPFlagsDescription, destinationTCPFlagsDescription,
    sourcePayloadAsBase64, destinationPayloadAsBase64, duration,
    totalSourceBytes, totalDestinationBytes, totalSourcePackets,
    totalDestinationPackets[, Tag]

TCP flag columns hold ``;``-separated letters out of ``F S R P A U`` (or
``N/A``). Payload columns are base64. ``Tag`` is optional and holds
``Normal`` or ``Attack``.
"""

from __future__ import annotations

import base64
import binascii
import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

TCP_FLAGS = ("F", "S", "R", "P", "A", "U")
N_PAYLOAD_BINS = 10
N_PROTOCOL_SLOTS = 6
N_DIRECTION_SLOTS = 4
N_FEATURES = 50
DEFAULT_WINDOW_SIZE = 100

ISCX_PROTOCOLS = ("tcp_ip", "udp_ip", "icmp_ip", "igmp", "ip", "ipv6icmp")
ISCX_DIRECTIONS = ("L2R", "R2L", "L2L", "R2R")

FLOW_FIELDS = (
    "appName",
    "protocolName",
    "direction",
    "source",
    "destination",
    "sourcePort",
    "destinationPort",
    "sourceTCPFlagsDescription",
    "destinationTCPFlagsDescription",
    "sourcePayloadAsBase64",
    "destinationPayloadAsBase64",
    "duration",
    "totalSourceBytes",
    "totalDestinationBytes",
    "totalSourcePackets",
    "totalDestinationPackets",
)
LABEL_FIELD = "Tag"

FEATURE_NAMES = (
    [f"destPayload{i}" for i in range(10)]
    + ["destPort"]
    + [f"destTCPFlag{i}" for i in range(6)]
    + [f"direction{i}" for i in range(4)]
    + [f"protocolName{i}" for i in range(6)]
    + [f"sourcePayload{i}" for i in range(10)]
    + ["sourcePort"]
    + [f"sourceTCPFlag{i}" for i in range(6)]
    + ["duration", "totalDestBytes", "totalDestPackets", "totalSourceBytes", "totalSourcePackets", "nPairsIP"]
)
assert len(FEATURE_NAMES) == N_FEATURES


class FlowFormatError(ValueError):
    """A flow file or record that violates the schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownCategoryError(KeyError):
    pass


@dataclass
class FlowRecord:
    app_layer: str
    protocol_name: str
    direction: str
    source_ip: str
    dest_ip: str
    source_port: int
    dest_port: int
    source_tcp_flags: tuple[bool, ...]
    dest_tcp_flags: tuple[bool, ...]
    source_payload: bytes
    dest_payload: bytes
    duration: float
    total_source_bytes: int
    total_dest_bytes: int
    total_source_packets: int
    total_dest_packets: int
    label: str | None = None

    def __post_init__(self):
        for name in ("source_port", "dest_port"):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise FlowFormatError(f"{name} {port} outside [0, 65535]")
        for name in ("total_source_bytes", "total_dest_bytes", "total_source_packets", "total_dest_packets"):
            if getattr(self, name) < 0:
                raise FlowFormatError(f"{name} must be non-negative")
        if not np.isfinite(self.duration) or self.duration < 0:
            raise FlowFormatError(f"duration must be a finite non-negative number, got {self.duration}")
        for name in ("source_tcp_flags", "dest_tcp_flags"):
            if len(getattr(self, name)) != len(TCP_FLAGS):
                raise FlowFormatError(f"{name} needs {len(TCP_FLAGS)} flags")
        if self.label not in (None, "normal", "attack"):
            raise FlowFormatError(f"label must be 'normal' or 'attack', got {self.label!r}")

    @property
    def is_attack(self) -> bool:
        return self.label == "attack"


def parse_tcp_flags(text: str) -> tuple[bool, ...]:
    text = text.strip()
    if text in ("", "N/A"):
        return (False,) * len(TCP_FLAGS)
    letters = {part.strip().upper() for part in text.split(";") if part.strip()}
    unknown = letters - set(TCP_FLAGS)
    if unknown:
        raise FlowFormatError(f"unknown TCP flag(s) {sorted(unknown)}")
    return tuple(flag in letters for flag in TCP_FLAGS)


def format_tcp_flags(flags: Sequence[bool]) -> str:
    letters = [f for f, on in zip(TCP_FLAGS, flags) if on]
    return ";".join(letters) if letters else "N/A"


def _decode_payload(text: str) -> bytes:
    try:
        return base64.b64decode(text.strip(), validate=True)
    except (binascii.Error, ValueError) as exc:
        raise FlowFormatError(f"undecodable base64 payload: {exc}") from None


def _int_field(row: dict, name: str) -> int:
    try:
        return int(row[name])
    except (TypeError, ValueError):
        raise FlowFormatError(f"{name} is not an integer: {row[name]!r}") from None


def _record_from_row(row: dict) -> FlowRecord:
    try:
        duration = float(row["duration"])
    except (TypeError, ValueError):
        raise FlowFormatError(f"duration is not a number: {row['duration']!r}") from None
    tag = (row.get(LABEL_FIELD) or "").strip()
    return FlowRecord(
        app_layer=row["appName"],
        protocol_name=row["protocolName"],
        direction=row["direction"],
        source_ip=row["source"],
        dest_ip=row["destination"],
        source_port=_int_field(row, "sourcePort"),
        dest_port=_int_field(row, "destinationPort"),
        source_tcp_flags=parse_tcp_flags(row["sourceTCPFlagsDescription"]),
        dest_tcp_flags=parse_tcp_flags(row["destinationTCPFlagsDescription"]),
        source_payload=_decode_payload(row["sourcePayloadAsBase64"]),
        dest_payload=_decode_payload(row["destinationPayloadAsBase64"]),
        duration=duration,
        total_source_bytes=_int_field(row, "totalSourceBytes"),
        total_dest_bytes=_int_field(row, "totalDestinationBytes"),
        total_source_packets=_int_field(row, "totalSourcePackets"),
        total_dest_packets=_int_field(row, "totalDestinationPackets"),
        label=tag.lower() or None,
    )


def parse_flows(stream: TextIO, strict: bool = True, delimiter: str = ",",
                errors: list[FlowFormatError] | None = None) -> list[FlowRecord]:
    """Read flow records from a header-bearing delimited text stream.

    With ``strict=False`` malformed rows are skipped, logged, and appended to
    ``errors`` when a list is given; otherwise the first one raises.
    Missing mandatory columns always raise.
    """
    reader = csv.DictReader(stream, delimiter=delimiter)
    header = reader.fieldnames or []
    missing = [f for f in FLOW_FIELDS if f not in header]
    if missing:
        raise FlowFormatError(f"missing mandatory column(s): {', '.join(missing)}", line=1)
    records = []
    for row in reader:
        line = reader.line_num
        try:
            if None in row or any(row[f] is None for f in FLOW_FIELDS):
                raise FlowFormatError("wrong number of fields")
            records.append(_record_from_row(row))
        except FlowFormatError as exc:
            err = FlowFormatError(exc.message, line=line)
            if strict:
                raise err from None
            logger.warning("skipping malformed flow: %s", err)
            if errors is not None:
                errors.append(err)
    return records


def write_flows(stream: TextIO, records: Iterable[FlowRecord], delimiter: str = ",",
                with_label: bool = True) -> None:
    columns = list(FLOW_FIELDS) + ([LABEL_FIELD] if with_label else [])
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        row = [
            r.app_layer, r.protocol_name, r.direction, r.source_ip, r.dest_ip,
            r.source_port, r.dest_port,
            format_tcp_flags(r.source_tcp_flags), format_tcp_flags(r.dest_tcp_flags),
            base64.b64encode(r.source_payload).decode("ascii"),
            base64.b64encode(r.dest_payload).decode("ascii"),
            repr(float(r.duration)),
            r.total_source_bytes, r.total_dest_bytes, r.total_source_packets, r.total_dest_packets,
        ]
        if with_label:
            row.append("" if r.label is None else r.label.capitalize())
        w.writerow(row)


def payload_histogram(payload: bytes) -> np.ndarray:
    """Fraction of payload bytes in each of 10 equal-width bins over [0, 255].

    Bin ``i`` covers byte values in ``[25.6 i, 25.6 (i + 1))``. An empty
    payload gives all zeros.
    """
    if len(payload) == 0:
        return np.zeros(N_PAYLOAD_BINS)
    b = np.frombuffer(bytes(payload), dtype=np.uint8).astype(np.int64)
    counts = np.bincount((b * N_PAYLOAD_BINS) // 256, minlength=N_PAYLOAD_BINS)
    return counts / len(b)


def count_ip_pairs(records: Sequence[FlowRecord], window_size: int, index: int) -> int:
    """Distinct (source, destination) pairs among the ``window_size`` flows ending at ``index``."""
    if window_size < 1:
        raise ValueError(f"window_size must be >= 1, got {window_size}")
    if not 0 <= index < len(records):
        raise IndexError(f"index {index} out of range for {len(records)} records")
    window = records[max(0, index - window_size + 1):index + 1]
    return len({(r.source_ip, r.dest_ip) for r in window})


def ip_pair_counts(records: Sequence[FlowRecord], window_size: int = DEFAULT_WINDOW_SIZE) -> np.ndarray:
    """``count_ip_pairs`` for every index, in one sliding pass."""
    if window_size < 1:
        raise ValueError(f"window_size must be >= 1, got {window_size}")
    live: Counter = Counter()
    out = np.empty(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        live[(r.source_ip, r.dest_ip)] += 1
        if i >= window_size:
            old = records[i - window_size]
            key = (old.source_ip, old.dest_ip)
            live[key] -= 1
            if live[key] == 0:
                del live[key]
        out[i] = len(live)
    return out


@dataclass
class Codebook:
    """Category slots for the one-hot blocks and min/max for feature scaling.

    An unfrozen codebook assigns the next free slot to an unseen category;
    a frozen one rejects it.
    """

    protocols: list[str] = field(default_factory=list)
    directions: list[str] = field(default_factory=list)
    frozen: bool = False
    window_size: int = DEFAULT_WINDOW_SIZE
    feature_min: np.ndarray | None = None
    feature_max: np.ndarray | None = None

    @classmethod
    def iscx(cls, window_size: int = DEFAULT_WINDOW_SIZE) -> "Codebook":
        return cls(list(ISCX_PROTOCOLS), list(ISCX_DIRECTIONS), frozen=True, window_size=window_size)

    def _slot(self, slots: list[str], capacity: int, value: str, kind: str) -> int:
        if value in slots:
            return slots.index(value)
        if self.frozen:
            raise UnknownCategoryError(f"unknown {kind} {value!r}; known: {slots}")
        if len(slots) >= capacity:
            raise UnknownCategoryError(f"no free {kind} slot for {value!r} (capacity {capacity})")
        slots.append(value)
        return len(slots) - 1

    def protocol_index(self, name: str) -> int:
        return self._slot(self.protocols, N_PROTOCOL_SLOTS, name, "protocol")

    def direction_index(self, name: str) -> int:
        return self._slot(self.directions, N_DIRECTION_SLOTS, name, "direction")

    def to_dict(self) -> dict:
        return {
            "protocols": list(self.protocols),
            "directions": list(self.directions),
            "frozen": self.frozen,
            "window_size": self.window_size,
            "feature_min": None if self.feature_min is None else self.feature_min.tolist(),
            "feature_max": None if self.feature_max is None else self.feature_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        fmin, fmax = d.get("feature_min"), d.get("feature_max")
        return cls(
            protocols=list(d["protocols"]),
            directions=list(d["directions"]),
            frozen=bool(d["frozen"]),
            window_size=int(d["window_size"]),
            feature_min=None if fmin is None else np.asarray(fmin, dtype=float),
            feature_max=None if fmax is None else np.asarray(fmax, dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def encode(record: FlowRecord, codebook: Codebook, pair_count: int) -> np.ndarray:
    """Raw (unscaled) 50-feature vector of a flow, in the canonical order."""
    direction = np.zeros(N_DIRECTION_SLOTS)
    direction[codebook.direction_index(record.direction)] = 1.0
    protocol = np.zeros(N_PROTOCOL_SLOTS)
    protocol[codebook.protocol_index(record.protocol_name)] = 1.0
    return np.concatenate([
        payload_histogram(record.dest_payload),
        [record.dest_port],
        np.asarray(record.dest_tcp_flags, dtype=float),
        direction,
        protocol,
        payload_histogram(record.source_payload),
        [record.source_port],
        np.asarray(record.source_tcp_flags, dtype=float),
        [
            record.duration,
            record.total_dest_bytes,
            record.total_dest_packets,
            record.total_source_bytes,
            record.total_source_packets,
            pair_count,
        ],
    ]).astype(float)


def encode_records(records: Sequence[FlowRecord], codebook: Codebook) -> np.ndarray:
    """Encode an ordered flow sequence; IP-pair windows run over this sequence."""
    pairs = ip_pair_counts(records, codebook.window_size)
    if not records:
        return np.empty((0, N_FEATURES))
    return np.vstack([encode(r, codebook, int(k)) for r, k in zip(records, pairs)])


def fit_minmax(vectors, codebook: Codebook) -> Codebook:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape[0] < 1:
        raise ValueError("min-max fitting needs at least one vector")
    codebook.feature_min = V.min(axis=0)
    codebook.feature_max = V.max(axis=0)
    return codebook


def apply_minmax(codebook: Codebook, vectors) -> np.ndarray:
    """Scale features to [0, 1] with the fitted ranges, clamping out-of-range values.

    Constant features map to 0.
    """
    if codebook.feature_min is None or codebook.feature_max is None:
        raise ValueError("codebook has no fitted min/max")
    V = np.asarray(vectors, dtype=float)
    span = codebook.feature_max - codebook.feature_min
    scaled = np.where(span > 0, (V - codebook.feature_min) / np.where(span > 0, span, 1.0), 0.0)
    return np.clip(scaled, 0.0, 1.0)


def split_by_app_layer(records: Iterable[FlowRecord]) -> dict[str, list[FlowRecord]]:
    """Group flows by application layer, keeping their relative order."""
    out: dict[str, list[FlowRecord]] = {}
    for r in records:
        out.setdefault(r.app_layer, []).append(r)
    return out


def write_features(stream: TextIO, X, labels: Sequence[str | None] | None = None, delimiter: str = ",") -> None:
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(FEATURE_NAMES + (["label"] if labels is not None else []))
    for i, row in enumerate(np.asarray(X, dtype=float)):
        values = [repr(float(v)) for v in row]
        if labels is not None:
            values.append("" if labels[i] is None else labels[i])
        w.writerow(values)


def generate_flows(n: int, rng: np.random.Generator, app_layers=("HTTPWeb", "SSH", "DNS"),
                   attack_rate: float = 0.05, n_hosts: int = 40) -> list[FlowRecord]:
    """Random flows conforming to the schema, for tests and demos.

    Attacks get larger, more uniform payloads and come from a small set of
    scanning hosts; this is a toy generator, not a traffic model.
    """
    hosts = [f"192.168.{i // 250}.{i % 250 + 1}" for i in range(n_hosts)]
    records = []
    for _ in range(n):
        attack = rng.random() < attack_rate
        layer = app_layers[int(rng.integers(len(app_layers)))]
        size_s = int(rng.integers(0, 400 if not attack else 1500))
        size_d = int(rng.integers(0, 600))
        if attack:
            src_payload = rng.integers(0, 256, size_s, dtype=np.uint8).tobytes()
        else:
            src_payload = rng.integers(32, 127, size_s, dtype=np.uint8).tobytes()
        dst_payload = rng.integers(32, 127, size_d, dtype=np.uint8).tobytes()
        packets_s = int(rng.integers(1, 40))
        packets_d = int(rng.integers(0, 40))
        records.append(FlowRecord(
            app_layer=layer,
            protocol_name=ISCX_PROTOCOLS[int(rng.integers(3))],
            direction=ISCX_DIRECTIONS[int(rng.integers(4))],
            source_ip=hosts[int(rng.integers(3 if attack else n_hosts))],
            dest_ip=hosts[int(rng.integers(n_hosts))],
            source_port=int(rng.integers(1024, 65536)),
            dest_port=int(rng.choice([22, 53, 80, 443]) if not attack else rng.integers(0, 65536)),
            source_tcp_flags=tuple(bool(v) for v in rng.random(6) < 0.4),
            dest_tcp_flags=tuple(bool(v) for v in rng.random(6) < 0.4),
            source_payload=src_payload,
            dest_payload=dst_payload,
            duration=float(np.round(rng.exponential(2.0), 6)),
            total_source_bytes=size_s + 40 * packets_s,
            total_dest_bytes=size_d + 40 * packets_d,
            total_source_packets=packets_s,
            total_dest_packets=packets_d,
            label="attack" if attack else "normal",
        ))
    return records
