"""Shared telemetry types: KPI registry, telemetry records and their JSON form.

A record file is UTF-8 text holding one JSON array per line; each array is one
collector flush and each object in it is one record.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
import time
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Union

Scalar = Union[int, float, str, bool]

NAME_RE = re.compile(r"[a-z][a-zA-Z0-9_]*\Z")
ENVELOPE_KEYS = ("ts", "ne", "component", "event")
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


class TelemetryError(Exception):
    """Base class for telemetry-core errors."""


class DuplicateName(TelemetryError):
    pass


class MalformedName(TelemetryError):
    pass


class NonFiniteFloat(TelemetryError):
    pass


class MalformedJson(TelemetryError):
    pass


class MissingEnvelopeField(TelemetryError):
    pass


class InvalidRecord(TelemetryError):
    pass


class Source(str, Enum):
    AMF = "AMF"
    SMF = "SMF"
    UPF = "UPF"
    PDCP = "PDCP"
    RLC = "RLC"
    MAC = "MAC"
    PHY = "PHY"
    KUBE = "KUBE"
    DOCKER = "DOCKER"
    KERNEL = "KERNEL"

    def __str__(self) -> str:
        return self.value


class Kind(str, Enum):
    COUNTER = "counter"
    GAUGE = "gauge"

    def __str__(self) -> str:
        return self.value


# Per-(source, function) entry counts of the complete KPI taxonomy.
TAXONOMY_COUNTS: dict[tuple[Source, str], int] = {
    (Source.AMF, "Registration Management"): 10,
    (Source.AMF, "Connection Management"): 4,
    (Source.AMF, "Reachability Management"): 4,
    (Source.AMF, "Mobility Management"): 6,
    (Source.SMF, "PDU Session Management"): 22,
    (Source.SMF, "GTP-U Tunnel Management"): 4,
    (Source.SMF, "Downlink Notification Management"): 2,
    (Source.UPF, "User Plane Management"): 5,
    (Source.UPF, "Packet Management"): 10,
    (Source.PDCP, "PDCP"): 16,
    (Source.RLC, "RLC"): 31,
    (Source.MAC, "MAC"): 56,
    (Source.PHY, "Coding"): 3,
    (Source.PHY, "Modulation"): 3,
    (Source.PHY, "Resource Mapping"): 31,
    (Source.PHY, "Antenna Mapping"): 4,
    (Source.KUBE, "Pods Deployment"): 22,
    (Source.KUBE, "Pods Configuration"): 2,
    (Source.DOCKER, "Container Monitoring"): 12,
    (Source.KERNEL, "System Resource Monitoring"): 42,
}


@dataclass(frozen=True)
class KpiDescriptor:
    name: str
    source: Source
    function: str
    kind: Kind
    help: str = ""


KpiId = str


class KpiRegistry:
    """Name-keyed KPI registry.

    Populated once at startup, then frozen; after that it is only read and may
    be shared freely between threads.
    """

    def __init__(self) -> None:
        self._entries: dict[str, KpiDescriptor] = {}
        self._frozen = False

    def register(self, desc: KpiDescriptor) -> KpiId:
        if self._frozen:
            raise TelemetryError("registry is frozen")
        if not isinstance(desc.name, str) or not NAME_RE.match(desc.name):
            raise MalformedName(repr(desc.name))
        if desc.name in self._entries:
            raise DuplicateName(desc.name)
        self._entries[desc.name] = desc
        return desc.name

    def freeze(self) -> "KpiRegistry":
        self._frozen = True
        return self

    def get(self, name: str) -> KpiDescriptor:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[KpiDescriptor]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def counts(self) -> Counter:
        """Number of registered entries per (source, function)."""
        return Counter((d.source, d.function) for d in self._entries.values())

    @classmethod
    def from_manifest(cls, path: str | os.PathLike | None = None) -> "KpiRegistry":
        reg = cls()
        for desc in load_manifest(path):
            reg.register(desc)
        return reg.freeze()


def load_manifest(path: str | os.PathLike | None = None) -> list[KpiDescriptor]:
    """Read a ``name,source,function,kind[,note]`` CSV manifest.

    With no path the packaged manifest is used. Extra columns are ignored.
    """
    if path is None:
        text = resources.files("inlinetel.data").joinpath("kpi_manifest.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    out = []
    reader = csv.reader(text.splitlines())
    for i, row in enumerate(reader):
        if not row or row[0].startswith("#"):
            continue
        if i == 0 and row[0] == "name":
            continue
        name, source, function, kind = row[:4]
        out.append(KpiDescriptor(name, Source(source), function, Kind(kind), help=f"{source} {function}."))
    return out


_registry: KpiRegistry | None = None


def default_registry() -> KpiRegistry:
    """The packaged registry, loaded lazily and shared."""
    global _registry
    if _registry is None:
        _registry = KpiRegistry.from_manifest()
    return _registry


# One wall-clock anchor per process; record timestamps advance monotonically from it.
_WALL_ANCHOR_NS = time.time_ns()
_MONO_ANCHOR_NS = time.monotonic_ns()


def now_ns() -> int:
    """Epoch-aligned nanoseconds that never go backwards."""
    return _WALL_ANCHOR_NS + (time.monotonic_ns() - _MONO_ANCHOR_NS)


class TelemetryRecord(NamedTuple):
    """One timestamped event from a processing path.

    ``fields`` is an ordered tuple of ``(key, value)`` pairs.
    """

    timestamp_ns: int
    ne_id: str
    component: Source
    event: str
    fields: tuple = ()

    @property
    def origin(self) -> tuple[str, Source, str]:
        return (self.ne_id, self.component, self.event)

    def get(self, key: str, default=None):
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def as_dict(self) -> dict:
        d = {"ts": self.timestamp_ns, "ne": self.ne_id,
             "component": self.component, "event": self.event}
        d.update(self.fields)
        return d


def make_record(ne_id: str, component: Source | str, event: str,
                fields: Iterable[tuple[str, Scalar]] | dict = (),
                timestamp_ns: int | None = None) -> TelemetryRecord:
    """Build and validate a record, stamping it with :func:`now_ns` by default."""
    if isinstance(fields, dict):
        fields = fields.items()
    rec = TelemetryRecord(now_ns() if timestamp_ns is None else timestamp_ns,
                          ne_id, Source(component), event, tuple(fields))
    validate_record(rec)
    return rec


def validate_record(rec: TelemetryRecord) -> None:
    if not isinstance(rec.timestamp_ns, int) or isinstance(rec.timestamp_ns, bool) or rec.timestamp_ns <= 0:
        raise InvalidRecord(f"timestamp_ns must be a positive int, got {rec.timestamp_ns!r}")
    if not isinstance(rec.ne_id, str) or not isinstance(rec.event, str):
        raise InvalidRecord("ne_id and event must be strings")
    Source(rec.component)
    seen = set()
    for key, value in rec.fields:
        if not isinstance(key, str):
            raise InvalidRecord(f"field key must be str, got {key!r}")
        if key in seen:
            raise InvalidRecord(f"duplicate field key {key!r}")
        if key in ENVELOPE_KEYS:
            raise InvalidRecord(f"field key {key!r} collides with the envelope")
        seen.add(key)
        _check_scalar(key, value)


def _check_scalar(key: str, value) -> None:
    if isinstance(value, bool) or isinstance(value, str):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise InvalidRecord(f"{key}: integer out of 64-bit range")
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise NonFiniteFloat(f"{key}={value!r}")
        return
    raise InvalidRecord(f"{key}: unsupported value type {type(value).__name__}")


_dumps = json.JSONEncoder(ensure_ascii=False, separators=(",", ":"), allow_nan=False).encode


def serialize_record(rec: TelemetryRecord) -> str:
    validate_record(rec)
    return _dumps(rec.as_dict())


def serialize_batch(records: Iterable[TelemetryRecord]) -> str:
    """One JSON array holding every record, without a trailing newline.

    Records are trusted here (the collector path); only non-finite floats are
    caught, since JSON cannot carry them.
    """
    try:
        return _dumps([r.as_dict() for r in records])
    except ValueError as exc:
        raise NonFiniteFloat(str(exc)) from None


def record_from_dict(obj) -> TelemetryRecord:
    if not isinstance(obj, dict):
        raise MalformedJson("record must be a JSON object")
    missing = [k for k in ENVELOPE_KEYS if k not in obj]
    if missing:
        raise MissingEnvelopeField(", ".join(missing))
    try:
        component = Source(obj["component"])
    except ValueError:
        raise InvalidRecord(f"unknown component {obj['component']!r}") from None
    fields = tuple((k, v) for k, v in obj.items() if k not in ENVELOPE_KEYS)
    rec = TelemetryRecord(obj["ts"], obj["ne"], component, obj["event"], fields)
    validate_record(rec)
    return rec


def parse_record(text: str) -> TelemetryRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    return record_from_dict(obj)


def iter_record_arrays(path: str | os.PathLike, raw: bool = False) -> Iterator[list]:
    """Yield the arrays of a record file in order.

    An unterminated final line (a write torn by a crash) is not a committed
    flush and is skipped. With ``raw=True`` plain dicts are yielded.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.endswith("\n"):
                break
            if not line.strip():
                continue
            try:
                arr = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedJson(f"{path}: {exc}") from None
            if not isinstance(arr, list):
                raise MalformedJson(f"{path}: line is not a JSON array")
            yield arr if raw else [record_from_dict(o) for o in arr]


def read_record_file(path: str | os.PathLike, raw: bool = False) -> list:
    """All records of a file, flattened across arrays."""
    out: list = []
    for arr in iter_record_arrays(path, raw=raw):
        out.extend(arr)
    return out
