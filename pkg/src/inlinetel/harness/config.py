"""Topology configuration (JSON) for the testbed."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ProbeSettings:
    capacity: int = 1 << 16
    flush_interval: float = 0.1
    granularity: str = "full_metadata"


@dataclass
class TopologyConfig:
    """Names, ports and knobs of one testbed.

    Port 0 means "any free port". ``bitrate_bounds`` are bits/s.
    """

    amf: str = "amf-0"
    smf: str = "smf-0"
    upf: str = "upf-0"
    base_stations: tuple = ("bs-1", "bs-2")
    ues: tuple = ("imsi-001010000000001", "imsi-001010000000002")
    host: str = "127.0.0.1"
    ports: dict = field(default_factory=dict)
    aggregator_port: int = 0
    scrape_interval: float = 0.25
    scrape_timeout: float = 0.2
    probes: bool = True
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    mcs: int = 16
    max_pdu: int = 0
    packet_size: int = 1200
    bitrate_bounds: tuple = (0.5e6, 20e6)
    sysmon: bool = True
    # GIL switch interval while a testbed runs (0 keeps the interpreter's);
    # short slices keep collector ticks on time when every NE shares one CPU.
    switch_interval: float = 0.0005
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.probe, dict):
            try:
                self.probe = ProbeSettings(**self.probe)
            except TypeError as exc:
                raise ConfigError(f"probe: {exc}") from None
        self.base_stations = tuple(self.base_stations)
        self.ues = tuple(self.ues)
        self.bitrate_bounds = tuple(float(b) for b in self.bitrate_bounds)
        if len(self.base_stations) != 2 or len(self.ues) != 2:
            raise ConfigError("the topology has exactly two base stations and two UEs")
        lo, hi = self.bitrate_bounds
        if not 0 < lo <= hi:
            raise ConfigError(f"bad bitrate bounds {self.bitrate_bounds}")
        if not 0 <= self.mcs <= 28:
            raise ConfigError("mcs must be in [0, 28]")
        if not 64 <= self.packet_size <= 8000:
            raise ConfigError("packet_size must be in [64, 8000]")
        if not self.scrape_interval > self.scrape_timeout > 0:
            raise ConfigError("need scrape_interval > scrape_timeout > 0")
        if self.switch_interval < 0:
            raise ConfigError("switch_interval must be >= 0")
        if self.probe.flush_interval <= 0 or self.probe.capacity < 1:
            raise ConfigError("bad probe settings")

    @classmethod
    def from_json(cls, obj: dict) -> "TopologyConfig":
        if not isinstance(obj, dict):
            raise ConfigError("topology config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "TopologyConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_json(obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["base_stations"] = list(self.base_stations)
        d["ues"] = list(self.ues)
        d["bitrate_bounds"] = list(self.bitrate_bounds)
        return d
