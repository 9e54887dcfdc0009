"""Text exposition (format 0.0.4) rendering and the per-NE ``/metrics`` endpoint."""

from __future__ import annotations

import logging
import math
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, NamedTuple

log = logging.getLogger(__name__)

CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"
METRIC_NAME_RE = re.compile(r"[a-zA-Z_:][a-zA-Z0-9_:]*\Z")
LABEL_NAME_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*\Z")


class NonFiniteValue(ValueError):
    pass


class InvalidSnapshot(ValueError):
    pass


class BindError(OSError):
    pass


class Entry(NamedTuple):
    """One sample of a snapshot. ``desc`` needs ``name``, ``kind`` and ``help``."""

    desc: object
    labels: tuple
    value: float
    timestamp_ms: int | None = None


ExpositionSnapshot = list  # of Entry


def format_value(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise NonFiniteValue(repr(v))
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def escape_label_value(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def escape_help(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\n", "\\n")


def render(snapshot: Iterable) -> str:
    """Render entries grouped by metric name, samples sorted by label set."""
    families: dict[str, list] = {}
    kinds: dict[str, tuple[str, str]] = {}
    for e in snapshot:
        e = Entry(*e)
        name = e.desc.name
        kind = str(e.desc.kind)
        if not METRIC_NAME_RE.match(name):
            raise InvalidSnapshot(f"bad metric name {name!r}")
        if kind not in ("counter", "gauge"):
            raise InvalidSnapshot(f"{name}: unsupported type {kind!r}")
        prev = kinds.setdefault(name, (kind, e.desc.help or ""))
        if prev[0] != kind:
            raise InvalidSnapshot(f"{name}: conflicting types {prev[0]} and {kind}")
        labels = tuple(sorted((str(k), str(v)) for k, v in e.labels))
        for k, _ in labels:
            if not LABEL_NAME_RE.match(k) or k.startswith("__"):
                raise InvalidSnapshot(f"{name}: bad label name {k!r}")
        if len({k for k, _ in labels}) != len(labels):
            raise InvalidSnapshot(f"{name}: duplicate label name")
        families.setdefault(name, []).append((labels, format_value(e.value), e.timestamp_ms))

    lines = []
    for name in sorted(families):
        kind, help_text = kinds[name]
        lines.append(f"# HELP {name} {escape_help(help_text)}" if help_text else f"# HELP {name}")
        lines.append(f"# TYPE {name} {kind}")
        seen = set()
        for labels, value, ts in sorted(families[name], key=lambda s: s[0]):
            if labels in seen:
                raise InvalidSnapshot(f"{name}: duplicate series {labels}")
            seen.add(labels)
            if labels:
                body = ",".join(f'{k}="{escape_label_value(v)}"' for k, v in labels)
                line = f"{name}{{{body}}} {value}"
            else:
                line = f"{name} {value}"
            if ts is not None:
                line += f" {int(ts)}"
            lines.append(line)
    return "\n".join(lines) + "\n" if lines else ""


SnapshotSource = Callable[[], Iterable]


class MetricsServer:
    """Serves ``GET /metrics`` from a snapshot callable on a background thread."""

    def __init__(self, source: SnapshotSource, host: str = "127.0.0.1", port: int = 0) -> None:
        self.source = source
        handler = _make_handler(self)
        try:
            self._httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._httpd.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/metrics"

    def start(self) -> "MetricsServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.2},
                                        name=f"metrics-{self.address[1]}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()


def _make_handler(server: MetricsServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_GET(self):  # noqa: N802
            if self.path.split("?", 1)[0] != "/metrics":
                self._reply(404, b"not found\n", "text/plain; charset=utf-8")
                return
            try:
                body = render(server.source()).encode("utf-8")
            except Exception as exc:
                log.exception("render failed")
                self._reply(500, f"{exc}\n".encode(), "text/plain; charset=utf-8")
                return
            self._reply(200, body, CONTENT_TYPE)

        def _reply(self, status: int, body: bytes, ctype: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args):
            log.debug("metrics %s: " + fmt, self.address_string(), *args)

    return Handler


def serve(source: SnapshotSource, host: str = "127.0.0.1", port: int = 0) -> MetricsServer:
    return MetricsServer(source, host, port).start()


def probe_source(probe, labels: tuple = ()) -> SnapshotSource:
    """Snapshot callable over a probe's counter table and self-metrics.

    Table series get an ``ne`` label (plus ``labels``) so that one scrape
    target is self-describing.
    """
    extra = (("ne", probe.ne_id),) + tuple(labels)

    def snapshot() -> list[Entry]:
        reg = probe.table.registry
        out = [Entry(reg.get(name), tuple(sorted(lab + extra)), value)
               for name, lab, value in probe.table.snapshot()]
        out.extend(Entry(d, lab, value) for d, lab, value in probe.self_metrics())
        return out

    return snapshot
