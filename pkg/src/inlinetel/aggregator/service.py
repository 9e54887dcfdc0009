"""HTTP data service over the store, plus the scrape+serve bundle."""

from __future__ import annotations

import json
import logging
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from ..exposition import BindError
from ..telemetry import now_ns
from .query import NS, QueryError, parse_duration, query_instant, query_range
from .scrape import ScrapeConfig, Scraper
from .store import TimeSeriesStore
from .tabular import build_tabular, to_ns_duration

log = logging.getLogger(__name__)

MS = 1_000_000


class BadRequest(ValueError):
    pass


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def _ms_param(q: dict, name: str, default: int | None = None) -> int:
    vals = q.get(name)
    if not vals:
        if default is None:
            raise BadRequest(f"missing parameter {name!r}")
        return default
    try:
        return int(float(vals[0]) * MS)
    except ValueError:
        raise BadRequest(f"parameter {name!r} must be Unix milliseconds") from None


def _step_param(q: dict) -> int:
    vals = q.get("step")
    if not vals:
        raise BadRequest("missing parameter 'step'")
    raw = vals[0]
    try:
        return int(float(raw) * MS)
    except ValueError:
        return parse_duration(raw)


def _expr_param(q: dict) -> str:
    vals = q.get("query") or q.get("expr")
    if not vals:
        raise BadRequest("missing parameter 'query'")
    return vals[0]


class DataService:
    """``/api/v1/query``, ``/api/v1/query_range`` and ``POST /api/v1/tabular``.

    Timestamps in and out are Unix milliseconds; sample values are strings as
    in the Prometheus HTTP API.
    """

    def __init__(self, store: TimeSeriesStore, host: str = "127.0.0.1", port: int = 0,
                 staleness_ns: int = 5 * 15 * NS, min_dt_ns: int = 0) -> None:
        self.store = store
        self.staleness_ns = staleness_ns
        self.min_dt_ns = min_dt_ns
        try:
            self._httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "DataService":
        self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.2},
                                        name="data-service", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    # request handlers return JSON-able payloads or raise BadRequest/QueryError

    def instant(self, q: dict) -> dict:
        t = _ms_param(q, "time", now_ns() // MS * MS)
        res = query_instant(self.store, _expr_param(q), t, self.staleness_ns)
        return {"resultType": "vector",
                "result": [{"metric": dict(l), "value": [t // MS, _fmt(v)]} for l, v in res]}

    def range(self, q: dict) -> dict:
        start = _ms_param(q, "start")
        end = _ms_param(q, "end")
        step = _step_param(q)
        m = query_range(self.store, _expr_param(q), start, end, step, self.staleness_ns)
        return {"resultType": "matrix",
                "result": [{"metric": dict(l), "values": [[t // MS, _fmt(v)] for t, v in pts]}
                           for l, pts in sorted(m.items())]}

    def tabular(self, body: bytes) -> dict:
        try:
            req = json.loads(body or b"null")
        except json.JSONDecodeError as exc:
            raise BadRequest(f"body is not JSON: {exc}") from None
        if not isinstance(req, dict):
            raise BadRequest("body must be a JSON object")
        for key in ("features", "T", "dt"):
            if key not in req:
                raise BadRequest(f"missing field {key!r}")
        if not isinstance(req["features"], list):
            raise BadRequest("'features' must be a list")
        end = int(req["end"]) * MS if "end" in req else now_ns()
        dt = to_ns_duration(req["dt"])
        if dt < self.min_dt_ns:
            raise BadRequest(f"dt must be at least the scrape interval ({self.min_dt_ns / NS}s)")
        ds = build_tabular(self.store, req["features"], to_ns_duration(req["T"]), dt, end)
        return ds.to_json()


def _make_handler(svc: DataService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_GET(self):  # noqa: N802
            parts = urlsplit(self.path)
            q = parse_qs(parts.query)
            routes = {"/api/v1/query": svc.instant, "/api/v1/query_range": svc.range}
            if parts.path == "/-/healthy":
                self._send(200, {"status": "success"})
                return
            fn = routes.get(parts.path)
            if fn is None:
                self._send(404, {"status": "error", "errorType": "not_found", "error": parts.path})
                return
            self._run(fn, q)

        def do_POST(self):  # noqa: N802
            parts = urlsplit(self.path)
            if parts.path in ("/api/v1/query", "/api/v1/query_range"):
                n = int(self.headers.get("Content-Length") or 0)
                q = parse_qs(self.rfile.read(n).decode("utf-8")) if n else {}
                q.update(parse_qs(parts.query))
                self._run(svc.instant if parts.path.endswith("query") else svc.range, q)
                return
            if parts.path != "/api/v1/tabular":
                self._send(404, {"status": "error", "errorType": "not_found", "error": parts.path})
                return
            n = int(self.headers.get("Content-Length") or 0)
            self._run(svc.tabular, self.rfile.read(n))

        def _run(self, fn, arg) -> None:
            try:
                data = fn(arg)
            except (BadRequest, QueryError, ValueError, KeyError, TypeError) as exc:
                self._send(400, {"status": "error", "errorType": "bad_data", "error": str(exc)})
                return
            except Exception as exc:  # keep the service up
                log.exception("data service failure")
                self._send(500, {"status": "error", "errorType": "internal", "error": str(exc)})
                return
            self._send(200, {"status": "success", "data": data})

        def _send(self, status: int, obj: dict) -> None:
            body = json.dumps(obj, allow_nan=False, default=str).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args):
            log.debug("api %s: " + fmt, self.address_string(), *args)

    return Handler


class Aggregator:
    """Store + scrapers + data service, started and stopped together."""

    def __init__(self, config: ScrapeConfig, host: str = "127.0.0.1", port: int = 0,
                 snapshot_path=None) -> None:
        self.config = config
        self.store = TimeSeriesStore(snapshot_path)
        self.scraper = Scraper(self.store, config)
        self.service = DataService(self.store, host, port, staleness_ns=int(5 * config.interval * NS),
                                   min_dt_ns=int(config.interval * NS))

    @property
    def url(self) -> str:
        return self.service.url

    def start(self) -> "Aggregator":
        self.service.start()
        self.scraper.start()
        return self

    def stop(self) -> None:
        self.scraper.stop()
        self.service.stop()
        self.store.close()
