"""Network-function skeleton: a request loop that processes SBI requests as an
ordered list of sub-functions and emits one record per step."""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

from ..probe import AggregationRule, Probe, ProbeBuffer
from ..telemetry import Source, TelemetryRecord, now_ns
from .sbi import SbiBus, SbiRequest, SbiResponse

log = logging.getLogger(__name__)


class SubResult(NamedTuple):
    ok: bool
    fields: dict = {}     # recorded in the step's telemetry record
    response: dict = {}   # merged into the response body
    cause: str = ""


@dataclass
class RequestContext:
    req: SbiRequest
    scratch: dict = field(default_factory=dict)
    body: dict = field(default_factory=dict)


Handler = Callable[["NetworkFunction", RequestContext], SubResult]


@dataclass(frozen=True)
class SubfunctionSpec:
    name: str
    nf: str
    handler: Handler
    emits: tuple = ()
    continue_on_failure: bool = False


@dataclass
class NfState:
    name: str
    registered_ues: dict = field(default_factory=dict)   # supi -> "CONNECTED" | "IDLE"
    subscribers: dict = field(default_factory=dict)      # supi -> {"auth": bool, "reachable": bool}
    pdu_sessions: dict = field(default_factory=dict)     # seid -> session dict
    gtp_tunnels: dict = field(default_factory=dict)      # teid -> tunnel dict

    def count(self, state: str) -> int:
        return sum(1 for s in self.registered_ues.values() if s == state)


def _noop_emit(rec) -> None:
    return None


class NetworkFunction:
    """Base NF; subclasses register their services in ``setup``.

    Requests are served one at a time from the NF's own thread. Every request
    yields one ``request`` metadata record and then one record per executed
    sub-function; the last executed record also carries ``result``.
    """

    kind: Source = Source.AMF
    rules: Sequence[AggregationRule] = ()

    def __init__(self, name: str, bus: SbiBus, probe: Probe | None = None) -> None:
        self.name = name
        self.bus = bus
        self.state = NfState(name)
        self.services: dict[str, list[SubfunctionSpec]] = {}
        self.probe = probe
        self.buffer: ProbeBuffer | None = None
        self._emit = _noop_emit
        if probe is not None:
            coll = probe.collector(f"cn/{name}", self.rules)
            self.buffer = coll.buffer()
            self._emit = self.buffer.emit
            # Every driven series is exported from the start, at zero.
            for r in self.rules:
                probe.table.declare(r.kpi, r.labels)
        self._queue: queue.Queue | None = None
        self._thread: threading.Thread | None = None
        self.setup()

    def setup(self) -> None:
        pass

    def register(self, service: str, *specs: SubfunctionSpec) -> None:
        self.services.setdefault(service, []).extend(specs)

    def subfunction(self, service: str, name: str, handler: Handler, emits: tuple = (),
                    continue_on_failure: bool = False) -> None:
        self.register(service, SubfunctionSpec(name, self.name, handler, emits, continue_on_failure))

    # Algorithm steps

    def parse_request(self, req: SbiRequest) -> dict:
        info = {"request_id": req.request_id, "consumer": req.consumer, "service": req.service}
        for key in ("supi", "psi", "seid"):
            if key in req.payload:
                info[key] = req.payload[key]
        return info

    def match_subfunctions(self, service: str) -> list[SubfunctionSpec]:
        """Sub-functions of a service, in registration order."""
        return self.services.get(service, [])

    def record(self, event: str, fields: dict) -> None:
        self._emit(TelemetryRecord(now_ns(), self.name, self.kind, event, tuple(fields.items())))

    def handle_request(self, req: SbiRequest) -> SbiResponse:
        info = self.parse_request(req)
        known = req.service in self.services
        self.record("request", {**info, "known": known})
        if not known:
            return SbiResponse(req.request_id, self.name, req.service, 404, "error",
                               cause=f"unknown service {req.service!r}")
        ctx = RequestContext(req)
        subs = self.match_subfunctions(req.service)
        result = "success"
        cause = ""
        for i, sf in enumerate(subs):
            try:
                res = sf.handler(self, ctx)
            except Exception as exc:  # a broken handler fails the request, not the NF
                log.exception("%s: sub-function %s raised", self.name, sf.name)
                res = SubResult(False, cause=f"{type(exc).__name__}: {exc}")
            ctx.body.update(res.response)
            if not res.ok and result == "success":
                result = "failure"
                cause = res.cause or sf.name
            final = i == len(subs) - 1 or (not res.ok and not sf.continue_on_failure)
            fields = {"request_id": req.request_id, "service": req.service, "step": i,
                      "status": "ok" if res.ok else "fail"}
            fields.update(res.fields)
            if final:
                fields["result"] = result
            self.record(sf.name, fields)
            if final:
                break
        return SbiResponse(req.request_id, self.name, req.service,
                           200 if result == "success" else 409, result, ctx.body, cause)

    # request loop

    def _loop(self) -> None:
        q = self._queue
        while True:
            item = q.get()
            if item is None:
                break
            req, fut = item
            try:
                fut.set_result(self.handle_request(req))
            except Exception as exc:
                fut.set_exception(exc)

    def start(self) -> "NetworkFunction":
        self._queue = self.bus.attach(self.name)
        self._thread = threading.Thread(target=self._loop, name=f"nf-{self.name}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._queue is not None:
            self.bus.detach(self.name)
            self._queue.put(None)
            self._thread.join()
            self._queue = None

    def call(self, producer: str, service: str, payload: dict | None = None) -> SbiResponse:
        return self.bus.call(self.name, producer, service, payload)
