"""In-process service-based interface: NFs register a request queue and serve
it from their own thread; consumers block on a future for the response."""

from __future__ import annotations

import itertools
import json
import logging
import queue
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SbiRequest:
    consumer: str
    producer: str
    service: str
    payload: dict = field(default_factory=dict)
    request_id: str = ""


@dataclass
class SbiResponse:
    request_id: str
    producer: str
    service: str
    status: int
    result: str  # "success" | "failure" | "error"
    body: dict = field(default_factory=dict)
    cause: str = ""

    @property
    def ok(self) -> bool:
        return self.result == "success"

    def to_bytes(self) -> bytes:
        """Canonical wire form; used when comparing runs."""
        return json.dumps({"id": self.request_id, "nf": self.producer, "service": self.service,
                           "status": self.status, "result": self.result, "body": self.body,
                           "cause": self.cause}, sort_keys=True, separators=(",", ":")).encode()


class SbiError(RuntimeError):
    pass


class UnknownProducer(SbiError):
    pass


class SbiBus:
    """Routes requests to registered NFs.

    Request ids are ``<consumer>-<n>`` from one shared sequence, so a seeded,
    serial scenario yields the same ids on every run.
    """

    def __init__(self, timeout: float = 5.0) -> None:
        self.timeout = timeout
        self._nfs: dict[str, "queue.Queue"] = {}
        self._seq = itertools.count(1)
        self._seq_lock = threading.Lock()

    def attach(self, name: str) -> "queue.Queue":
        if name in self._nfs:
            raise SbiError(f"NF {name!r} already attached")
        q: queue.Queue = queue.Queue()
        self._nfs[name] = q
        return q

    def detach(self, name: str) -> None:
        self._nfs.pop(name, None)

    def next_id(self, consumer: str) -> str:
        with self._seq_lock:
            return f"{consumer}-{next(self._seq)}"

    def request(self, consumer: str, producer: str, service: str, payload: dict | None = None) -> SbiRequest:
        return SbiRequest(consumer, producer, service, dict(payload or {}), self.next_id(consumer))

    def send(self, req: SbiRequest) -> Future:
        q = self._nfs.get(req.producer)
        if q is None:
            raise UnknownProducer(req.producer)
        fut: Future = Future()
        q.put((req, fut))
        return fut

    def call(self, consumer: str, producer: str, service: str, payload: dict | None = None,
             timeout: float | None = None) -> SbiResponse:
        req = self.request(consumer, producer, service, payload)
        try:
            fut = self.send(req)
        except UnknownProducer:
            return SbiResponse(req.request_id, producer, service, 404, "error", cause="unknown producer")
        try:
            return fut.result(timeout=self.timeout if timeout is None else timeout)
        except FutureTimeout:
            return SbiResponse(req.request_id, producer, service, 504, "error", cause="timeout")
