"""AMF: registration, connection and reachability management."""

from __future__ import annotations

from ..probe import AggregationRule as R
from ..telemetry import Source
from .nf import NetworkFunction, RequestContext, SubResult

CONNECTED = "CONNECTED"
IDLE = "IDLE"

AMF_RULES = (
    R("amf_reg_reginitreq", event="request", where={"service": "registration", "known": True}),
    R("amf_reg_reginitsucc", component="AMF", where={"service": "registration", "result": "success"}),
    R("amf_reg_reginitfail", component="AMF", where={"service": "registration", "result": "failure"}),
    R("amf_reg_deregreq", event="request", where={"service": "deregistration", "known": True}),
    R("amf_reg_deregsucc", component="AMF", where={"service": "deregistration", "result": "success"}),
    R("amf_conn_servicereqsucc", component="AMF", where={"service": "service_request", "result": "success"}),
    R("amf_conn_sbireqfail", event="request", where={"known": False}),
    R("amf_reach_pagingreq", event="request", where={"service": "paging", "known": True}),
    R("amf_reach_pagingsucc", component="AMF", where={"service": "paging", "result": "success"}),
    R("amf_reach_pagingfail", component="AMF", where={"service": "paging", "result": "failure"}),
    R("amf_ue_connected", op="last", component="AMF", field="ue_connected"),
    R("amf_ue_idle", op="last", component="AMF", field="ue_idle"),
)


def _gauges(nf: NetworkFunction) -> dict:
    return {"ue_connected": nf.state.count(CONNECTED), "ue_idle": nf.state.count(IDLE)}


def _supi(ctx: RequestContext) -> str:
    return str(ctx.req.payload.get("supi", ""))


def reg_authenticate(nf, ctx):
    supi = _supi(ctx)
    sub = nf.state.subscribers.get(supi)
    if sub is None:
        return SubResult(False, {"supi": supi, "auth": False}, cause="unknown subscriber")
    if not sub.get("auth", True):
        return SubResult(False, {"supi": supi, "auth": False}, cause="authentication rejected")
    return SubResult(True, {"supi": supi, "auth": True})


def reg_accept(nf, ctx):
    supi = _supi(ctx)
    again = supi in nf.state.registered_ues
    nf.state.registered_ues[supi] = CONNECTED
    return SubResult(True, {"reregistration": again, **_gauges(nf)}, {"supi": supi, "cm_state": CONNECTED})


def dereg_check(nf, ctx):
    supi = _supi(ctx)
    if supi not in nf.state.registered_ues:
        return SubResult(False, {"supi": supi}, cause="not registered")
    return SubResult(True, {"supi": supi})


def dereg_remove(nf, ctx):
    nf.state.registered_ues.pop(_supi(ctx), None)
    return SubResult(True, _gauges(nf), {"supi": _supi(ctx), "rm_state": "DEREGISTERED"})


def conn_release(nf, ctx):
    supi = _supi(ctx)
    if nf.state.registered_ues.get(supi) != CONNECTED:
        return SubResult(False, {"supi": supi, **_gauges(nf)}, cause="UE not connected")
    nf.state.registered_ues[supi] = IDLE
    return SubResult(True, {"supi": supi, **_gauges(nf)}, {"cm_state": IDLE})


def conn_service_request(nf, ctx):
    supi = _supi(ctx)
    if supi not in nf.state.registered_ues:
        return SubResult(False, {"supi": supi, **_gauges(nf)}, cause="not registered")
    nf.state.registered_ues[supi] = CONNECTED
    return SubResult(True, {"supi": supi, **_gauges(nf)}, {"cm_state": CONNECTED})


def reach_page(nf, ctx):
    supi = _supi(ctx)
    state = nf.state.registered_ues.get(supi)
    if state is None:
        return SubResult(False, {"supi": supi, **_gauges(nf)}, cause="not registered")
    if state == IDLE:
        if not nf.state.subscribers.get(supi, {}).get("reachable", True):
            return SubResult(False, {"supi": supi, "paged": True, **_gauges(nf)}, cause="UE unreachable")
        nf.state.registered_ues[supi] = CONNECTED
        return SubResult(True, {"supi": supi, "paged": True, **_gauges(nf)}, {"cm_state": CONNECTED})
    return SubResult(True, {"supi": supi, "paged": False, **_gauges(nf)}, {"cm_state": CONNECTED})


def ctx_lookup(nf, ctx):
    supi = _supi(ctx)
    state = nf.state.registered_ues.get(supi)
    if state is None:
        return SubResult(False, {"supi": supi}, cause="not registered")
    return SubResult(True, {"supi": supi, "cm_state": state}, {"supi": supi, "cm_state": state})


class Amf(NetworkFunction):
    kind = Source.AMF
    rules = AMF_RULES

    def setup(self) -> None:
        s = self.subfunction
        s("registration", "reg_authenticate", reg_authenticate)
        s("registration", "reg_accept", reg_accept, ("amf_reg_reginitsucc", "amf_ue_connected"))
        s("deregistration", "dereg_check", dereg_check)
        s("deregistration", "dereg_remove", dereg_remove, ("amf_reg_deregsucc",))
        s("release", "conn_release", conn_release, ("amf_ue_idle",))
        s("service_request", "conn_service_request", conn_service_request, ("amf_conn_servicereqsucc",))
        s("paging", "reach_page", reach_page, ("amf_reach_pagingsucc", "amf_reach_pagingfail"))
        s("ue_context", "ctx_lookup", ctx_lookup)

    def provision(self, subscribers) -> None:
        """Load the subscriber table: supi -> {"auth": bool, "reachable": bool}."""
        for sub in subscribers:
            if isinstance(sub, str):
                sub = {"supi": sub}
            self.state.subscribers[str(sub["supi"])] = {"auth": bool(sub.get("auth", True)),
                                                         "reachable": bool(sub.get("reachable", True))}
