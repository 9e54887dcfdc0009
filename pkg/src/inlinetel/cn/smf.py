"""SMF: PDU sessions, GTP-U tunnel management and downlink notification."""

from __future__ import annotations

import itertools

from ..probe import AggregationRule as R
from ..telemetry import Source
from .gtp import int_to_ip
from .nf import NetworkFunction, RequestContext, SubResult

UE_POOL_BASE = 0x0A2D0001  # 10.45.0.1

SMF_RULES = (
    R("smf_pdu_pdusession_creationreq", event="request", where={"service": "pdu_session_create", "known": True}),
    R("smf_pdu_pdusession_creationsucc", component="SMF",
      where={"service": "pdu_session_create", "result": "success"}),
    R("smf_pdu_pdusession_creationfail", component="SMF",
      where={"service": "pdu_session_create", "result": "failure"}),
    R("smf_pdu_pdusession_releasereq", event="request", where={"service": "pdu_session_release", "known": True}),
    R("smf_pdu_pdusession_releasesucc", component="SMF",
      where={"service": "pdu_session_release", "result": "success"}),
    R("smf_pdu_pdusession_releasefail", component="SMF",
      where={"service": "pdu_session_release", "result": "failure"}),
    R("smf_pdu_sbireqfail", event="request", where={"known": False}),
    R("smf_gtp_tunnel_creationsucc", event="gtp_tunnel_create", where={"status": "ok"}),
    R("smf_gtp_tunnel_creationfail", event="gtp_tunnel_create", where={"status": "fail"}),
    R("smf_gtp_tunnel_releasesucc", event="gtp_tunnel_release", where={"status": "ok"}),
    R("smf_dl_manage_rrcidle_ues", event="dl_lookup", where={"status": "ok", "ue_idle": True}),
    R("smf_dl_manage_notifysucc", component="SMF",
      where={"service": "downlink_notification", "result": "success"}),
    R("smf_pdu_pdusession_active", op="last", component="SMF", field="sessions_active"),
    R("smf_gtp_tunnel_active", op="last", component="SMF", field="tunnels_active"),
    R("smf_pdu_ipv4_allocated", op="last", component="SMF", field="ipv4_allocated"),
)


def seid_of(supi: str, psi) -> str:
    return f"{supi}/{int(psi)}"


def _gauges(nf) -> dict:
    st = nf.state
    return {"sessions_active": len(st.pdu_sessions), "tunnels_active": len(st.gtp_tunnels),
            "ipv4_allocated": len(st.pdu_sessions)}


def _seid(ctx: RequestContext) -> str:
    p = ctx.req.payload
    if "seid" in p:
        return str(p["seid"])
    return seid_of(str(p.get("supi", "")), p.get("psi", 1))


def pdu_ue_check(nf, ctx):
    supi = str(ctx.req.payload.get("supi", ""))
    rsp = nf.call(nf.amf, "ue_context", {"supi": supi})
    if not rsp.ok:
        return SubResult(False, {"supi": supi, "amf_result": rsp.result}, cause=f"AMF: {rsp.cause}")
    return SubResult(True, {"supi": supi, "amf_result": rsp.result, "cm_state": rsp.body.get("cm_state", "")})


def pdu_allocate(nf, ctx):
    seid = _seid(ctx)
    if seid in nf.state.pdu_sessions:
        return SubResult(False, {"seid": seid}, cause="session exists")
    ue_ip = nf.alloc_ip()
    ul_teid, dl_teid = next(nf.teids), next(nf.teids)
    ctx.scratch.update(seid=seid, ue_ip=ue_ip, ul_teid=ul_teid, dl_teid=dl_teid)
    return SubResult(True, {"seid": seid, "ue_ip": int_to_ip(ue_ip), "ul_teid": ul_teid, "dl_teid": dl_teid})


def gtp_tunnel_create(nf, ctx):
    sc = ctx.scratch
    rsp = nf.call(nf.upf, "n4_session_establish",
                  {"seid": sc["seid"], "ue_ip": sc["ue_ip"], "ul_teid": sc["ul_teid"], "dl_teid": sc["dl_teid"]})
    if not rsp.ok:
        return SubResult(False, {"seid": sc["seid"], "upf_result": rsp.result}, cause=f"UPF: {rsp.cause}")
    return SubResult(True, {"seid": sc["seid"], "upf_result": rsp.result})


def pdu_commit(nf, ctx):
    sc = ctx.scratch
    p = ctx.req.payload
    nf.state.pdu_sessions[sc["seid"]] = {"supi": str(p.get("supi", "")), "psi": int(p.get("psi", 1)),
                                         "dnn": p.get("dnn", "internet"), "ue_ip": sc["ue_ip"],
                                         "ul_teid": sc["ul_teid"], "dl_teid": sc["dl_teid"]}
    nf.state.gtp_tunnels[sc["ul_teid"]] = sc["seid"]
    return SubResult(True, {"seid": sc["seid"], **_gauges(nf)},
                     {"seid": sc["seid"], "ue_ip": int_to_ip(sc["ue_ip"]),
                      "ul_teid": sc["ul_teid"], "dl_teid": sc["dl_teid"]})


def pdu_lookup(nf, ctx):
    seid = _seid(ctx)
    sess = nf.state.pdu_sessions.get(seid)
    if sess is None:
        return SubResult(False, {"seid": seid}, cause="no such session")
    ctx.scratch["seid"] = seid
    ctx.scratch["session"] = sess
    return SubResult(True, {"seid": seid, "supi": sess["supi"]})


def gtp_tunnel_release(nf, ctx):
    seid = ctx.scratch["seid"]
    rsp = nf.call(nf.upf, "n4_session_delete", {"seid": seid})
    if not rsp.ok:
        return SubResult(False, {"seid": seid, "upf_result": rsp.result}, cause=f"UPF: {rsp.cause}")
    return SubResult(True, {"seid": seid, "upf_result": rsp.result})


def pdu_remove(nf, ctx):
    seid = ctx.scratch["seid"]
    sess = nf.state.pdu_sessions.pop(seid)
    nf.state.gtp_tunnels.pop(sess["ul_teid"], None)
    nf.free_ips.append(sess["ue_ip"])
    return SubResult(True, {"seid": seid, **_gauges(nf)}, {"seid": seid, "released": True})


def dl_lookup(nf, ctx):
    seid = _seid(ctx)
    sess = nf.state.pdu_sessions.get(seid)
    if sess is None:
        return SubResult(False, {"seid": seid}, cause="no such session")
    rsp = nf.call(nf.amf, "ue_context", {"supi": sess["supi"]})
    if not rsp.ok:
        return SubResult(False, {"seid": seid, "supi": sess["supi"]}, cause=f"AMF: {rsp.cause}")
    idle = rsp.body.get("cm_state") == "IDLE"
    ctx.scratch.update(seid=seid, supi=sess["supi"], idle=idle)
    return SubResult(True, {"seid": seid, "supi": sess["supi"], "ue_idle": idle})


def dl_page(nf, ctx):
    sc = ctx.scratch
    if not sc["idle"]:
        return SubResult(True, {"seid": sc["seid"], "paged": False}, {"paged": False})
    rsp = nf.call(nf.amf, "paging", {"supi": sc["supi"]})
    if not rsp.ok:
        return SubResult(False, {"seid": sc["seid"], "paged": True}, cause=f"paging: {rsp.cause}")
    return SubResult(True, {"seid": sc["seid"], "paged": True}, {"paged": True})


class Smf(NetworkFunction):
    kind = Source.SMF
    rules = SMF_RULES

    def __init__(self, name, bus, probe=None, amf: str = "amf-0", upf: str = "upf-0") -> None:
        self.amf = amf
        self.upf = upf
        self.teids = itertools.count(0x100)
        self._next_ip = UE_POOL_BASE
        self.free_ips: list[int] = []
        super().__init__(name, bus, probe)

    def alloc_ip(self) -> int:
        if self.free_ips:
            return self.free_ips.pop(0)
        ip = self._next_ip
        self._next_ip += 1
        return ip

    def setup(self) -> None:
        s = self.subfunction
        s("pdu_session_create", "pdu_ue_check", pdu_ue_check)
        s("pdu_session_create", "pdu_allocate", pdu_allocate)
        s("pdu_session_create", "gtp_tunnel_create", gtp_tunnel_create,
          ("smf_gtp_tunnel_creationsucc", "smf_gtp_tunnel_creationfail"))
        s("pdu_session_create", "pdu_commit", pdu_commit,
          ("smf_pdu_pdusession_creationsucc", "smf_pdu_pdusession_active", "smf_gtp_tunnel_active"))
        s("pdu_session_release", "pdu_lookup", pdu_lookup)
        s("pdu_session_release", "gtp_tunnel_release", gtp_tunnel_release, ("smf_gtp_tunnel_releasesucc",))
        s("pdu_session_release", "pdu_remove", pdu_remove, ("smf_pdu_pdusession_releasesucc",))
        s("downlink_notification", "dl_lookup", dl_lookup, ("smf_dl_manage_rrcidle_ues",))
        s("downlink_notification", "dl_page", dl_page, ("smf_dl_manage_notifysucc",))
