"""UPF: N4 session handling on the SBI loop plus the N3 user-plane fast path."""

from __future__ import annotations

from typing import NamedTuple

from ..probe import AggregationRule as R
from ..telemetry import Source, TelemetryRecord, now_ns
from .gtp import GTP_HDR, INNER_HDR, GtpParseError, decode_gpdu, retunnel
from .nf import NetworkFunction, SubResult

UPF_RULES = (
    R("upf_n4_sessionestabsucc", component="UPF", where={"service": "n4_session_establish", "result": "success"}),
    R("upf_n4_sessiondelsucc", component="UPF", where={"service": "n4_session_delete", "result": "success"}),
    R("upf_n4_sessionreportsucc", component="UPF", where={"service": "n4_session_report", "result": "success"}),
    R("upf_n4_sbireqfail", event="request", where={"known": False}),
    R("upf_n4_session_active", op="last", component="UPF", field="sessions_active"),
    R("upf_n3_gtp_indatapakets", event="n3_packet", where={"outcome": "forwarded"}),
    R("upf_n3_gtp_indatabytes", op="sum", event="n3_packet", where={"outcome": "forwarded"}, field="length"),
    R("upf_n3_gtp_dropdatapakets", event="n3_packet", where={"outcome": "dropped"}),
    R("upf_n3_gtp_outdatapakets", event="n3_packet", where={"egress": "n3"}),
    R("upf_n3_gtp_outdatabytes", op="sum", event="n3_packet", where={"egress": "n3"}, field="length"),
    R("upf_n6_outdatapakets", event="n3_packet", where={"egress": "n6"}),
)


class ForwardOutcome(NamedTuple):
    forwarded: bool
    packet: bytes | None  # re-tunnelled G-PDU for N3 egress, None otherwise
    egress: str           # "n3", "n6" or "" when dropped
    reason: str = ""


def n4_install(nf, ctx):
    p = ctx.req.payload
    seid = str(p.get("seid", ""))
    try:
        ul, dl, ue_ip = int(p["ul_teid"]), int(p["dl_teid"]), int(p["ue_ip"])
    except (KeyError, TypeError, ValueError):
        return SubResult(False, {"seid": seid}, cause="malformed session rules")
    if seid in nf.sessions or ul in nf.pdrs:
        return SubResult(False, {"seid": seid, "ul_teid": ul}, cause="session or TEID in use")
    nf.sessions[seid] = {"ul_teid": ul, "dl_teid": dl, "ue_ip": ue_ip}
    nf.pdr_stats[ul] = [0, 0]
    # Publish the PDR last: the user plane may look it up at any moment.
    nf.routes[ue_ip] = dl
    nf.pdrs[ul] = seid
    return SubResult(True, {"seid": seid, "ul_teid": ul, "dl_teid": dl, "sessions_active": len(nf.sessions)},
                     {"seid": seid})


def n4_remove(nf, ctx):
    seid = str(ctx.req.payload.get("seid", ""))
    sess = nf.sessions.get(seid)
    if sess is None:
        return SubResult(False, {"seid": seid, "sessions_active": len(nf.sessions)}, cause="no such session")
    nf.pdrs.pop(sess["ul_teid"], None)
    if nf.routes.get(sess["ue_ip"]) == sess["dl_teid"]:
        del nf.routes[sess["ue_ip"]]
    del nf.sessions[seid]
    return SubResult(True, {"seid": seid, "sessions_active": len(nf.sessions)}, {"seid": seid})


def report_lookup(nf, ctx):
    seid = str(ctx.req.payload.get("seid", ""))
    if seid not in nf.sessions:
        return SubResult(False, {"seid": seid}, cause="no such session")
    return SubResult(True, {"seid": seid})


def report_notify(nf, ctx):
    seid = str(ctx.req.payload.get("seid", ""))
    rsp = nf.call(nf.smf, "downlink_notification", {"seid": seid})
    if not rsp.ok:
        return SubResult(False, {"seid": seid, "smf_result": rsp.result}, cause=f"SMF: {rsp.cause}")
    return SubResult(True, {"seid": seid, "smf_result": rsp.result}, {"paged": rsp.body.get("paged", False)})


class Upf(NetworkFunction):
    """UPF with PDRs keyed by uplink TEID and a UE-address route table for
    the downlink leg. ``forward`` runs on the caller's (traffic) thread and
    emits through its own buffer, separate from the SBI loop's."""

    kind = Source.UPF
    rules = UPF_RULES

    def __init__(self, name, bus, probe=None, smf: str = "smf-0") -> None:
        self.smf = smf
        self.sessions: dict[str, dict] = {}
        self.pdrs: dict[int, str] = {}
        self.routes: dict[int, int] = {}
        self.pdr_stats: dict[int, list[int]] = {}
        self.dropped = 0
        self.capture = None  # optional out-of-band tap with .capture(bytes, t_enter_ns)
        super().__init__(name, bus, probe)
        self.up_buffer = None
        self._up_emit = None
        if probe is not None:
            self.up_buffer = probe.collector(f"cn/{name}", self.rules).buffer()
            self._up_emit = self.up_buffer.emit

    def setup(self) -> None:
        s = self.subfunction
        s("n4_session_establish", "n4_install", n4_install, ("upf_n4_sessionestabsucc", "upf_n4_session_active"))
        s("n4_session_delete", "n4_remove", n4_remove, ("upf_n4_sessiondelsucc",))
        s("n4_session_report", "report_lookup", report_lookup)
        s("n4_session_report", "report_notify", report_notify, ("upf_n4_sessionreportsucc",))

    def forward(self, packet: bytes, t_enter_ns: int | None = None) -> ForwardOutcome:
        t_enter = now_ns() if t_enter_ns is None else t_enter_ns
        if self.capture is not None:
            try:
                self.capture.capture(packet, t_enter)
            except OverflowError:
                pass  # counted by the tap; forwarding is unaffected
        try:
            pkt = decode_gpdu(packet)
        except GtpParseError as exc:
            self.dropped += 1
            if self._up_emit is not None:
                self._up_emit(TelemetryRecord(t_enter, self.name, Source.UPF, "n3_packet",
                                              (("outcome", "dropped"), ("egress", ""),
                                               ("error", str(exc)))))
            return ForwardOutcome(False, None, "", str(exc))
        seid = self.pdrs.get(pkt.teid)
        if seid is None:
            self.dropped += 1
            out = ForwardOutcome(False, None, "", "unknown TEID")
            out_teid = 0
        else:
            st = self.pdr_stats[pkt.teid]
            st[0] += 1
            st[1] += pkt.length
            out_teid = self.routes.get(pkt.dst_ip, 0)
            if out_teid:
                out = ForwardOutcome(True, retunnel(packet, out_teid), "n3")
            else:
                out = ForwardOutcome(True, None, "n6")
        if self._up_emit is not None:
            self._up_emit(TelemetryRecord(
                t_enter, self.name, Source.UPF, "n3_packet",
                (("pkt_id", pkt.pkt_id), ("flow_id", pkt.flow_id), ("teid", pkt.teid),
                 ("length", pkt.length), ("outcome", "forwarded" if out.forwarded else "dropped"),
                 ("egress", out.egress), ("out_teid", out_teid))))
        return out


def upf_forward(upf: Upf, packet: bytes, t_enter_ns: int | None = None) -> ForwardOutcome:
    return upf.forward(packet, t_enter_ns)


HEADER_BYTES = GTP_HDR.size + INNER_HDR.size
