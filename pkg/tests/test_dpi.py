import json
import struct

import pytest
from hypothesis import given, strategies as st

from inlinetel.cn import CoreNetwork, encode_gpdu
from inlinetel.cn.gtp import ip_to_int
from inlinetel.dpi import (
    CaptureQueueFull, CaptureRecord, DissectError, DpiCapture, UnmatchedPackets, compare_latency, dissect,
    header_fields, read_dpi_file, wrap_n3,
)
from inlinetel.telemetry import read_record_file


def test_capture_then_parse(sink):
    d = DpiCapture("upf-0", sink)
    d.capture(encode_gpdu(1, 2, 3, 4, 5, 10), 100)
    d.stop()
    (r,) = read_dpi_file(sink / "dpi" / "upf-0.json")
    assert r.fields["pkt_id"] == 5 and not r.error
    assert r.t_enter_ns <= r.t_parsed_ns <= r.t_stored_ns and r.latency_ns > 0


def test_queue_full_counts_drop(sink):
    d = DpiCapture("upf-0", sink, capacity=2)
    d.capture(b"a", 1)
    d.capture(b"b", 2)
    with pytest.raises(CaptureQueueFull):
        d.capture(b"c", 3)
    assert d.drops == 1 and isinstance(CaptureQueueFull("x"), OverflowError)
    d.stop()


@given(st.integers(1, 50), st.integers(1, 80))
def test_count_conservation(cap, n):
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        d = DpiCapture("u", tmp, capacity=cap)
        for i in range(n):
            if i % 7 == 6:
                d.tick()
            try:
                d.capture(encode_gpdu(1, 1, 1, 1, i, 8), i + 1)
            except CaptureQueueFull:
                pass
        d.stop()
        assert n == len(read_dpi_file(d.out_path)) + d.drops == d.parsed + d.drops


def test_corrupted_packet_error_record(sink):
    d = DpiCapture("upf-0", sink)
    d.capture(b"\x30\xff\x00", 5)
    d.stop()
    (r,) = read_dpi_file(sink / "dpi" / "upf-0.json")
    assert r.error and r.fields == {} and d.errors == 1


def test_dissect_walks_every_layer():
    g = encode_gpdu(7, 11, 12, 3, 99, b"payload")
    f = dissect(wrap_n3(g, 4))
    assert (f["teid"], f["flow_id"], f["pkt_id"], f["src_ip"], f["dst_ip"]) == (7, 3, 99, 11, 12)
    frame = bytearray(wrap_n3(g))
    frame[8] ^= 1  # TTL: checksum now wrong
    with pytest.raises(DissectError):
        dissect(bytes(frame))
    frame = bytearray(wrap_n3(g))
    struct.pack_into("!H", frame, 22, 53)  # UDP dport
    with pytest.raises(DissectError):
        dissect(bytes(frame))


def test_pcap_export(sink):
    out = sink / "cap.pcap"
    d = DpiCapture("upf-0", sink, pcap_out=out)
    d.capture(encode_gpdu(1, 2, 3, 4, 5, 10), 1_500_000_000)
    d.stop()
    data = out.read_bytes()
    magic, _, _, _, _, _, linktype = struct.unpack("<IHHiIII", data[:24])
    assert magic == 0xA1B23C4D and linktype == 228
    assert len(data) == 24 + 16 + 20 + 8 + 8 + 20 + 10  # file, record, IPv4, UDP, GTP, inner, payload


def test_field_equivalence_with_inline_path(sink):
    core = CoreNetwork(sink).start()
    tap = DpiCapture("upf-0", sink, interval=0.01).start()
    core.upf.capture = tap
    core.amf.provision([{"supi": "imsi-1"}])
    core.request("amf-0", "registration", {"supi": "imsi-1"})
    b = core.request("smf-0", "pdu_session_create", {"supi": "imsi-1", "psi": 1}).body
    for k in range(300):
        core.upf.forward(encode_gpdu(b["ul_teid"], ip_to_int(b["ue_ip"]), 5, 1, k, k % 200))
    core.stop()
    tap.stop()
    (cn_file,) = [p for p in sink.rglob("upf-0.json") if "dpi" not in p.parts]
    inline = [r for r in read_record_file(cn_file) if r.event == "n3_packet"]
    a, d = header_fields(inline), header_fields(tap.records)
    assert len(a) == 300 and a == d


def test_compare_latency_arithmetic():
    rep = compare_latency({1: 2e6, 2: 2e6}, {1: 10e6, 2: 10e6})
    assert rep.mean == 2.0 and rep.dpi_mean == 10.0 and rep.reduction_pct == pytest.approx(80.0)
    same = compare_latency({1: 5e6}, {1: 5e6})
    assert same.reduction_pct == 0.0


def test_compare_latency_unmatched_and_forms():
    inline = [(1, 0, 1_000_000), (2, 0, 3_000_000), (9, 0, 1)]
    dpi = [CaptureRecord(0, 1, 4_000_000, {"pkt_id": 1}), CaptureRecord(0, 1, 4_000_000, {"pkt_id": 2}),
           CaptureRecord(0, 1, 7, {"pkt_id": 5}), CaptureRecord(0, 1, 9, {}, "bad")]
    rep = compare_latency(inline, dpi)
    assert rep.matched == 2 and rep.unmatched == UnmatchedPackets([5, 9])
    assert rep.mean == 2.0 and rep.dpi_mean == 4.0 and rep.reduction_pct == 50.0
    json.dumps(rep.to_json())
    with pytest.raises(ValueError):
        compare_latency({1: 1.0}, {2: 1.0})


@given(st.lists(st.tuples(st.floats(0.01, 1e3), st.floats(0.01, 1e3)), min_size=1, max_size=50))
def test_reduction_formula(pairs):
    a = {i: x * 1e6 for i, (x, _) in enumerate(pairs)}
    b = {i: y * 1e6 for i, (_, y) in enumerate(pairs)}
    rep = compare_latency(a, b)
    ma = sum(x for x, _ in pairs) / len(pairs)
    mb = sum(y for _, y in pairs) / len(pairs)
    assert rep.reduction_pct == pytest.approx((mb - ma) / mb * 100, rel=1e-9, abs=1e-9)
    assert rep.p50 <= rep.p99 and rep.dpi_p50 <= rep.dpi_p99
