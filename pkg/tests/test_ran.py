import random

import pytest
from hypothesis import given, strategies as st

from inlinetel.probe import Probe, ProbeConfig
from inlinetel.ran import BaseStation, UserEquipment
from inlinetel.ran.layers import MissingSegment, PdcpWindow, StaleSeq, pdcp_reorder, rlc_reassemble, rlc_segment, \
    scramble
from inlinetel.ran.pipeline import Direction, Framer, LayerPipeline
from inlinetel.ran.wire import HEADER_SIZE, HeaderParseError, Layer, LayerHeader, parse_header, relength
from inlinetel.telemetry import read_record_file


# wire

def test_header_pack_parse():
    for layer in Layer:
        h = LayerHeader(layer, 0x11, 7, 42, 5, offset=3 if layer is Layer.RLC else 0,
                        sdu_len=8 if layer is Layer.RLC else 0, mcs=9 if layer is Layer.PHY else 0,
                        prb=2 if layer is Layer.PHY else 0)
        raw = h.pack() + b"abcde"
        assert len(raw) == HEADER_SIZE[layer] + 5
        assert parse_header(layer, raw) == h


@pytest.mark.parametrize("mutate", [
    lambda b: b[:4],                                       # truncated
    lambda b: b"\x02" + b[1:],                             # wrong layer id
    lambda b: b + b"x",                                    # length mismatch
])
def test_header_errors(mutate):
    raw = LayerHeader(Layer.PDCP, 0, 1, 1, 3).pack() + b"abc"
    with pytest.raises(HeaderParseError):
        parse_header(Layer.PDCP, mutate(raw))


def test_phy_range_checks():
    with pytest.raises(HeaderParseError):
        parse_header(Layer.PHY, LayerHeader(Layer.PHY, 0, 0, 0, 0, mcs=29, prb=1).pack())
    with pytest.raises(HeaderParseError):
        parse_header(Layer.PHY, LayerHeader(Layer.PHY, 0, 0, 0, 0, mcs=3, prb=0).pack())


def test_relength_rewrites_stack():
    stack = LayerHeader(Layer.MAC, 0, 0, 0, 0).pack() + LayerHeader(Layer.PDCP, 0, 0, 0, 0).pack()
    out = relength(stack, 10) + bytes(10)
    mac = parse_header(Layer.MAC, out)
    assert mac.length == HEADER_SIZE[Layer.PDCP] + 10
    assert parse_header(Layer.PDCP, out, HEADER_SIZE[Layer.MAC]).length == 10


# RLC / PDCP / PHY helpers

def test_segment_example():
    segs = rlc_segment(bytes(range(10)), 4)
    assert [len(s.data) for s in segs] == [4, 4, 2] and [s.last for s in segs] == [False, False, True]


@given(st.binary(max_size=2000), st.integers(1, 300), st.randoms())
def test_segment_round_trip(payload, max_pdu, rnd):
    segs = rlc_segment(payload, max_pdu)
    assert len(segs) == -(-len(payload) // max_pdu)
    rnd.shuffle(segs)
    assert rlc_reassemble(segs) == payload


@given(st.binary(min_size=2, max_size=500), st.integers(1, 50), st.data())
def test_missing_segment(payload, max_pdu, data):
    segs = rlc_segment(payload, max_pdu)
    if len(segs) < 2:
        return
    del segs[data.draw(st.integers(0, len(segs) - 1))]
    with pytest.raises(MissingSegment):
        rlc_reassemble(segs)


def test_segment_bad_max_pdu():
    with pytest.raises(ValueError):
        rlc_segment(b"abc", 0)


def test_pdcp_in_order():
    w = PdcpWindow(8)
    assert [pdcp_reorder(w, (s, s)) for s in (0, 1, 2)] == [[(0, 0)], [(1, 1)], [(2, 2)]]
    assert w.reorder_count == 0


def test_pdcp_out_of_order_trace():
    w = PdcpWindow(8)
    got = [w.offer(s, s) for s in (0, 2, 1)]
    assert got == [[0], [], [1, 2]] and w.reorder_count == 1


def test_pdcp_stale():
    w = PdcpWindow(8)
    w.offer(0, "a")
    with pytest.raises(StaleSeq):
        w.offer(0, "again")
    with pytest.raises(StaleSeq):
        w.offer(2**32 - 1, "behind")


@given(st.integers(0, 2**32 - 1), st.permutations(list(range(12))))
def test_pdcp_permutation_delivers_all_in_order(start, perm):
    """Any arrival order within the window yields every PDU exactly once, in order."""
    w = PdcpWindow(16, start)
    out = []
    for k in perm:
        out.extend(w.offer((start + k) % 2**32, k))
    assert out == list(range(12))
    assert w.reorder_count == sum(1 for i, k in enumerate(perm) if k != min(set(range(12)) - set(perm[:i])))


@given(st.binary(max_size=3000), st.integers(0, 28))
def test_scramble_involution(data, mcs):
    assert scramble(scramble(data, mcs), mcs) == data


def test_scramble_long_input():
    data = random.Random(0).randbytes(70_000)
    assert scramble(scramble(data, 5), 5) == data != scramble(data, 5)


# pipeline

def _bs(sink, **kw):
    return BaseStation("bs-1", sink, **kw)


def test_downlink_records_one_per_layer(sink):
    bs = _bs(sink)
    before = sum(bs.dl_tx.processed.values())
    fr = bs.dl_tx.process_bitstream(Framer(1, Direction.DOWNLINK).frame(b"x" * 100))
    assert fr.records == 4 and len(fr.outputs) == 1
    assert sum(bs.dl_tx.processed.values()) - before == 4
    bs.stop()
    ts = []
    for layer in ("pdcp", "rlc", "mac", "phy"):
        (r,) = read_record_file(sink / "ran" / "bs-1" / f"{layer}.json")
        assert r.event == f"{layer}_tx"
        ts.append(r.timestamp_ns)
    assert ts == sorted(ts)


def test_corrupted_rlc_header_short_circuits(sink):
    bs = _bs(sink)
    raw = bytearray(Framer(1, Direction.DOWNLINK).frame(b"y" * 50).data)
    raw[HEADER_SIZE[Layer.PDCP]] = 0x7F  # RLC layer id
    fr = bs.dl_tx.process_bitstream(bytes(raw))
    assert fr.dropped_at is Layer.RLC and fr.outputs == [] and fr.records == 2
    assert bs.dl_tx.drops[Layer.RLC] == 1
    bs.stop()
    (p,) = read_record_file(sink / "ran" / "bs-1" / "pdcp.json")
    (r,) = read_record_file(sink / "ran" / "bs-1" / "rlc.json")
    assert p.get("error") == 0 and r.get("error") == 1 and r.get("reason")
    assert not (sink / "ran" / "bs-1" / "mac.json").exists() or not read_record_file(sink / "ran" / "bs-1" / "mac.json")


def test_tx_byte_counter_equals_sum_of_sizes(sink):
    bs = _bs(sink)
    rng = random.Random(4)
    sizes = [rng.randrange(0, 3000) for _ in range(1000)]
    for i, n in enumerate(sizes):
        bs.transmit(1, bytes(n))
    bs.probe.quiesce()
    assert bs.probe.table.total("rlc_txpdu_transmit_bytes") == sum(sizes)
    bs.stop()


def test_phy_records_numeric_only(sink):
    bs = _bs(sink)
    bs.transmit(1, b"z" * 10)
    bs.stop()
    (r,) = read_record_file(sink / "ran" / "bs-1" / "phy.json")
    assert all(isinstance(v, (int, float)) and not isinstance(v, bool) for _, v in r.fields)


@given(st.lists(st.binary(max_size=2500), min_size=1, max_size=12), st.sampled_from([0, 1, 64, 700]))
def test_uplink_and_downlink_round_trip(payloads, max_pdu):
    ue = UserEquipment("ue", 1, max_pdu=max_pdu)
    bs = BaseStation("bs", probes=False, max_pdu=max_pdu)
    ue.keep = True
    for p in payloads:
        frames = ue.send(p)
        assert len(frames) == (max(1, -(-len(p) // max_pdu)) if max_pdu else 1)
        up = [sdu for f in frames for sdu in bs.receive(f)]
        assert up == [p]
        for f in bs.transmit(1, p):
            ue.receive(f)
    assert ue.received == payloads


def test_segmented_records_per_segment(sink):
    bs = _bs(sink, max_pdu=100)
    fr = bs.dl_tx.process_bitstream(Framer(1, Direction.DOWNLINK, max_pdu=100).frame(bytes(250)))
    assert len(fr.outputs) == 3
    assert bs.dl_tx.processed[Layer.RLC] == 3 and bs.dl_tx.processed[Layer.PHY] == 3
    bs.stop()


def test_probes_do_not_change_bytes(sink):
    rng = random.Random(9)
    payloads = [rng.randbytes(rng.randrange(0, 1500)) for _ in range(200)]
    on, off = _bs(sink, max_pdu=300), BaseStation("bs-1", probes=False, max_pdu=300)
    ue_on, ue_off = UserEquipment("u", 2, max_pdu=300), UserEquipment("u", 2, max_pdu=300)
    a = [f for p in payloads for fr in ue_on.send(p) for f in on.receive(fr)]
    a += [f for p in payloads for f in on.transmit(2, p)]
    b = [f for p in payloads for fr in ue_off.send(p) for f in off.receive(fr)]
    b += [f for p in payloads for f in off.transmit(2, p)]
    assert a == b
    on.stop()


def test_rx_stale_pdcp_is_recorded_not_delivered():
    ue = UserEquipment("ue", 1)
    bs = BaseStation("bs", probes=False)
    f0 = ue.send(b"first")[0]
    assert bs.receive(f0) == [b"first"]
    assert bs.receive(f0) == []  # duplicate SN is stale


def test_pipeline_rejects_bad_mode():
    with pytest.raises(ValueError):
        LayerPipeline("x", "sideways", "uplink")


def test_per_layer_record_count_matches_processed(sink):
    p = Probe("bs-9", ProbeConfig(sink))
    pipe = LayerPipeline("bs-9", "tx", "downlink", p)
    fr = Framer(3, "downlink", max_pdu=50)
    for n in (0, 10, 120, 49, 51):
        pipe.process_bitstream(fr.frame(bytes(n)))
    p.stop()
    for layer in Layer:
        recs = read_record_file(sink / "ran" / "bs-9" / f"{layer.name.lower()}.json")
        assert len(recs) == pipe.processed[layer]
