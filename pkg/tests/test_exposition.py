import concurrent.futures
import math
import random
import urllib.error
import urllib.request

import pytest
from hypothesis import given, strategies as st

from gen import expected_samples, parsed_samples, random_snapshot
from inlinetel.aggregator.expfmt import ParseError, parse_exposition, parse_exposition_full
from inlinetel.exposition import (
    CONTENT_TYPE, BindError, Entry, InvalidSnapshot, NonFiniteValue, probe_source, render, serve,
)
from inlinetel.probe import CounterTable, Probe, ProbeConfig
from inlinetel.telemetry import default_registry

REG = default_registry()


def test_single_counter():
    text = render([Entry(REG.get("amf_reg_reginitsucc"), (), 8)])
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("# HELP amf_reg_reginitsucc ")
    assert lines[1] == "# TYPE amf_reg_reginitsucc counter"
    assert lines[2] == "amf_reg_reginitsucc 8"


def test_empty_snapshot():
    assert render([]) == ""
    assert parse_exposition("") == []


def test_two_series_sorted():
    d = REG.get("amf_ue_connected")
    text = render([Entry(d, (("ne", "amf-1"),), 2), Entry(d, (("ne", "amf-0"),), 1)])
    lines = text.splitlines()
    assert sum(l.startswith("# TYPE") for l in lines) == 1
    assert lines[2:] == ['amf_ue_connected{ne="amf-0"} 1', 'amf_ue_connected{ne="amf-1"} 2']


def test_nonfinite_value():
    with pytest.raises(NonFiniteValue):
        render([Entry(REG.get("amf_ue_connected"), (), math.inf)])


def test_invalid_snapshots():
    d = REG.get("amf_ue_connected")
    with pytest.raises(InvalidSnapshot):
        render([Entry(d, (("ne", "a"),), 1), Entry(d, (("ne", "a"),), 2)])
    with pytest.raises(InvalidSnapshot):
        render([Entry(d, (("__x", "a"),), 1)])


def test_escaping_round_trip():
    d = REG.get("amf_ue_connected")
    v = 'a\\b"c\nd'
    (s,) = parse_exposition(render([Entry(d, (("ne", v),), 1.5, 17)]))
    assert s.labels == (("ne", v),) and s.value == 1.5 and s.timestamp_ms == 17


def test_help_and_type_metadata():
    d = REG.get("amf_ue_connected")
    exp = parse_exposition_full(render([Entry(d, (), 1)]))
    assert exp.types == {"amf_ue_connected": "gauge"}
    assert exp.help["amf_ue_connected"] == d.help


@pytest.mark.parametrize("text,line", [
    ("foo{ 1", 1),
    ("# TYPE a counter\na 1\nb{x=\"1\"} 2 3 4", 3),
    ("ok 1\nbad value", 2),
    ('m{x="unterminated} 1', 1),
    ("# TYPE a widget", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as ei:
        parse_exposition(text)
    assert ei.value.lineno == line


def test_parse_special_values():
    got = parse_exposition("a NaN\nb +Inf\nc -Inf\nd 1e3\n")
    assert math.isnan(got[0].value) and got[1].value == math.inf and got[2].value == -math.inf
    assert got[3].value == 1000.0


@given(st.integers(0, 2**32))
def test_render_parse_round_trip(seed):
    snap = random_snapshot(random.Random(seed))
    assert parsed_samples(parse_exposition(render(snap))) == expected_samples(snap)


def test_render_is_deterministic():
    snap = random_snapshot(random.Random(3))
    assert render(snap) == render(list(reversed(snap)))


@pytest.fixture
def probe(tmp_path):
    p = Probe("amf-0", ProbeConfig(tmp_path))
    p.table.inc("amf_reg_reginitsucc", 8)
    p.table.set("amf_ue_connected", 3)
    return p


def _get(url):
    with urllib.request.urlopen(url, timeout=5) as r:
        return r.status, r.headers["Content-Type"], r.read().decode()


def test_server_serves_parseable_body(probe):
    srv = serve(probe_source(probe))
    try:
        status, ctype, body = _get(srv.url)
        assert status == 200 and ctype == CONTENT_TYPE
        got = {(s.name, s.labels): s.value for s in parse_exposition(body)}
        assert got[("amf_reg_reginitsucc", (("ne", "amf-0"),))] == 8
        assert got[("amf_ue_connected", (("ne", "amf-0"),))] == 3
        assert ("probe_records_enqueued_total", (("ne", "amf-0"),)) in got
    finally:
        srv.stop()


def test_unknown_path_404(probe):
    srv = serve(probe_source(probe))
    try:
        with pytest.raises(urllib.error.HTTPError) as ei:
            _get(srv.url.replace("/metrics", "/unknown"))
        assert ei.value.code == 404
    finally:
        srv.stop()


def test_empty_table_serves_200(tmp_path):
    srv = serve(lambda: [])
    try:
        assert _get(srv.url)[0] == 200
    finally:
        srv.stop()


def test_concurrent_gets_and_monotone_counters(probe):
    srv = serve(probe_source(probe))
    key = ("amf_reg_reginitsucc", (("ne", "amf-0"),))
    try:
        def fetch(_):
            probe.table.inc("amf_reg_reginitsucc")
            return {(s.name, s.labels): s.value for s in parse_exposition(_get(srv.url)[2])}[key]

        with concurrent.futures.ThreadPoolExecutor(16) as ex:
            vals = list(ex.map(fetch, range(50)))
        assert len(vals) == 50 and all(v >= 9 for v in vals)
        seq = [fetch(0) for _ in range(5)]
        assert seq == sorted(seq)
    finally:
        srv.stop()


def test_bind_error(probe):
    srv = serve(probe_source(probe))
    try:
        with pytest.raises(BindError):
            serve(probe_source(probe), port=srv.address[1])
    finally:
        srv.stop()
