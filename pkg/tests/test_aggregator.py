import json
import random
import urllib.error
import urllib.parse
import urllib.request

import pytest
from hypothesis import given, strategies as st

from oracles import NS, oracle_avg, oracle_increase, oracle_rate, rel_close, synthetic_counter
from inlinetel.aggregator.query import GrammarError, QueryError, parse_duration, parse_query, query_instant, \
    query_range
from inlinetel.aggregator.scrape import ConfigError, ScrapeConfig, Scraper, scrape_once, target_offset
from inlinetel.aggregator.service import Aggregator, DataService
from inlinetel.aggregator.store import OutOfOrder, TimeSeriesStore, counter_increase
from inlinetel.aggregator.tabular import Feature, ShapeError, TabularDataset, build_tabular
from inlinetel.exposition import serve
from inlinetel.probe import Probe, ProbeConfig
from inlinetel.exposition import probe_source


def counter_store(points, name="c", labels=()):
    st_ = TimeSeriesStore()
    for t, v in points:
        st_.append(name, labels, t, v, "counter")
    return st_


# store

def test_strictly_increasing_timestamps():
    s = TimeSeriesStore()
    s.append("g", (), 10, 1.0)
    with pytest.raises(OutOfOrder):
        s.append("g", (), 10, 2.0)


def test_reset_detected():
    s = counter_store([(1, 5.0), (2, 7.0), (3, 1.0)])
    assert s.get("c", ()).resets == [3]


def test_counter_increase_examples():
    assert counter_increase([0, 600]) == 600
    assert counter_increase([100, 20]) == 20
    assert counter_increase([1, 4, 2, 3]) == 3 + 2 + 1


def test_snapshot_file_reload(tmp_path):
    p = tmp_path / "store.jsonl"
    s = TimeSeriesStore(p)
    s.append("g", (("a", "1"),), 1, 1.5, "gauge")
    s.append_many([("g", (("a", "1"),), 2.5), ("c", (), 3.0)], 2, {"c": "counter"})
    s.close()
    r = TimeSeriesStore.load_snapshot(p)
    assert r.get("g", (("a", "1"),)).values == [1.5, 2.5]
    assert r.get("c", ()).kind == "counter"


# query

def test_instant_last_value():
    s = TimeSeriesStore()
    s.append("m", (), 100, 7.0)
    assert query_instant(s, "m", 105) == [((("__name__", "m"),), 7.0)]


def test_instant_staleness():
    s = TimeSeriesStore()
    s.append("m", (), 1, 7.0)
    assert query_instant(s, "m", 1 + 10 * NS, staleness_ns=5 * NS) == []


def test_rate_hand_example():
    s = counter_store([(0 * NS + 1, 0.0), (60 * NS + 1, 600.0)])
    assert query_instant(s, "rate(c[60s])", 60 * NS + 1) == [((), 10.0)]


def test_increase_across_reset():
    s = counter_store([(1, 100.0), (60 * NS + 1, 20.0)])
    assert query_instant(s, "increase(c[60s])", 60 * NS + 1) == [((), 20.0)]


def test_unknown_metric_is_empty():
    assert query_instant(TimeSeriesStore(), "nope", 10) == []


def test_matchers_and_binops():
    s = TimeSeriesStore()
    s.append("m", (("ne", "a"),), 1, 2.0)
    s.append("m", (("ne", "b"),), 1, 4.0)
    assert query_instant(s, 'm{ne="b"} * 10', 1) == [((("ne", "b"),), 40.0)]
    assert query_instant(s, 'm{ne!="b"} / 2 - 1', 1) == [((("ne", "a"),), 0.0)]
    assert query_instant(s, 'm{ne=~"a|b"}', 1)[1][1] == 4.0
    assert query_instant(s, "2 + 3 * 4", 1) == [((), 14.0)]


@pytest.mark.parametrize("expr", ["rate(m)", "m{", "m[5s]", "foo(m[1s])", "m +", "", "m{a=b}", "1 2"])
def test_grammar_errors(expr):
    with pytest.raises(GrammarError):
        parse_query(expr)


def test_vector_vector_rejected():
    s = TimeSeriesStore()
    s.append("m", (), 1, 2.0)
    with pytest.raises(QueryError):
        query_instant(s, "m + m", 1)


def test_parse_duration():
    assert parse_duration("1.5s") == int(1.5 * NS)
    assert parse_duration("2m") == 120 * NS
    with pytest.raises(GrammarError):
        parse_duration("5x")


def test_query_range_steps():
    s = TimeSeriesStore()
    for i in range(10):
        s.append("g", (), (i + 1) * NS, float(i))
    m = query_range(s, "g", NS, 10 * NS, 3 * NS)
    assert [v for _, v in m[(("__name__", "g"),)]] == [0.0, 3.0, 6.0, 9.0]


@given(st.integers(0, 2**32), st.sampled_from([5, 10, 30, 60]))
def test_query_functions_match_oracle(seed, wsec):
    rng = random.Random(seed)
    pts = synthetic_counter(rng, n=80)
    s = counter_store(pts)
    w = wsec * NS
    for t in [pts[k][0] + d for k in rng.sample(range(len(pts)), 8) for d in (0, NS // 3)]:
        for fn, ref in (("rate", oracle_rate), ("increase", oracle_increase), ("avg_over_time", oracle_avg)):
            got = query_instant(s, f"{fn}(c[{wsec}s])", t)
            exp = ref(pts, t, w)
            if exp is None:
                assert got == []
            else:
                assert len(got) == 1 and rel_close(got[0][1], exp)


def test_query_determinism():
    pts = synthetic_counter(random.Random(1))
    s = counter_store(pts)
    t = pts[-1][0]
    assert query_instant(s, "rate(c[30s])", t) == query_instant(s, "rate(c[30s])", t)


# tabular

def test_tabular_constant_gauge():
    s = TimeSeriesStore()
    for i in range(30):
        s.append("g", (), i * NS + 1, 5.0, "gauge")
    ds = build_tabular(s, [{"expr": "g", "agg": "mean"}], 30 * NS, 10 * NS, 30 * NS + 1)
    assert ds.rows == [[5.0], [5.0], [5.0]]


def test_tabular_counter_increase_per_interval():
    s = TimeSeriesStore()
    for i in range(31):
        s.append("c", (), i * NS, float(i), "counter")  # +1/s; intervals start at 1 s so each has a base
    ds = build_tabular(s, [{"expr": "c", "agg": "increase"}, {"expr": "c", "agg": "rate"}],
                       "30s", "10s", 31 * NS)
    assert (ds.n, ds.m) == (3, 2)
    assert [r[0] for r in ds.rows] == [10.0, 10.0, 10.0]
    assert [r[1] for r in ds.rows] == [1.0, 1.0, 1.0]


def test_tabular_carry_forward():
    s = TimeSeriesStore()
    s.append("g", (), 1, 3.0)
    s.append("g", (), 25 * NS, 9.0)
    ds = build_tabular(s, [Feature("g", "g", "last")], 30 * NS, 10 * NS, 30 * NS)
    assert ds.rows == [[3.0], [3.0], [9.0]]
    assert ds.missing == [[False], [True], [False]]


def test_tabular_unmatched_feature():
    ds = build_tabular(TimeSeriesStore(), [{"expr": "none"}], 20 * NS, 10 * NS, 100 * NS)
    assert ds.rows == [[None], [None]] and ds.unmatched == ["mean(none)"]


@pytest.mark.parametrize("T,dt,feats", [(25, 10, [{"expr": "g"}]), (30, 10, []), (30, 0, [{"expr": "g"}]),
                                        (30, 10, [{"expr": "g", "agg": "median"}])])
def test_tabular_shape_errors(T, dt, feats):
    with pytest.raises(QueryError):
        build_tabular(TimeSeriesStore(), feats, T * NS, dt * NS, 100 * NS)


@given(st.integers(1, 12), st.integers(1, 5), st.integers(1, 4))
def test_tabular_always_rectangular(n, dtsec, m):
    s = TimeSeriesStore()
    for i in range(0, n * dtsec, 2):
        s.append("g", (), i * NS + 1, float(i))
    feats = [{"name": f"f{j}", "expr": "g", "agg": a} for j, a in zip(range(m), ["mean", "last", "rate", "increase"])]
    ds = build_tabular(s, feats, n * dtsec * NS, dtsec * NS, n * dtsec * NS)
    assert len(ds.rows) == ds.n == n and all(len(r) == m for r in ds.rows)
    assert ds.n * ds.dt_ns == ds.T_ns


def test_dataset_json_round_trip():
    s = TimeSeriesStore()
    for i in range(10):
        s.append("g", (), i * NS, float(i))
    ds = build_tabular(s, [{"expr": "g"}], "10s", "5s", 10 * NS)
    back = TabularDataset.from_json(json.loads(json.dumps(ds.to_json())))
    assert back.rows == ds.rows and back.columns == ds.columns and back.n == 2


# scrape

def test_scrape_config_validation():
    with pytest.raises(ConfigError):
        ScrapeConfig(["http://x/metrics"], 1.0, 2.0)
    with pytest.raises(ConfigError):
        ScrapeConfig(["ftp://x"], 2.0, 1.0)


@pytest.fixture
def target(tmp_path):
    p = Probe("amf-0", ProbeConfig(tmp_path))
    srv = serve(probe_source(p))
    yield p, srv
    srv.stop()


def test_scrape_healthy_and_increments(target):
    p, srv = target
    s = TimeSeriesStore()
    r = scrape_once(s, srv.url, ts_ns=NS)
    assert r.ok and r.samples > 0
    inst = srv.url.split("/")[2]
    assert s.get("up", (("instance", inst),)).values == [1.0]
    p.table.inc("amf_reg_reginitsucc", 1)
    scrape_once(s, srv.url, ts_ns=2 * NS)
    p.table.inc("amf_reg_reginitsucc", 5)
    scrape_once(s, srv.url, ts_ns=3 * NS)
    ser = s.get("amf_reg_reginitsucc", (("instance", inst), ("ne", "amf-0")))
    assert ser.kind == "counter" and ser.values[-1] - ser.values[-2] == 5


def test_scrape_dead_target():
    s = TimeSeriesStore()
    r = scrape_once(s, "http://127.0.0.1:9/metrics", timeout=0.5, ts_ns=NS)
    assert not r.ok and r.reason
    assert s.names() == ["up"] and s.series_for("up")[0].values == [0.0]


def test_scraper_thread(target):
    _, srv = target
    s = TimeSeriesStore()
    sc = Scraper(s, ScrapeConfig([srv.url], 0.05, 0.04)).start()
    import time
    time.sleep(0.3)
    sc.stop()
    assert len(s.series_for("up")[0]) >= 3


@given(st.integers(1, 65535), st.floats(0.01, 60.0))
def test_target_offset_in_phase(port, interval):
    url = f"http://127.0.0.1:{port}/metrics"
    off = target_offset(url, interval)
    assert 0.0 <= off < interval and off == target_offset(url, interval)


def test_target_offsets_spread():
    offs = {round(target_offset(f"http://127.0.0.1:{9000 + i}/metrics", 1.0), 3) for i in range(12)}
    assert len(offs) >= 10


# data service

def _http(url, body=None):
    req = urllib.request.Request(url, data=body, method="POST" if body is not None else "GET")
    try:
        with urllib.request.urlopen(req, timeout=5) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


@pytest.fixture
def service():
    s = TimeSeriesStore()
    for i in range(31):
        s.append("c", (("ne", "upf-0"),), i * NS, 10.0 * i, "counter")
        s.append("g", (), i * NS, 4.0, "gauge")
    svc = DataService(s).start()
    yield svc
    svc.stop()


def test_service_instant_and_range(service):
    q = urllib.parse.urlencode({"query": "rate(c[10s])", "time": 30_000})
    code, body = _http(f"{service.url}/api/v1/query?{q}")
    assert code == 200 and float(body["data"]["result"][0]["value"][1]) == 10.0
    q = urllib.parse.urlencode({"query": "g", "start": 10_000, "end": 20_000, "step": "5s"})
    code, body = _http(f"{service.url}/api/v1/query_range?{q}")
    assert code == 200 and len(body["data"]["result"][0]["values"]) == 3


def test_service_tabular_shape(service):
    req = {"features": [{"expr": "c", "agg": "rate"}, {"expr": "c", "agg": "increase"}, {"expr": "g"}],
           "T": 20, "dt": 2, "end": 30_000}
    code, body = _http(f"{service.url}/api/v1/tabular", json.dumps(req).encode())
    d = body["data"]
    assert code == 200 and d["n"] == 10 and len(d["rows"]) == 10 and all(len(r) == 3 for r in d["rows"])
    assert all(r == [10.0, 20.0, 4.0] for r in d["rows"])


@pytest.mark.parametrize("path,body", [
    ("/api/v1/query?query=rate(", None),
    ("/api/v1/tabular", b'{"features": [{"expr": "g"}], "T": 25, "dt": 10}'),
    ("/api/v1/tabular", b"not json"),
    ("/api/v1/tabular", b'{"T": 10}'),
])
def test_service_400(service, path, body):
    code, obj = _http(service.url + path, body)
    assert code == 400 and obj["status"] == "error" and obj["error"]


def test_aggregator_end_to_end(target):
    _, srv = target
    agg = Aggregator(ScrapeConfig([srv.url], 0.05, 0.04)).start()
    import time
    time.sleep(0.3)
    try:
        code, body = _http(f"{agg.url}/api/v1/query?query=up")
        assert code == 200 and body["data"]["result"][0]["value"][1] == "1"
    finally:
        agg.stop()
