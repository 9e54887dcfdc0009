"""Scripted CN scenarios with ground-truth KPI counts.

A script is JSON::

    {"subscribers": [{"supi": "imsi-001", "auth": true, "reachable": true}, ...],
     "actions": [{"at_ms": 0, "action": "register", "params": {"supi": "imsi-001"}}, ...],
     "expect": {"amf_reg_reginitsucc": 8, ...}}

A bare list of actions is accepted too (no subscribers, no expectations).
The generators below compute ``expect`` with :class:`ReferenceModel`, a
straight-line model of the services that shares no code with the NFs.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import CoreNetwork

ACTIONS = {
    "register": ("amf", "registration"),
    "deregister": ("amf", "deregistration"),
    "release": ("amf", "release"),
    "service_request": ("amf", "service_request"),
    "paging": ("amf", "paging"),
    "pdu_create": ("smf", "pdu_session_create"),
    "pdu_release": ("smf", "pdu_session_release"),
    "downlink_data": ("upf", "n4_session_report"),
    "request": (None, None),  # raw request: params carry nf, service, payload
}

COUNTER_KPIS = (
    "amf_reg_reginitreq", "amf_reg_reginitsucc", "amf_reg_reginitfail", "amf_reg_deregreq",
    "amf_reg_deregsucc", "amf_conn_servicereqsucc", "amf_conn_sbireqfail", "amf_reach_pagingreq",
    "amf_reach_pagingsucc", "amf_reach_pagingfail",
    "smf_pdu_pdusession_creationreq", "smf_pdu_pdusession_creationsucc", "smf_pdu_pdusession_creationfail",
    "smf_pdu_pdusession_releasereq", "smf_pdu_pdusession_releasesucc", "smf_pdu_pdusession_releasefail",
    "smf_pdu_sbireqfail", "smf_gtp_tunnel_creationsucc", "smf_gtp_tunnel_creationfail",
    "smf_gtp_tunnel_releasesucc", "smf_dl_manage_rrcidle_ues", "smf_dl_manage_notifysucc",
    "upf_n4_sessionestabsucc", "upf_n4_sessiondelsucc", "upf_n4_sessionreportsucc", "upf_n4_sbireqfail",
)
GAUGE_KPIS = ("amf_ue_connected", "amf_ue_idle", "smf_pdu_pdusession_active", "smf_gtp_tunnel_active",
              "smf_pdu_ipv4_allocated", "upf_n4_session_active")


class ScriptParseError(ValueError):
    pass


@dataclass
class Action:
    at_ms: float
    action: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"at_ms": self.at_ms, "action": self.action, "params": self.params}


@dataclass
class ScenarioScript:
    actions: list[Action] = field(default_factory=list)
    subscribers: list[dict] = field(default_factory=list)
    expect: dict[str, float] = field(default_factory=dict)
    name: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "subscribers": self.subscribers,
                "actions": [a.to_json() for a in self.actions], "expect": self.expect}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def parse_script(src) -> ScenarioScript:
    """From a dict, a list of actions, JSON text or a path."""
    if isinstance(src, ScenarioScript):
        return src
    if isinstance(src, Path) or (isinstance(src, str) and not src.lstrip().startswith(("{", "["))):
        try:
            src = Path(src).read_text()
        except OSError as exc:
            raise ScriptParseError(str(exc)) from None
    if isinstance(src, (str, bytes)):
        try:
            src = json.loads(src)
        except json.JSONDecodeError as exc:
            raise ScriptParseError(f"invalid JSON: {exc}") from None
    if isinstance(src, list):
        src = {"actions": src}
    if not isinstance(src, dict):
        raise ScriptParseError("script must be an object or a list of actions")
    actions = []
    for i, a in enumerate(src.get("actions", [])):
        if not isinstance(a, dict) or "action" not in a:
            raise ScriptParseError(f"action {i}: needs an 'action' key")
        if a["action"] not in ACTIONS:
            raise ScriptParseError(f"action {i}: unknown action {a['action']!r}")
        try:
            at = float(a.get("at_ms", 0))
        except (TypeError, ValueError):
            raise ScriptParseError(f"action {i}: bad at_ms") from None
        if at < 0:
            raise ScriptParseError(f"action {i}: negative at_ms")
        params = a.get("params", {})
        if not isinstance(params, dict):
            raise ScriptParseError(f"action {i}: params must be an object")
        if a["action"] == "request" and ("nf" not in params or "service" not in params):
            raise ScriptParseError(f"action {i}: raw request needs params.nf and params.service")
        actions.append(Action(at, a["action"], params))
    # Stable sort keeps script order for equal timestamps.
    actions.sort(key=lambda a: a.at_ms)
    subs = src.get("subscribers", [])
    subs = [{"supi": s} if isinstance(s, str) else dict(s) for s in subs]
    supis = [s.get("supi") for s in subs]
    if None in supis or len(set(supis)) != len(supis):
        raise ScriptParseError("subscribers need unique 'supi' values")
    expect = src.get("expect", {})
    if not isinstance(expect, dict):
        raise ScriptParseError("expect must be an object")
    return ScenarioScript(actions, subs, expect, src.get("name", ""))


@dataclass
class ScenarioReport:
    name: str
    ground_truth: dict[str, float]
    observed: dict[str, float]
    responses: list[dict] = field(default_factory=list)
    response_bytes: list[bytes] = field(default_factory=list)
    records: int = 0

    @property
    def mismatches(self) -> dict[str, tuple]:
        return {k: (v, self.observed.get(k)) for k, v in self.ground_truth.items()
                if self.observed.get(k) != v}

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return {"name": self.name, "ground_truth": self.ground_truth, "observed": self.observed,
                "mismatches": {k: list(v) for k, v in self.mismatches.items()},
                "responses": self.responses, "records": self.records}


def _resolve(core: CoreNetwork, action: Action) -> tuple[str, str, dict]:
    nf_key, service = ACTIONS[action.action]
    p = dict(action.params)
    if nf_key is None:
        nf = {"amf": core.amf.name, "smf": core.smf.name, "upf": core.upf.name}.get(p["nf"], p["nf"])
        return nf, p["service"], dict(p.get("payload", {}))
    nf = getattr(core, nf_key).name
    if action.action == "downlink_data" and "seid" not in p:
        p = {"seid": f"{p.get('supi', '')}/{int(p.get('psi', 1))}"}
    return nf, service, p


def run_scenario(script, core: CoreNetwork | None = None, sink_dir: str | Path | None = None,
                 probes: bool = True, realtime: bool = False, speed: float = 1.0) -> ScenarioReport:
    """Execute a script against a (new or given) core and compare counters.

    With ``realtime`` the actions are paced by ``at_ms / speed``; otherwise
    they run back to back in script order.
    """
    sc = parse_script(script)
    own = core is None
    if own:
        core = CoreNetwork(sink_dir, probes=probes).start()
    core.amf.provision(sc.subscribers)
    responses, raw = [], []
    t0 = time.monotonic()
    try:
        for a in sc.actions:
            if realtime:
                delay = a.at_ms / 1000.0 / speed - (time.monotonic() - t0)
                if delay > 0:
                    time.sleep(delay)
            nf, service, payload = _resolve(core, a)
            rsp = core.request(nf, service, payload)
            raw.append(rsp.to_bytes())
            responses.append({"action": a.action, "result": rsp.result, "status": rsp.status})
    finally:
        if own:
            core.stop()
        else:
            core.quiesce()
    observed = {k: core.counters().get(k) for k in sc.expect} if core.probes else {}
    records = sum(c.records_written for p in core.probes.values() for c in p.collectors.values())
    return ScenarioReport(sc.name, dict(sc.expect), observed, responses, raw, records)


class ReferenceModel:
    """Independent bookkeeping of what each action should do to the KPIs."""

    def __init__(self, subscribers) -> None:
        self.subs = {s["supi"]: s for s in subscribers}
        self.ues: dict[str, str] = {}
        self.sessions: set[str] = set()
        self.c = {k: 0 for k in COUNTER_KPIS}

    def gauges(self) -> dict[str, int]:
        conn = sum(1 for v in self.ues.values() if v == "CONNECTED")
        return {"amf_ue_connected": conn, "amf_ue_idle": len(self.ues) - conn,
                "smf_pdu_pdusession_active": len(self.sessions), "smf_gtp_tunnel_active": len(self.sessions),
                "smf_pdu_ipv4_allocated": len(self.sessions), "upf_n4_session_active": len(self.sessions)}

    def expect(self) -> dict[str, float]:
        return {**{k: float(v) for k, v in self.c.items()}, **{k: float(v) for k, v in self.gauges().items()}}

    def _page(self, supi: str) -> bool:
        c = self.c
        c["amf_reach_pagingreq"] += 1
        state = self.ues.get(supi)
        ok = state == "CONNECTED" or (state == "IDLE" and self.subs.get(supi, {}).get("reachable", True))
        if ok:
            self.ues[supi] = "CONNECTED"
            c["amf_reach_pagingsucc"] += 1
        else:
            c["amf_reach_pagingfail"] += 1
        return ok

    def apply(self, action: str, p: dict) -> None:
        c = self.c
        supi = p.get("supi")
        seid = f"{supi}/{int(p.get('psi', 1))}"
        if action == "register":
            c["amf_reg_reginitreq"] += 1
            s = self.subs.get(supi)
            if s is not None and s.get("auth", True):
                self.ues[supi] = "CONNECTED"
                c["amf_reg_reginitsucc"] += 1
            else:
                c["amf_reg_reginitfail"] += 1
        elif action == "deregister":
            c["amf_reg_deregreq"] += 1
            if supi in self.ues:
                del self.ues[supi]
                c["amf_reg_deregsucc"] += 1
        elif action == "release":
            if self.ues.get(supi) == "CONNECTED":
                self.ues[supi] = "IDLE"
        elif action == "service_request":
            if supi in self.ues:
                self.ues[supi] = "CONNECTED"
                c["amf_conn_servicereqsucc"] += 1
        elif action == "paging":
            self._page(supi)
        elif action == "pdu_create":
            c["smf_pdu_pdusession_creationreq"] += 1
            if supi in self.ues and seid not in self.sessions:
                self.sessions.add(seid)
                c["smf_gtp_tunnel_creationsucc"] += 1
                c["upf_n4_sessionestabsucc"] += 1
                c["smf_pdu_pdusession_creationsucc"] += 1
            else:
                c["smf_pdu_pdusession_creationfail"] += 1
        elif action == "pdu_release":
            c["smf_pdu_pdusession_releasereq"] += 1
            if seid in self.sessions:
                self.sessions.discard(seid)
                c["smf_gtp_tunnel_releasesucc"] += 1
                c["upf_n4_sessiondelsucc"] += 1
                c["smf_pdu_pdusession_releasesucc"] += 1
            else:
                c["smf_pdu_pdusession_releasefail"] += 1
        elif action == "downlink_data":
            if seid not in self.sessions:
                return
            owner = seid.rsplit("/", 1)[0]
            if owner not in self.ues:
                return
            ok = True
            if self.ues[owner] == "IDLE":
                c["smf_dl_manage_rrcidle_ues"] += 1
                ok = self._page(owner)
            if ok:
                c["smf_dl_manage_notifysucc"] += 1
                c["upf_n4_sessionreportsucc"] += 1
        elif action == "request":
            key = {"amf": "amf_conn_sbireqfail", "smf": "smf_pdu_sbireqfail", "upf": "upf_n4_sbireqfail"}
            if p["nf"] in key and p["service"] not in _KNOWN_SERVICES[p["nf"]]:
                c[key[p["nf"]]] += 1
            elif p["nf"] in key:
                raise ValueError("the reference model only covers unknown-service raw requests")


_KNOWN_SERVICES = {
    "amf": {"registration", "deregistration", "release", "service_request", "paging", "ue_context"},
    "smf": {"pdu_session_create", "pdu_session_release", "downlink_notification"},
    "upf": {"n4_session_establish", "n4_session_delete", "n4_session_report"},
}


def _finish(name: str, subs: list[dict], actions: list[Action]) -> ScenarioScript:
    model = ReferenceModel(subs)
    for a in actions:
        model.apply(a.action, a.params)
    return ScenarioScript(actions, subs, model.expect(), name)


def _subscribers(rng: random.Random, n: int, p_auth_fail: float = 0.0,
                 p_unreachable: float = 0.0) -> list[dict]:
    return [{"supi": f"imsi-00101{i:010d}", "auth": rng.random() >= p_auth_fail,
             "reachable": rng.random() >= p_unreachable} for i in range(n)]


def registration_burst(n: int = 10, failures: int = 2, seed: int = 0) -> ScenarioScript:
    """``n`` registrations of which exactly ``failures`` are rejected."""
    rng = random.Random(seed)
    subs = _subscribers(rng, n)
    for s in rng.sample(subs, failures):
        s["auth"] = False
    actions = [Action(i * 10.0, "register", {"supi": s["supi"]}) for i, s in enumerate(subs)]
    return _finish("registration_burst", subs, actions)


def pdu_sessions(n_ues: int = 5, seed: int = 0) -> ScenarioScript:
    """Register UEs, open one session each, re-open one (fails), release two."""
    rng = random.Random(seed)
    subs = _subscribers(rng, n_ues)
    acts = [Action(0, "register", {"supi": s["supi"]}) for s in subs]
    acts += [Action(100, "pdu_create", {"supi": s["supi"], "psi": 1}) for s in subs]
    acts.append(Action(150, "pdu_create", {"supi": subs[0]["supi"], "psi": 1}))
    acts.append(Action(160, "pdu_create", {"supi": "imsi-unknown", "psi": 1}))
    for s in rng.sample(subs, min(2, n_ues)):
        acts.append(Action(200, "pdu_release", {"supi": s["supi"], "psi": 1}))
    acts.append(Action(250, "pdu_release", {"supi": subs[0]["supi"], "psi": 9}))
    return _finish("pdu_sessions", subs, acts)


def paging_scenario(n_ues: int = 6, seed: int = 0) -> ScenarioScript:
    """Idle UEs receive downlink data; some are unreachable."""
    rng = random.Random(seed)
    subs = _subscribers(rng, n_ues)
    for s in subs[: max(1, n_ues // 3)]:
        s["reachable"] = False
    acts = [Action(0, "register", {"supi": s["supi"]}) for s in subs]
    acts += [Action(10, "pdu_create", {"supi": s["supi"], "psi": 1}) for s in subs]
    acts += [Action(20, "release", {"supi": s["supi"]}) for s in subs[: n_ues - 1]]
    acts += [Action(30, "downlink_data", {"supi": s["supi"], "psi": 1}) for s in subs]
    acts += [Action(40, "paging", {"supi": s["supi"]}) for s in subs]
    acts.append(Action(50, "paging", {"supi": "imsi-nobody"}))
    return _finish("paging", subs, acts)


def unknown_services(seed: int = 0) -> ScenarioScript:
    subs = _subscribers(random.Random(seed), 2)
    acts = [Action(0, "register", {"supi": subs[0]["supi"]}),
            Action(1, "request", {"nf": "amf", "service": "bogus"}),
            Action(2, "request", {"nf": "smf", "service": "bogus"}),
            Action(3, "request", {"nf": "upf", "service": "nonsense"}),
            Action(4, "request", {"nf": "amf", "service": "handover"})]
    return _finish("unknown_services", subs, acts)


def random_mix(n_actions: int = 300, n_ues: int = 12, seed: int = 0) -> ScenarioScript:
    """Seeded random walk over every action type."""
    rng = random.Random(seed)
    subs = _subscribers(rng, n_ues, p_auth_fail=0.15, p_unreachable=0.25)
    pool = [s["supi"] for s in subs] + ["imsi-stranger"]
    weights = {"register": 4, "deregister": 1, "release": 2, "service_request": 1, "paging": 1,
               "pdu_create": 3, "pdu_release": 2, "downlink_data": 2, "request": 0.3}
    names = list(weights)
    acts = []
    for i in range(n_actions):
        a = rng.choices(names, weights=[weights[k] for k in names])[0]
        if a == "request":
            params = {"nf": rng.choice(["amf", "smf", "upf"]), "service": rng.choice(["bogus", "x2", "echo"])}
        else:
            params = {"supi": rng.choice(pool)}
            if a.startswith("pdu") or a == "downlink_data":
                params["psi"] = rng.choice([1, 1, 2])
        acts.append(Action(float(i * 5), a, params))
    return _finish(f"random_mix_{seed}", subs, acts)


def suite(seed: int = 0) -> list[ScenarioScript]:
    """The scenarios the counter-exactness check runs."""
    return [registration_burst(10, 2, seed), pdu_sessions(5, seed), paging_scenario(6, seed),
            unknown_services(seed), random_mix(300, 12, seed), random_mix(300, 8, seed + 1)]
