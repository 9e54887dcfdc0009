"""Simulated core network: AMF, SMF and UPF on an in-process SBI bus."""

from .amf import Amf
from .core import CoreNetwork
from .gtp import GtpPacket, GtpParseError, decode_gpdu, encode_gpdu
from .nf import NetworkFunction, NfState, SubfunctionSpec, SubResult
from .sbi import SbiBus, SbiRequest, SbiResponse
from .scenario import ScenarioReport, ScenarioScript, ScriptParseError, parse_script, run_scenario
from .smf import Smf
from .upf import ForwardOutcome, Upf, upf_forward

__all__ = [
    "Amf", "CoreNetwork", "ForwardOutcome", "GtpPacket", "GtpParseError", "NetworkFunction", "NfState",
    "SbiBus", "SbiRequest", "SbiResponse", "ScenarioReport", "ScenarioScript", "ScriptParseError", "Smf",
    "SubResult", "SubfunctionSpec", "Upf", "decode_gpdu", "encode_gpdu", "parse_script", "run_scenario",
    "upf_forward",
]
