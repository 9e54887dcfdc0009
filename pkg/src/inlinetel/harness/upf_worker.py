"""One UPF variant in its own process, fed G-PDUs over UDP.

Variants: ``plain`` (no telemetry), ``inline`` (probes on), ``dpi`` (probes
off, out-of-band capture on). The worker attaches two UEs through its own
AMF/SMF, prints ``READY <port> <ul_teid> <src_ip> <dst_ip>`` and forwards
every datagram it receives until it gets ``STOP``, then prints a JSON stats
line and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys

from ..cn import CoreNetwork
from ..cn.gtp import GTPU_PORT, ip_to_int
from ..dpi import DpiCapture
from ..probe import ProbeConfig

VARIANTS = ("plain", "inline", "dpi")
STOP = b"STOP"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="inlinetel-upf-worker")
    ap.add_argument("--variant", choices=VARIANTS, required=True)
    ap.add_argument("--sink", required=True)
    ap.add_argument("--flush-interval", type=float, default=1.0)
    ap.add_argument("--host", default="127.0.0.1")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    pcfg = ProbeConfig(args.sink, flush_interval=args.flush_interval)
    core = CoreNetwork(args.sink, probes=args.variant == "inline", probe_config=pcfg).start()
    dpi = None
    if args.variant == "dpi":
        dpi = DpiCapture(core.upf.name, args.sink, interval=args.flush_interval, keep_records=False)
        core.upf.capture = dpi
        dpi.start()
    ues = ("imsi-1", "imsi-2")
    core.amf.provision(list(ues))
    sess = {}
    for ue in ues:
        core.request("amf-0", "registration", {"supi": ue})
        rsp = core.request("smf-0", "pdu_session_create", {"supi": ue, "psi": 1})
        if not rsp.ok:
            print(f"ERROR attach {ue}: {rsp.cause}", flush=True)
            return 1
        sess[ue] = rsp.body

    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 << 20)
    rx.bind((args.host, 0))
    tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    # N3 egress towards the downlink base station; nobody listens, the send is the cost.
    egress = (args.host, GTPU_PORT)
    src, dst = sess[ues[0]], sess[ues[1]]
    print(f"READY {rx.getsockname()[1]} {src['ul_teid']} {ip_to_int(src['ue_ip'])} {ip_to_int(dst['ue_ip'])}",
          flush=True)

    forward = core.upf.forward
    received = forwarded = 0
    while True:
        data = rx.recv(65535)
        if data == STOP:
            break
        received += 1
        out = forward(data)
        if out.packet is not None:
            forwarded += 1
            try:
                tx.sendto(out.packet, egress)
            except OSError:
                pass
    core.stop()
    stats = {"variant": args.variant, "received": received, "forwarded": forwarded}
    if dpi is not None:
        dpi.stop()
        stats.update(dpi.stats())
    print(json.dumps(stats), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
