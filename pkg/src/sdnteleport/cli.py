"""Command-line entry point: ``sdnteleport <command> ...``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .controller import AdmissionPolicy, Controller, ServiceModel, WhitelistPolicy
from .endpoints import ControllerUnreachable, Receiver, Sender, SwitchAgent
from .harness import measure_delays, run_trial, sweep, write_csv
from .loadgen import LoadProfile, start_load
from .timing import TransitionDelays, validate

log = logging.getLogger("sdnteleport")

UNITS_MS = {"ms": 1.0, "s": 1000.0, "min": 60_000.0}


def _read_message(arg: str) -> str:
    path = Path(arg)
    if path.is_file():
        return path.read_text().rstrip("\n")
    return arg


def cmd_validate(args) -> int:
    kv = cfgmod.load_kv(args.config)
    cfgmod.check_keys(kv)
    channel = cfgmod.channel_from(kv, now_ms=0.0)
    delays = cfgmod.delays_from(kv)
    if delays is None:
        delays = measure_delays(cfgmod.scenario_from(kv, Path(args.config).parent))
    report = validate(channel, delays)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def cmd_trial(args) -> int:
    scenario = cfgmod.load_scenario(args.scenario)
    if args.repetitions:
        scenario = scenario.with_(repetitions=args.repetitions)
    summary = run_trial(scenario)
    for r in summary.results:
        print(f"seed={r.seed} accuracy={r.accuracy:.3f} edit_distance={r.edit_distance} "
              f"termination={r.termination.value} duration_ms={r.duration_ms:.1f} "
              f"flips_0to1={r.flips_0to1} flips_1to0={r.flips_1to0} missed_sof={r.missed_sof}")
    print(f"mean_accuracy={summary.mean_accuracy:.3f} std_accuracy={summary.std_accuracy:.3f} "
          f"n={len(summary.results)}")
    if args.trace:
        with open(args.trace, "w") as fh:
            for r in summary.results:
                for tr in r.sender_traces + r.receiver_traces:
                    fh.write(tr.format() + "\n")
    return 0


def cmd_experiment(args) -> int:
    scenario = cfgmod.load_scenario(args.scenario)
    grid = cfgmod.sweep_from(cfgmod.load_kv(args.sweep))
    jobs = args.jobs or grid.pop("jobs")
    grid.pop("jobs", None)
    rows = sweep(scenario, jobs=jobs, **grid)
    if args.out == "-":
        write_csv(rows, sys.stdout)
    else:
        write_csv(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


async def _controller(args):
    from .realnet import AsyncioRuntime
    rt = AsyncioRuntime()
    whitelist = WhitelistPolicy()
    if args.whitelist:
        whitelist = WhitelistPolicy.parse(Path(args.whitelist).read_text())
    ctrl = Controller(rt, AdmissionPolicy(args.policy), ServiceModel(args.service_ms), whitelist,
                      log_packet_in=not args.quiet_packet_in)
    ctrl.serve(args.listen)
    addr = await ctrl._listener.ready
    print(f"listening on {addr[0]}:{addr[1]}", flush=True)
    shown = 0
    try:
        while args.duration is None or rt.now() < args.start + args.duration * 1000:
            await rt.sleep(100)
            for ev in ctrl.events[shown:]:
                print(ev.format(), flush=True)
            shown = len(ctrl.events)
    finally:
        ctrl.stop()


def cmd_controller(args) -> int:
    import time
    args.start = time.time() * 1000
    try:
        asyncio.run(_controller(args))
    except KeyboardInterrupt:
        pass
    return 0


def _endpoint_setup(args):
    kv = cfgmod.load_kv(args.config)
    cfgmod.check_keys(kv)
    channel = cfgmod.channel_from(kv)
    delays = cfgmod.delays_from(kv) or TransitionDelays()
    address = args.controller or kv.get("controller")
    if not address:
        raise cfgmod.ConfigError("no controller address (use --controller or controller=)")
    return channel, delays, address


async def _send(args):
    from .realnet import AsyncioRuntime
    channel, delays, address = _endpoint_setup(args)
    rt = AsyncioRuntime()
    agent = SwitchAgent(rt, address, channel.dpid, name="sender")
    traces = await Sender(agent, channel, delays).run(_read_message(args.message))
    for tr in traces:
        print(tr.format())


async def _recv(args):
    from .realnet import AsyncioRuntime
    channel, delays, address = _endpoint_setup(args)
    rt = AsyncioRuntime()
    agent = SwitchAgent(rt, address, channel.dpid, name="receiver")
    result = await Receiver(agent, channel, delays).run()
    if args.verbose:
        for tr in result.traces:
            print(tr.format())
    print(f"termination={result.termination.value}")
    print(result.message)


def cmd_send(args) -> int:
    asyncio.run(_send(args))
    return 0


def cmd_recv(args) -> int:
    asyncio.run(_recv(args))
    return 0


async def _loadgen(args):
    from .realnet import AsyncioRuntime
    rt = AsyncioRuntime(seed=args.seed)
    profile = LoadProfile(n_switches=args.switches, rate=args.rate,
                          unit_ms=UNITS_MS[args.unit], seed=args.seed, base_dpid=args.base_dpid)
    gen = start_load(rt, profile, args.controller)
    try:
        await rt.sleep(args.duration * 1000)
    finally:
        gen.stop()
    print(f"sent {gen.total_sent} PacketIns from {profile.n_switches} switches "
          f"({gen.failures} handshake failures)")


def cmd_loadgen(args) -> int:
    asyncio.run(_loadgen(args))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdnteleport",
                                description="DPID admission covert channel toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a channel config against the timing constraints")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("trial", help="run one simulated scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--trace", help="write BitTrace records here")
    s.set_defaults(func=cmd_trial)

    s = sub.add_parser("experiment", help="run a simulated parameter sweep to CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--sweep", required=True)
    s.add_argument("--out", default="results.csv")
    s.add_argument("--jobs", type=int, default=0)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("controller", help="run the reference controller on a TCP port")
    s.add_argument("--listen", default="127.0.0.1:6653")
    s.add_argument("--policy", default="deny-second", choices=[a.value for a in AdmissionPolicy])
    s.add_argument("--whitelist")
    s.add_argument("--service-ms", type=float, default=0.0)
    s.add_argument("--duration", type=float, help="seconds to run (default: forever)")
    s.add_argument("--quiet-packet-in", action="store_true")
    s.set_defaults(func=cmd_controller)

    for name, fn, helptext in (("send", cmd_send, "transmit a message over real sockets"),
                               ("recv", cmd_recv, "receive a message over real sockets")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--controller")
        if name == "send":
            s.add_argument("--message", required=True, help="literal text or a file path")
        s.set_defaults(func=fn)

    s = sub.add_parser("loadgen", help="emulate PacketIn-generating switches")
    s.add_argument("--controller", required=True)
    s.add_argument("--switches", type=int, default=20)
    s.add_argument("--lambda", dest="rate", type=float, default=1.0)
    s.add_argument("--unit", choices=sorted(UNITS_MS), default="s")
    s.add_argument("--duration", type=float, default=60.0, help="seconds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--base-dpid", type=lambda v: int(v, 0), default=0x1000)
    s.set_defaults(func=cmd_loadgen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, OSError, ControllerUnreachable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
