import pytest

from sdnteleport.controller import Controller
from sdnteleport.endpoints import (BitTrace, ReceiverState as R, SenderState as S, Receiver,
                                   Sender, SwitchAgent, Termination, check_conformance)
from sdnteleport.harness import Scenario, run_once
from sdnteleport.simnet import LatencyModel, Simulation
from sdnteleport.timing import ChannelConfig, TransitionDelays

FIXED = LatencyModel(base_ms=0.5, jitter=None)
DELAYS = TransitionDelays(sc=2.2, dc=0, ofdeny=1.2, chkconn=0)


def transfer(message, cfg, sender=True):
    sim = Simulation(latency=FIXED)
    Controller(sim).serve("c")
    rx = Receiver(SwitchAgent(sim, "c", cfg.dpid, name="r"), cfg, DELAYS)
    tasks = [sim.spawn(rx.run())]
    tx = None
    if sender:
        tx = Sender(SwitchAgent(sim, "c", cfg.dpid, name="s"), cfg, DELAYS)
        tasks.append(sim.spawn(tx.run(message)))
    sim.run(*tasks)
    return tasks[0].result(), tx


def test_single_char_end_to_end():
    cfg = ChannelConfig(start_time_ms=1000)
    result, tx = transfer("A", cfg)
    assert result.message == "A"
    assert result.termination is Termination.EOM
    assert [str(f) for f in result.frames] == ["1|1000001", "1|0000000"]
    assert [t.bit for t in tx.traces] == [1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    assert [t.bit for t in result.traces] == [t.bit for t in tx.traces]
    assert not check_conformance(tx.traces, "s")
    assert not check_conformance(result.traces, "r")
    # frames start on whole seconds
    assert tx.frame_starts == [1000, 2000]


def test_anchored_mode_also_works():
    cfg = ChannelConfig(start_time_ms=1000, sync="anchored", fl=14)
    result, _ = transfer("ok", cfg)
    assert result.message == "ok" and result.termination is Termination.EOM


def test_no_sender_hits_missed_frame_threshold():
    cfg = ChannelConfig(start_time_ms=1000, missed_frame_threshold=3)
    result, _ = transfer("", cfg, sender=False)
    assert result.termination is Termination.MISSED_FRAME_THRESHOLD
    assert result.message == ""
    assert len(result.slot_starts) == 3


def test_hold_ones_mode():
    cfg = ChannelConfig(start_time_ms=1000, hold_ones=True)
    result, tx = transfer("~", cfg)
    assert result.message == "~"
    assert "hold" in {t.outcome for t in tx.traces}
    assert not check_conformance(tx.traces, "s")


def test_run_once_scenario():
    r = run_once(Scenario(message="Hi", latency=FIXED, repetitions=1), seed=1)
    assert r.received == "Hi" and r.accuracy == 100.0 and r.edit_distance == 0
    assert (r.flips_0to1, r.flips_1to0, r.missed_sof) == (0, 0, 0)


def test_bittrace_text_roundtrip():
    tr = BitTrace(4, "r", 0, 3, 1, "den", t_start=10.0, t_set=15.0, t_check=45.5)
    line = tr.format()
    assert line == "interval=4 role=r bit=1 outcome=den t_set=15.000 t_check=45.500"
    back = BitTrace.parse(line)
    assert (back.interval, back.role, back.bit, back.outcome, back.t_set, back.t_check) == \
        (4, "r", 1, "den", 15.0, 45.5)
    idle = BitTrace.parse(BitTrace(0, "s", 0, 0).format())
    assert idle.bit is None and idle.t_set is None


def _trace(role, states, t0=0.0):
    tr = BitTrace(0, role, 0, 0)
    for i, s in enumerate(states):
        tr.enter(s, t0 + i)
    return tr


def test_conformance_flags_bad_edges():
    good = _trace("r", [R.IDLE, R.OFFSET_REACHED, R.OPENFLOW_ESTABLISHED, R.OPENFLOW_ACCEPTED,
                        R.REACHED_CHECK_STATUS_TIMEOUT, R.GOT_0, R.TIMEOUT_REACHED])
    assert check_conformance([good], "r") == []
    skip = _trace("r", [R.IDLE, R.OPENFLOW_ESTABLISHED])
    assert check_conformance([skip], "r") == ["interval 0: Idle -> OpenFlowEstablished"]
    wrong_start = _trace("s", [S.OPENFLOW_ESTABLISHED])
    assert "does not start" in check_conformance([wrong_start], "s")[0]
    backwards = BitTrace(0, "s", 0, 0)
    backwards.enter(S.IDLE, 5)
    backwards.enter(S.OPENFLOW_ESTABLISHED, 4)
    assert "backwards" in check_conformance([backwards], "s")[0]
    assert check_conformance([BitTrace(0, "s", 0, 0)], "s")


def test_agent_refused_without_controller():
    sim = Simulation(latency=FIXED)
    agent = SwitchAgent(sim, "nobody", 1)
    t = sim.spawn(agent.set_controller())
    sim.run(t)
    assert t.result().value == "refused"
    assert agent.denial.done()


def test_double_set_controller_rejected():
    sim = Simulation(latency=FIXED)
    Controller(sim).serve("c")
    agent = SwitchAgent(sim, "c", 1)

    async def go():
        await agent.set_controller()
        with pytest.raises(RuntimeError):
            await agent.set_controller()
        await agent.delete_controller()
        await agent.delete_controller()
        return agent.connected
    t = sim.spawn(go())
    sim.run(t)
    assert t.result() is False


def test_receiver_without_controller_gives_up():
    sim = Simulation(latency=FIXED)
    cfg = ChannelConfig(start_time_ms=1000, missed_frame_threshold=2)
    rx = Receiver(SwitchAgent(sim, "nobody", cfg.dpid), cfg, DELAYS)
    t = sim.spawn(rx.run())
    sim.run(t)
    assert t.result().termination is Termination.MISSED_FRAME_THRESHOLD
