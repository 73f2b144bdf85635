"""Deterministic discrete-event core.

Integer-microsecond clock, a (time, insertion-sequence)-ordered event heap,
per-entity RNG streams derived from (seed, entity id), and the frame
delivery pipeline pack -> Manchester -> power gate -> bit errors -> decode
-> machine transition.  Identical (scenario, seed) pairs produce
byte-identical traces.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import codec, lasers, link
from .codec import MgmtChannelConfig, MgmtFrame, MsgType
from .lasers import DriftModel, MemsVcselModel, ThermalDbrModel, VernierModel, calibrate
from .link import FrequencyPlan, NoPath, Topology, UnknownSpan
from .protocol import (
    ArmTimer, CoMachine, CoPortState, DriftTick, LinkDown, MsgReceived,
    NmsAssign, PortPower, PowerOn, RaiseAlarm, Role, RuMachine, RuState,
    Send, SetKnobs, SetPower, TimerExpired, co_transition, plan_sweep,
    ru_transition,
)

PROPAGATION_US_PER_KM = 5.0

RELIABLE_TYPES = frozenset({
    MsgType.SWEEP_DETECTED, MsgType.LOCK_CONFIRM, MsgType.LOSS_REPORT,
})

LOST_NO_PATH = "NO_PATH"
LOST_BELOW_SENSITIVITY = "BELOW_SENSITIVITY"


class EngineError(Exception):
    pass


class ValidationError(EngineError):
    def __init__(self, rule: str):
        super().__init__(rule)
        self.rule = rule


class DeadlockError(EngineError):
    pass


class SafetyViolation(EngineError):
    pass


# --------------------------------------------------------------------------
# declarative scenario

@dataclass(frozen=True)
class TopoSpec:
    kind: str = "tree"                 # tree | drop_line | horseshoe
    trunk_km: float = 20.0             # tree only
    segment_km: float = 14.0           # drop_line / horseshoe
    drop_km: float = 2.0
    loss_db_per_km: float = 0.25
    connector_loss_db: float = 0.5
    express_loss_db: float = 1.0
    filter_bandwidth_ghz: float = 50.0
    isolation_floor_db: float = 35.0


@dataclass(frozen=True)
class RuSpec:
    name: str
    channel: int
    laser: str = "mems"                # mems | dbr | vernier
    calibrated: bool = False
    start_ms: float = 0.0


@dataclass(frozen=True)
class CoSpec:
    name: str = "co0"
    role: str = "managed"              # managed | primary
    laser: str = "vernier"             # primary's own transceiver
    nms_channel: int | None = None     # primary only


@dataclass(frozen=True)
class MgmtSpec:
    bit_rate: float = 50_000.0
    ber: float = 0.0
    rx_sensitivity_dbm: float = -40.0
    tx_power_dbm: float = 0.0
    max_tx_power_dbm: float = 3.0
    sweep_margin_db: float = 3.0
    retry_limit: int = 3


@dataclass(frozen=True)
class RunSpec:
    seed: int = 1
    horizon_ms: float = 60_000.0
    stop: str = "all_locked"           # all_locked | time
    nms_at_ms: float = 0.0
    drift_sigma_rw_ghz: float = 0.05
    drift_ramp_ghz_per_s: float = 0.0
    drift_bound_ghz: float = 100.0
    drift_tick_ms: float = 1000.0
    monitor_tick_ms: float = 100.0
    measurement_noise_ghz: float = 0.5
    latency_worst_ms: float = 3.0
    crosstalk_min_margin_db: float = 25.0
    safety_checks: bool = True
    hold_enabled: bool = True
    trace_drift: bool = False
    allow_unreachable: bool = False


@dataclass(frozen=True)
class FaultSpec:
    kind: str                          # cut | restore | ber
    at_ms: float
    span: str | None = None
    ber: float | None = None


@dataclass(frozen=True)
class Scenario:
    plan: FrequencyPlan = FrequencyPlan()
    topo: TopoSpec = TopoSpec()
    rus: tuple[RuSpec, ...] = ()
    cos: tuple[CoSpec, ...] = (CoSpec(),)
    mgmt: MgmtSpec = MgmtSpec()
    run: RunSpec = RunSpec()
    faults: tuple[FaultSpec, ...] = ()


LASER_FAMILIES = {
    "mems": MemsVcselModel,
    "dbr": ThermalDbrModel,
    "vernier": VernierModel,
}


def build_topology(scenario: Scenario) -> Topology:
    t = scenario.topo
    rus = [(r.name, r.channel) for r in scenario.rus]
    common = dict(loss_db_per_km=t.loss_db_per_km, connector_loss_db=t.connector_loss_db,
                  filter_bandwidth_ghz=t.filter_bandwidth_ghz,
                  isolation_floor_db=t.isolation_floor_db)
    if t.kind == "tree":
        return link.make_tree(scenario.plan, rus, trunk_km=t.trunk_km,
                              drop_km=t.drop_km, co_name=scenario.cos[0].name, **common)
    if t.kind == "drop_line":
        return link.make_drop_line(scenario.plan, rus, segment_km=t.segment_km,
                                   drop_km=t.drop_km, express_loss_db=t.express_loss_db,
                                   co_name=scenario.cos[0].name, **common)
    if t.kind == "horseshoe":
        return link.make_horseshoe(scenario.plan, rus, segment_km=t.segment_km,
                                   drop_km=t.drop_km, express_loss_db=t.express_loss_db,
                                   co_west=scenario.cos[0].name,
                                   co_east=scenario.cos[1].name, **common)
    raise ValidationError(f"unknown topology kind {t.kind!r}")


def validate(scenario: Scenario) -> Topology:
    """Structural validation; raises ValidationError with the first failing
    rule and returns the built topology on success."""
    if scenario.topo.kind not in ("tree", "drop_line", "horseshoe"):
        raise ValidationError(f"unknown topology kind {scenario.topo.kind!r}")
    if not scenario.rus:
        raise ValidationError("scenario needs at least one RU")
    names = [r.name for r in scenario.rus]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate RU names")
    expected_cos = 2 if scenario.topo.kind == "horseshoe" else 1
    if len(scenario.cos) != expected_cos:
        raise ValidationError(
            f"{scenario.topo.kind} topology needs {expected_cos} CO(s), got {len(scenario.cos)}")
    for r in scenario.rus:
        if not 0 <= r.channel < scenario.plan.channel_count:
            raise ValidationError(f"RU {r.name}: channel {r.channel} outside plan")
        if r.laser not in LASER_FAMILIES:
            raise ValidationError(f"RU {r.name}: unknown laser family {r.laser!r}")
        if not scenario.run.allow_unreachable:
            probe = LASER_FAMILIES[r.laser]()
            try:
                probe.set_frequency(scenario.plan.center_thz(r.channel))
            except lasers.LaserError:
                raise ValidationError(
                    f"RU {r.name}: {r.laser} laser cannot reach channel {r.channel}")
    for co in scenario.cos:
        if co.role not in ("managed", "primary"):
            raise ValidationError(f"CO {co.name}: unknown role {co.role!r}")
        if co.role == "primary":
            if co.nms_channel is None:
                raise ValidationError(f"primary CO {co.name} needs nms_channel")
            if len(scenario.rus) != 1:
                raise ValidationError("pairwise scenarios run one dependent RU")
            if scenario.rus[0].channel != co.nms_channel:
                raise ValidationError(
                    "pairwise dependent must sit behind the assigned channel's port")
            if co.laser not in LASER_FAMILIES:
                raise ValidationError(f"CO {co.name}: unknown laser family {co.laser!r}")
    if not 0.0 <= scenario.mgmt.ber <= 1.0:
        raise ValidationError("mgmt ber outside [0, 1]")
    if scenario.run.horizon_ms <= 0:
        raise ValidationError("horizon must be positive")
    if scenario.run.stop not in ("all_locked", "time"):
        raise ValidationError(f"unknown stop condition {scenario.run.stop!r}")
    topo = build_topology(scenario)
    for f in scenario.faults:
        if f.kind in ("cut", "restore"):
            if f.span is None:
                raise ValidationError(f"{f.kind} fault needs a span")
            try:
                topo.span(f.span)
            except UnknownSpan:
                raise ValidationError(f"fault references unknown span {f.span!r}")
        elif f.kind == "ber":
            if f.ber is None or not 0.0 <= f.ber <= 1.0:
                raise ValidationError("ber fault needs ber in [0, 1]")
        else:
            raise ValidationError(f"unknown fault kind {f.kind!r}")
        if not 0.0 <= f.at_ms <= scenario.run.horizon_ms:
            raise ValidationError(f"fault at {f.at_ms} ms outside run horizon")
    return topo


def inject_fault(scenario: Scenario, at_us: int, kind: str,
                 span: str | None = None, ber: float | None = None) -> Scenario:
    """Return a scenario with the fault appended to its schedule."""
    fault = FaultSpec(kind=kind, at_ms=at_us / 1000.0, span=span, ber=ber)
    out = replace(scenario, faults=scenario.faults + (fault,))
    validate(out)
    return out


# --------------------------------------------------------------------------
# trace and metrics

@dataclass(frozen=True)
class TraceRecord:
    time_us: int
    entity: str
    kind: str
    details: str


def trace_emit(record: TraceRecord) -> str:
    return f"{record.time_us}\t{record.entity}\t{record.kind}\t{record.details}"


class Trace:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def add(self, time_us: int, entity: str, kind: str, details: str):
        self.records.append(TraceRecord(time_us, entity, kind, details))

    def render(self) -> str:
        return "".join(trace_emit(r) + "\n" for r in self.records)

    def lines(self) -> list[str]:
        return [trace_emit(r) for r in self.records]

    def count(self, kind: str) -> int:
        return sum(1 for r in self.records if r.kind == kind)


@dataclass
class Metrics:
    frames_sent: int = 0
    frames_delivered: int = 0
    frames_lost: dict[str, int] = field(default_factory=dict)
    frames_in_flight: int = 0
    retransmissions: int = 0
    blocks_corrected: int = 0
    time_to_lock_s: dict[str, float] = field(default_factory=dict)
    max_locked_offset_ghz: float = 0.0
    min_crosstalk_margin_db: float = math.inf
    protection_switch_s: dict[str, float] = field(default_factory=dict)
    stop_time_s: float = 0.0

    @property
    def frames_lost_total(self) -> int:
        return sum(self.frames_lost.values())

    def as_dict(self) -> dict:
        out = {
            "frames_sent": self.frames_sent,
            "frames_delivered": self.frames_delivered,
            "frames_lost": self.frames_lost_total,
            "frames_in_flight": self.frames_in_flight,
            "retransmissions": self.retransmissions,
            "blocks_corrected": self.blocks_corrected,
            "max_locked_offset_ghz": round(self.max_locked_offset_ghz, 4),
            "stop_time_s": round(self.stop_time_s, 6),
        }
        for reason in sorted(self.frames_lost):
            out[f"frames_lost.{reason}"] = self.frames_lost[reason]
        for name in sorted(self.time_to_lock_s):
            out[f"time_to_lock_s.{name}"] = round(self.time_to_lock_s[name], 6)
        if math.isfinite(self.min_crosstalk_margin_db):
            out["min_crosstalk_margin_db"] = round(self.min_crosstalk_margin_db, 2)
        for name in sorted(self.protection_switch_s):
            out[f"protection_switch_s.{name}"] = round(self.protection_switch_s[name], 6)
        return out

    def to_lines(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# runtime entities

def entity_rng(seed: int, entity: str, stream: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{entity}/{stream}".encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big")])


@dataclass
class RuEntity:
    name: str
    spec: RuSpec
    machine: RuMachine
    laser: object
    node: str
    channel: int
    rng_drift: np.random.Generator
    rng_channel: np.random.Generator
    power_on_us: int = 0
    powered: bool = False
    locked_at_us: int | None = None
    pending_relock_since_us: int | None = None
    seq: int = 0


@dataclass
class CoEntity:
    name: str
    spec: CoSpec
    machine: CoMachine
    node: str
    rng_meas: np.random.Generator
    rng_channel: np.random.Generator
    own_machine: RuMachine | None = None   # primary transceiver half
    own_laser: object | None = None
    pending_assign: tuple[int, int] | None = None
    seq: int = 0


def _build_laser(family: str):
    return LASER_FAMILIES[family]()


# --------------------------------------------------------------------------
# the simulator

class Sim:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.topology = validate(scenario)
        self.plan = scenario.plan
        self.mgmt = MgmtChannelConfig(
            bit_rate=scenario.mgmt.bit_rate,
            rx_sensitivity_dbm=scenario.mgmt.rx_sensitivity_dbm,
        )
        self.ber = scenario.mgmt.ber
        self.drift = DriftModel(
            sigma_rw_ghz=scenario.run.drift_sigma_rw_ghz,
            ramp_ghz_per_s=scenario.run.drift_ramp_ghz_per_s,
            bound_ghz=scenario.run.drift_bound_ghz,
        )
        self.trace = Trace()
        self.metrics = Metrics()
        self.now_us = 0
        self.horizon_us = int(round(scenario.run.horizon_ms * 1000.0))
        self._heap: list = []
        self._seq = 0
        self._pending_acks: dict = {}   # (sender, type, seq) -> retry state
        self._last_accepted: dict = {}  # (receiver, sender, type) -> seq

        seed = scenario.run.seed
        sweep_plan = plan_sweep(self.plan, scenario.topo.filter_bandwidth_ghz,
                                scenario.run.latency_worst_ms)
        tables: dict[str, lasers.CalibrationTable] = {}

        self.rus: dict[str, RuEntity] = {}
        for spec in scenario.rus:
            laser = _build_laser(spec.laser)
            table = None
            if spec.calibrated:
                if spec.laser not in tables:
                    tables[spec.laser] = calibrate(_build_laser(spec.laser), self.plan)
                table = tables[spec.laser]
            machine = RuMachine(
                calibration=table,
                sweep_plan=sweep_plan,
                full_power_dbm=scenario.mgmt.tx_power_dbm,
                settle_us=int(laser.settle_time_ms * 1000),
                co_tx_power_dbm=scenario.mgmt.tx_power_dbm,
                sweep_margin_db=scenario.mgmt.sweep_margin_db,
                max_tx_power_dbm=scenario.mgmt.max_tx_power_dbm,
                rx_sensitivity_dbm=scenario.mgmt.rx_sensitivity_dbm,
            )
            self.rus[spec.name] = RuEntity(
                name=spec.name, spec=spec, machine=machine, laser=laser,
                node=spec.name, channel=spec.channel,
                rng_drift=entity_rng(seed, spec.name, "drift"),
                rng_channel=entity_rng(seed, spec.name, "channel"),
            )

        self.cos: dict[str, CoEntity] = {}
        for spec in scenario.cos:
            machine = CoMachine(
                pairwise=spec.role == "primary",
                tx_power_dbm=scenario.mgmt.tx_power_dbm,
                rx_sensitivity_dbm=scenario.mgmt.rx_sensitivity_dbm,
                sweep_margin_db=scenario.mgmt.sweep_margin_db,
                max_tx_power_dbm=scenario.mgmt.max_tx_power_dbm,
            )
            entity = CoEntity(
                name=spec.name, spec=spec, machine=machine, node=spec.name,
                rng_meas=entity_rng(seed, spec.name, "meas"),
                rng_channel=entity_rng(seed, spec.name, "channel"),
            )
            if spec.role == "primary":
                own_laser = _build_laser(spec.laser)
                if spec.laser not in tables:
                    tables[spec.laser] = calibrate(_build_laser(spec.laser), self.plan)
                entity.own_laser = own_laser
                entity.own_machine = RuMachine(
                    role=Role.PRIMARY,
                    calibration=tables[spec.laser],
                    sweep_plan=sweep_plan,
                    full_power_dbm=scenario.mgmt.tx_power_dbm,
                    settle_us=int(own_laser.settle_time_ms * 1000),
                )
            self.cos[spec.name] = entity

        self._seed_initial_events()

    # ---------------------------------------------------------------- queue

    def _schedule(self, time_us: int, target: str, kind: str, payload=None):
        heapq.heappush(self._heap, (int(time_us), self._seq, target, kind, payload))
        self._seq += 1

    def _seed_initial_events(self):
        run = self.scenario.run
        for spec in self.scenario.rus:
            self._schedule(int(spec.start_ms * 1000), spec.name, "POWER_ON")
        nms_us = int(run.nms_at_ms * 1000)
        for co in self.scenario.cos:
            if co.role == "primary":
                self._schedule(nms_us, co.name, "NMS_COMMAND",
                               (co.nms_channel, co.nms_channel))
            else:
                for spec in self.scenario.rus:
                    self._schedule(nms_us, co.name, "NMS_COMMAND",
                                   (spec.channel, spec.channel))
        for fault in self.scenario.faults:
            at = int(fault.at_ms * 1000)
            if fault.kind == "cut":
                self._schedule(at, "plant", "FIBER_CUT", fault.span)
            elif fault.kind == "restore":
                self._schedule(at, "plant", "FIBER_RESTORE", fault.span)
            else:
                self._schedule(at, "plant", "POWER_CHANGE", fault.ber)

    # ---------------------------------------------------------------- helpers

    def _lost(self, entity: str, frame: MgmtFrame, reason: str, detail: str = ""):
        self.metrics.frames_lost[reason] = self.metrics.frames_lost.get(reason, 0) + 1
        extra = f" {detail}" if detail else ""
        self.trace.add(self.now_us, entity, "FRAME_LOST",
                       f"type={frame.msg_type.name} seq={frame.seq} reason={reason}{extra}")

    def _airtime_us(self, frame: MgmtFrame) -> int:
        bits = codec.packed_frame_bits(len(frame.payload))
        return int(round(bits / self.mgmt.bit_rate * 1e6))

    def _ru_emission(self, ru: RuEntity):
        return ru.laser.emission()

    def _co_port_tx(self, co: CoEntity, port: int) -> tuple[float, float]:
        """(frequency THz, power dBm) of the CO-side transmitter on a port."""
        if co.own_laser is not None:
            state = co.own_laser.emission()
            return state.frequency_thz, state.power_dbm
        return self.plan.center_thz(port), self.scenario.mgmt.tx_power_dbm

    # ---------------------------------------------------------------- sending

    def _send_from_ru(self, ru: RuEntity, frame: MgmtFrame, wire_seq: int | None = None):
        retry = wire_seq is not None
        if wire_seq is None:
            wire_seq = ru.seq
            ru.seq = (ru.seq + 1) % 16
        frame = MgmtFrame(frame.msg_type, wire_seq, frame.payload)
        self.metrics.frames_sent += 1
        state = self._ru_emission(ru)
        self.trace.add(self.now_us, ru.name, "RETRY" if retry else "SEND",
                       f"type={frame.msg_type.name} seq={frame.seq} "
                       f"f={state.frequency_thz:.6f}THz p={state.power_dbm:.1f}dBm")
        # the crosstalk rule governs reduced-power sweep transmissions; a
        # locked RU re-announcing at full power on its own channel is normal
        # operation
        if ru.machine.state in (RuState.SWEEP, RuState.FINE_TUNE) and \
                state.power_dbm < ru.machine.full_power_dbm - 1e-9:
            self._check_sweep_crosstalk(ru, state)
        try:
            path = self.topology.active_path(ru.name)
        except NoPath:
            self._lost(ru.name, frame, LOST_NO_PATH)
            return
        co = self.cos[path.co]
        if self.scenario.run.safety_checks:
            self._check_upstream_isolation(ru, state, path.co)
        arrival = self.now_us + self._airtime_us(frame) + \
            int(round(path.length_km(self.topology) * PROPAGATION_US_PER_KM))
        self._arm_retry(ru.name, frame, port=None)
        self._schedule(arrival, co.name, "FRAME_ARRIVAL",
                       (ru.name, frame, state.frequency_thz, state.power_dbm,
                        ru.channel))

    def _send_from_co(self, co: CoEntity, frame: MgmtFrame, port: int,
                      wire_seq: int | None = None, mark_retry: bool = False):
        retry = wire_seq is not None or mark_retry
        if wire_seq is None:
            wire_seq = co.seq
            co.seq = (co.seq + 1) % 16
        frame = MgmtFrame(frame.msg_type, wire_seq, frame.payload)
        self.metrics.frames_sent += 1
        f_thz, power = self._co_port_tx(co, port)
        self.trace.add(self.now_us, f"{co.name}.p{port}", "RETRY" if retry else "SEND",
                       f"type={frame.msg_type.name} seq={frame.seq} "
                       f"f={f_thz:.6f}THz p={power:.1f}dBm")
        try:
            ru_name = self.topology.ru_for_channel(port)
            path = self.topology.path_to_co(ru_name, co.name)
        except (NoPath, link.LinkError):
            self._lost(f"{co.name}.p{port}", frame, LOST_NO_PATH)
            return
        if self.scenario.run.safety_checks:
            self._check_downstream_isolation(co, port, f_thz, power)
        arrival = self.now_us + self._airtime_us(frame) + \
            int(round(path.length_km(self.topology) * PROPAGATION_US_PER_KM))
        self._arm_retry(co.name, frame, port=port)
        self._schedule(arrival, ru_name, "FRAME_ARRIVAL",
                       (co.name, frame, f_thz, power, port))

    def _arm_retry(self, sender: str, frame: MgmtFrame, port: int | None):
        if frame.msg_type not in RELIABLE_TYPES:
            return
        key = (sender, frame.msg_type, frame.seq)
        state = self._pending_acks.get(key)
        if state is None:
            self._pending_acks[key] = {"frame": frame, "port": port, "retries": 0}
        timeout = 4 * self._airtime_us(frame)
        self._schedule(self.now_us + timeout, sender, "TIMER",
                       f"rexmit:{frame.msg_type.value}:{frame.seq}")

    def _handle_rexmit(self, sender: str, tag: str):
        _, type_value, seq = tag.split(":")
        key = (sender, MsgType(int(type_value)), int(seq))
        state = self._pending_acks.get(key)
        if state is None:
            return
        if state["retries"] >= self.scenario.mgmt.retry_limit:
            del self._pending_acks[key]
            self.trace.add(self.now_us, sender, "SEND_FAIL",
                           f"type={key[1].name} seq={key[2]} retries={state['retries']}")
            return
        state["retries"] += 1
        self.metrics.retransmissions += 1
        if sender in self.rus:
            self._send_from_ru(self.rus[sender], state["frame"], wire_seq=key[2])
        else:
            self._send_from_co(self.cos[sender], state["frame"],
                               state["port"], wire_seq=key[2])

    # ---------------------------------------------------------------- arrival

    def _deliver(self, receiver: str, payload):
        sender, frame, f_thz, tx_power, port = payload
        entity_label = f"{receiver}.p{port}" if receiver in self.cos else receiver
        if receiver in self.rus and not self.rus[receiver].powered:
            self._lost(entity_label, frame, "RX_OFF")
            return
        # gain is evaluated at arrival: light in flight dies with a cut span
        if receiver in self.cos:
            ru_name, co_name = sender, receiver
        else:
            ru_name, co_name = receiver, sender
        try:
            gain = link.path_gain(self.topology, ru_name, co_name, f_thz,
                                  rx_port_channel=port)
        except NoPath:
            self._lost(entity_label, frame, LOST_NO_PATH)
            return
        rx_power = tx_power + gain.gain_db
        if rx_power < self.mgmt.rx_sensitivity_dbm:
            self._lost(entity_label, frame, LOST_BELOW_SENSITIVITY,
                       f"rx={rx_power:.1f}dBm")
            return
        bits = codec.frame_pack(frame)
        line_bits = codec.manchester_decode(codec.manchester_encode(bits))
        rng = self.rus[receiver].rng_channel if receiver in self.rus \
            else self.cos[receiver].rng_channel
        noisy = codec.apply_bit_errors(line_bits, self.ber, rng)
        try:
            decoded, stats = codec.frame_unpack(noisy)
        except codec.SyncNotFound:
            self._lost(entity_label, frame, "SYNC_NOT_FOUND")
            return
        except codec.FecFailure:
            self._lost(entity_label, frame, "FEC_FAILURE")
            return
        except codec.CrcMismatch:
            self._lost(entity_label, frame, "CRC_MISMATCH")
            return
        self.metrics.frames_delivered += 1
        self.metrics.blocks_corrected += stats.corrected
        self.trace.add(self.now_us, entity_label, "DELIVER",
                       f"type={decoded.msg_type.name} seq={decoded.seq} "
                       f"rx={rx_power:.1f}dBm corrected={stats.corrected}")

        if decoded.msg_type is MsgType.ACK:
            acked_type = MsgType(decoded.payload[0] >> 4)
            acked_seq = decoded.payload[0] & 0x0F
            self._pending_acks.pop((receiver, acked_type, acked_seq), None)
            return
        if decoded.msg_type is MsgType.NAK:
            return

        dedup_key = (receiver, sender, decoded.msg_type)
        duplicate = self._last_accepted.get(dedup_key) == decoded.seq
        if decoded.msg_type in RELIABLE_TYPES:
            self._send_ack(receiver, decoded, port)
        if duplicate:
            return
        self._last_accepted[dedup_key] = decoded.seq

        event = MsgReceived(decoded, rx_power_dbm=rx_power, time_us=self.now_us,
                            port=port if receiver in self.cos else None)
        if receiver in self.rus:
            self._run_ru(self.rus[receiver], event)
        else:
            self._run_co(self.cos[receiver], event)

    def _send_ack(self, receiver: str, frame: MgmtFrame, port: int | None):
        ack = MgmtFrame(MsgType.ACK,
                        payload=bytes([(int(frame.msg_type) << 4) | frame.seq]))
        if receiver in self.rus:
            self._send_from_ru(self.rus[receiver], ack)
        else:
            self._send_from_co(self.cos[receiver], ack, port)

    # ---------------------------------------------------------------- machines

    def _run_ru(self, ru: RuEntity, event):
        before = ru.machine.state
        ru.machine, actions = ru_transition(ru.machine, event)
        if ru.machine.state is not before:
            self.trace.add(self.now_us, ru.name, "STATE",
                           f"{before.value}->{ru.machine.state.value}")
        self._apply_actions(ru.name, ru.laser, ru.name, ru, actions)
        # a LOCK is the completion of a tuning procedure; quiet HOLD->LOCKED
        # returns inside the deadband are not re-locks
        if ru.machine.state is RuState.LOCKED and \
                before in (RuState.FINE_TUNE, RuState.DIRECT_TUNING):
            self._on_ru_locked(ru)

    def _run_co(self, co: CoEntity, event, retry_sends: bool = False):
        co.machine, actions = co_transition(co.machine, event)
        self._apply_co_actions(co, actions, retry_sends)

    def _apply_actions(self, name: str, laser, timer_target: str,
                       sender: RuEntity | None, actions):
        for action in actions:
            if isinstance(action, SetKnobs):
                if action.knobs is not None:
                    laser.set_knobs(action.knobs)
                elif action.frequency_thz is not None:
                    laser.set_frequency(action.frequency_thz)
                elif action.step_ghz is not None:
                    laser.apply_frequency_step(action.step_ghz)
                state = laser.emission()
                self.trace.add(self.now_us, name, "TUNE",
                               f"f={state.frequency_thz:.6f}THz")
            elif isinstance(action, SetPower):
                laser.set_power(action.power_dbm)
                self.trace.add(self.now_us, name, "POWER",
                               f"p={action.power_dbm:.1f}dBm")
            elif isinstance(action, Send):
                if sender is not None:
                    self._send_from_ru(sender, action.frame)
            elif isinstance(action, ArmTimer):
                self._schedule(self.now_us + action.delay_us, timer_target,
                               "TIMER", action.tag)
            elif isinstance(action, RaiseAlarm):
                self.trace.add(self.now_us, name, "ALARM", action.reason)

    def _apply_co_actions(self, co: CoEntity, actions, retry_sends: bool = False):
        for action in actions:
            if isinstance(action, Send):
                self._send_from_co(co, action.frame, action.port,
                                   mark_retry=retry_sends)
            elif isinstance(action, ArmTimer):
                self._schedule(self.now_us + action.delay_us, co.name, "TIMER", action.tag)
            elif isinstance(action, RaiseAlarm):
                self.trace.add(self.now_us, co.name, "ALARM", action.reason)

    def _on_primary_locked(self, co: CoEntity):
        # primary transceiver tuned: hand its port to the CO half
        state = co.own_laser.emission()
        center = self.plan.center_thz(co.own_machine.assigned_channel)
        off = (state.frequency_thz - center) * 1000.0
        self.trace.add(self.now_us, f"{co.name}.tx", "LOCK",
                       f"ch={co.own_machine.assigned_channel} "
                       f"f={state.frequency_thz:.6f}THz off={off:.1f}GHz")
        if co.pending_assign is not None:
            port, channel = co.pending_assign
            co.pending_assign = None
            self._run_co(co, NmsAssign(port, channel))
            self._start_monitor(co, port)

    def _on_ru_locked(self, ru: RuEntity):
        state = ru.laser.emission()
        center = self.plan.center_thz(ru.machine.assigned_channel)
        off = (state.frequency_thz - center) * 1000.0
        self.trace.add(self.now_us, ru.name, "LOCK",
                       f"ch={ru.machine.assigned_channel} "
                       f"f={state.frequency_thz:.6f}THz off={off:.1f}GHz")
        if ru.name not in self.metrics.time_to_lock_s:
            self.metrics.time_to_lock_s[ru.name] = (self.now_us - ru.power_on_us) / 1e6
            ru.locked_at_us = self.now_us
        if ru.pending_relock_since_us is not None:
            delta = (self.now_us - ru.pending_relock_since_us) / 1e6
            self.metrics.protection_switch_s[ru.name] = delta
            ru.pending_relock_since_us = None
        if self.scenario.run.safety_checks and abs(off) > 1.0 + 1e-9:
            raise SafetyViolation(
                f"{ru.name} locked {off:.2f} GHz from its port centre")

    # ---------------------------------------------------------------- safety

    def _check_sweep_crosstalk(self, sweeper: RuEntity, state):
        margin_floor = self.scenario.run.crosstalk_min_margin_db
        for other in self.rus.values():
            if other.name == sweeper.name:
                continue
            if other.machine.state not in (RuState.LOCKED, RuState.HOLD):
                continue
            try:
                margin = link.crosstalk_margin(
                    self.topology, (sweeper.name, state.frequency_thz, state.power_dbm),
                    other.channel, victim_tx_power_dbm=other.laser.power_dbm)
            except NoPath:
                continue
            if margin < self.metrics.min_crosstalk_margin_db:
                self.metrics.min_crosstalk_margin_db = margin
            if self.scenario.run.safety_checks and margin < margin_floor:
                raise SafetyViolation(
                    f"sweep of {sweeper.name} leaves only {margin:.1f} dB margin "
                    f"on channel {other.channel}")

    def _check_upstream_isolation(self, ru: RuEntity, state, co_name: str):
        for other in self.rus.values():
            if other.name == ru.name:
                continue
            try:
                gain = link.path_gain(self.topology, ru.name, co_name,
                                      state.frequency_thz, rx_port_channel=other.channel)
            except NoPath:
                continue
            if state.power_dbm + gain.gain_db >= self.mgmt.rx_sensitivity_dbm:
                raise SafetyViolation(
                    f"frames of {ru.name} decodable on foreign port {other.channel}")

    def _check_downstream_isolation(self, co: CoEntity, port: int, f_thz: float,
                                    power: float):
        for other in self.rus.values():
            if other.channel == port:
                continue
            try:
                gain = link.path_gain(self.topology, other.name, co.name, f_thz,
                                      rx_port_channel=port)
            except NoPath:
                continue
            if power + gain.gain_db >= self.mgmt.rx_sensitivity_dbm:
                raise SafetyViolation(
                    f"port {port} frames decodable at {other.name}")

    # ---------------------------------------------------------------- ticks

    def _start_monitor(self, co: CoEntity, port: int):
        tick = int(self.scenario.run.monitor_tick_ms * 1000)
        self._schedule(self.now_us + tick, co.name, "TIMER", f"monitor:{port}")

    def _handle_monitor_tick(self, co: CoEntity, port: int):
        slot = co.machine.slot(port)
        if slot.state is CoPortState.IDLE:
            return
        try:
            ru = self.rus[self.topology.ru_for_channel(port)]
        except link.LinkError:
            return
        state = ru.laser.emission()
        try:
            # the RU transmits toward its active side only (directional add)
            if self.topology.active_path(ru.name).co != co.name:
                raise NoPath(co.name)
            gain = link.path_gain(self.topology, ru.name, co.name,
                                  state.frequency_thz, rx_port_channel=port)
            power = state.power_dbm + gain.gain_db
        except NoPath:
            power = -math.inf
        noise = self.scenario.run.measurement_noise_ghz
        if slot.state is CoPortState.CONFIRMING:
            noise /= 4.0  # confirmation integrates 16x longer than a hold tick
        offset_est = None
        if power >= self.mgmt.rx_sensitivity_dbm:
            true_off = (state.frequency_thz - self.plan.center_thz(port)) * 1000.0
            sample = true_off + (co.rng_meas.normal(0.0, noise) if noise > 0 else 0.0)
            offset_est = round(sample * 10.0) / 10.0
        if self.scenario.run.hold_enabled or slot.state is not CoPortState.MONITOR:
            self._run_co(co, PortPower(port, power, offset_est, time_us=self.now_us))
        tick = int(self.scenario.run.monitor_tick_ms * 1000)
        nxt = self.now_us + tick
        if nxt <= self.horizon_us:
            self._schedule(nxt, co.name, "TIMER", f"monitor:{port}")

    def _handle_drift_tick(self, ru: RuEntity):
        dt = self.scenario.run.drift_tick_ms / 1000.0
        offset = lasers.step_drift(ru.laser, dt, self.drift, ru.rng_drift)
        if self.scenario.run.trace_drift:
            self.trace.add(self.now_us, ru.name, "DRIFT", f"off={offset:.3f}GHz")
        self._run_ru(ru, DriftTick(time_us=self.now_us))
        if ru.machine.state in (RuState.LOCKED, RuState.HOLD):
            off = abs(ru.laser.emission().frequency_thz -
                      self.plan.center_thz(ru.channel)) * 1000.0
            if off > self.metrics.max_locked_offset_ghz:
                self.metrics.max_locked_offset_ghz = off
            if self.scenario.run.safety_checks and off > 7.5:
                raise SafetyViolation(
                    f"{ru.name} drifted {off:.2f} GHz from its port while locked")
        nxt = self.now_us + int(self.scenario.run.drift_tick_ms * 1000)
        if nxt <= self.horizon_us:
            self._schedule(nxt, ru.name, "DRIFT_TICK")

    # ---------------------------------------------------------------- faults

    def _apply_plant_change(self, new_topology: Topology, kind: str, span: str):
        before = {name: self._active_co(name) for name in self.rus}
        self.topology = new_topology
        self.trace.add(self.now_us, "plant", kind, f"span={span}")
        for name, ru in self.rus.items():
            after = self._active_co(name)
            if after != before[name]:
                self.trace.add(self.now_us, name, "SWITCH",
                               f"{before[name] or 'none'}->{after or 'none'}")
                if ru.machine.state in (RuState.LOCKED, RuState.HOLD,
                                        RuState.FINE_TUNE):
                    ru.pending_relock_since_us = self.now_us
                self._run_ru(ru, LinkDown())

    def _active_co(self, ru_name: str) -> str | None:
        try:
            return self.topology.active_path(ru_name).co
        except NoPath:
            return None

    # ---------------------------------------------------------------- events

    def _dispatch(self, target: str, kind: str, payload):
        if kind == "POWER_ON":
            ru = self.rus[target]
            ru.power_on_us = self.now_us
            ru.powered = True
            self.trace.add(self.now_us, target, "POWER_ON", "")
            self._run_ru(ru, PowerOn())
            self._schedule(self.now_us + int(self.scenario.run.drift_tick_ms * 1000),
                           target, "DRIFT_TICK")
        elif kind == "NMS_COMMAND":
            co = self.cos[target]
            port, channel = payload
            self.trace.add(self.now_us, target, "NMS", f"port={port} ch={channel}")
            if co.own_machine is not None:
                co.pending_assign = (port, channel)
                self._run_primary(co, PowerOn(nms_channel=channel))
            else:
                self._run_co(co, NmsAssign(port, channel))
                self._start_monitor(co, port)
        elif kind == "FRAME_ARRIVAL":
            self._deliver(target, payload)
        elif kind == "TIMER":
            tag = payload
            if tag.startswith("rexmit:"):
                self._handle_rexmit(target, tag)
            elif tag.startswith("monitor:"):
                self._handle_monitor_tick(self.cos[target], int(tag.split(":")[1]))
            elif target.endswith("#tx"):
                co = self.cos[target[:-3]]
                self._run_primary(co, TimerExpired(tag, time_us=self.now_us))
            elif target in self.rus:
                self._run_ru(self.rus[target], TimerExpired(tag, time_us=self.now_us))
            else:
                self._run_co(self.cos[target], TimerExpired(tag, time_us=self.now_us),
                             retry_sends=tag.startswith("assign:"))
        elif kind == "DRIFT_TICK":
            self._handle_drift_tick(self.rus[target])
        elif kind == "FIBER_CUT":
            self._apply_plant_change(link.apply_cut(self.topology, payload),
                                     "CUT", payload)
        elif kind == "FIBER_RESTORE":
            self._apply_plant_change(link.restore(self.topology, payload),
                                     "RESTORE", payload)
        elif kind == "POWER_CHANGE":
            self.ber = payload
            self.trace.add(self.now_us, "plant", "BER", f"p={payload:g}")
        else:  # pragma: no cover
            raise EngineError(f"unknown event kind {kind}")

    def _run_primary(self, co: CoEntity, event):
        before = co.own_machine.state
        co.own_machine, actions = ru_transition(co.own_machine, event)
        name = f"{co.name}.tx"
        if co.own_machine.state is not before:
            self.trace.add(self.now_us, name, "STATE",
                           f"{before.value}->{co.own_machine.state.value}")
        # no sender entity: the primary transceiver talks through its CO half
        self._apply_actions(name, co.own_laser, f"{co.name}#tx", None, actions)
        if co.own_machine.state is RuState.LOCKED and before is not RuState.LOCKED:
            self._on_primary_locked(co)

    # ---------------------------------------------------------------- run

    def _all_locked(self) -> bool:
        rus_locked = all(r.machine.state in (RuState.LOCKED, RuState.HOLD)
                         for r in self.rus.values())
        primaries_locked = all(
            c.own_machine.state is RuState.LOCKED
            for c in self.cos.values() if c.own_machine is not None)
        return rus_locked and primaries_locked

    def run(self) -> tuple[Trace, Metrics]:
        stop_on_lock = self.scenario.run.stop == "all_locked"
        while self._heap:
            time_us, _, target, kind, payload = heapq.heappop(self._heap)
            if time_us > self.horizon_us:
                break
            self.now_us = time_us
            self._dispatch(target, kind, payload)
            if stop_on_lock and self._all_locked():
                break
        else:
            if stop_on_lock and not self._all_locked():
                raise DeadlockError("event queue drained before all RUs locked")
        if stop_on_lock and not self._all_locked():
            raise DeadlockError("run horizon reached before all RUs locked")
        self.metrics.stop_time_s = self.now_us / 1e6
        self.metrics.frames_in_flight = sum(
            1 for ev in self._heap if ev[3] == "FRAME_ARRIVAL")
        conservation = self.metrics.frames_delivered + self.metrics.frames_lost_total \
            + self.metrics.frames_in_flight
        if conservation != self.metrics.frames_sent:
            raise EngineError(
                f"frame conservation broken: sent={self.metrics.frames_sent} "
                f"accounted={conservation}")
        return self.trace, self.metrics


def run(scenario: Scenario) -> tuple[Trace, Metrics]:
    """Validate and execute a scenario."""
    return Sim(scenario).run()


class PairwiseTimeout(EngineError):
    pass


def pairwise_self_tune(nms_channel: int, dependent_calibrated: bool = False,
                       primary_laser: str = "vernier", dependent_laser: str = "mems",
                       ber: float = 0.0, seed: int = 1,
                       horizon_ms: float = 30_000.0) -> tuple[Trace, Metrics]:
    """Run a primary/dependent link: the primary tunes itself from the NMS
    input, conveys the channel over the management channel, the dependent
    tunes to the paired wavelength.  The returned trace is the transcript;
    raises PairwiseTimeout if either side fails to lock within the bound."""
    scenario = Scenario(
        rus=(RuSpec("dependent", nms_channel, laser=dependent_laser,
                    calibrated=dependent_calibrated),),
        cos=(CoSpec("primary", role="primary", laser=primary_laser,
                    nms_channel=nms_channel),),
        mgmt=MgmtSpec(ber=ber),
        run=RunSpec(seed=seed, horizon_ms=horizon_ms),
    )
    try:
        return run(scenario)
    except DeadlockError as err:
        raise PairwiseTimeout(str(err))
