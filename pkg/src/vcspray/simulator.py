"""Deterministic point-mass vehicle that flies a MissionPlan, either offline
(``run_mission``) or behind a TCP master port with UDP telemetry fan-out
(``SimServer``).  Both paths drive the same ``Vehicle`` stepping code.

Kinematics: constant cruise speed with instantaneous turns, altitude changes
first at the climb rate, then the horizontal leg.  The final step of a leg lands
exactly on the target and only consumes the time actually needed, so the
simulated clock does not depend on ``dt`` beyond rounding.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import asdict, dataclass, field, replace

from . import wire
from .geodesy import GeoPoint, UtmPoint, latlon_to_utm, utm_to_latlon, utm_zone
from .mission import RETURN_TO_LAUNCH, SPRAY, TAKEOFF, MissionPlan, Waypoint, item_to_waypoint
from .wire import FrameParser, Message, encode_frame

log = logging.getLogger(__name__)

FIELD_HOME = GeoPoint(30.534351, -96.431239)

DISARMED = "disarmed"
GUIDED = "guided"
AUTO = "auto"
RETURNING = "returning"
LANDED = "landed"
MODES = (DISARMED, GUIDED, AUTO, RETURNING, LANDED)

# ArduCopter custom_mode numbers
MODE_NUMBERS = {DISARMED: 0, AUTO: 3, GUIDED: 4, RETURNING: 6, LANDED: 9}
MODE_BY_NUMBER = {v: k for k, v in MODE_NUMBERS.items()}

MAV_TYPE_QUADROTOR = 2
MAV_AUTOPILOT_ARDUPILOTMEGA = 3
MAV_STATE_STANDBY = 3
MAV_STATE_ACTIVE = 4


@dataclass(frozen=True)
class SimConfig:
    home: GeoPoint = FIELD_HOME
    initial_heading_deg: float = 180.0
    cruise_speed_mps: float = 2.0
    climb_rate_mps: float | None = None  # defaults to the cruise speed
    accept_radius_m: float = 0.5
    dt_s: float = 0.1
    dwell_s: float | None = None  # overrides per-waypoint dwell when set
    heartbeat_hz: float = 1.0
    position_hz: float = 4.0

    def __post_init__(self):
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if not self.accept_radius_m > 0:
            raise ValueError("accept_radius_m must be positive")
        if not self.cruise_speed_mps > 0:
            raise ValueError("cruise speed must be positive")

    @property
    def climb_rate(self) -> float:
        return self.climb_rate_mps or self.cruise_speed_mps


@dataclass(frozen=True)
class VehicleState:
    position: GeoPoint
    alt_m: float = 0.0
    heading_deg: float = 0.0
    groundspeed_mps: float = 0.0
    mode: str = DISARMED
    armed: bool = False
    current_wp: int = 0
    t_s: float = 0.0
    distance_m: float = 0.0  # horizontal odometer
    vertical_m: float = 0.0


@dataclass(frozen=True)
class SprayEvent:
    t_s: float
    location: GeoPoint
    dwell_s: float


@dataclass
class SimReport:
    total_distance_m: float
    vertical_distance_m: float
    total_time_s: float
    spray_events: list[SprayEvent]
    trajectory: list[tuple[float, float, float, float]] = field(repr=False)  # t_s, lat, lon, alt_m


def _bearing_deg(de: float, dn: float) -> float:
    return math.degrees(math.atan2(de, dn)) % 360.0


def step(state: VehicleState, target: Waypoint, cfg: SimConfig, dt: float,
         speed_mps: float | None = None) -> VehicleState:
    """Advance at most ``dt`` seconds toward ``target`` (altitude first, then the
    horizontal leg); never overshoots."""
    speed = speed_mps or cfg.cruise_speed_mps
    budget = dt
    alt, vert = state.alt_m, state.vertical_m
    dz = target.alt_m - alt
    if dz:
        need = abs(dz) / cfg.climb_rate
        if need <= budget:
            alt = target.alt_m
            vert += abs(dz)
            budget -= need
        else:
            move = cfg.climb_rate * budget
            alt += math.copysign(move, dz)
            vert += move
            budget = 0.0

    position, dist = state.position, state.distance_m
    heading, gs = state.heading_deg, 0.0
    if budget > 0 and position != target.location:
        zone = utm_zone(cfg.home.lat_deg, cfg.home.lon_deg)
        here = latlon_to_utm(position, zone)
        there = latlon_to_utm(target.location, zone)
        de, dn = there.easting_m - here.easting_m, there.northing_m - here.northing_m
        remaining = math.hypot(de, dn)
        if remaining > 0:
            heading, gs = _bearing_deg(de, dn), speed
        need = remaining / speed
        if need <= budget:
            position = GeoPoint(target.location.lat_deg, target.location.lon_deg)
            dist += remaining
            budget -= need
        else:
            frac = speed * budget / remaining
            moved = UtmPoint(zone, here.hemisphere, here.easting_m + frac * de, here.northing_m + frac * dn)
            position = utm_to_latlon(moved)
            dist += speed * budget
            budget = 0.0
    return replace(state, position=position, alt_m=alt, heading_deg=heading, groundspeed_mps=gs,
                   t_s=state.t_s + (dt - budget), distance_m=dist, vertical_m=vert)


def _reached(state: VehicleState, target: Waypoint) -> bool:
    return state.position == target.location and state.alt_m == target.alt_m


class Vehicle:
    """Mode state machine plus mission sequencing around :func:`step`."""

    def __init__(self, cfg: SimConfig = SimConfig(), home: GeoPoint | None = None,
                 speed_mps: float | None = None):
        self.cfg = cfg
        home = home or cfg.home
        self.home = GeoPoint(home.lat_deg, home.lon_deg)
        self.speed = speed_mps or cfg.cruise_speed_mps
        self.state = VehicleState(self.home, heading_deg=cfg.initial_heading_deg)
        self.mission: list[Waypoint] = []
        self.spray_events: list[SprayEvent] = []
        self.trajectory: list[tuple[float, float, float, float]] = []
        self._phase: str | None = None  # fly | dwell | rtl | land | takeoff
        self._dwell_left = 0.0
        self._hover_alt = 0.0
        self._record()

    # -- commands ------------------------------------------------------------
    def load_mission(self, waypoints) -> None:
        self.mission = list(waypoints)

    def set_mode(self, mode: str) -> bool:
        s = self.state
        if mode == GUIDED:
            if s.mode == AUTO and self._phase in ("fly", "dwell"):
                self._phase = None
                self._hover_alt = s.alt_m
            self.state = replace(s, mode=GUIDED)
            return True
        if mode == AUTO:
            if not s.armed or not self.mission:
                return False
            self.state = replace(s, mode=AUTO, current_wp=0)
            self._phase = "fly"
            return True
        if mode == RETURNING:
            if not s.armed:
                return False
            self.state = replace(s, mode=RETURNING)
            self._phase = "rtl" if s.alt_m > 0 else "land"
            return True
        if mode == LANDED:
            if not s.armed:
                return False
            self.state = replace(s, mode=LANDED)
            self._phase = "land"
            return True
        return False

    def arm(self) -> bool:
        s = self.state
        if s.armed or s.mode not in (GUIDED, AUTO) or s.alt_m > 0:
            return s.armed
        self.state = replace(s, armed=True)
        return True

    def disarm(self) -> bool:
        if self.state.alt_m > 0:
            return False
        self.state = replace(self.state, armed=False)
        self._phase = None
        return True

    def takeoff(self, alt_m: float) -> bool:
        s = self.state
        if not (s.armed and s.mode == GUIDED and alt_m > 0):
            return False
        self._phase = "takeoff"
        self._hover_alt = alt_m
        return True

    @property
    def active(self) -> bool:
        return self.state.armed and self._phase is not None

    @property
    def finished(self) -> bool:
        return self.state.mode == LANDED and not self.state.armed

    # -- simulation ----------------------------------------------------------
    def _target(self) -> Waypoint:
        s = self.state
        here = GeoPoint(s.position.lat_deg, s.position.lon_deg)
        if self._phase == "takeoff":
            return Waypoint(0, here, self._hover_alt, TAKEOFF)
        if self._phase == "rtl":
            return Waypoint(0, self.home, s.alt_m, RETURN_TO_LAUNCH)
        if self._phase == "land":
            return Waypoint(0, here, 0.0, RETURN_TO_LAUNCH)
        wp = self.mission[s.current_wp]
        if wp.action == TAKEOFF:
            return Waypoint(wp.seq, here, wp.alt_m, TAKEOFF)
        if wp.action == RETURN_TO_LAUNCH:
            return Waypoint(wp.seq, self.home, s.alt_m, RETURN_TO_LAUNCH)
        return wp

    def _advance_wp(self) -> None:
        s = self.state
        nxt = s.current_wp + 1
        self.state = replace(s, current_wp=nxt)
        if nxt >= len(self.mission):
            self.state = replace(self.state, mode=RETURNING)
            self._phase = "rtl"
        else:
            self._phase = "fly"

    def _arrived(self) -> None:
        s = self.state
        if self._phase == "takeoff":
            self._phase = None
        elif self._phase == "rtl":
            self._phase = "land"
        elif self._phase == "land":
            self.state = replace(s, armed=False, mode=LANDED, groundspeed_mps=0.0)
            self._phase = None
        else:
            wp = self.mission[s.current_wp]
            if wp.action == SPRAY:
                dwell = self.cfg.dwell_s if self.cfg.dwell_s is not None else wp.dwell_s
                self.spray_events.append(SprayEvent(s.t_s, wp.location, dwell))
                self._dwell_left = dwell
                self._phase = "dwell"
                if dwell <= 0:
                    self._advance_wp()
            elif wp.action == RETURN_TO_LAUNCH:
                self.state = replace(s, mode=RETURNING)
                self._phase = "land"
            else:
                self._advance_wp()

    def tick(self, dt: float | None = None) -> None:
        dt = self.cfg.dt_s if dt is None else dt
        s = self.state
        if not self.active:
            self.state = replace(s, t_s=s.t_s + dt, groundspeed_mps=0.0)
            return
        if self._phase == "dwell":
            used = min(dt, self._dwell_left)
            self._dwell_left -= used
            self.state = replace(s, t_s=s.t_s + used, groundspeed_mps=0.0)
            if self._dwell_left <= 0:
                self._advance_wp()
        else:
            target = self._target()
            self.state = step(s, target, self.cfg, dt, self.speed)
            if _reached(self.state, target):
                self._arrived()
        self._record()

    def _record(self) -> None:
        s = self.state
        self.trajectory.append((s.t_s, s.position.lat_deg, s.position.lon_deg, s.alt_m))

    def report(self) -> SimReport:
        s = self.state
        return SimReport(s.distance_m, s.vertical_m, s.t_s, list(self.spray_events), list(self.trajectory))


def run_mission(plan: MissionPlan, cfg: SimConfig = SimConfig()) -> SimReport:
    """Fly ``plan`` offline from its home and return the execution log."""
    cfg = replace(cfg, home=plan.home)
    v = Vehicle(cfg, speed_mps=plan.cruise_speed_mps)
    v.load_mission(plan.waypoints)
    v.set_mode(GUIDED)
    v.arm()
    if not v.set_mode(AUTO):
        raise RuntimeError("vehicle refused AUTO mode")
    # generous bound on the number of ticks; straight-line legs always terminate
    zone = utm_zone(plan.home.lat_deg, plan.home.lon_deg)
    pts = [latlon_to_utm(plan.home, zone)] + [latlon_to_utm(w.location, zone) for w in plan.waypoints]
    path = sum(math.hypot(a.easting_m - b.easting_m, a.northing_m - b.northing_m) for a, b in zip(pts, pts[1:]))
    alt = sum(2 * w.alt_m for w in plan.waypoints)
    dwell = sum(w.dwell_s if cfg.dwell_s is None else cfg.dwell_s for w in plan.sprays)
    bound = (path / v.speed + alt / cfg.climb_rate + dwell) / cfg.dt_s + 10 * len(plan.waypoints) + 100
    for _ in range(int(bound)):
        if v.finished:
            break
        v.tick()
    assert v.finished, "mission did not complete within the tick bound"
    return v.report()


def format_report(report: SimReport) -> str:
    d = {
        "total_distance_m": round(report.total_distance_m, 6),
        "vertical_distance_m": round(report.vertical_distance_m, 6),
        "total_time_s": round(report.total_time_s, 6),
        "spray_events": [
            {"t_s": round(e.t_s, 6), "lat": round(e.location.lat_deg, 9), "lon": round(e.location.lon_deg, 9),
             "dwell_s": e.dwell_s}
            for e in report.spray_events
        ],
    }
    return json.dumps(d, indent=2) + "\n"


def format_trajectory_csv(report: SimReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "lat", "lon", "alt_m"])
    for t, lat, lon, alt in report.trajectory:
        w.writerow([f"{t:.3f}", f"{lat:.9f}", f"{lon:.9f}", f"{alt:.3f}"])
    return buf.getvalue()


# --- mission protocol, vehicle side -----------------------------------------

class MissionReceiver:
    """Vehicle half of the upload handshake. ``handle`` returns the replies to send;
    a finished upload is left in ``completed`` until taken."""

    def __init__(self):
        self._items: list[Message | None] | None = None
        self._expected = 0
        self._last_count = -1
        self.completed: list[Message] | None = None

    def _reply(self, to: Message, name: str, **fields) -> Message:
        base = {"target_system": to.sysid, "target_component": to.compid, "mission_type": 0}
        base.update(fields)
        return Message(name, base)

    def handle(self, msg: Message) -> list[Message]:
        if msg.name == "MISSION_COUNT":
            n = msg["count"]
            self._last_count = n
            if n == 0:
                self._items = None
                self.completed = []
                return [self._reply(msg, "MISSION_ACK", type=wire.MAV_MISSION_ACCEPTED)]
            self._items = [None] * n
            self._expected = 0
            return [self._reply(msg, "MISSION_REQUEST_INT", seq=0)]
        if msg.name == "MISSION_ITEM_INT":
            seq = msg["seq"]
            if self._items is None:
                # repeated final item after our ACK was lost
                if self._last_count > 0 and seq == self._last_count - 1:
                    return [self._reply(msg, "MISSION_ACK", type=wire.MAV_MISSION_ACCEPTED)]
                return []
            if seq != self._expected:
                return [self._reply(msg, "MISSION_REQUEST_INT", seq=self._expected)]
            self._items[seq] = msg
            self._expected += 1
            if self._expected == len(self._items):
                self.completed = list(self._items)
                self._items = None
                return [self._reply(msg, "MISSION_ACK", type=wire.MAV_MISSION_ACCEPTED)]
            return [self._reply(msg, "MISSION_REQUEST_INT", seq=self._expected)]
        return []

    def take(self) -> list[Message] | None:
        done, self.completed = self.completed, None
        return done


# --- served vehicle ---------------------------------------------------------

def heartbeat_message(state: VehicleState) -> Message:
    base_mode = wire.MAV_MODE_FLAG_CUSTOM_MODE_ENABLED | (wire.MAV_MODE_FLAG_SAFETY_ARMED if state.armed else 0)
    return Message("HEARTBEAT", {
        "type": MAV_TYPE_QUADROTOR, "autopilot": MAV_AUTOPILOT_ARDUPILOTMEGA, "base_mode": base_mode,
        "custom_mode": MODE_NUMBERS[state.mode],
        "system_status": MAV_STATE_ACTIVE if state.armed else MAV_STATE_STANDBY, "mavlink_version": 3})


def position_message(state: VehicleState, home_alt_m: float = 0.0) -> Message:
    h = math.radians(state.heading_deg)
    return Message("GLOBAL_POSITION_INT", {
        "time_boot_ms": int(round(state.t_s * 1000)) & 0xFFFFFFFF,
        "lat": int(round(state.position.lat_deg * 1e7)), "lon": int(round(state.position.lon_deg * 1e7)),
        "alt": int(round((home_alt_m + state.alt_m) * 1000)), "relative_alt": int(round(state.alt_m * 1000)),
        "vx": int(round(state.groundspeed_mps * math.cos(h) * 100)),
        "vy": int(round(state.groundspeed_mps * math.sin(h) * 100)),
        "vz": 0, "hdg": int(round(state.heading_deg * 100)) % 36000})


class SimServer:
    """Vehicle behind a TCP master port, mirroring all outbound frames to UDP
    endpoints.

    Threads: acceptor/reader (frames in), vehicle loop (sole owner of the
    ``Vehicle``), sender (frames out).  They talk through queues only; the vehicle
    loop publishes immutable ``VehicleState`` snapshots.
    """

    def __init__(self, cfg: SimConfig = SimConfig(), host: str = "127.0.0.1", master_port: int = 5760,
                 out_ports=(14550, 14551, 14552), realtime_factor: float = 1.0,
                 sysid: int = 1, compid: int = 1):
        if not realtime_factor > 0:
            raise ValueError("real-time factor must be positive")
        self.cfg = cfg
        self.host = host
        self.master_port = master_port
        self.out_addrs = [(host, p) for p in out_ports]
        self.rtf = realtime_factor
        self.sysid, self.compid = sysid, compid
        self.dropped_frames = 0
        self.snapshot: VehicleState | None = None
        self._inbox: queue.Queue = queue.Queue()
        self._outbox: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._client: socket.socket | None = None
        self._client_lock = threading.Lock()
        self._seq = 0
        self._listener: socket.socket | None = None
        self._udp: socket.socket | None = None

    # -- lifecycle -----------------------------------------------------------
    def start(self) -> SimServer:
        self._listener = socket.create_server((self.host, self.master_port))
        self._listener.settimeout(0.1)
        self.master_port = self._listener.getsockname()[1]
        self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for target in (self._accept_loop, self._vehicle_loop, self._send_loop):
            t = threading.Thread(target=target, daemon=True, name=f"sim-{target.__name__}")
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        with self._client_lock:
            if self._client:
                self._client.close()
        if self._listener:
            self._listener.close()
        if self._udp:
            self._udp.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- network -------------------------------------------------------------
    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._client_lock:
                if self._client:
                    self._client.close()
                self._client = conn
            self._read_client(conn)

    def _read_client(self, conn: socket.socket) -> None:
        parser = FrameParser()
        conn.settimeout(0.1)
        while not self._stop.is_set():
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            before = parser.dropped
            for msg in parser.feed(data):
                self._inbox.put(msg)
            self.dropped_frames += parser.dropped - before
        with self._client_lock:
            if self._client is conn:
                self._client = None
        conn.close()

    def _send_loop(self) -> None:
        sent = 0
        while not self._stop.is_set() or not self._outbox.empty():
            try:
                frame = self._outbox.get(timeout=0.05)
            except queue.Empty:
                continue
            with self._client_lock:
                client = self._client
            if client is not None:
                try:
                    client.sendall(frame)
                except OSError:
                    pass
            for addr in self.out_addrs:
                try:
                    self._udp.sendto(frame, addr)
                except OSError:
                    pass
            sent += 1
            if sent % 64 == 0:
                # keep datagram bursts within loopback receive buffers
                time.sleep(0.002)

    def _emit(self, msg: Message) -> None:
        msg = Message(msg.name, msg.fields, self._seq, self.sysid, self.compid)
        self._seq = (self._seq + 1) & 0xFF
        self._outbox.put(encode_frame(msg))

    # -- vehicle -------------------------------------------------------------
    def _handle(self, v: Vehicle, receiver: MissionReceiver, msg: Message) -> None:
        if msg.name in ("MISSION_COUNT", "MISSION_ITEM_INT"):
            for reply in receiver.handle(msg):
                self._emit(reply)
            items = receiver.take()
            if items is not None:
                v.load_mission(item_to_waypoint(it, v.home) for it in items)
        elif msg.name == "SET_MODE":
            mode = MODE_BY_NUMBER.get(msg["custom_mode"])
            if mode is not None:
                v.set_mode(mode)
        elif msg.name == "COMMAND_LONG":
            cmd = msg["command"]
            if cmd == wire.MAV_CMD_COMPONENT_ARM_DISARM:
                ok = v.arm() if msg["param1"] >= 0.5 else v.disarm()
            elif cmd == wire.MAV_CMD_NAV_TAKEOFF:
                ok = v.takeoff(msg["param7"])
            elif cmd == wire.MAV_CMD_DO_SET_MODE:
                mode = MODE_BY_NUMBER.get(int(msg["param2"]))
                ok = mode is not None and v.set_mode(mode)
            elif cmd == wire.MAV_CMD_MISSION_START:
                ok = v.set_mode(AUTO)
            else:
                ok = None
            result = wire.MAV_RESULT_ACCEPTED if ok else (wire.MAV_RESULT_FAILED if ok is False else wire.MAV_RESULT_DENIED)
            self._emit(Message("COMMAND_ACK", {"command": cmd, "result": result,
                                               "target_system": msg.sysid, "target_component": msg.compid}))

    def _vehicle_loop(self) -> None:
        v = Vehicle(self.cfg)
        receiver = MissionReceiver()
        hb_period, pos_period = 1.0 / self.cfg.heartbeat_hz, 1.0 / self.cfg.position_hz
        next_hb = next_pos = 0.0
        while not self._stop.is_set():
            while True:
                try:
                    msg = self._inbox.get_nowait()
                except queue.Empty:
                    break
                self._handle(v, receiver, msg)
            active = v.active
            t0 = v.state.t_s
            v.tick()
            self.snapshot = v.state
            if not active:
                # idle vehicles keep no trajectory
                v.trajectory.clear()
            while v.state.t_s >= next_hb:
                self._emit(heartbeat_message(v.state))
                next_hb += hb_period
            while v.state.t_s >= next_pos:
                self._emit(position_message(v.state, v.home.alt_m))
                next_pos += pos_period
            rate = self.rtf if active else min(self.rtf, 1.0)
            if math.isinf(rate):
                time.sleep(0)
            else:
                time.sleep((v.state.t_s - t0) / rate)
