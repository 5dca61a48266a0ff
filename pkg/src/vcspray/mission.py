"""Mission construction from a tour, GCS spot CSV and plan files, and the
mission-upload handshake over a message link."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass

from . import wire
from .geodesy import GeoPoint
from .route import Tour
from .wire import Message

TAKEOFF = "takeoff"
SPRAY = "spray"
RETURN_TO_LAUNCH = "return_to_launch"
ACTIONS = (TAKEOFF, SPRAY, RETURN_TO_LAUNCH)

DEFAULT_ALT_M = 4.6
DEFAULT_DWELL_S = 2.0
DEFAULT_SPEED_MPS = 2.0


class UploadError(RuntimeError):
    pass


class UploadTimeout(UploadError):
    pass


@dataclass(frozen=True)
class Waypoint:
    seq: int
    location: GeoPoint
    alt_m: float
    action: str
    dwell_s: float = 0.0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown waypoint action {self.action!r}")
        if self.action in (TAKEOFF, SPRAY) and not self.alt_m > 0:
            raise ValueError(f"{self.action} waypoint needs a positive altitude")
        if self.dwell_s < 0:
            raise ValueError("dwell must be non-negative")


@dataclass(frozen=True)
class MissionConfig:
    alt_m: float = DEFAULT_ALT_M
    dwell_s: float = DEFAULT_DWELL_S
    speed_mps: float = DEFAULT_SPEED_MPS


@dataclass(frozen=True)
class MissionPlan:
    home: GeoPoint
    waypoints: tuple[Waypoint, ...]
    cruise_speed_mps: float = DEFAULT_SPEED_MPS

    def __post_init__(self):
        wps = self.waypoints
        if len(wps) < 2 or wps[0].action != TAKEOFF or wps[-1].action != RETURN_TO_LAUNCH:
            raise ValueError("mission must start with takeoff and end with return_to_launch")
        if any(a.seq >= b.seq for a, b in zip(wps, wps[1:])):
            raise ValueError("waypoint seq must be strictly increasing")
        if any(w.action != SPRAY for w in wps[1:-1]):
            raise ValueError("only spray waypoints may sit between takeoff and return")
        if not self.cruise_speed_mps > 0:
            raise ValueError("cruise speed must be positive")

    @property
    def sprays(self) -> list[Waypoint]:
        return [w for w in self.waypoints if w.action == SPRAY]


def build_mission(t: Tour, points: list[GeoPoint], cfg: MissionConfig = MissionConfig()) -> MissionPlan:
    """Takeoff at the tour's first node, one spray per node in tour order, then RTL."""
    if not t.order:
        raise ValueError("empty tour")
    if len(points) != len(t.order):
        raise ValueError("tour and point list differ in size")
    home = points[t.order[0]]
    wps = [Waypoint(0, home, cfg.alt_m, TAKEOFF)]
    for idx in t.order:
        wps.append(Waypoint(len(wps), points[idx], cfg.alt_m, SPRAY, cfg.dwell_s))
    wps.append(Waypoint(len(wps), home, cfg.alt_m, RETURN_TO_LAUNCH))
    return MissionPlan(GeoPoint(home.lat_deg, home.lon_deg), tuple(wps), cfg.speed_mps)


def mission_from_route(route_points: list[GeoPoint], cfg: MissionConfig = MissionConfig()) -> MissionPlan:
    """Mission from a closed route (as read from a route CSV, last row == first)."""
    pts = list(route_points)
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    return build_mission(Tour(tuple(range(len(pts))), 0.0), pts, cfg)


# --- files ------------------------------------------------------------------

def format_spot_csv(plan: MissionPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["latitude", "longitude"])
    for wp in plan.sprays:
        w.writerow([f"{wp.location.lat_deg:.7f}", f"{wp.location.lon_deg:.7f}"])
    return buf.getvalue()


def write_spot_csv(plan: MissionPlan, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(format_spot_csv(plan))


def parse_spot_csv(src) -> list[GeoPoint]:
    f = open(src, newline="") if not hasattr(src, "read") else src
    try:
        return [GeoPoint(float(r["latitude"]), float(r["longitude"])) for r in csv.DictReader(f)]
    finally:
        if f is not src:
            f.close()


def plan_to_dict(plan: MissionPlan) -> dict:
    return {
        "home": {"lat": plan.home.lat_deg, "lon": plan.home.lon_deg, "alt_m": plan.home.alt_m},
        "cruise_speed_mps": plan.cruise_speed_mps,
        "waypoints": [
            {"seq": w.seq, "action": w.action, "lat": w.location.lat_deg, "lon": w.location.lon_deg,
             "alt_m": w.alt_m, "dwell_s": w.dwell_s}
            for w in plan.waypoints
        ],
    }


def plan_from_dict(d: dict) -> MissionPlan:
    home = GeoPoint(d["home"]["lat"], d["home"]["lon"], d["home"].get("alt_m", 0.0))
    wps = tuple(Waypoint(int(w["seq"]), GeoPoint(w["lat"], w["lon"]), float(w["alt_m"]), w["action"],
                         float(w.get("dwell_s", 0.0))) for w in d["waypoints"])
    return MissionPlan(home, wps, float(d.get("cruise_speed_mps", DEFAULT_SPEED_MPS)))


def format_plan(plan: MissionPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2) + "\n"


def load_plan(path) -> MissionPlan:
    with open(path) as f:
        return plan_from_dict(json.load(f))


# --- wire items -------------------------------------------------------------

def to_e7(deg: float) -> int:
    return int(round(deg * 1e7))


def waypoint_to_item(wp: Waypoint, target_system: int = 1, target_component: int = 1) -> Message:
    command = {TAKEOFF: wire.MAV_CMD_NAV_TAKEOFF, SPRAY: wire.MAV_CMD_NAV_WAYPOINT,
               RETURN_TO_LAUNCH: wire.MAV_CMD_NAV_RETURN_TO_LAUNCH}[wp.action]
    rtl = wp.action == RETURN_TO_LAUNCH
    return Message("MISSION_ITEM_INT", {
        "target_system": target_system, "target_component": target_component,
        "seq": wp.seq, "frame": wire.MAV_FRAME_GLOBAL_RELATIVE_ALT_INT, "command": command,
        "current": int(wp.seq == 0), "autocontinue": 1,
        "param1": wp.dwell_s if wp.action == SPRAY else 0.0,
        "x": 0 if rtl else to_e7(wp.location.lat_deg),
        "y": 0 if rtl else to_e7(wp.location.lon_deg),
        "z": 0.0 if rtl else wp.alt_m,
        "mission_type": 0,
    })


def item_to_waypoint(item: Message, home: GeoPoint) -> Waypoint:
    f = item.fields
    cmd = f["command"]
    if cmd == wire.MAV_CMD_NAV_RETURN_TO_LAUNCH:
        return Waypoint(f["seq"], home, 0.0, RETURN_TO_LAUNCH)
    loc = GeoPoint(f["x"] / 1e7, f["y"] / 1e7)
    if cmd == wire.MAV_CMD_NAV_TAKEOFF:
        return Waypoint(f["seq"], loc, float(f["z"]), TAKEOFF)
    if cmd == wire.MAV_CMD_NAV_WAYPOINT:
        return Waypoint(f["seq"], loc, float(f["z"]), SPRAY, float(f["param1"]))
    raise ValueError(f"unsupported mission command {cmd}")


def upload_mission(plan: MissionPlan, link, timeout_s: float = 1.0, retries: int = 5,
                   target_system: int = 1, target_component: int = 1) -> Message:
    """Send ``plan`` with the count / request / item / ack handshake.

    On silence for ``timeout_s`` the last message sent is repeated, at most
    ``retries`` times in a row.  Unrelated traffic (telemetry) is ignored but does
    not reset the timeout.  Returns the final MISSION_ACK.
    """
    items = [waypoint_to_item(w, target_system, target_component) for w in plan.waypoints]
    last = Message("MISSION_COUNT", {"count": len(items), "target_system": target_system,
                                     "target_component": target_component, "mission_type": 0})
    link.send(last)
    misses = 0
    deadline = time.monotonic() + timeout_s
    while True:
        remaining = deadline - time.monotonic()
        msg = link.recv(remaining) if remaining > 0 else None
        if msg is None:
            misses += 1
            if misses > retries:
                raise UploadTimeout(f"no response after {retries} retries")
            link.send(last)
            deadline = time.monotonic() + timeout_s
            continue
        if msg.name == "MISSION_REQUEST_INT":
            seq = msg["seq"]
            if seq >= len(items):
                continue
            last = items[seq]
            link.send(last)
            misses = 0
            deadline = time.monotonic() + timeout_s
        elif msg.name == "MISSION_ACK":
            if msg["type"] != wire.MAV_MISSION_ACCEPTED:
                raise UploadError(f"mission rejected with result {msg['type']}")
            # an ACK before every item was requested belongs to a stale session
            if len(items) == 0 or last is items[-1]:
                return msg
