"""Serve the simulated vehicle on loopback, upload a mission over TCP the way a
ground station would, and watch it fly to landing."""

from __future__ import annotations

import math

from vcspray import AcoParams, aco_solve, build_distance_matrix, latlon_to_utm, wire
from vcspray.link import StreamLink
from vcspray.mission import build_mission, upload_mission
from vcspray.simulator import GUIDED, LANDED, MODE_BY_NUMBER, MODE_NUMBERS, SimConfig, SimServer
from vcspray.synthetic import FIELD_TRIAL_POINTS
from vcspray.wire import Message

dm = build_distance_matrix([latlon_to_utm(p, 14) for p in FIELD_TRIAL_POINTS])
plan = build_mission(aco_solve(dm, AcoParams(seed=0)).best, FIELD_TRIAL_POINTS)

# realtime_factor=inf runs the physics as fast as the CPU allows
with SimServer(SimConfig(home=plan.home), master_port=0, out_ports=(), realtime_factor=math.inf) as srv:
    print("vehicle listening on tcp port", srv.master_port)
    with StreamLink.connect("127.0.0.1", srv.master_port) as link:
        ack = upload_mission(plan, link, timeout_s=1.0)
        print("upload ack", ack["type"], "for", len(plan.waypoints), "items")
        link.send(Message("SET_MODE", {"target_system": 1, "base_mode": 1, "custom_mode": MODE_NUMBERS[GUIDED]}))
        link.send(Message("COMMAND_LONG", {"command": wire.MAV_CMD_COMPONENT_ARM_DISARM, "param1": 1.0,
                                           "target_system": 1, "target_component": 1}))
        link.send(Message("COMMAND_LONG", {"command": wire.MAV_CMD_MISSION_START,
                                           "target_system": 1, "target_component": 1}))
        mode = None
        while mode != LANDED:
            m = link.recv(5.0)
            if m is None:
                break
            if m.name == "HEARTBEAT" and MODE_BY_NUMBER.get(m["custom_mode"]) != mode:
                mode = MODE_BY_NUMBER.get(m["custom_mode"])
                print("mode ->", mode)
            elif m.name == "STATUSTEXT":
                print("  ", m["text"])
    print("final state", srv.snapshot.mode, "armed" if srv.snapshot.armed else "disarmed")
