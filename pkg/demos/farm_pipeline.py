"""Run the whole detections-to-mission chain on a synthetic farm and check the
recovered spray targets against the planted ground truth."""

from __future__ import annotations

import json
import math
import sys
import tempfile
from pathlib import Path

from vcspray import latlon_to_utm
from vcspray.cli import cmd_pipeline, recover_targets
from vcspray.config import load_config
from vcspray.synthetic import FARM_GSD, make_farm

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="vcspray-"))
farm = make_farm(work / "farm")
print(f"farm at {farm.directory}: {farm.n_detections} detections of {len(farm.truth)} plants")

cfg = load_config(farm.config_path)
outputs = cmd_pipeline(cfg)
for path in outputs:
    print("wrote", path)

# full-precision targets, before the CSV rounds them to 7 decimals
targets = recover_targets(cfg)


def metres(a, b) -> float:
    ua, ub = latlon_to_utm(a, 14), latlon_to_utm(b, 14)
    return math.hypot(ua.easting_m - ub.easting_m, ua.northing_m - ub.northing_m)


for g in farm.truth:
    best = min(targets, key=lambda t: metres(t.location, g))
    print(f"target {best.target_id}: {best.member_count} boxes, {1000 * metres(best.location, g):.3f} mm off "
          f"(GSD {1000 * FARM_GSD:.1f} mm)")

report = json.loads(next(p for p in outputs if p.name == "report.json").read_text())
print(f"simulated {report['total_distance_m']:.1f} m, {report['total_time_s']:.1f} s, "
      f"{len(report['spray_events'])} sprays")
