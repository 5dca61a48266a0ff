"""Route the ten field-trial spray points with the ant colony and compare it
against the exact optimum and the flown order."""

from __future__ import annotations

import time

import numpy as np

from vcspray import AcoParams, aco_solve, brute_force_tsp, build_distance_matrix, latlon_to_utm, tour_length
from vcspray.mission import build_mission, format_spot_csv
from vcspray.simulator import run_mission
from vcspray.synthetic import FIELD_TRIAL_ORDER, FIELD_TRIAL_POINTS

# project every point into UTM zone 14 so distances are plain metres
pts = [latlon_to_utm(p, 14) for p in FIELD_TRIAL_POINTS]
dm = build_distance_matrix(pts)
print(f"{dm.n} points, longest leg {dm.d.max():.1f} m")

# ten points is small enough to enumerate every tour
t0 = time.perf_counter()
opt = brute_force_tsp(dm)
print(f"optimum {opt.length_m:.2f} m in {time.perf_counter() - t0:.2f} s, order {opt.order}")
print(f"flown order {FIELD_TRIAL_ORDER}: {tour_length(FIELD_TRIAL_ORDER, dm):.2f} m")

# one ant, 100 iterations; the colony is very sensitive to its seed
lengths = []
for seed in range(20):
    res = aco_solve(dm, AcoParams(seed=seed))
    lengths.append(res.best.length_m)
lengths = np.array(lengths)
print(f"ACO over 20 seeds: best {lengths.min():.2f} m, median {np.median(lengths):.2f} m, worst {lengths.max():.2f} m")

# the best-of-history curve never rises
res = aco_solve(dm, AcoParams(seed=int(lengths.argmin())))
print("history", [round(h, 1) for h in res.history[::20]], "...", round(res.history[-1], 1))

# turn the tour into a mission and fly it offline
plan = build_mission(res.best, FIELD_TRIAL_POINTS)
rep = run_mission(plan)
print(f"{len(plan.waypoints)} mission items, flew {rep.total_distance_m:.1f} m in {rep.total_time_s:.1f} s, "
      f"{len(rep.spray_events)} spray events")
print(format_spot_csv(plan).splitlines()[:3])
