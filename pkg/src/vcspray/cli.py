"""Command line front-end: ``vcspray {calibrate,georef,route,mission,simulate,pipeline}``.

Every stage validates its inputs before writing, and each output file is written
atomically (temp file + rename) so a failed run never leaves partial outputs.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import detections as det
from . import mission as msn
from . import radiometry as rad
from . import route as rte
from . import simulator as sim
from .config import ConfigError, load_config, resolve_path
from .geodesy import CameraModel, GeoPoint, Gsd, compute_gsd, latlon_to_utm

log = logging.getLogger("vcspray")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def write_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(cfg: dict) -> Path:
    return resolve_path(cfg, cfg["paths"]["out"])


def _require(stage: str, path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise PipelineError(stage, f"{what} not found: {path}")
    return path


def pipeline_gsd(cfg: dict) -> Gsd | None:
    g = cfg["geodesy"]
    if g.get("gsd_m_per_px"):
        return Gsd(float(g["gsd_m_per_px"]))
    if g.get("camera") and g.get("altitude_m"):
        return compute_gsd(CameraModel(**g["camera"]), float(g["altitude_m"]))
    return None


# --- stages -----------------------------------------------------------------

def cmd_calibrate(cfg: dict) -> list[Path]:
    stage = "calibrate"
    bands_cfg = cfg["paths"].get("bands")
    if not bands_cfg:
        raise PipelineError(stage, "paths.bands is not configured")
    r = cfg["radiometry"]
    if r.get("panel_region") is None:
        raise PipelineError(stage, "radiometry.panel_region is not configured")
    panel = rad.ReflectancePanel(dict(r["panel_reflectance"]))
    try:
        factors = {}
        for band, raster in bands_cfg["panel"].items():
            img = rad.load_band(_require(stage, resolve_path(cfg, raster), "panel raster"), band)
            factors[band] = rad.panel_factor(rad.raw_to_radiance(img), tuple(r["panel_region"]), panel)
        outputs: dict[Path, bytes] = {}
        out = _out_dir(cfg) / "calibrated"
        for capture in bands_cfg["captures"]:
            cid = capture["id"]
            enhanced = {}
            for band, raster in capture.items():
                if band == "id":
                    continue
                if band not in factors:
                    raise PipelineError(stage, f"{cid}: no panel capture for band {band!r}")
                img = rad.load_band(_require(stage, resolve_path(cfg, raster), "band raster"), band)
                refl = rad.radiance_to_reflectance(rad.raw_to_radiance(img), factors[band])
                buf = io.BytesIO()
                rad.save_reflectance(buf, refl)
                outputs[out / f"{cid}_{band}_reflectance.tif"] = buf.getvalue()
                sharp = rad.unsharp_mask(refl, r["unsharp_amount"], r["unsharp_radius_px"])
                enhanced[band] = rad.gamma_correct(sharp, r["gamma"])
            if all(b in enhanced for b in ("red", "green", "blue")):
                offsets = {k: tuple(v) for k, v in (r.get("band_offsets") or {}).items()}
                rgb = rad.compose_rgb(enhanced["red"], enhanced["green"], enhanced["blue"], offsets)
                buf = io.BytesIO()
                rad.save_rgb(buf, rgb)
                outputs[out / f"{cid}_rgb.png"] = buf.getvalue()
    except rad.RadiometryError as exc:
        raise PipelineError(stage, str(exc)) from None
    for path, data in outputs.items():
        write_atomic(path, data)
    return list(outputs)


def recover_targets(cfg: dict) -> list[det.SprayTarget]:
    """Georeference and cluster the detections; full precision, nothing written."""
    stage = "georef"
    p = cfg["paths"]
    try:
        geotags = det.parse_geotags(_require(stage, resolve_path(cfg, p["geotags"]), "geotag CSV"),
                                    default_yaw=float(cfg["geodesy"]["default_yaw"]))
        dcfg = cfg["detections"]
        records = det.parse_detections(_require(stage, resolve_path(cfg, p["detections"]), "detections CSV"),
                                       normalized=bool(dcfg["normalized"]),
                                       image_size=tuple(dcfg["image_size"]))
        c = cfg["clustering"]
        kept = det.filter_confidence(records, float(c["min_confidence"]))
        zone = cfg["geodesy"]["forced_zone"]
        points = det.georeference_all(kept, geotags, pipeline_gsd(cfg), zone)
        targets = det.cluster_targets(points, float(c["radius_m"]), [d.confidence for d in kept], zone)
    except (det.InputError, ValueError) as exc:
        raise PipelineError(stage, str(exc)) from None
    log.info("georef: %d detections -> %d targets", len(kept), len(targets))
    return targets


def cmd_georef(cfg: dict) -> Path:
    targets = recover_targets(cfg)
    path = _out_dir(cfg) / "targets.csv"
    write_atomic(path, det.format_targets_csv(targets))
    return path


def aco_params(cfg: dict) -> rte.AcoParams:
    a = cfg["aco"]
    return rte.AcoParams(alpha=float(a["alpha"]), beta=float(a["beta"]), rho=float(a["rho"]),
                         n_ants=int(a["n_ants"]), n_iterations=int(a["n_iterations"]),
                         q=None if a.get("q") is None else float(a["q"]),
                         tau0=None if a.get("tau0") is None else float(a["tau0"]),
                         seed=int(a["seed"]))


def cmd_route(cfg: dict, targets_csv: Path | None = None) -> tuple[Path, Path]:
    stage = "route"
    out = _out_dir(cfg)
    targets_csv = _require(stage, targets_csv or out / "targets.csv", "targets CSV")
    try:
        targets = det.parse_targets_csv(targets_csv)
        points = [t.location for t in targets]
        if not points:
            raise PipelineError(stage, f"{targets_csv} holds no targets")
        if len(points) == 1:
            tour, history = rte.Tour((0,), 0.0), [0.0]
        else:
            zone = cfg["geodesy"]["forced_zone"] or latlon_to_utm(points[0]).zone
            dm = rte.build_distance_matrix([latlon_to_utm(p, zone) for p in points])
            result = rte.aco_solve(dm, aco_params(cfg), int(cfg["aco"]["start"]))
            tour, history = result.best, result.history
    except (det.InputError, ValueError) as exc:
        raise PipelineError(stage, str(exc)) from None
    route_path, history_path = out / "route.csv", out / "history.csv"
    write_atomic(route_path, rte.format_route_csv(tour, points))
    write_atomic(history_path, rte.format_history_csv(history))
    log.info("route: %d nodes, best length %.2f m", len(points), tour.length_m)
    return route_path, history_path


def mission_config(cfg: dict) -> msn.MissionConfig:
    m = cfg["mission"]
    return msn.MissionConfig(float(m["alt_m"]), float(m["dwell_s"]), float(m["speed_mps"]))


def cmd_mission(cfg: dict, route_csv: Path | None = None) -> tuple[Path, Path]:
    stage = "mission"
    out = _out_dir(cfg)
    route_csv = _require(stage, route_csv or out / "route.csv", "route CSV")
    try:
        plan = msn.mission_from_route(rte.parse_route_csv(route_csv), mission_config(cfg))
    except (KeyError, ValueError) as exc:
        raise PipelineError(stage, str(exc)) from None
    spot_path, plan_path = out / "spot.csv", out / "mission.json"
    write_atomic(spot_path, msn.format_spot_csv(plan))
    write_atomic(plan_path, msn.format_plan(plan))
    return spot_path, plan_path


def sim_config(cfg: dict) -> sim.SimConfig:
    s = cfg["sim"]
    return sim.SimConfig(home=GeoPoint(*s["home"]), initial_heading_deg=float(s["initial_heading_deg"]),
                         cruise_speed_mps=float(cfg["mission"]["speed_mps"]), dt_s=float(s["dt_s"]),
                         accept_radius_m=float(s["accept_radius_m"]))


def make_server(cfg: dict) -> sim.SimServer:
    s = cfg["sim"]
    return sim.SimServer(sim_config(cfg), s["host"], int(s["master_port"]), tuple(s["out_ports"]),
                         float(s["realtime_factor"]))


def cmd_simulate(cfg: dict, plan_path: Path | None = None, serve: bool = False):
    stage = "simulate"
    if serve:
        server = make_server(cfg)
        log.info("serving on tcp:%s:%s, telemetry to udp ports %s", cfg["sim"]["host"],
                 cfg["sim"]["master_port"], cfg["sim"]["out_ports"])
        server.serve_forever()
        return None
    out = _out_dir(cfg)
    plan_path = _require(stage, plan_path or out / "mission.json", "mission plan")
    try:
        plan = msn.load_plan(plan_path)
    except (KeyError, ValueError) as exc:
        raise PipelineError(stage, f"{plan_path}: {exc}") from None
    report = sim.run_mission(plan, sim_config(cfg))
    report_path, traj_path = out / "report.json", out / "trajectory.csv"
    write_atomic(report_path, sim.format_report(report))
    write_atomic(traj_path, sim.format_trajectory_csv(report))
    log.info("simulate: %.2f m in %.1f s, %d spray events", report.total_distance_m,
             report.total_time_s, len(report.spray_events))
    return report_path, traj_path


def cmd_pipeline(cfg: dict, calibrate: bool = False) -> list[Path]:
    outputs: list[Path] = []
    if calibrate:
        outputs += cmd_calibrate(cfg)
    outputs.append(cmd_georef(cfg))
    outputs += cmd_route(cfg)
    outputs += cmd_mission(cfg)
    outputs += cmd_simulate(cfg)
    return outputs


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcspray", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON pipeline config")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--seed", type=int, help="ACO seed (overrides aco.seed)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set aco.n_ants=5")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="raw bands -> reflectance + RGB composites")
    sub.add_parser("georef", parents=[common], help="detections -> clustered spray targets")
    p = sub.add_parser("route", parents=[common], help="targets -> ACO route + convergence history")
    p.add_argument("--targets", type=Path)
    p = sub.add_parser("mission", parents=[common], help="route -> spot CSV + mission plan")
    p.add_argument("--route", type=Path)
    p = sub.add_parser("simulate", parents=[common], help="fly a mission offline, or serve a vehicle")
    p.add_argument("--plan", type=Path)
    p.add_argument("--serve", action="store_true", help="run the networked vehicle instead")
    p = sub.add_parser("pipeline", parents=[common], help="georef -> route -> mission -> simulate")
    p.add_argument("--calibrate", action="store_true", help="run calibrate first")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.out is not None:
        overrides.append(f"paths.out={args.out}")
    if args.seed is not None:
        overrides.append(f"aco.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        if args.out is not None:
            # flag paths are relative to the working directory, not the config file
            cfg["paths"]["out"] = str(Path(args.out).resolve())
        if args.command == "calibrate":
            result = cmd_calibrate(cfg)
        elif args.command == "georef":
            result = cmd_georef(cfg)
        elif args.command == "route":
            result = cmd_route(cfg, args.targets)
        elif args.command == "mission":
            result = cmd_mission(cfg, args.route)
        elif args.command == "simulate":
            result = cmd_simulate(cfg, args.plan, serve=args.serve)
        else:
            result = cmd_pipeline(cfg, calibrate=args.calibrate)
    except (PipelineError, ConfigError) as exc:
        print(f"vcspray: error: {exc}", file=sys.stderr)
        return 2
    paths = result if isinstance(result, (list, tuple)) else [result]
    for p in paths:
        if p is not None:
            print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
