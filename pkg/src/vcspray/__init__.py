"""Detections-to-mission toolkit for UAS spot spraying: radiometric correction,
bounding-box georeferencing, ant-colony route planning, mission files and a
MAVLink-framed SITL-style vehicle simulator."""

from .geodesy import GeoPoint, Gsd, UtmPoint, latlon_to_utm, utm_to_latlon
from .route import AcoParams, DistanceMatrix, Tour, aco_solve, brute_force_tsp, build_distance_matrix, tour_length

__version__ = "0.1.0"
