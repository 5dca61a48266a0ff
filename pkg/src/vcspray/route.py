"""Closed-tour ordering of spray targets by ant colony optimization, with exact
solvers used as oracles.

Ants choose the next node ``j`` from ``i`` with probability proportional to
``tau[i, j]**alpha * eta[i, j]**beta`` over the unvisited nodes, where ``tau`` is
the pheromone and ``eta = 1 / d`` the visibility.  Pheromone follows the Ant System
rule: evaporate by ``rho`` then each ant deposits ``q / L`` on every edge of its
tour.  Randomness comes from numpy's PCG64 generator seeded by ``AcoParams.seed``.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .geodesy import GeoPoint, UtmPoint

TAU_MIN = 1e-12
MAX_DISTANCE_M = 1e7
EXHAUSTIVE_MAX_N = 10
HELD_KARP_MAX_N = 16


@dataclass(frozen=True)
class DistanceMatrix:
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"distance matrix must be square, got shape {d.shape}")
        if not np.allclose(d, d.T, rtol=0, atol=1e-9):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("distance matrix diagonal must be zero")
        off = d[~np.eye(len(d), dtype=bool)]
        if off.size and (off.min() <= 0 or off.max() > MAX_DISTANCE_M):
            raise ValueError("off-diagonal distances must lie in (0, 1e7] m (duplicate points?)")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class AcoParams:
    alpha: float = 2.01
    beta: float = 1.0
    rho: float = 0.5
    n_ants: int = 1
    n_iterations: int = 100
    q: float | None = None  # default: mean pairwise distance
    tau0: float | None = None  # default: q / (n * nearest-neighbour tour length)
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.n_ants < 1 or self.n_iterations < 1:
            raise ValueError("n_ants and n_iterations must be >= 1")
        if self.q is not None and not self.q > 0:
            raise ValueError("q must be positive")
        if self.tau0 is not None and not self.tau0 > 0:
            raise ValueError("tau0 must be positive")


@dataclass
class AcoState:
    tau: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    length_m: float

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"tour order {self.order} is not a permutation of 0..n-1")


@dataclass
class AcoResult:
    best: Tour
    history: list[float] = field(default_factory=list)


def build_distance_matrix(points: list[UtmPoint]) -> DistanceMatrix:
    if len(points) < 2:
        raise ValueError("need at least two points")
    zones = {(p.zone, p.hemisphere) for p in points}
    if len(zones) > 1:
        raise ValueError(f"points span several UTM zones: {sorted(zones)}")
    xy = np.array([[p.easting_m, p.northing_m] for p in points])
    d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    off = d[~np.eye(len(d), dtype=bool)]
    if np.any(off == 0):
        i, j = np.argwhere((d == 0) & ~np.eye(len(d), dtype=bool))[0]
        raise ValueError(f"points {i} and {j} coincide")
    return DistanceMatrix(d)


def haversine_m(a: GeoPoint, b: GeoPoint, radius_m: float = 6371008.8) -> float:
    """Great-circle distance on the mean-radius sphere."""
    p1, p2 = np.radians(a.lat_deg), np.radians(b.lat_deg)
    dp = p2 - p1
    dl = np.radians(b.lon_deg - a.lon_deg)
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return float(2 * radius_m * np.arcsin(np.sqrt(h)))


def tour_length(t: Tour | tuple[int, ...] | list[int], dm: DistanceMatrix) -> float:
    order = np.asarray(t.order if isinstance(t, Tour) else t, dtype=int)
    return float(dm.d[order, np.roll(order, -1)].sum())


def make_tour(order, dm: DistanceMatrix) -> Tour:
    order = tuple(int(i) for i in order)
    return Tour(order, tour_length(order, dm))


def nearest_neighbor_tour(dm: DistanceMatrix, start: int = 0) -> Tour:
    n = dm.n
    unvisited = set(range(n)) - {start}
    order = [start]
    while unvisited:
        cur = order[-1]
        nxt = min(unvisited, key=lambda j: (dm.d[cur, j], j))
        order.append(nxt)
        unvisited.remove(nxt)
    return make_tour(order, dm)


def resolve_params(dm: DistanceMatrix, params: AcoParams) -> AcoParams:
    """Fill in the data-dependent defaults for q and tau0."""
    q = params.q
    if q is None:
        q = float(dm.d[np.triu_indices(dm.n, 1)].mean())
    tau0 = params.tau0
    if tau0 is None:
        tau0 = q / (dm.n * nearest_neighbor_tour(dm).length_m)
    return replace(params, q=q, tau0=tau0)


def init_state(dm: DistanceMatrix, params: AcoParams) -> AcoState:
    params = resolve_params(dm, params)
    n = dm.n
    tau = np.full((n, n), params.tau0)
    np.fill_diagonal(tau, 0.0)
    with np.errstate(divide="ignore"):
        eta = np.where(np.eye(n, dtype=bool), 0.0, 1.0 / dm.d)
    return AcoState(tau, eta)


def transition_probabilities(state: AcoState, current: int, allowed, params: AcoParams) -> np.ndarray:
    """Probabilities over ``allowed`` (in the given order) of moving from ``current``."""
    allowed = np.asarray(list(allowed), dtype=int)
    if allowed.size == 0:
        raise ValueError("no allowed nodes")
    if current in allowed:
        raise ValueError("current node is in the allowed set")
    weights = state.tau[current, allowed] ** params.alpha * state.eta[current, allowed] ** params.beta
    total = weights.sum()
    assert total > 0, "all transition weights vanished"
    return weights / total


def construct_tour(state: AcoState, dm: DistanceMatrix, params: AcoParams, start: int,
                   rng: np.random.Generator) -> Tour:
    n = dm.n
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    cur = start
    for _ in range(n - 1):
        allowed = np.flatnonzero(~visited)
        p = transition_probabilities(state, cur, allowed, params)
        # roulette wheel
        k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        nxt = int(allowed[min(k, allowed.size - 1)])
        order.append(nxt)
        visited[nxt] = True
        cur = nxt
    return make_tour(order, dm)


def pheromone_update(state: AcoState, tours: list[Tour], params: AcoParams) -> AcoState:
    """Evaporate by ``rho`` then deposit ``q / L`` symmetrically on each tour edge."""
    if params.q is None:
        raise ValueError("q must be resolved before updating pheromone (see resolve_params)")
    tau = (1 - params.rho) * state.tau
    for t in tours:
        order = np.asarray(t.order)
        i, j = order, np.roll(order, -1)
        delta = params.q / t.length_m
        np.add.at(tau, (i, j), delta)
        np.add.at(tau, (j, i), delta)
    off = ~np.eye(len(tau), dtype=bool)
    tau[off] = np.maximum(tau[off], TAU_MIN)
    return AcoState(tau, state.eta)


def aco_solve(dm: DistanceMatrix, params: AcoParams = AcoParams(), start: int = 0) -> AcoResult:
    if not 0 <= start < dm.n:
        raise ValueError(f"start node {start} outside 0..{dm.n - 1}")
    params = resolve_params(dm, params)
    rng = np.random.Generator(np.random.PCG64(params.seed))
    state = init_state(dm, params)
    best: Tour | None = None
    history: list[float] = []
    for _ in range(params.n_iterations):
        tours = [construct_tour(state, dm, params, start, rng) for _ in range(params.n_ants)]
        for t in tours:
            if best is None or t.length_m < best.length_m:
                best = t
        state = pheromone_update(state, tours, params)
        history.append(best.length_m)
    return AcoResult(best, history)


def brute_force_tsp(dm: DistanceMatrix) -> Tour:
    """Provably optimal closed tour starting at node 0.

    Exhaustive enumeration up to 10 nodes (the lexicographically smallest order
    wins among equal-length optima); Held-Karp dynamic programming up to 16.
    """
    n = dm.n
    if n > HELD_KARP_MAX_N:
        raise ValueError(f"exact TSP limited to {HELD_KARP_MAX_N} nodes, got {n}")
    if n <= 3:
        return make_tour(range(n), dm)
    if n > EXHAUSTIVE_MAX_N:
        return held_karp(dm)
    perms = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    # each tour and its reversal: keep the one with first < last
    perms = perms[perms[:, 0] < perms[:, -1]]
    d = dm.d
    lengths = d[0, perms[:, 0]] + d[perms[:, :-1], perms[:, 1:]].sum(axis=1) + d[perms[:, -1], 0]
    best = lengths.min()
    idx = int(np.flatnonzero(lengths <= best * (1 + 1e-12))[0])
    return make_tour((0, *perms[idx]), dm)


def held_karp(dm: DistanceMatrix) -> Tour:
    n = dm.n
    d = dm.d
    m = n - 1  # nodes 1..n-1 mapped to bits 0..m-1
    full = 1 << m
    cost = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int64)
    for j in range(m):
        cost[1 << j, j] = d[0, j + 1]
    sub = d[1:, 1:]
    for mask in range(1, full):
        members = [j for j in range(m) if mask >> j & 1]
        if len(members) < 2:
            continue
        for j in members:
            prev = mask ^ (1 << j)
            cand = cost[prev] + sub[:, j]
            k = int(np.argmin(cand))
            cost[mask, j] = cand[k]
            parent[mask, j] = k
    final = cost[full - 1] + d[1:, 0]
    j = int(np.argmin(final))
    order = []
    mask = full - 1
    while j >= 0:
        order.append(j + 1)
        j, mask = int(parent[mask, j]), mask ^ (1 << j)
    return make_tour((0, *reversed(order)), dm)


# --- CSV outputs ------------------------------------------------------------

def format_route_csv(t: Tour, points: list[GeoPoint]) -> str:
    if len(points) != len(t.order):
        raise ValueError("tour and point list differ in size")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "latitude", "longitude"])
    closed = list(t.order) + [t.order[0]]
    for k, idx in enumerate(closed, start=1):
        p = points[idx]
        w.writerow([k, f"{p.lat_deg:.7f}", f"{p.lon_deg:.7f}"])
    return buf.getvalue()


def export_route_csv(t: Tour, points: list[GeoPoint], path) -> None:
    with open(path, "w", newline="") as f:
        f.write(format_route_csv(t, points))


def parse_route_csv(src) -> list[GeoPoint]:
    """Read a route CSV back as the ordered, closed list of points (n + 1 rows)."""
    f = open(src, newline="") if not hasattr(src, "read") else src
    try:
        reader = csv.DictReader(f)
        missing = {"node", "latitude", "longitude"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"route CSV missing columns {sorted(missing)}")
        rows = sorted(reader, key=lambda r: int(r["node"]))
        return [GeoPoint(float(r["latitude"]), float(r["longitude"])) for r in rows]
    finally:
        if f is not src:
            f.close()


def format_history_csv(history: list[float]) -> str:
    lines = ["iteration,best_length_m"]
    lines += [f"{i},{v:.4f}" for i, v in enumerate(history, start=1)]
    return "\n".join(lines) + "\n"
