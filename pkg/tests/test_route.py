from __future__ import annotations

import io
import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcspray.geodesy import GeoPoint, UtmPoint, latlon_to_utm
from vcspray.route import (
    AcoParams,
    DistanceMatrix,
    Tour,
    aco_solve,
    brute_force_tsp,
    build_distance_matrix,
    format_history_csv,
    format_route_csv,
    haversine_m,
    held_karp,
    init_state,
    make_tour,
    nearest_neighbor_tour,
    parse_route_csv,
    pheromone_update,
    resolve_params,
    tour_length,
    transition_probabilities,
)
from vcspray.synthetic import FIELD_TRIAL_ORDER, FIELD_TRIAL_POINTS

# frozen regression values for the field-trial instance (zone 14, planar UTM)
TRIAL_ORDER_LENGTH_M = 1183.3706
TRIAL_OPTIMUM_M = 1068.2974
TRIAL_OPTIMUM_ORDER = (0, 2, 6, 8, 7, 4, 5, 1, 3, 9)
TRIAL_SEED0_ORDER = (0, 5, 2, 1, 3, 9, 8, 6, 7, 4)
TRIAL_SEED0_LENGTH_M = 1240.9791


@pytest.fixture(scope="module")
def trial_dm():
    return build_distance_matrix([latlon_to_utm(p, 14) for p in FIELD_TRIAL_POINTS])


def planar_dm(xy) -> DistanceMatrix:
    xy = np.asarray(xy, dtype=float)
    return DistanceMatrix(np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1)))


def naive_optimum(d: np.ndarray) -> float:
    n = len(d)
    best = math.inf
    for perm in itertools.permutations(range(1, n)):
        order = (0, *perm)
        best = min(best, sum(d[order[i], order[(i + 1) % n]] for i in range(n)))
    return best


def test_trial_order_length_independent_oracle(trial_dm):
    pyproj = pytest.importorskip("pyproj")
    tf = pyproj.Transformer.from_crs("EPSG:4326", "EPSG:32614", always_xy=True)
    xy = [tf.transform(p.lon_deg, p.lat_deg) for p in FIELD_TRIAL_POINTS]
    order = list(FIELD_TRIAL_ORDER) + [FIELD_TRIAL_ORDER[0]]
    ref = sum(math.dist(xy[a], xy[b]) for a, b in zip(order, order[1:]))
    assert ref == pytest.approx(TRIAL_ORDER_LENGTH_M, abs=1e-3)
    assert tour_length(FIELD_TRIAL_ORDER, trial_dm) == pytest.approx(ref, abs=1e-3)


def test_trial_order_haversine_cross_check(trial_dm):
    order = list(FIELD_TRIAL_ORDER) + [FIELD_TRIAL_ORDER[0]]
    hav = sum(haversine_m(FIELD_TRIAL_POINTS[a], FIELD_TRIAL_POINTS[b]) for a, b in zip(order, order[1:]))
    # planar UTM and great-circle lengths differ only by the local scale factor
    assert hav == pytest.approx(tour_length(FIELD_TRIAL_ORDER, trial_dm), rel=2e-3)


def test_trial_optimum(trial_dm):
    t = brute_force_tsp(trial_dm)
    assert t.order == TRIAL_OPTIMUM_ORDER
    assert t.length_m == pytest.approx(TRIAL_OPTIMUM_M, abs=1e-3)
    assert held_karp(trial_dm).length_m == pytest.approx(t.length_m, rel=1e-12)


def test_trial_seed0_golden(trial_dm):
    r = aco_solve(trial_dm, AcoParams(seed=0))
    assert r.best.order == TRIAL_SEED0_ORDER
    assert r.best.length_m == pytest.approx(TRIAL_SEED0_LENGTH_M, abs=1e-3)
    assert len(r.history) == 100


def test_default_params_resolution(trial_dm):
    p = resolve_params(trial_dm, AcoParams())
    d = trial_dm.d
    assert p.q == pytest.approx(d[np.triu_indices(10, 1)].mean(), rel=1e-12)
    assert p.tau0 == pytest.approx(p.q / (10 * nearest_neighbor_tour(trial_dm).length_m), rel=1e-12)
    assert (p.alpha, p.beta, p.rho, p.n_ants, p.n_iterations) == (2.01, 1.0, 0.5, 1, 100)


def test_route_csv_closed(trial_dm, tmp_path):
    t = brute_force_tsp(trial_dm)
    text = format_route_csv(t, FIELD_TRIAL_POINTS)
    rows = text.splitlines()
    assert rows[0] == "node,latitude,longitude"
    assert len(rows) == 12
    assert rows[1].split(",")[1:] == rows[11].split(",")[1:]
    assert rows[1] == "1,30.5343000,-96.4312000"
    back = parse_route_csv(io.StringIO(text))
    assert len(back) == 11 and back[0] == back[-1]


def test_history_csv():
    assert format_history_csv([3.0, 2.5]) == "iteration,best_length_m\n1,3.0000\n2,2.5000\n"


def test_distance_matrix_validation():
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[1, 1], [1, 0]]))
    with pytest.raises(ValueError):
        DistanceMatrix(np.zeros((2, 3)))
    p = UtmPoint(14, "north", 500000.0, 1.0)
    with pytest.raises(ValueError, match="coincide"):
        build_distance_matrix([p, p])
    with pytest.raises(ValueError):
        build_distance_matrix([p, UtmPoint(15, "north", 500000.0, 1.0)])
    dm = planar_dm([(0, 0), (1, 0)])
    with pytest.raises(ValueError):
        dm.d[0, 1] = 5.0


def test_params_validation():
    for bad in (dict(rho=0.0), dict(rho=1.0), dict(alpha=-1), dict(n_ants=0), dict(q=0.0), dict(tau0=-1.0)):
        with pytest.raises(ValueError):
            AcoParams(**bad)


def test_tour_validation_and_length():
    dm = planar_dm([(0, 0), (3, 0), (3, 4)])
    assert tour_length((0, 1, 2), dm) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        Tour((0, 0, 1), 1.0)


def test_brute_force_tie_break_square():
    dm = planar_dm([(0, 0), (1, 0), (1, 1), (0, 1)])
    t = brute_force_tsp(dm)
    assert t.order == (0, 1, 2, 3) and t.length_m == pytest.approx(4.0)


def test_brute_force_limits():
    with pytest.raises(ValueError):
        brute_force_tsp(planar_dm(np.random.default_rng(0).uniform(0, 100, (17, 2))))


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
def test_brute_force_matches_naive_oracle(n):
    rng = np.random.default_rng(n)
    dm = planar_dm(rng.uniform(0, 1000, (n, 2)))
    assert brute_force_tsp(dm).length_m == pytest.approx(naive_optimum(dm.d), rel=1e-12)


@pytest.mark.parametrize("n", [9, 11, 12])
def test_held_karp_agrees_with_exhaustive(n):
    rng = np.random.default_rng(100 + n)
    dm = planar_dm(rng.uniform(0, 1000, (n, 2)))
    hk = held_karp(dm)
    assert hk.length_m == pytest.approx(tour_length(hk.order, dm), rel=1e-12)
    if n <= 10:
        assert hk.length_m == pytest.approx(brute_force_tsp(dm).length_m, rel=1e-12)
    else:
        assert brute_force_tsp(dm).length_m == pytest.approx(hk.length_m, rel=1e-12)
        for _ in range(200):
            perm = (0, *rng.permutation(np.arange(1, n)))
            assert tour_length(perm, dm) >= hk.length_m - 1e-9


coords = st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1000)), min_size=4, max_size=7, unique=True)


@settings(max_examples=25, deadline=None)
@given(xy=coords, c=st.floats(0.01, 100))
def test_distance_scaling(xy, c):
    dm = planar_dm(xy)
    t = brute_force_tsp(dm)
    ts = brute_force_tsp(DistanceMatrix(dm.d * c))
    assert ts.length_m == pytest.approx(c * t.length_m, rel=1e-9)
    assert tour_length(t.order, DistanceMatrix(dm.d * c)) == pytest.approx(ts.length_m, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(xy=coords, c=st.floats(1e-3, 1e3), cur=st.integers(0, 3))
def test_transition_probabilities(xy, c, cur):
    dm = planar_dm(xy)
    params = resolve_params(dm, AcoParams())
    state = init_state(dm, params)
    rng = np.random.default_rng(0)
    state.tau = state.tau * rng.uniform(0.5, 2.0, state.tau.shape)
    allowed = [j for j in range(dm.n) if j != cur]
    p = transition_probabilities(state, cur, allowed, params)
    assert abs(p.sum() - 1.0) <= 1e-12
    scaled = type(state)(state.tau * c, state.eta)
    assert np.allclose(transition_probabilities(scaled, cur, allowed, params), p, rtol=1e-9, atol=0)
    with pytest.raises(ValueError):
        transition_probabilities(state, cur, [cur], params)


def test_pheromone_update_rule():
    dm = planar_dm([(0, 0), (3, 0), (3, 4), (0, 4)])
    params = resolve_params(dm, AcoParams(rho=0.25))
    state = init_state(dm, params)
    t = make_tour((0, 1, 2, 3), dm)
    new = pheromone_update(state, [t], params)
    dep = params.q / t.length_m
    assert new.tau[0, 1] == pytest.approx(0.75 * params.tau0 + dep)
    assert new.tau[1, 0] == new.tau[0, 1]
    assert new.tau[0, 2] == pytest.approx(0.75 * params.tau0)
    assert new.tau[0, 0] == 0.0
    floor = pheromone_update(type(state)(state.tau * 1e-300, state.eta), [], params)
    off = ~np.eye(4, dtype=bool)
    assert np.all(floor.tau[off] >= 1e-12)


def test_determinism(trial_dm):
    a = aco_solve(trial_dm, AcoParams(seed=11))
    b = aco_solve(trial_dm, AcoParams(seed=11))
    assert a.best == b.best and a.history == b.history


@settings(max_examples=20, deadline=None)
@given(xy=st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)), min_size=4, max_size=9, unique=True),
       seed=st.integers(0, 2**32 - 1))
def test_history_monotone_and_bounded(xy, seed):
    dm = planar_dm(xy)
    r = aco_solve(dm, AcoParams(seed=seed, n_iterations=30))
    assert all(b <= a for a, b in zip(r.history, r.history[1:]))
    assert r.best.order[0] == 0
    assert r.best.length_m >= brute_force_tsp(dm).length_m - 1e-9


def small_instances(n, count=10):
    rng = np.random.default_rng(5 + n)
    return [planar_dm(rng.uniform(0, 1000, (n, 2))) for _ in range(count)]


def best_of_seeds(dm, params, seeds=20):
    return min(aco_solve(dm, replace(params, seed=s)).best.length_m for s in range(seeds))


def test_four_nodes_reach_optimum_best_of_20():
    for dm in small_instances(4):
        assert best_of_seeds(dm, AcoParams()) == pytest.approx(brute_force_tsp(dm).length_m, rel=1e-12)


def test_five_nodes_reach_optimum_with_more_ants():
    for dm in small_instances(5):
        got = best_of_seeds(dm, AcoParams(n_ants=5))
        assert got == pytest.approx(brute_force_tsp(dm).length_m, rel=1e-12)


@pytest.mark.xfail(strict=True, reason="a single ant with rho=0.5 locks onto its first tours; "
                                       "about 1 in 10 five-node instances never samples the optimum")
def test_five_nodes_reach_optimum_default_params():
    for dm in small_instances(5, 20):
        assert best_of_seeds(dm, AcoParams()) == pytest.approx(brute_force_tsp(dm).length_m, rel=1e-12)


def test_start_node(trial_dm):
    r = aco_solve(trial_dm, AcoParams(seed=3, n_iterations=5), start=4)
    assert r.best.order[0] == 4
    with pytest.raises(ValueError):
        aco_solve(trial_dm, AcoParams(), start=10)


def test_trial_points_are_valid():
    assert all(isinstance(p, GeoPoint) for p in FIELD_TRIAL_POINTS)
    assert sorted(FIELD_TRIAL_ORDER) == list(range(10))
