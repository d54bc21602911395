import numpy as np
import pytest

from oracles import torus_distance

from ghomog.fields import VectorField
from ghomog.geometry import control_gauge
from ghomog.metric import (
    EdgeWeighting,
    LevelFamily,
    NegativeWeightError,
    bellman_ford,
    bellman_ford_negative_cycle,
    boundedness_check,
    build_weights,
    covering_check,
    distance_matrix,
    shortest_path_field,
    unwrapped_distance,
)
from ghomog.torus import TorusGrid

ZERO = VectorField.constant((0.0, 0.0))
FAST = VectorField.constant((2.0, 0.0))


def _edge(table, offset):
    return int(np.flatnonzero(np.all(table.offsets == offset, axis=1))[0])


def test_axis_edge_weights():
    grid = TorusGrid(32, 2)
    h = 1 / 32
    t0 = build_weights(EdgeWeighting(1.0, grid), ZERO)
    assert np.allclose(t0.weights[_edge(t0, (1, 0))], h)
    assert np.allclose(t0.weights[_edge(t0, (1, 2))], h * np.sqrt(5))
    t2 = build_weights(EdgeWeighting(1.0, grid), FAST)
    assert np.allclose(t2.weights[_edge(t2, (1, 0))], h / 3)
    assert np.all(np.isinf(t2.weights[_edge(t2, (-1, 0))]))


def test_weights_match_gauge_quadrature(rng):
    grid = TorusGrid(16, 2)
    field = VectorField.cellular(0.5)  # |V| < 1, so every edge is present
    table = build_weights(EdgeWeighting(1.0, grid), field)
    centers = grid.flat_centers()
    g = 0.5 / np.sqrt(3)
    for _ in range(20):
        e = int(rng.integers(len(table.offsets)))
        c = int(rng.integers(grid.size))
        q = table.offsets[e] * grid.spacing
        pts = centers[c] + np.outer([0.5 - g, 0.5 + g], q)
        expect = float(np.mean(control_gauge(field(pts), q)))
        assert table.weights[e, c] == pytest.approx(expect, rel=1e-12)


def test_level_rejections():
    grid = TorusGrid(8, 2)
    with pytest.raises(ValueError):
        EdgeWeighting(0.0, grid)
    with pytest.raises(ValueError):
        EdgeWeighting(1.0, grid, truncation=0)
    with pytest.raises(ValueError):
        EdgeWeighting(1.0, grid, tilt=(1.0,))
    EdgeWeighting(0.0, grid, truncation=2)  # level 0 is fine once truncated


def test_zero_field_distance_vs_torus_distance():
    n = 64
    grid = TorusGrid(n, 2)
    d = shortest_path_field(build_weights(EdgeWeighting(1.0, grid), ZERO), (0, 0)).values
    exact = torus_distance(grid.centers(), grid.centers()[0, 0])
    err = np.max(np.abs(d - exact))
    assert err <= 2 * np.sqrt(2) / n
    assert np.all(d >= exact - 1e-12)  # polygonal paths never beat straight lines


def test_fast_constant_field_distances():
    n = 32
    grid = TorusGrid(n, 2)
    table = build_weights(EdgeWeighting(1.0, grid), FAST)
    d = shortest_path_field(table, (0, 0)).values
    assert d[n // 2, 0] <= 0.5 / 3 + 1e-12
    # on the torus the "backward" target is reached the long way round
    assert d[n - 1, 0] == pytest.approx((1 - 1 / n) / 3)
    # without periodic wrap the backward direction is unreachable
    block, src = unwrapped_distance(FAST, EdgeWeighting(1.0, grid), (n // 2, 0))
    assert np.isinf(block[src[0] - 1, src[1]])
    assert np.isfinite(block[src[0] + 1, src[1]])
    # asymmetry
    D = distance_matrix(table, [0, grid.ravel(np.array([5, 3]))])
    assert D[0, grid.ravel(np.array([5, 3]))] != pytest.approx(D[1, 0])


def test_level_scaling_is_exact():
    grid = TorusGrid(32, 2)
    field = VectorField.shear(2.0)
    one = shortest_path_field(build_weights(EdgeWeighting(1.0, grid), field), 0).values
    three = shortest_path_field(build_weights(EdgeWeighting(3.0, grid), field), 0).values
    assert np.max(np.abs(three - 3 * one)) <= 1e-12
    scaled = build_weights(EdgeWeighting(1.0, grid), field).scaled(3.0)
    assert np.allclose(scaled.weights, build_weights(EdgeWeighting(3.0, grid), field).weights)


def test_triangle_inequality_and_positivity(rng):
    grid = TorusGrid(24, 2)
    field = VectorField.shear(2.0)
    table = build_weights(EdgeWeighting(1.0, grid), field)
    D = distance_matrix(table, np.arange(grid.size))
    assert np.all(np.diag(D) == 0)
    off = ~np.eye(grid.size, dtype=bool)
    assert D[off].min() >= 0.1 / 24
    for _ in range(2000):
        x, y, z = rng.integers(grid.size, size=3)
        assert D[x, z] <= D[x, y] + D[y, z] + 1e-12


def test_negative_weights_redirect_to_bellman_ford():
    grid = TorusGrid(8, 2)
    table = build_weights(EdgeWeighting(0.5, grid, tilt=(1.0, 0.0)), ZERO)
    with pytest.raises(NegativeWeightError):
        shortest_path_field(table, 0)


def test_negative_cycle_examples():
    grid = TorusGrid(16, 2)
    assert bellman_ford_negative_cycle(build_weights(EdgeWeighting(0.5, grid), ZERO)) is None
    cert = bellman_ford_negative_cycle(build_weights(EdgeWeighting(0.5, grid, tilt=(1.0, 0.0)), ZERO))
    assert cert is not None and cert.total_weight < 0
    assert cert.resum() == pytest.approx(cert.total_weight, abs=1e-9)
    z = np.asarray(cert.winding)
    assert z[0] >= 1  # the loop runs along +e1, the direction of the tilt
    disp = np.sum(np.asarray(cert.offsets) * grid.spacing, axis=0)
    assert np.allclose(disp, z)
    length = np.sum(np.linalg.norm(np.asarray(cert.offsets) * grid.spacing, axis=1))
    assert cert.total_weight == pytest.approx(0.5 * length - z[0], abs=1e-9)
    assert bellman_ford_negative_cycle(build_weights(EdgeWeighting(1.05, grid, tilt=(1.0, 0.0)), ZERO)) is None


def test_certificate_cells_follow_offsets():
    grid = TorusGrid(16, 2)
    cert = bellman_ford_negative_cycle(build_weights(EdgeWeighting(0.3, grid, tilt=(0.6, 0.8)), ZERO))
    cells = np.asarray(cert.cells)
    offs = np.asarray(cert.offsets)
    nxt = np.roll(cells, -1, axis=0)
    assert np.all(np.mod(cells + offs, 16) == nxt)
    d = cert.to_dict()
    assert d["total_weight"] == cert.total_weight and len(d["cells"]) == len(cells)


def test_bellman_ford_agrees_with_dijkstra():
    grid = TorusGrid(16, 2)
    table = build_weights(EdgeWeighting(1.0, grid), VectorField.shear(2.0))
    dist, _, cert = bellman_ford(table, source=0)
    assert cert is None
    assert np.allclose(dist, distance_matrix(table, [0])[0])


def test_no_cycle_is_monotone_in_level():
    grid = TorusGrid(16, 2)
    fam = LevelFamily(EdgeWeighting(1.0, grid, tilt=(1.0, 0.0), truncation=4), VectorField.shear(2.0))
    verdicts = [bellman_ford(fam.table(a))[2] is None for a in np.linspace(0.0, 4.0, 17)]
    first = verdicts.index(True)
    assert all(verdicts[first:])


def test_level_family_matches_direct_build():
    grid = TorusGrid(16, 2)
    field = VectorField.shear(2.0)
    for trunc in (None, 3):
        base = EdgeWeighting(1.0, grid, tilt=(0.3, -0.2), truncation=trunc)
        fam = LevelFamily(base, field)
        for a in (0.5, 1.7):
            direct = build_weights(base.with_level(a), field)
            assert np.allclose(fam.table(a).weights, direct.weights, rtol=1e-10, equal_nan=False)


def test_truncation_monotone_edgewise():
    grid = TorusGrid(16, 2)
    field = VectorField.shear(2.0)
    full = build_weights(EdgeWeighting(1.0, grid), field).weights
    prev = None
    for k in (1, 2, 3, 4):
        w = build_weights(EdgeWeighting(1.0, grid, truncation=k), field).weights
        assert np.all(np.isfinite(w))
        assert np.all(w <= full + 1e-9)
        if prev is not None:
            assert np.all(prev <= w + 1e-9)
        prev = w


def test_boundedness():
    zero = boundedness_check(ZERO, TorusGrid(32, 2))
    assert zero.finite
    assert zero.max_value == pytest.approx(np.sqrt(2) / 2, abs=2 * np.sqrt(2) / 32)
    assert boundedness_check(VectorField.shear(2.0), TorusGrid(32, 2)).finite
    assert not boundedness_check(VectorField.sink(2.0), TorusGrid(32, 2)).finite


@pytest.mark.parametrize("field", [ZERO, VectorField.constant((0.5, 0.0)), FAST, VectorField.shear(2.0),
                                   VectorField.cellular(1.0), VectorField.sink(2.0)],
                         ids=["zero", "slow", "fast", "shear", "cellular", "sink"])
@pytest.mark.parametrize("P", [(0.0, 0.0), (1.0, 0.0)])
def test_covering_property(field, P):
    # at 64^2 the radius (1 - delta)/L_V spans more than the diagonal neighbours
    assert covering_check(field, TorusGrid(64, 2), delta=0.5, tilt=P).all()
