import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ghomog.torus import (
    GridFunction,
    TorusGrid,
    discrete_lower_semilimit,
    discrete_upper_semilimit,
    inf_convolution,
    read_csv,
    stencil_offsets,
    sup_convolution,
    torus_displacement,
    wrap_point,
    write_csv,
)


def brute_inf_convolution(u: GridFunction, delta: float) -> np.ndarray:
    grid = u.grid
    pts = grid.flat_centers()
    vals = u.values.ravel()
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=grid.dimension)), float)
    best = np.full(len(pts), np.inf)
    for s in shifts:
        d2 = np.sum((pts[:, None, :] - pts[None, :, :] - s) ** 2, axis=-1)
        best = np.minimum(best, np.min(vals[None, :] + d2 / (2 * delta), axis=1))
    return best.reshape(grid.shape)


def test_grid_basics():
    g = TorusGrid(8, 2)
    assert g.shape == (8, 8) and g.size == 64
    c = g.centers()
    assert c.shape == (8, 8, 2)
    assert np.allclose(c[0, 0], [1 / 16, 1 / 16])
    assert g.ravel(np.array([8, -1])) == g.ravel(np.array([0, 7]))
    assert np.array_equal(g.cell_of([0.999, -0.001]), [7, 7])


def test_wrap_and_displacement():
    assert np.allclose(wrap_point([1.25, -0.25]), [0.25, 0.75])
    assert wrap_point(-1e-18)[()] < 1.0
    d = torus_displacement([0.9, 0.1], [0.1, 0.9])
    assert np.allclose(d, [0.2, -0.2])


def test_stencil_has_no_zero_offset():
    o = stencil_offsets(2, 2)
    assert len(o) == 24 and not np.any(np.all(o == 0, axis=1))
    assert len(stencil_offsets(3, 1)) == 26


@pytest.mark.parametrize("delta", [0.002, 0.02, 0.3])
def test_inf_convolution_matches_brute_force(rng, delta):
    grid = TorusGrid((9, 7))
    u = GridFunction(grid, rng.normal(size=grid.shape))
    fast = inf_convolution(u, delta).values
    assert np.allclose(fast, brute_inf_convolution(u, delta), atol=1e-12)


def test_argmin_attains_value(rng):
    grid = TorusGrid((10, 6))
    u = GridFunction(grid, rng.uniform(size=grid.shape))
    delta = 0.05
    ud, y = inf_convolution(u, delta, return_argmin=True)
    x = grid.centers()
    idx = np.floor(np.mod(y, 1.0) * np.asarray(grid.resolution)).astype(int)
    uy = u.values[tuple(np.moveaxis(idx, -1, 0))]
    recomputed = uy + np.sum((x - y) ** 2, axis=-1) / (2 * delta)
    assert np.allclose(recomputed, ud.values, atol=1e-12)


def test_sup_is_mirror_of_inf(rng):
    grid = TorusGrid(12, 2)
    u = GridFunction(grid, rng.normal(size=grid.shape))
    sup = sup_convolution(u, 0.01).values
    inf = inf_convolution(GridFunction(grid, -u.values), 0.01).values
    assert np.array_equal(sup, -inf)
    assert np.all(sup >= u.values)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(-3, 3)),
       st.floats(1e-3, 1.0), st.floats(1.1, 5.0))
def test_inf_convolution_properties(vals, delta, factor):
    grid = TorusGrid((6, 5))
    u = GridFunction(grid, vals)
    small = inf_convolution(u, delta).values
    large = inf_convolution(u, delta * factor).values
    assert np.all(small <= vals + 1e-12)
    assert np.all(large <= small + 1e-12)  # a larger delta penalises less
    assert small.min() == pytest.approx(vals.min())


def test_inf_convolution_rejects_bad_input():
    grid = TorusGrid(4, 1)
    with pytest.raises(ValueError):
        inf_convolution(GridFunction(grid, np.zeros(4)), 0.0)
    with pytest.raises(ValueError):
        inf_convolution(GridFunction(grid, [0, 1, np.inf, 2]), 0.1)


def test_semilimits(rng):
    grid = TorusGrid(6, 2)
    seq = [GridFunction(grid, rng.normal(size=grid.shape)) for _ in range(4)]
    low = discrete_lower_semilimit(seq).values
    up = discrete_upper_semilimit(seq).values
    stacked = np.stack([s.values for s in seq])
    for i, j in itertools.product(range(6), range(6)):
        rows = [(i + a) % 6 for a in (-1, 0, 1)]
        cols = [(j + b) % 6 for b in (-1, 0, 1)]
        block = stacked[:, rows][:, :, cols]
        assert low[i, j] == block.min()
        assert up[i, j] == block.max()
    tail = discrete_lower_semilimit(seq, tail=1).values
    assert np.all(tail >= low)


def test_semilimits_need_one_grid():
    with pytest.raises(ValueError):
        discrete_lower_semilimit([GridFunction(TorusGrid(4, 1), np.zeros(4)),
                                  GridFunction(TorusGrid(5, 1), np.zeros(5))])


def test_csv_round_trip(rng):
    grid = TorusGrid((5, 4))
    vals = rng.normal(size=grid.shape)
    vals[1, 2] = np.inf
    u = GridFunction(grid, vals)
    text = write_csv(u)
    assert text.splitlines()[0] == "i1,i2,value"
    assert "inf" in text
    back = read_csv(text)
    assert back.grid == grid
    assert np.array_equal(back.values, u.values)


def test_grid_function_rejects_nan():
    with pytest.raises(ValueError):
        GridFunction(TorusGrid(4, 1), [0.0, np.nan, 1.0, 2.0])
