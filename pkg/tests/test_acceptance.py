"""Acceptance criteria 1-13.

Each test records a one-line PASS/FAIL verdict (printed in the terminal
summary) and then asserts it, so a failing criterion shows up both ways.
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from acceptance_registry import record
from oracles import control_set_sample, in_control_set, sampled_sigma

from ghomog.dynamics import boundary_normal_check, verdict_stability
from ghomog.effective import (
    critical_level,
    effective_bounds,
    effective_hamiltonian,
    effective_k_cycles,
    effective_k_pde,
    sphere_fan,
    wulff_set,
)
from ghomog.fields import VectorField
from ghomog.geometry import ControlSetQuery, control_gauge, gauge_membership, recession_cone_contains
from ghomog.hj import InitialData, homogenization_experiment
from ghomog.metric import (
    EdgeWeighting,
    LevelFamily,
    boundedness_check,
    build_weights,
    distance_matrix,
    shortest_path_field,
)
from ghomog.torus import GridFunction, TorusGrid, inf_convolution

DIAG = (2 ** -0.5, 2 ** -0.5)


def _random_V(rng, n, vmax=2.5):
    th = rng.uniform(0, 2 * np.pi, n)
    r = rng.uniform(0, vmax, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def test_criterion_01_sigma_vs_sampled_sup():
    rng = np.random.default_rng(1)
    Vs = _random_V(rng, 200)
    qs = rng.normal(size=(200, 2))
    worst, inf_mismatch, finite = 0.0, 0, 0
    for V, q in zip(Vs, qs):
        closed = float(control_gauge(V, q))
        brute = sampled_sigma(V, q)
        if np.isinf(closed) or np.isinf(brute):
            inf_mismatch += int(np.isinf(closed) != np.isinf(brute))
            continue
        finite += 1
        worst = max(worst, abs(closed - brute) / max(abs(brute), 1e-12))
    ok = inf_mismatch == 0 and worst <= 1e-3
    record(1, ok, f"max rel err {worst:.2e} over {finite} finite cases, +inf mismatches {inf_mismatch}")
    assert ok


def test_criterion_02_duality():
    rng = np.random.default_rng(2)
    field = VectorField.shear(2.0, profile="sin:1:1.25")  # |V| up to 2.5
    xs = rng.uniform(size=(1000, 2))
    Vs = field(xs)
    qs = rng.normal(size=(1000, 2)) * rng.uniform(0.1, 3.0, size=(1000, 1))
    slack = 1e-9
    bad_membership = 0
    for V, q in zip(Vs, qs):
        sig = float(control_gauge(V, q))
        member = bool(gauge_membership(ControlSetQuery(V), q))
        if abs(sig - 1.0) <= slack:
            continue
        if member != (sig <= 1.0):
            bad_membership += 1
        if member != in_control_set(V, q, tol=1e-6):
            bad_membership += 1

    ps = rng.normal(size=(1000, 2)) * rng.uniform(0.1, 3.0, size=(1000, 1))
    recession = recession_cone_contains(field, xs, ps)
    bad_polar = 0
    for V, p, flag in zip(Vs, ps, recession):
        polar = bool(np.max(control_set_sample(V) @ p) <= 1e-9)
        bad_polar += int(polar != bool(flag))
    ok = bad_membership == 0 and bad_polar == 0
    record(2, ok, f"membership disagreements {bad_membership}/1000, polar disagreements {bad_polar}/1000 "
                  f"({int(recession.sum())} in the cone)")
    assert ok


def test_criterion_03_exact_effective_values():
    grid = TorusGrid(64, 2)
    cases = []
    for c in ((0.0, 0.0), (2.0, 0.0)):
        field = VectorField.constant(c)
        for P in ((1.0, 0.0), (0.0, 1.0), DIAG):
            exact = np.linalg.norm(P) + np.dot(P, c)
            cyc = effective_hamiltonian(field, P, grid).limit
            pde = effective_k_pde(field, P, 8, grid).value
            cases.append(max(abs(cyc - exact), abs(pde - exact)) / exact)
    worst = max(cases)
    ok = worst <= 0.02
    record(3, ok, f"worst relative error {worst:.2e} over 6 cases x 2 routes")
    assert ok


def test_criterion_04_route_agreement():
    grid = TorusGrid(64, 2)
    field = VectorField.shear(2.0)
    worst, lines = 0.0, []
    for k in (4, 8):
        for P in ((1.0, 0.0), (0.0, 1.0)):
            c = effective_k_cycles(field, P, k, grid).value
            p = effective_k_pde(field, P, k, grid).value
            rel = abs(c - p) / max(abs(c), 1e-12)
            worst = max(worst, rel)
            lines.append(f"k={k} P={P}: {c:.4f}/{p:.4f}")
    ok = worst <= 0.05
    record(4, ok, f"max relative gap {worst:.2e} ({'; '.join(lines)})")
    assert ok


CATALOG = {
    "constant": VectorField.constant((0.5, 0.0)),
    "constant-fast": VectorField.constant((2.0, 0.0)),
    "shear": VectorField.shear(2.0),
    "cellular": VectorField.cellular(0.5),
    "sink": VectorField.sink(2.0),
    "trig_poly": VectorField.trig_poly([(0, "sin", (0, 1), 1.0), (1, "cos", (1, 0), 0.5)], 2),
}


def test_criterion_05_monotone_k_sequence():
    grid = TorusGrid(32, 2)
    problems = []
    for name, field in CATALOG.items():
        for P in ((1.0, 0.0), (0.6, 0.8)):
            res = effective_hamiltonian(field, P, grid)
            vals = [s.value for s in res.sequence]
            low, _ = effective_bounds(field, P, grid)
            tol = res.bisection_tol
            if any(b > a + 2 * tol for a, b in zip(vals, vals[1:])):
                problems.append(f"{name} {P} increases: {vals}")
            if min(vals) < low - 1e-2:
                problems.append(f"{name} {P} below min H: {min(vals)} < {low}")
    ok = not problems
    record(5, ok, "12 sequences nonincreasing and above min H" if ok else "; ".join(problems))
    assert ok


def test_criterion_06_homogeneity_convexity():
    grid = TorusGrid(32, 2)
    field = VectorField.shear(2.0)
    tol = 1e-2

    def hbar(P):
        return effective_hamiltonian(field, P, grid, tol=tol).limit

    homog = 0.0
    for P in (np.array([1.0, 0.0]), np.array([0.6, 0.8])):
        base = hbar(P)
        for t in (0.5, 2.0):
            homog = max(homog, abs(hbar(t * P) - t * base))
    fan = sphere_fan(2, 16)
    on_fan = [hbar(P) for P in fan]
    convex = 0.0
    for i in range(16):
        j = (i + 1) % 16
        mid = hbar(0.5 * (fan[i] + fan[j]))
        convex = max(convex, mid - 0.5 * (on_fan[i] + on_fan[j]))
    ok = homog <= 2 * tol and convex <= 2 * tol
    record(6, ok, f"homogeneity defect {homog:.2e}, midpoint convexity excess {convex:.2e} (limit {2 * tol})")
    assert ok


@pytest.fixture(scope="module")
def sink_reports():
    return verdict_stability(VectorField.sink(2.0), side="inner", check_margin=False)


def test_criterion_07_invariant_set_dichotomy(sink_reports):
    shear = VectorField.shear(2.0)
    sink = VectorField.sink(2.0)
    lines, ok = [], True
    for side in ("inner", "outer"):
        reps = verdict_stability(shear, side=side, check_margin=False)
        counts = {n: (r.component_count, r.weak_component_count) for n, r in reps.items()}
        ok &= all(c == (1, 1) for c in counts.values())
        lines.append(f"shear {side} (strong, weak) {counts}")
        reps = sink_reports if side == "inner" else verdict_stability(sink, side=side, check_margin=False)
        counts = {n: r.component_count for n, r in reps.items()}
        ok &= all(c >= 2 for c in counts.values())
        center_closed = all(r.component_of((0.5, 0.5)) in r.closed for r in reps.values())
        ok &= center_closed
        lines.append(f"sink {side} components {counts}, centre trapped {center_closed}")
    record(7, ok, "; ".join(lines))
    assert ok


def test_criterion_08_boundary_inequality(sink_reports):
    report = sink_reports[256]
    stats = boundary_normal_check(report, VectorField.sink(2.0), tol=0.25)
    both = (stats.normal_dot_v <= -0.75) & (stats.speed >= 0.75)
    frac = float(np.mean(both))
    ok = frac >= 0.9
    record(8, ok, f"{frac:.1%} of {stats.cells} boundary cells satisfy n.V <= -0.75 and |V| >= 0.75")
    assert ok


def test_criterion_09_metric_laws():
    grid = TorusGrid(64, 2)
    shear = VectorField.shear(2.0)
    w1 = build_weights(EdgeWeighting(1.0, grid), shear)
    wa = build_weights(EdgeWeighting(2.5, grid), shear)
    s1 = shortest_path_field(w1, (0, 0)).values
    sa = shortest_path_field(wa, (0, 0)).values
    scaling = float(np.max(np.abs(sa - 2.5 * s1)))

    rng = np.random.default_rng(9)
    sources = rng.choice(grid.size, 40, replace=False)
    D = distance_matrix(w1, sources)
    viol = 0.0
    for _ in range(1000):
        i, j = rng.choice(40, 2, replace=False)
        z = rng.integers(grid.size)
        viol = max(viol, D[i, z] - D[i, sources[j]] - D[j, z])

    bounded = boundedness_check(shear, grid)
    sink = boundedness_check(VectorField.sink(2.0), grid)
    ok = scaling <= 1e-9 and viol <= 1e-9 and bounded.finite and not sink.finite
    record(9, ok, f"scaling err {scaling:.1e}, triangle excess {viol:.1e}, shear max S1 "
                  f"{bounded.max_value:.4f}, sink finite {sink.finite}")
    assert ok


def test_criterion_10_threshold_exact_for_zero_field():
    grid = TorusGrid(64, 2)
    zero = VectorField.constant((0.0, 0.0))
    worst = 0.0
    for P in ((1.0, 0.0), (0.0, 1.0), DIAG, (0.5, 0.0), (0.0, 1.5)):
        fam = LevelFamily(EdgeWeighting(1.0, grid, tilt=P, truncation=4), zero)
        lo, hi, cert, _ = critical_level(fam, 0.0, 2.0, 1e-6)
        assert cert is not None and abs(cert.resum() - cert.total_weight) < 1e-9
        worst = max(worst, abs(0.5 * (lo + hi) - np.linalg.norm(P)))
    ok = worst <= 1e-3
    record(10, ok, f"max |flip level - |P|| = {worst:.2e}")
    assert ok


def test_criterion_11_homogenization_convergence():
    eps = [0.25, 0.125, 0.0625]
    cone = InitialData.cone((0.5, 0.5))
    shear = homogenization_experiment(VectorField.shear(2.0), cone, eps, 0.5, 256)
    e = shear.worst
    decreasing = bool(np.all(np.diff(e) < 0))
    ratios = shear.ratios
    zero = VectorField.constant((0.0, 0.0))
    w0 = wulff_set(zero, 64, TorusGrid(32, 2))
    assert np.allclose(w0.values, 1.0, atol=1e-6)
    ctrl = homogenization_experiment(zero, cone, eps, 0.5, 256, wulff=w0).worst
    h = 1 / 256
    ok_rate = decreasing and max(ratios) <= 0.8
    ok_ctrl = bool(np.all(ctrl <= 3 * h))
    record(11, ok_rate and ok_ctrl,
           f"shear e={np.round(e, 4).tolist()} ratios={np.round(ratios, 3).tolist()} "
           f"(decreasing {decreasing}, ratio<=0.8 {max(ratios) <= 0.8}); "
           f"V=0 e={np.round(ctrl, 4).tolist()} vs 3h={3 * h:.4f}")
    assert ok_rate, f"shear rate: e={e}, ratios={ratios}"
    assert ok_ctrl, f"V=0 control: e={ctrl} > 3h={3 * h}"


def test_criterion_12_convolution_suite():
    n = 2000
    grid = TorusGrid(n, 1)
    h = 1 / n
    x = grid.centers()[..., 0]
    d = np.abs(x - 0.5)
    cone = GridFunction(grid, np.minimum(d, 1 - d))
    below = True
    gaps = []
    huber_err = None
    for delta in (0.1, 0.01, 0.001):
        ud, y = inf_convolution(cone, delta, return_argmin=True)
        below &= bool(np.all(ud.values <= cone.values + 1e-15))
        gaps.append(float(np.max((x - y[..., 0]) ** 2) / delta))
        if delta == 0.01:
            r = cone.values
            huber = np.where(r >= delta, r - delta / 2, r ** 2 / (2 * delta))
            huber_err = float(np.max(np.abs(ud.values - huber)))
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    ok = below and huber_err <= 2 * h and monotone
    record(12, ok, f"u_delta<=u {below}, Huber err {huber_err:.1e} (2h={2 * h:.1e}), "
                   f"gaps {np.round(gaps, 6).tolist()}")
    assert ok


SUITE_CONFIG = """\
# small shear run exercising every subcommand
field.kind=shear
field.amplitude=2
grid.resolution=16
sigma.fan=8
effective.P=1,0;0,1
effective.k_max=8
effective.k=4
effective.directions=8
dynamics.labels=true
solver.resolution=64
solver.epsilon=0.25,0.125
solver.T=0.25
solver.wulff_resolution=16
solver.snapshots=0.125,0.25
"""

COMMANDS = ["check-assumptions", "sigma", "distance", "cycle", "invariant-sets", "effective",
            "wulff", "corrector", "homogenize", "evolve"]


def _run_suite(manifest: Path, root: Path) -> dict[str, bytes]:
    for cmd in COMMANDS:
        proc = subprocess.run([sys.executable, "-m", "ghomog.cli", cmd, "--config", str(manifest),
                               "-o", str(root / cmd)], capture_output=True, text=True)
        assert proc.returncode == 0, f"{cmd}: {proc.stderr}"
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_13_determinism(tmp_path):
    manifest = tmp_path / "suite.cfg"
    manifest.write_text(SUITE_CONFIG)
    first = _run_suite(manifest, tmp_path / "out")
    for p in (tmp_path / "out").rglob("*"):
        if p.is_file():
            p.unlink()
    second = _run_suite(manifest, tmp_path / "out")
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = not differing and len(first) >= len(COMMANDS) * 2
    record(13, ok, f"{len(first)} files over {len(COMMANDS)} commands, differing: {differing or 'none'}")
    assert ok
