import math

import numpy as np
import pytest

from gldp.convex import zero_penalty
from gldp.forward import solve_limit_ode
from gldp.ldp import (EventSpec, empirical_ldp_curve, exit_ball, fit_slope, terminal_above,
                      theoretical_rate_inf)
from gldp.paths import make_time_grid, scenario_family
from gldp.ratefn import lambda_rate


def test_fit_slope_examples():
    eps = np.array([0.4, 0.2, 0.1, 0.05])
    s, _, r2 = fit_slope(zip(np.log(eps), np.log(eps ** 2)))
    assert s == pytest.approx(2.0, abs=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)
    s, i, _ = fit_slope([(0, 1), (1, 2), (2, 3)])
    assert s == pytest.approx(1.0) and i == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        noisy = eps ** 2 * (1 + rng.uniform(-0.05, 0.05, eps.size))
        s, _, _ = fit_slope(zip(np.log(eps), np.log(noisy)))
        assert 1.8 <= s <= 2.2
    with pytest.raises(ValueError):
        fit_slope([(0, 1), (1, 2)])
    with pytest.raises(ValueError):
        fit_slope([(0, 1), (1, math.inf), (2, 3)])


def test_event_validation():
    with pytest.raises(ValueError):
        exit_ball(0.0)
    with pytest.raises(ValueError):
        terminal_above(math.nan)
    with pytest.raises(ValueError):
        EventSpec("hit_twice", radius=1.0)
    with pytest.raises(ValueError):
        exit_ball(1.0, applied_to="z")
    ev = exit_ball(0.5)
    assert ev.contains(np.array([0.0, 0.2, -0.5]), 0.0)
    assert not ev.contains(np.array([0.0, 0.2, -0.4]), 0.0)
    assert terminal_above(1.0).contains(np.array([0.0, 0.6]), 0.5)
    assert ev.describe() == {"kind": "exit_ball", "applied_to": "forward_minus_x", "radius": 0.5}


def _curve(spec, c, x0, ladder, fam, grid, bounds, n_paths=2000, **kw):
    return empirical_ldp_curve(spec, c, zero_penalty(), x0, ladder, fam, n_paths, grid, bounds,
                               seed=kw.pop("seed", 1), **kw)


def test_capacity_monotone_in_event(flat, bounds14):
    g = make_time_grid(0, 1, 50)
    fam = scenario_family(bounds14, g, n_random=2, seed=0)
    ladder = [0.4, 0.3, 0.2]
    small = _curve(exit_ball(0.5), flat, 0.0, ladder, fam, g, bounds14)
    large = _curve(exit_ball(0.8), flat, 0.0, ladder, fam, g, bounds14)
    for a, b in zip(small.rows, large.rows):
        assert b["capacity"] <= a["capacity"]


def test_capacity_monotone_in_family(flat, bounds14):
    g = make_time_grid(0, 1, 50)
    fam = scenario_family(bounds14, g, n_random=3, seed=0)
    ladder = [0.4, 0.3, 0.2]
    caps = [[r["capacity"] for r in _curve(exit_ball(0.6), flat, 0.0, ladder, fam[:m], g,
                                              bounds14).rows]
            for m in (1, 3, 6)]
    for smaller, bigger in zip(caps, caps[1:]):
        assert all(b >= a for a, b in zip(smaller, bigger))


def test_gaussian_tail_far_event(flat, bounds14):
    g = make_time_grid(0, 1, 50)
    fam = scenario_family(bounds14, g)
    ladder = [0.4, 0.2, 0.1]
    delta = 10 * 0.4 * 2.0 * 1.0 * 1.0
    curve = _curve(exit_ball(delta), flat, 0.0, ladder, fam, g, bounds14)
    for r in curve.rows:
        assert r["capacity"] == 0.0 and r["eps_log_capacity"] == -math.inf and r["n_hits"] == 0
    assert curve.smallest_feasible() is None


def test_event_containing_lln_path(tanh, bounds14):
    g = make_time_grid(0, 1, 100)
    fam = scenario_family(bounds14, g)
    curve = _curve(exit_ball(0.3), tanh, 0.5, [0.1, 0.05, 0.02], fam, g, bounds14)
    caps = [r["capacity"] for r in curve.rows]
    assert caps[0] >= 0.9 and caps[-1] == 1.0
    assert curve.rows[-1]["eps_log_capacity"] == 0.0


def test_symmetric_terminal_event(flat, bounds14):
    g = make_time_grid(0, 1, 50)
    fam = scenario_family(bounds14, g, n_random=1, seed=3)
    curve = _curve(terminal_above(0.2), flat, 0.2, [0.4, 0.2, 0.1], fam, g, bounds14, n_paths=4000)
    for r in curve.rows:
        assert r["capacity"] >= 0.4
    assert abs(curve.rows[-1]["eps_log_capacity"]) < 0.02


def test_speed_option_and_csv(flat, bounds14):
    g = make_time_grid(0, 1, 50)
    fam = scenario_family(bounds14, g)
    a = _curve(exit_ball(0.5), flat, 0.0, [0.4, 0.3, 0.2], fam, g, bounds14)
    b = _curve(exit_ball(0.5), flat, 0.0, [0.4, 0.3, 0.2], fam, g, bounds14, speed="eps")
    for ra, rb in zip(a.rows, b.rows):
        assert rb["eps_log_capacity"] * ra["eps"] == pytest.approx(ra["eps_log_capacity"])
    rows = a.csv_rows()
    assert rows[0][:5] == ["eps", "eps_log_capacity", "n_hits", "n_paths", "argmax_scenario_id"]
    with pytest.raises(ValueError):
        _curve(exit_ball(0.5), flat, 0.0, [0.4, 0.3, 0.2], fam, g, bounds14, speed="log")


def test_curve_input_checks(flat, bounds14):
    g = make_time_grid(0, 1, 20)
    fam = scenario_family(bounds14, g)
    with pytest.raises(ValueError):
        _curve(exit_ball(0.5), flat, 0.0, [0.4, 0.2], fam, g, bounds14)
    with pytest.raises(ValueError):
        _curve(exit_ball(0.5), flat, 0.0, [0.4, 0.2, 0.1], fam, g, bounds14, n_paths=999)


def test_backward_event_and_workers(tanh, bounds14):
    g = make_time_grid(0, 1, 100)
    fam = scenario_family(bounds14, g)
    spec = exit_ball(0.2, applied_to="backward_y")
    a = _curve(spec, tanh, 0.5, [0.4, 0.3, 0.2], fam, g, bounds14, chunk_size=700)
    b = _curve(spec, tanh, 0.5, [0.4, 0.3, 0.2], fam, g, bounds14, chunk_size=700, workers=3)
    assert a.csv_rows() == b.csv_rows()
    assert all(0.0 <= r["capacity"] <= 1.0 for r in a.rows)


def _flat_rate(flat, bounds, grid):
    return lambda path: lambda_rate(flat, bounds, 0.0, path, grid)


def test_straight_line_exit_rate(flat, bounds14):
    g = make_time_grid(0, 1, 100)
    delta = 0.7
    val = theoretical_rate_inf(exit_ball(delta), _flat_rate(flat, bounds14, g), g, 20)
    assert val == pytest.approx(delta ** 2 / (2 * 4.0 * 1.0), abs=1e-6)


def test_rate_inf_for_event_holding_lln(tanh, bounds14):
    c = tanh.replace(h=lambda x: 0.0 * np.asarray(x))
    g = make_time_grid(0, 1, 100)
    lln = solve_limit_ode(c, 0.5, g).phi - 0.5
    rate = lambda path: lambda_rate(c, bounds14, 0.5, path, g)  # noqa: E731
    assert theoretical_rate_inf(exit_ball(0.3), rate, g, 4, lln=lln, origin=0.5) <= 1e-10
    assert theoretical_rate_inf(terminal_above(1.0), rate, g, 4, lln=lln, origin=0.5) <= 1e-10


def test_rate_inf_refinement_monotone(flat, tanh, bounds14):
    g = make_time_grid(0, 1, 64)
    rate = _flat_rate(flat, bounds14, g)
    vals = [theoretical_rate_inf(exit_ball(0.5), rate, g, n) for n in (1, 2, 4, 8, 16)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    lln = solve_limit_ode(tanh, 0.0, g).phi
    trate = lambda path: lambda_rate(tanh, bounds14, 0.0, path, g)  # noqa: E731
    tvals = [theoretical_rate_inf(terminal_above(0.8), trate, g, n, lln=lln) for n in (1, 2, 4, 8)]
    assert all(b <= a + 1e-15 for a, b in zip(tvals, tvals[1:]))
    assert all(v > 0 for v in tvals)


def test_rate_inf_rejects_bad_sizes(flat, bounds14):
    g = make_time_grid(0, 1, 10)
    with pytest.raises(ValueError):
        theoretical_rate_inf(exit_ball(0.5), _flat_rate(flat, bounds14, g), g, 0)
