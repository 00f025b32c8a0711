"""Acceptance gate: twelve end-to-end checks at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line to the terminal before
asserting. Criteria 1 to 3 share one full-scale convergence run (about
eight minutes on a single core).
"""

import json
import math
import os
import time

import numpy as np
import pytest

from gldp.cli import run as cli_run
from gldp.coeffs import CoefficientSet, get_preset, preset_bounds
from gldp.convex import abs_scaled, indicator_interval, prox, quadratic, zero_penalty
from gldp.forward import euler_maruyama, solve_limit_ode
from gldp.gcore import ScenarioSamples, VolBounds, stable_mean, sublinear_expectation
from gldp.ldp import empirical_ldp_curve, exit_ball, theoretical_rate_inf
from gldp.limitbw import build_limit_martingale, graph_residuals, solve_limit_backward
from gldp.paths import (build_g_path, check_qv_bounds, gaussian_increments, make_time_grid,
                        scenario_family)
from gldp.ratefn import (ControlPair, action_J, controlled_ode, lambda_prime, lambda_rate,
                         pointwise_eta_min)
from gldp.vi import VIGrid, default_window, solve_vi

pytestmark = pytest.mark.acceptance

LADDER = [0.4, 0.2, 0.1, 0.05]
X0 = 0.5


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def convergence_run():
    from gldp.vi import convergence_experiment

    c = get_preset("tanh-drift")
    bounds = preset_bounds("tanh-drift")
    grid = make_time_grid(0.0, 1.0, 4000)
    fam = scenario_family(bounds, grid, n_random=5, seed=1)
    start = time.perf_counter()
    reps = convergence_experiment(c, [zero_penalty(), indicator_interval(-1.0, 1.0)], bounds, X0,
                                  LADDER, fam, 20000, grid, seed=7, workers=os.cpu_count() or 1)
    return reps, time.perf_counter() - start


def _in(v, lo, hi):
    return lo <= v <= hi


def _fmt_slopes(reps, q):
    return ", ".join(f"{r.penalty['kind']}={r.slopes[q]['slope']:.3f}" for r in reps)


def test_criterion_01_backward_convergence_order(convergence_run, report):
    reps, secs = convergence_run
    ok = secs <= 600.0
    for r in reps:
        s = r.slopes["Y"]
        ok &= _in(s["slope"], 1.7, 2.3) and s["r_squared"] >= 0.98
    r2 = ", ".join(f"{r.slopes['Y']['r_squared']:.4f}" for r in reps)
    report(1, ok, f"slope e_Y: {_fmt_slopes(reps, 'Y')} (target [1.7, 2.3]); r2 {r2}; "
                  f"runtime {secs:.0f} s")
    assert ok


def test_criterion_02_z_and_k_convergence(convergence_run, report):
    reps, _ = convergence_run
    ok = all(_in(r.slopes[q]["slope"], 1.7, 2.3) for r in reps for q in ("Z", "K"))
    report(2, ok, f"slope e_Z: {_fmt_slopes(reps, 'Z')}; slope e_K: {_fmt_slopes(reps, 'K')} "
                  f"(target [1.7, 2.3])")
    assert ok


def test_criterion_03_forward_estimate(convergence_run, report):
    from gldp.vi import convergence_experiment

    reps, _ = convergence_run
    sx = reps[0].slopes["X"]["slope"]
    flat = get_preset("flat")
    bounds = preset_bounds("flat")
    grid = make_time_grid(0.0, 1.0, 1000)
    fam = scenario_family(bounds, grid, n_random=5, seed=1)
    flat_rep = convergence_experiment(flat, zero_penalty(), bounds, X0, LADDER, fam, 2000, grid,
                                      seed=7)[0]
    sf = flat_rep.slopes["X"]["slope"]
    ok = _in(sx, 1.8, 2.2) and abs(sf - 2.0) <= 0.02
    report(3, ok, f"tanh-drift slope e_X {sx:.4f} (target [1.8, 2.2]); flat slope {sf:.12f} "
                  f"(target 2 +/- 0.02)")
    assert ok


def test_criterion_04_decreasing_martingale(report):
    c = get_preset("tanh-drift")
    bounds = VolBounds(1.0, 4.0)
    grid = make_time_grid(0.0, 1.0, 1000)
    phi = solve_limit_ode(c, X0, grid)
    lb = solve_limit_backward(c, zero_penalty(), phi, grid, bounds)
    fam = scenario_family(bounds, grid, n_random=5, seed=2)
    monotone = True
    finals = {}
    for sc in fam:
        vals = []
        for i in range(500):
            m = build_limit_martingale(c, phi, lb, build_g_path(sc, grid, 3, i), grid, bounds).m
            monotone &= bool(np.all(np.diff(m) <= 0.0))
            vals.append(m[-1])
        finals[sc.id] = np.asarray(vals)
    bb = finals[2]
    se = float(np.std(bb, ddof=1) / math.sqrt(bb.size))
    top = sublinear_expectation(ScenarioSamples(finals.items()))
    ok = monotone and -3 * se <= top <= 3 * se
    report(4, ok, f"M non-increasing on all {len(fam) * 500} paths: {monotone}; "
                  f"max mean M_T = {top:.3e}, bang-bang SE = {se:.3e}")
    assert ok


def test_criterion_05_quadratic_variation_bounds(report):
    bounds = VolBounds(1.0, 4.0)
    grid = make_time_grid(0.0, 1.0, 500)
    fam = scenario_family(bounds, grid, n_random=13, seed=5)
    n_ok = n_all = 0
    for sc in fam:
        for i in range(200):
            n_all += 1
            n_ok += check_qv_bounds(build_g_path(sc, grid, 11, i), grid, bounds)
    ok = n_ok == n_all
    report(5, ok, f"qv increments inside [dt lo, dt hi] on {n_ok}/{n_all} paths")
    assert ok


def test_criterion_06_subdifferential_suite(report):
    rng = np.random.default_rng(6)
    penalties = [zero_penalty(), indicator_interval(-1.0, 1.0), abs_scaled(0.8), quadratic(1.5)]
    firm = True
    for p in penalties:
        x, y = rng.normal(scale=3.0, size=(2, 10_000))
        for l0 in (1e-3, 0.1, 1.0):
            px, py = prox(p, l0, x), prox(p, l0, y)
            d = px - py
            firm &= bool(np.all(d * d <= d * (x - y) + 1e-12 * (1 + np.abs(x - y))))
    c = get_preset("tanh-drift")
    bounds = preset_bounds("tanh-drift")
    grid = make_time_grid(0.0, 1.0, 400)
    worst = 0.0
    mono = True
    for p in penalties:
        for x0 in (-1.5, 0.0, 0.5, 2.0):
            lb = solve_limit_backward(c, p, solve_limit_ode(c, x0, grid), grid, bounds)
            res = graph_residuals(p, lb)
            worst = max(worst, float(np.max(res)))
            keep = res <= 1e-8
            y, u = lb.psi[:-1][keep], lb.u_sel[keep]
            prod = (u[:, None] - u[None, :]) * (y[:, None] - y[None, :])
            mono &= bool(np.all(prod >= 0.0))
    ok = firm and worst <= 1e-8 and mono
    report(6, ok, f"firm nonexpansiveness {firm}; max graph residual {worst:.2e} (<= 1e-8); "
                  f"monotone pairs {mono}")
    assert ok


def test_criterion_07_classical_collapse(report):
    c = get_preset("classical")
    bounds = preset_bounds("classical")
    grid = make_time_grid(0.0, 1.0, 400)
    fam = scenario_family(bounds, grid, n_random=5, seed=1)
    rng = np.random.default_rng(7)
    dW = gaussian_increments(grid, 7, np.arange(2000))
    samples = []
    for sc in fam:
        x = euler_maruyama(c, 0.3, X0, np.sqrt(sc.var_path) * dW, sc.var_path * grid.dt, grid.dt)
        samples.append((sc.id, np.sin(x[:, -1])))
    same = sublinear_expectation(ScenarioSamples(samples)) == stable_mean(samples[0][1])
    phi = solve_limit_ode(c, X0, grid)
    lb = solve_limit_backward(c, zero_penalty(), phi, grid, bounds)
    m_zero = all(np.all(build_limit_martingale(c, phi, lb, build_g_path(sc, grid, 0, i), grid,
                                               bounds).m == 0.0)
                 for sc in fam for i in range(20))
    gap = 0.0
    for _ in range(10):
        t = grid.nodes[:-1] + 0.5 * grid.dt
        p = rng.normal() * np.sin(2 * t) + rng.normal() * np.cos(5 * t)
        ctrl = ControlPair(p, np.full(grid.n_steps, bounds.sigma_hi_sq))
        path = controlled_ode(c, X0, ctrl, grid)
        gap = max(gap, abs(lambda_rate(c, bounds, X0, path - X0, grid).value - action_J(ctrl, grid)))
    ok = same and m_zero and gap <= 1e-9
    report(7, ok, f"sublinear = single mean {same}; M identically 0 {m_zero}; "
                  f"rate vs action quadrature gap {gap:.2e} (<= 1e-9)")
    assert ok


def test_criterion_08_rate_function_oracles(report):
    rng = np.random.default_rng(8)
    scan_gap = 0.0
    for _ in range(100):
        a, h, s = rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(0.5, 2.0)
        lo = rng.uniform(0.5, 2.0)
        hi = lo + rng.uniform(0.1, 3.0)
        _, cost = pointwise_eta_min(a, h, s, VolBounds(lo, hi))
        v = np.linspace(lo, hi, 1_000_000)
        scan_gap = max(scan_gap, abs(cost - float(np.min((a - h * v) ** 2 / (s * s * v)))))
    bounds = VolBounds(1.0, 4.0)
    grid = make_time_grid(0.0, 1.0, 400)
    tanh = get_preset("tanh-drift")
    lln_rate = 0.0
    for c in (get_preset("flat"), tanh.replace(h=lambda x: 0.0 * np.asarray(x))):
        phi = solve_limit_ode(c, X0, grid).phi
        lln_rate = max(lln_rate, lambda_rate(c, bounds, X0, phi - X0, grid).value)
    # with h != 0 the zero-rate paths are the zero-phi' controlled paths
    zpath = controlled_ode(tanh, X0, ControlPair(np.zeros(grid.n_steps),
                                                 rng.uniform(1.0, 4.0, grid.n_steps)), grid)
    lln_rate = max(lln_rate, lambda_rate(tanh, bounds, X0, zpath - X0, grid).value)
    flat = get_preset("flat")
    delta = 0.8
    inf_rate = theoretical_rate_inf(exit_ball(delta),
                                    lambda path: lambda_rate(flat, bounds, 0.0, path, grid), grid, 40)
    exit_gap = abs(inf_rate - delta ** 2 / (2 * bounds.sigma_hi_sq * 1.0))
    ok = scan_gap <= 1e-9 and lln_rate <= 1e-10 and exit_gap <= 1e-6
    report(8, ok, f"scan gap {scan_gap:.2e} (<= 1e-9); zero-rate paths max {lln_rate:.2e} "
                  f"(<= 1e-10); straight exit gap {exit_gap:.2e} (<= 1e-6)")
    assert ok


def test_criterion_09_contraction_composition(report):
    decay = CoefficientSet(f=lambda t, x, y, z: -np.asarray(y, dtype=float) + 0.0 * np.asarray(x))
    bounds = VolBounds(1.0, 4.0)
    grid = make_time_grid(0.0, 1.0, 400)
    t = grid.nodes
    xs = np.linspace(-4.0, 4.0, 321)
    u0 = VIGrid(0.0, t, xs, xs[None, :] * np.exp(-(1.0 - t))[:, None])
    rng = np.random.default_rng(9)
    worst = 0.0
    vs = np.linspace(bounds.sigma_lo_sq, bounds.sigma_hi_sq, 3001)
    for _ in range(10):
        x0 = rng.uniform(-1.0, 1.0)
        bump = t * (rng.normal(scale=0.4) * np.sin(3 * t) + rng.normal(scale=0.4) * t)
        psi = (x0 + bump) * np.exp(-(1.0 - t))
        got = lambda_prime(decay, zero_penalty(), bounds, x0, psi, u0, grid).value
        # stage one: closed-form preimage; stage two: per-cell scan over eta'
        phi_t = psi * np.exp(1.0 - t)
        slope = np.diff(phi_t) / grid.dt
        brute = 0.5 * float(np.sum((slope[:, None] ** 2 / vs[None, :]).min(axis=1)) * grid.dt)
        worst = max(worst, abs(got - brute))
    ok = worst <= 1e-4
    report(9, ok, f"max |lambda_prime - brute force| = {worst:.2e} (<= 1e-4)")
    assert ok


def test_criterion_10_empirical_ldp_consistency(report):
    flat = get_preset("flat")
    bounds = preset_bounds("flat")
    grid = make_time_grid(0.0, 1.0, 200)
    fam = scenario_family(bounds, grid)
    delta = 1.0
    curve = empirical_ldp_curve(exit_ball(delta), flat, zero_penalty(), 0.0, [0.25, 0.2, 0.16, 0.125],
                                fam, 100_000, grid, bounds, seed=10, workers=os.cpu_count() or 1)
    best = curve.smallest_feasible()
    target = -delta ** 2 / (2 * bounds.sigma_hi_sq * 1.0)
    ok = best is not None and 2 * target <= best["eps_log_capacity"] <= 0.5 * target
    got = "none feasible" if best is None else f"eps {best['eps']}: {best['eps_log_capacity']:.4f} " \
                                              f"({best['n_hits']} hits)"
    report(10, ok, f"{got}; band [{2 * target:.4f}, {0.5 * target:.4f}] around {target:.4f}")
    assert ok


def test_criterion_11_vi_self_convergence(report):
    c = get_preset("tanh-drift")
    bounds = preset_bounds("tanh-drift")
    eps = 0.1
    lo, hi = default_window(c, bounds, eps, X0, 1.0)
    coarse = solve_vi(c, zero_penalty(), bounds, eps, lo, hi, 301, make_time_grid(0, 1, 1000))
    fine = solve_vi(c, zero_penalty(), bounds, eps, lo, hi, 601, make_time_grid(0, 1, 2000))
    nx = coarse.x_nodes.size
    inner = slice(nx // 4, nx - nx // 4)
    gap = float(np.max(np.abs(coarse.u[:, inner] - fine.u[::2, ::2][:, inner])))
    grid = make_time_grid(0, 1, 1000)
    a = solve_vi(c, zero_penalty(), bounds, eps, lo, hi, 301, grid)
    b = solve_vi(c, zero_penalty(), bounds, eps, lo, hi, 301, grid, use_prox=False)
    identical = a.u.tobytes() == b.u.tobytes()
    rng = np.random.default_rng(11)
    n_cmp = 0
    g2 = make_time_grid(0, 1, 400)
    for _ in range(20):
        k1, k2, lift = rng.normal(size=3)
        base = c.replace(Phi=lambda x, k1=k1, k2=k2: (np.arctan(x) + 0.3 * k1 * np.sin(x)
                                                      + 0.2 * k2 * np.cos(2 * x)))
        up = base.replace(Phi=lambda x, f=base.Phi, s=abs(lift): f(x) + 0.1 * s + 0.3 / (1 + x * x))
        u = solve_vi(base, zero_penalty(), bounds, 0.2, -3, 3, 151, g2).u
        v = solve_vi(up, zero_penalty(), bounds, 0.2, -3, 3, 151, g2).u
        n_cmp += bool(np.all(u <= v))
    ok = gap <= 0.01 and identical and n_cmp == 20
    report(11, ok, f"2x refinement gap {gap:.2e} (<= 0.01); zero-penalty collapse bit-identical "
                   f"{identical}; comparison holds on {n_cmp}/20 pairs")
    assert ok


def test_criterion_12_reproducibility(tmp_path, report):
    configs = {
        "verify-convergence": {"preset": "tanh-drift", "n_steps": 200, "eps_ladder": [0.4, 0.2, 0.1],
                               "n_paths": 1000, "chunk_size": 250, "family_size": 6, "seed": 12,
                               "penalties": ["zero", {"kind": "indicator_interval", "a": -1, "b": 1}]},
        "ldp-check": {"preset": "flat", "n_steps": 100, "eps_ladder": [0.4, 0.3, 0.2],
                      "n_paths": 5000, "seed": 12, "event": {"kind": "exit_ball", "radius": 0.6}},
        "simulate-forward": {"preset": "tanh-drift", "n_steps": 200, "eps_ladder": [0.4, 0.2, 0.1],
                             "n_paths": 3000, "seed": 12, "family_size": 5},
    }
    same = True
    checked = 0
    for cmd, doc in configs.items():
        cfg = tmp_path / f"{cmd}.json"
        cfg.write_text(json.dumps(doc))
        outs = []
        for tag, workers in (("a", 1), ("b", 4), ("c", 1)):
            out = tmp_path / f"{cmd}-{tag}"
            assert cli_run(cmd, cfg, out, workers=workers) == 0
            outs.append(out)
        for csv_file in sorted(p.name for p in outs[0].glob("*.csv")):
            data = [(o / csv_file).read_bytes() for o in outs]
            same &= data[0] == data[1] == data[2]
            checked += 1
    report(12, same, f"{checked} CSV files byte-identical across reruns and worker counts: {same}")
    assert same
