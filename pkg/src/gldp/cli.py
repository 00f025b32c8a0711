"""Command-line front end: ``gldp <command> --config FILE [--out DIR] [--workers N]``.

Each run reads one JSON config, writes CSV results, an SVG plot and a
``manifest.json``. Exit codes: 0 success, 1 config error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._svg import heatmap, line_plot
from .coeffs import PRESET_NAMES, CoefficientSet, get_preset, preset_bounds, validate_coefficients
from .convex import penalty_from_config
from .forward import BlowUpError, euler_maruyama, solve_limit_ode
from .gcore import ScenarioSamples, VolBounds, sublinear_expectation
from .ldp import EventSpec, empirical_ldp_curve, fit_slope, theoretical_rate_inf
from .limitbw import limit_driver_g, martingale_increments, solve_limit_backward
from .paths import TimeGrid, gaussian_increments, scenario_family
from .ratefn import InversionError, PreimageError, lambda_prime, lambda_rate
from .vi import CFLError, WindowError, convergence_experiment, default_window, limit_field_u0, solve_vi

COMMANDS = ("simulate-forward", "solve-limit", "solve-vi", "verify-convergence",
            "rate-function", "ldp-check")

NUMERICAL_ERRORS = (CFLError, WindowError, BlowUpError, InversionError, PreimageError,
                    ArithmeticError, FloatingPointError)


class ConfigError(ValueError):
    def __init__(self, fld: str, msg: str):
        self.field = fld
        super().__init__(f"{fld}: {msg}")


# inline coefficient expressions -------------------------------------------

_FUNCS = {name: getattr(np, name) for name in
          ("sin", "cos", "tan", "tanh", "sinh", "cosh", "arctan", "exp", "log", "sqrt",
           "abs", "minimum", "maximum", "sign")}
_CONSTS = {"pi": math.pi, "e": math.e}
_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _compile_expr(src: str, args: tuple[str, ...], fld: str):
    """Compile an arithmetic expression over ``args`` into a numpy callable.

    Only numbers, the named arguments, ``pi``/``e``, arithmetic operators and
    a fixed set of numpy functions are accepted.
    """
    try:
        tree = ast.parse(str(src), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(fld, f"cannot parse expression: {exc.msg}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)) or isinstance(node, _OPS):
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in args or node.id in _CONSTS or node.id in _FUNCS):
            continue
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            continue
        raise ConfigError(fld, f"unsupported element {type(node).__name__} in expression {src!r}")
    code = compile(tree, f"<{fld}>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def fn(*vals):
        local = {a: np.asarray(v, dtype=float) for a, v in zip(args, vals)}
        out = eval(code, env, local)  # noqa: S307 - validated AST above
        shape = np.broadcast(*[np.asarray(v) for v in vals]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape) * 1.0

    return fn


def _coefficients(cfg: dict) -> tuple[CoefficientSet, str]:
    inline = cfg.get("coefficients")
    preset = cfg.get("preset", "tanh-drift" if inline is None else None)
    if inline is None:
        if preset not in PRESET_NAMES:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESET_NAMES)}")
        return get_preset(preset), preset
    if not isinstance(inline, dict):
        raise ConfigError("coefficients", "must be an object")
    base = inline.get("base", "flat")
    if base not in PRESET_NAMES:
        raise ConfigError("coefficients.base", f"unknown preset {base!r}")
    c = get_preset(base)
    changes = {}
    for name in ("b", "h", "sigma", "Phi"):
        if name in inline:
            changes[name] = _compile_expr(inline[name], ("x",), f"coefficients.{name}")
    for name in ("f", "g"):
        if name in inline:
            changes[name] = _compile_expr(inline[name], ("t", "x", "y", "z"), f"coefficients.{name}")
    for name in ("lipschitz_L", "bound_L"):
        if name in inline:
            changes[name] = _positive(inline[name], f"coefficients.{name}")
    c = c.replace(name="inline", **changes)
    rep = validate_coefficients(c, -10.0, 10.0, 2000, 0)
    if not rep.passed:
        raise ConfigError("coefficients", "; ".join(rep.failures))
    return c, base


# config -------------------------------------------------------------------

def _num(v, fld):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(fld, f"expected a finite number, got {v!r}")
    return float(v)


def _positive(v, fld):
    v = _num(v, fld)
    if not v > 0:
        raise ConfigError(fld, f"must be > 0, got {v}")
    return v


def _int(v, fld, lo):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(fld, f"expected an integer >= {lo}, got {v!r}")
    return v


@dataclass
class ExperimentConfig:
    command: str
    raw: dict
    coeffs: CoefficientSet
    preset: str
    bounds: VolBounds
    penalties: list
    grid: TimeGrid
    x0: float
    eps_ladder: list = field(default_factory=list)
    eps: float = 0.1
    family_size: int = 3
    family_seed: int = 0
    n_paths: int = 1000
    seed: int = 0
    psi_hat_b_only: bool = False
    base_dir: Path = Path(".")


def parse_config(raw: dict, command: str) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    if "command" in raw and raw["command"] != command:
        raise ConfigError("command", f"config is for {raw['command']!r}, not {command!r}")
    c, preset = _coefficients(raw)
    b = raw.get("bounds")
    if b is None:
        bounds = preset_bounds(preset)
    else:
        if isinstance(b, (list, tuple)) and len(b) == 2:
            b = {"sigma_lo_sq": b[0], "sigma_hi_sq": b[1]}
        if not isinstance(b, dict):
            raise ConfigError("bounds", "expected {sigma_lo_sq, sigma_hi_sq} or a pair")
        lo = _positive(b.get("sigma_lo_sq"), "bounds.sigma_lo_sq")
        hi = _positive(b.get("sigma_hi_sq"), "bounds.sigma_hi_sq")
        if lo > hi:
            raise ConfigError("bounds.sigma_lo_sq", f"must be <= bounds.sigma_hi_sq ({lo} > {hi})")
        bounds = VolBounds(lo, hi)
    pens_raw = raw["penalties"] if "penalties" in raw else [raw.get("penalty", "zero")]
    if not isinstance(pens_raw, list) or not pens_raw:
        raise ConfigError("penalties", "expected a non-empty list")
    penalties = []
    for i, pr in enumerate(pens_raw):
        try:
            penalties.append(penalty_from_config(pr))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"penalties[{i}]" if "penalties" in raw else "penalty", str(exc)) from None
    s = _num(raw.get("s", 0.0), "s")
    T = _num(raw.get("T", 1.0), "T")
    if s < 0:
        raise ConfigError("s", "must be >= 0")
    if not T > s:
        raise ConfigError("T", f"must exceed s={s}")
    grid = TimeGrid(s, T, _int(raw.get("n_steps", 1000), "n_steps", 1))
    cfg = ExperimentConfig(command, raw, c, preset, bounds, penalties, grid,
                           _num(raw.get("x0", 0.5), "x0"))
    if "eps_ladder" in raw:
        lad = raw["eps_ladder"]
        if not isinstance(lad, list):
            raise ConfigError("eps_ladder", "expected a list")
        cfg.eps_ladder = [_num(e, f"eps_ladder[{i}]") for i, e in enumerate(lad)]
        for i, e in enumerate(cfg.eps_ladder):
            if not 0 < e <= 1:
                raise ConfigError(f"eps_ladder[{i}]", f"must lie in (0, 1], got {e}")
        if any(b2 >= a2 for a2, b2 in zip(cfg.eps_ladder, cfg.eps_ladder[1:])):
            raise ConfigError("eps_ladder", "must be strictly decreasing")
    cfg.eps = _num(raw.get("eps", 0.1), "eps")
    if not 0 <= cfg.eps <= 1:
        raise ConfigError("eps", f"must lie in [0, 1], got {cfg.eps}")
    cfg.family_size = _int(raw.get("family_size", 3), "family_size", 3)
    cfg.family_seed = _int(raw.get("family_seed", 0), "family_seed", 0)
    cfg.n_paths = _int(raw.get("n_paths", 1000), "n_paths", 1)
    cfg.seed = _int(raw.get("seed", 0), "seed", 0)
    flag = raw.get("psi_hat_b_only", False)
    if not isinstance(flag, bool):
        raise ConfigError("psi_hat_b_only", "expected true or false")
    cfg.psi_hat_b_only = flag
    needs_ladder = command in ("verify-convergence", "ldp-check")
    if needs_ladder and len(cfg.eps_ladder) < 3:
        raise ConfigError("eps_ladder", "needs at least 3 entries for this command")
    return cfg


def _family(cfg: ExperimentConfig):
    return scenario_family(cfg.bounds, cfg.grid, cfg.family_size - 3, cfg.family_seed)


# output helpers -----------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        for row in rows:
            w.writerow([_cell(v) for v in row])


class _Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, inputs: list[Path]):
        self.cfg = cfg
        self.out = out
        self.artifacts: list[str] = []
        self.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        h = hashlib.sha256(json.dumps(cfg.raw, sort_keys=True, separators=(",", ":")).encode())
        for p in inputs:
            h.update(Path(p).read_bytes())
        self.input_digest = h.hexdigest()

    def csv(self, name: str, rows) -> Path:
        path = self.out / name
        write_csv(path, rows)
        self.artifacts.append(name)
        return path

    def text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8", newline="\n")
        self.artifacts.append(name)
        return path

    def manifest(self, extra: dict | None = None) -> None:
        arts = []
        for name in self.artifacts:
            data = (self.out / name).read_bytes()
            arts.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {
            "command": self.cfg.command,
            "config": self.cfg.raw,
            "seed": self.cfg.seed,
            "started_at": self.started_at,
            "input_digest": self.input_digest,
            "versions": {"gldp": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "artifacts": arts,
        }
        if extra:
            doc["summary"] = extra
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True,
                                                           allow_nan=False, default=_json_default)
                                                + "\n", encoding="utf-8")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v).__name__)


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


# commands -----------------------------------------------------------------

def cmd_simulate_forward(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    c, grid = cfg.coeffs, cfg.grid
    p = _num(cfg.raw.get("p", 2.0), "p")
    if p < 2:
        raise ConfigError("p", "must be >= 2")
    ladder = cfg.eps_ladder or [cfg.eps]
    fam = _family(cfg)
    phi = solve_limit_ode(c, cfg.x0, grid).phi
    n_show = min(3, cfg.n_paths)
    err_rows = [["eps", "scenario_id", "label", "mean_sup_abs_pow_p", "n_paths"]]
    summary = [["eps", "e_X", "argmax_scenario_id"]]
    show = {}
    chunk = 2000
    e_vals = []
    for e in ladder:
        sups = {sc.id: [] for sc in fam}
        for a in range(0, cfg.n_paths, chunk):
            idx = np.arange(a, min(a + chunk, cfg.n_paths))
            dW = gaussian_increments(grid, cfg.seed, idx)
            for sc in fam:
                x = euler_maruyama(c, e, cfg.x0, np.sqrt(sc.var_path) * dW, sc.var_path * grid.dt, grid.dt)
                sups[sc.id].append(np.max(np.abs(x - phi), axis=1))
                if a == 0 and sc.id == 1 and e == ladder[0]:
                    show = {f"x_s{sc.id}_p{j}": x[j] for j in range(n_show)}
        samples = ScenarioSamples((sid, np.concatenate(v) ** p) for sid, v in sups.items())
        est = sublinear_expectation(samples, detail=True)
        for sc in fam:
            err_rows.append([e, sc.id, sc.label, est.means[sc.id], cfg.n_paths])
        summary.append([e, est.value, est.argmax_scenario_id])
        e_vals.append(est.value)
    run.csv("forward_errors.csv", err_rows)
    slope = None
    if len(ladder) >= 3 and min(e_vals) > 0:
        slope = fit_slope([(math.log(e), math.log(v)) for e, v in zip(ladder, e_vals)])[0]
        for row in summary[1:]:
            row.append(slope)
        summary[0].append("slope")
    run.csv("forward_summary.csv", summary)
    t = grid.nodes
    run.csv("forward_paths.csv", [["t", "phi"] + list(show)]
            + [[t[k], phi[k]] + [v[k] for v in show.values()] for k in range(t.size)])
    series = [("phi", t, phi)] + [(k, t, v) for k, v in show.items()]
    run.text("forward_paths.svg", line_plot(series, title=f"Forward paths, eps={ladder[0]}",
                                            xlabel="t", ylabel="X"))
    return {"e_X": dict(zip(map(str, ladder), e_vals)), "slope": slope}


def cmd_solve_limit(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    c, grid = cfg.coeffs, cfg.grid
    phi = solve_limit_ode(c, cfg.x0, grid)
    fam = scenario_family(cfg.bounds, grid)
    out = {}
    for i, pen in enumerate(cfg.penalties):
        lb = solve_limit_backward(c, pen, phi, grid, cfg.bounds)
        g_vals = limit_driver_g(c, phi, lb, grid)
        ms = {}
        for sc in fam:
            inc = martingale_increments(g_vals, sc.var_path * grid.dt, cfg.bounds, grid.dt)
            ms[sc.label] = np.concatenate([[0.0], np.cumsum(inc)])
        t = grid.nodes
        rows = [["t", "phi", "psi", "u_sel"] + [f"M_{k}" for k in ms]]
        for k in range(t.size):
            u = lb.u_sel[k] if k < grid.n_steps else None
            rows.append([t[k], phi.phi[k], lb.psi[k], u] + [m[k] for m in ms.values()])
        suffix = "" if len(cfg.penalties) == 1 else f"_{i}"
        run.csv(f"limit{suffix}.csv", rows)
        run.text(f"limit{suffix}.svg", line_plot(
            [("phi", t, phi.phi), ("psi", t, lb.psi)] + [(f"M {k}", t, m) for k, m in ms.items()],
            title=f"Limit system, penalty {pen.kind}", xlabel="t", ylabel="value"))
        out[f"psi_s{suffix}"] = float(lb.psi[0])
    return out


def _window(cfg: ExperimentConfig, eps: float):
    win = cfg.raw.get("window")
    if win is None:
        return default_window(cfg.coeffs, cfg.bounds, eps, cfg.x0, cfg.grid.horizon)
    if not isinstance(win, list) or len(win) != 2:
        raise ConfigError("window", "expected [x_lo, x_hi]")
    lo, hi = _num(win[0], "window[0]"), _num(win[1], "window[1]")
    if not lo < hi:
        raise ConfigError("window", "x_lo must be < x_hi")
    return lo, hi


def cmd_solve_vi(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    lo, hi = _window(cfg, cfg.eps)
    nx = _int(cfg.raw.get("nx", 201), "nx", 8)
    pen = cfg.penalties[0]
    if cfg.eps == 0:
        fld = limit_field_u0(cfg.coeffs, pen, cfg.bounds, np.linspace(lo, hi, nx), cfg.grid)
    else:
        fld = solve_vi(cfg.coeffs, pen, cfg.bounds, cfg.eps, lo, hi, nx, cfg.grid, keep_predictor=False)
    fld.to_csv(run.out / "field.csv")
    run.artifacts.append("field.csv")
    run.text("field.svg", heatmap(fld.t_nodes, fld.x_nodes, fld.u,
                                  title=f"u(t, x), eps={cfg.eps}, penalty {pen.kind}"))
    return {"u_at_x0": float(fld.interp(0, np.array([cfg.x0]))[0]), "nx": nx, "window": [lo, hi]}


def cmd_verify_convergence(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    chunk = _int(cfg.raw.get("chunk_size", 2500), "chunk_size", 1)
    dx = _positive(cfg.raw.get("dx_target", 0.02), "dx_target")
    reports = convergence_experiment(cfg.coeffs, cfg.penalties, cfg.bounds, cfg.x0, cfg.eps_ladder,
                                     _family(cfg), cfg.n_paths, cfg.grid, seed=cfg.seed,
                                     dx_target=dx, chunk_size=chunk, workers=workers)
    out = {}
    for i, rep in enumerate(reports):
        suffix = "" if len(reports) == 1 else f"_{i}"
        run.csv(f"convergence{suffix}.csv", rep.csv_rows())
        series = [(f"e_{q}", rep.eps, [r[f"e_{q}"] for r in rep.rows]) for q in ("X", "Y", "Z", "K")]
        run.text(f"convergence{suffix}.svg", line_plot(
            series, title=f"Error curves, penalty {rep.penalty['kind']}", xlabel="eps",
            ylabel="error", logx=True, logy=True))
        out[f"slopes{suffix}"] = {q: _finite_or_none(v["slope"]) for q, v in rep.slopes.items()}
    return out


def _target_file(cfg: ExperimentConfig) -> Path | None:
    tgt = cfg.raw.get("target")
    if tgt is None:
        raise ConfigError("target", "rate-function needs a target")
    if tgt == "lln":
        return None
    if not isinstance(tgt, dict) or "file" not in tgt:
        raise ConfigError("target", 'expected "lln" or {"file": ..., "column": ...}')
    path = Path(tgt["file"])
    if not path.is_absolute():
        path = cfg.base_dir / path
    if not path.is_file():
        raise ConfigError("target.file", f"no such file {str(path)!r}")
    return path


def _read_target(cfg: ExperimentConfig) -> np.ndarray:
    path = _target_file(cfg)
    if path is None:
        return solve_limit_ode(cfg.coeffs, cfg.x0, cfg.grid).phi
    tgt = cfg.raw["target"]
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError("target.file", "needs a header row and data rows")
    header = rows[0]
    col = tgt.get("column", header[1] if len(header) > 1 else header[0])
    if col not in header:
        raise ConfigError("target.column", f"column {col!r} not in {header}")
    j = header.index(col)
    try:
        vals = np.array([float(r[j]) for r in rows[1:]])
    except (ValueError, IndexError):
        raise ConfigError("target.file", f"column {col!r} is not numeric") from None
    if vals.size != cfg.grid.n_steps + 1:
        raise ConfigError("target.file", f"has {vals.size} values, grid needs {cfg.grid.n_steps + 1}")
    return vals


def cmd_rate_function(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    kind = cfg.raw.get("rate", "lambda")
    if kind not in ("lambda", "lambda_prime"):
        raise ConfigError("rate", f"expected 'lambda' or 'lambda_prime', got {kind!r}")
    target = _read_target(cfg)
    form = cfg.raw.get("target", {}).get("form", "state") if isinstance(cfg.raw.get("target"), dict) else "state"
    if form not in ("state", "deviation"):
        raise ConfigError("target.form", "expected 'state' or 'deviation'")
    if kind == "lambda":
        dev = target - cfg.x0 if form == "state" else target
        if abs(dev[0]) > 1e-12:
            raise ConfigError("target", f"path must start at x0={cfg.x0}")
        dev[0] = 0.0
        res = lambda_rate(cfg.coeffs, cfg.bounds, cfg.x0, dev, cfg.grid,
                          psi_hat_b_only=cfg.psi_hat_b_only)
    else:
        lo, hi = _window(cfg, 0.0)
        nx = _int(cfg.raw.get("nx", 401), "nx", 8)
        u0 = limit_field_u0(cfg.coeffs, cfg.penalties[0], cfg.bounds, np.linspace(lo, hi, nx), cfg.grid)
        res = lambda_prime(cfg.coeffs, cfg.penalties[0], cfg.bounds, cfg.x0, target, u0, cfg.grid,
                           psi_hat_b_only=cfg.psi_hat_b_only)
    run.text("rate.json", res.to_json() + "\n")
    t = cfg.grid.nodes
    if res.optimal_control is not None:
        ctrl = res.optimal_control
        run.csv("rate_controls.csv", [["t", "phi_dot", "eta_dot"]]
                + [[t[k], ctrl.phi_dot[k], ctrl.eta_dot[k]] for k in range(cfg.grid.n_steps)])
        series = [("phi_dot", t[:-1], ctrl.phi_dot), ("eta_dot", t[:-1], ctrl.eta_dot)]
    else:
        run.csv("rate_controls.csv", [["t", "phi_dot", "eta_dot"]])
        series = []
    run.text("rate.svg", line_plot([("target", t, res.target)] + series,
                                   title=f"{kind}: value {res.value:.6g}", xlabel="t", ylabel="value"))
    return {"value": _finite_or_none(res.value), "infinite": res.infinite}


def _event(cfg: ExperimentConfig) -> EventSpec:
    ev = cfg.raw.get("event")
    if not isinstance(ev, dict):
        raise ConfigError("event", 'expected {"kind": "exit_ball", "radius": ...} or terminal_above')
    try:
        return EventSpec(ev.get("kind", ""), radius=float(ev.get("radius", math.nan)),
                         level=float(ev.get("level", math.nan)),
                         applied_to=ev.get("applied_to", "forward_minus_x"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("event", str(exc)) from None


def cmd_ldp_check(cfg: ExperimentConfig, run: _Run, workers: int) -> dict:
    ev = _event(cfg)
    speed = cfg.raw.get("speed", "eps2")
    if speed not in ("eps2", "eps"):
        raise ConfigError("speed", "expected 'eps2' or 'eps'")
    if cfg.n_paths < 1000:
        raise ConfigError("n_paths", "ldp-check needs at least 1000 paths")
    size = _int(cfg.raw.get("candidate_family_size", 64), "candidate_family_size", 1)
    pen = cfg.penalties[0]
    curve = empirical_ldp_curve(ev, cfg.coeffs, pen, cfg.x0, cfg.eps_ladder, _family(cfg),
                                cfg.n_paths, cfg.grid, cfg.bounds, seed=cfg.seed, speed=speed,
                                workers=workers)
    run.csv("ldp_curve.csv", curve.csv_rows())
    c, grid = cfg.coeffs, cfg.grid
    lln = solve_limit_ode(c, cfg.x0, grid).phi - cfg.x0
    rate_inf = None
    if ev.applied_to == "forward_minus_x":
        from .forward import rk4_flow_step

        def rate_fn(path):
            return lambda_rate(c, cfg.bounds, cfg.x0, path, grid, psi_hat_b_only=cfg.psi_hat_b_only)

        def flow(v, dt):
            return rk4_flow_step(c.b, cfg.x0 + v, dt) - cfg.x0

        rate_inf = theoretical_rate_inf(ev, rate_fn, grid, size, lln=lln, origin=cfg.x0, flow=flow)
    series = [("empirical", [r["eps"] for r in curve.rows], [r["eps_log_capacity"] for r in curve.rows])]
    hl = [("-inf rate", -rate_inf)] if rate_inf is not None and math.isfinite(rate_inf) else []
    run.text("ldp_curve.svg", line_plot(series, title=f"Capacity decay ({speed} speed)",
                                        xlabel="eps", ylabel="speed * log capacity", hlines=hl))
    best = curve.smallest_feasible()
    return {"rate_inf": _finite_or_none(rate_inf) if rate_inf is not None else None,
            "smallest_feasible_eps": best["eps"] if best else None,
            "smallest_feasible_value": _finite_or_none(best["eps_log_capacity"]) if best else None,
            "speed": speed}


_HANDLERS = {
    "simulate-forward": cmd_simulate_forward,
    "solve-limit": cmd_solve_limit,
    "solve-vi": cmd_solve_vi,
    "verify-convergence": cmd_verify_convergence,
    "rate-function": cmd_rate_function,
    "ldp-check": cmd_ldp_check,
}


def run(command: str, config_path, out_dir=None, workers: int | None = None) -> int:
    """Run one command; returns the process exit code."""
    config_path = Path(config_path)
    try:
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("--config", f"no such file {str(config_path)!r}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg = parse_config(raw, command)
        if workers is None:
            workers = os.cpu_count() or 1
        if workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg.base_dir = config_path.parent
        out = Path(out_dir if out_dir is not None else raw.get("out", "gldp-out"))
        inputs = []
        if command == "rate-function":
            tf = _target_file(cfg)
            inputs = [tf] if tf is not None else []
        out.mkdir(parents=True, exist_ok=True)
        session = _Run(cfg, out, inputs)
        summary = _HANDLERS[command](cfg, session, workers)
        session.manifest(summary)
    except ConfigError as exc:
        print(f"gldp: config error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"gldp: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # remaining validation errors come from library preconditions on config values
        print(f"gldp: config error: {exc}", file=sys.stderr)
        return 1
    print(f"gldp: {command} finished; artifacts in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gldp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=None, help="output directory (default: config 'out' or ./gldp-out)")
    ap.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    ap.add_argument("--version", action="version", version=f"gldp {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
