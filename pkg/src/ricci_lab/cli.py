"""Command line driver: ``ricci-lab run <config.json>`` and ``ricci-lab list``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .checks.bochner import be_scan, gradient_estimate_check
from .checks.contraction import wp_contraction_check
from .checks.entropy import T_GRID, cd_check, evi_check, pathwise_convexity_check
from .checks.families import function_family, random_measure_pairs
from .checks.measure import change_of_measure, tensor_curvature
from .checks.report import CheckReport, _plain, make_report
from .coupling import build_qstar, compose_kernel, marginal_error, sample_coupled_paths, pathwise_contraction_stats
from .errors import CapacityError, InputError, RicciLabError, UnsupportedGeometryError
from .semigroups import duhamel_residual, feynman_kac_mc, schrodinger_apply
from .space import DiscreteSpace, Potential, as_field, potential_hessian, space_from_spec
from .studies import cd_refinement
from .transport import action_trace, displacement_geodesic

SCHEMA_VERSION = 1
CONFIG_KEYS = {"experiment", "space", "params", "seed", "output"}
DEFAULT_OUTPUT = "ricci-lab-out"

# --- helpers -------------------------------------------------------------------------


def _field(space: DiscreteSpace, k, shift: float = 0.0):
    """Curvature from a number, a site list or "hessian" (V'' of the space's potential)."""
    if isinstance(k, str):
        if k != "hessian":
            raise InputError(f"unknown curvature keyword {k!r}")
        vals = potential_hessian(space)
    elif isinstance(k, (int, float)):
        vals = np.full(space.n, float(k))
    elif isinstance(k, list):
        vals = np.asarray(k, dtype=float)
    else:
        raise InputError("curvature must be a number, a list or \"hessian\"")
    return as_field(space, vals + float(shift))


def _workers() -> int:
    raw = os.environ.get("RICCI_LAB_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"RICCI_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def _pmap(fn: Callable, items: list) -> list:
    """Map over independent units; results keep the input order."""
    workers = _workers()
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _p_value(p) -> float:
    if p in ("inf", "infinity", math.inf):
        return math.inf
    if isinstance(p, (int, float)) and p >= 1:
        return float(p)
    raise InputError(f"p must be >= 1 or \"inf\", got {p!r}")


# --- experiments ---------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    defaults: dict
    runner: Callable
    needs_space: bool = True


def _run_be(space, p, seed):
    family = p["family"] if p["family"] is not None else [
        {"kind": "eigen", "count": 10},
        {"kind": "random-smooth", "count": 20, "seed": seed},
    ]
    rep = be_scan(space, _field(space, p["k"], p["k_shift"]), family, p["tolerance"], p["bumps"], seed)
    return [rep], {}


def _run_grad(space, p, seed):
    U, _ = function_family(space, {"kind": "random-smooth", "count": p["count"], "seed": seed, "mollify": p["mollify"]})
    rep = gradient_estimate_check(space, _field(space, p["k"], p["k_shift"]), U, p["times"], p["tolerance"])
    return [rep], {}


def _pairs(space, p, seed):
    return random_measure_pairs(space, p["pairs"], seed)


def _run_cd(space, p, seed):
    k = _field(space, p["k"], p["k_shift"])
    pairs = _pairs(space, p, seed)
    reports = _pmap(lambda pair: cd_check(space, k, pair[0], pair[1], p["t_grid"], p["S"], p["tolerance"]), pairs)
    for i, r in enumerate(reports):
        r.name = f"cd[{i}]"
    theta = displacement_geodesic(space, pairs[0][0], pairs[0][1], p["S"])
    trace = action_trace(theta, k, 0.5)
    margins = [{"pair": i, "t": row["t"], "margin": m} for i, r in enumerate(reports) for row, m in zip(r.rows, r.residuals)]
    return reports, {"cd_margins": margins, "action_trace": trace}


def _run_evi(space, p, seed):
    k = _field(space, p["k"], p["k_shift"])
    pairs = _pairs(space, p, seed)
    reports = _pmap(lambda pair: evi_check(space, k, pair[0], pair[1], p["times"], p["S"], p["eta"], p["tolerance"]), pairs)
    for i, r in enumerate(reports):
        r.name = f"evi[{i}]"
    return reports, {}


def _run_pathwise(space, p, seed):
    k = _field(space, p["k"], p["k_shift"])
    reports = []
    for i, (mu, nu) in enumerate(_pairs(space, p, seed)):
        theta = displacement_geodesic(space, mu, nu, p["S"])
        r = pathwise_convexity_check(space, k, theta, p["t_grid"], p["tolerance"])
        r.name = f"pathwise[{i}]"
        reports.append(r)
    return reports, {}


def _run_contraction(space, p, seed):
    pairs = _pairs(space, p, seed)
    ps = [_p_value(v) for v in p["p"]]

    def one(pv):
        r = wp_contraction_check(space, p["K"], pairs, p["times"], pv, p["tolerance"])
        r.name = f"contraction-wp[p={'inf' if math.isinf(pv) else pv:g}]"
        return r

    return _pmap(one, ps), {}


def _run_duhamel(space, p, seed):
    k = _field(space, p["k"], p["k_shift"])
    res = duhamel_residual(space, k, p["t"], p["quad_nodes"])
    coarse = duhamel_residual(space, k, p["t"], p["quad_nodes"] // 2) if p["quad_nodes"] >= 4 and (p["quad_nodes"] // 2) % 2 == 0 else float("nan")
    ratio = coarse / res if res > 0 else float("inf")
    rep = make_report(
        "duhamel",
        {"t": p["t"], "quad_nodes": p["quad_nodes"]},
        [-res],
        p["tolerance"],
        [{"residual": res, "residual_half_nodes": coarse}],
        lambda i: {"t": p["t"], "quad_nodes": p["quad_nodes"]},
        {"halving_ratio": ratio},
    )
    return [rep], {}


def _test_function(space, u):
    if u == "cos":
        return np.cos(space.coords[:, 0]) + 0.5
    vals = np.asarray(u, dtype=float)
    if vals.shape != (space.n,):
        raise InputError(f"u must have {space.n} values or be \"cos\"")
    return vals


def _run_feynman_kac(space, p, seed):
    k = _field(space, p["k"], p["k_shift"])
    u = _test_function(space, p["u"])
    est, se = feynman_kac_mc(space, k, u, p["t"], p["n_paths"], seed)
    exact = schrodinger_apply(space, k, u, p["t"])
    margins = p["sigmas"] * se - np.abs(est - exact)
    rows = [{"site": x, "estimate": float(est[x]), "exact": float(exact[x]), "stderr": float(se[x])} for x in range(space.n)]
    rep = make_report(
        "feynman-kac",
        {"t": p["t"], "n_paths": p["n_paths"], "sigmas": p["sigmas"], "seed": seed},
        margins,
        0.0,
        rows,
        lambda i: {"site": int(i), "seed": seed},
        {"fraction_within": float(np.mean(margins >= 0))},
    )
    return [rep], {"feynman_kac": rows}


def _run_couple(space, p, seed):
    qk = build_qstar(space, p["K"], p["delta"], p["eps"])
    x, y = p["start"]
    paths = sample_coupled_paths(qk, (int(x), int(y)), p["horizon"], p["n_paths"], seed)
    rep = pathwise_contraction_stats(paths)
    if p["compose_steps"]:
        joint = compose_kernel(qk, p["compose_steps"])
        rep.diagnostics["compose_marginal_error"] = marginal_error(qk, p["compose_steps"], joint)
    return [rep], {"trajectories": paths.rows(limit=p["dump_paths"])}


def _run_tensor(space, p, seed):
    if space.kind != "product":
        raise InputError("tensor experiment needs a product space")
    if len(p["k"]) != len(space.factors):
        raise InputError("give one curvature per factor")
    factor_fields = [_field(f, k).values for f, k in zip(space.factors, p["k"])]
    field = tensor_curvature(factor_fields, space)
    family = p["family"] or [{"kind": "eigen", "count": 10}, {"kind": "random-smooth", "count": 10, "seed": seed}]
    rep = be_scan(space, field, family, p["tolerance"], p["bumps"], seed)
    rep.name = "tensor"
    return [rep], {}


def _run_change_of_measure(space, p, seed):
    V = Potential.from_json(p["potential"])
    lam = V.hessian if p["lam"] == "hessian" else p["lam"]
    new, field = change_of_measure(space, V, lam, p["k"])
    if p["check"] == "be":
        family = p["family"] or [{"kind": "eigen", "count": 10}, {"kind": "random-smooth", "count": 20, "seed": seed}]
        rep = be_scan(new, field, family, p["tolerance"], 4, seed)
        rep.name = "change-of-measure[be]"
        return [rep], {}
    if p["check"] == "cd":
        reports = []
        for i, (mu, nu) in enumerate(random_measure_pairs(new, p["pairs"], seed)):
            r = cd_check(new, field, mu, nu, T_GRID, 200, p["tolerance"])
            r.name = f"change-of-measure[cd {i}]"
            reports.append(r)
        return reports, {}
    raise InputError("check must be \"be\" or \"cd\"")


def _run_refine(space_spec, p, seed):
    """Refinement study of the cd budget tau(n) = max |margin_n - margin_next|."""
    if space_spec.get("kind") != "interval":
        raise InputError("refine-study needs an interval space template")
    if len(p["ns"]) < 3:
        raise InputError("refine-study needs at least three resolutions")

    def factory(n):
        space = space_from_spec({**space_spec, "n": n})
        return space, _field(space, p["k"], p["k_shift"])

    table = cd_refinement(factory, p["ns"], p["pairs"], seed, p["t_grid"], p["S"])
    rows, residuals = [], []
    for row in table[:-1]:
        rows.append({"n": row["n"], "h": row["h"], "test": "min_margin >= -tau", "tau": row["tau"]})
        residuals.append(row["min_margin"] + row["tau"])
    for prev, row in zip(table[:-2], table[1:-1]):
        rows.append({"n": row["n"], "h": row["h"], "test": "tau does not grow under refinement", "tau": row["tau"]})
        residuals.append(prev["tau"] + 1e-6 - row["tau"])
    rep = make_report("refine-study", {"ns": [r["n"] for r in table], "pairs": p["pairs"], "check": "cd"}, residuals, 0.0, rows, lambda i: dict(rows[i]))
    return [rep], {"refinement": table}


_K = {"k": 0.0, "k_shift": 0.0}

EXPERIMENTS: dict[str, Experiment] = {
    e.name: e
    for e in [
        Experiment("be", "integrated Bochner inequality over a test-function family", {**_K, "family": None, "bumps": 4, "tolerance": None}, _run_be),
        Experiment("grad", "gradient estimate Gamma(T_t u) <= T_t^{2k} Gamma(u)", {**_K, "count": 20, "mollify": 0.01, "times": [0.05, 0.1, 0.2], "tolerance": 5e-3}, _run_grad),
        Experiment("cd", "entropy convexity along displacement geodesics", {**_K, "pairs": 10, "t_grid": list(T_GRID), "S": 200, "tolerance": None}, _run_cd),
        Experiment("evi", "evolution-variation inequality along the heat flow", {**_K, "pairs": 5, "times": [0.1, 0.3, 1.0], "S": 200, "eta": 1e-3, "tolerance": None}, _run_evi),
        Experiment("pathwise", "per-path log-density convexity on intervals", {**_K, "pairs": 3, "t_grid": list(T_GRID), "S": 200, "tolerance": None}, _run_pathwise),
        Experiment("contraction-wp", "W_p contraction of the heat flow", {"K": 0.0, "pairs": 20, "times": [0.1, 0.5, 1.0], "p": [1, 2, "inf"], "tolerance": 1e-3}, _run_contraction),
        Experiment("duhamel", "operator-norm residual of the Duhamel identity", {**_K, "t": 0.5, "quad_nodes": 64, "tolerance": 1e-8}, _run_duhamel),
        Experiment("feynman-kac", "Monte Carlo Feynman-Kac against the matrix semigroup", {**_K, "t": 0.2, "n_paths": 10000, "u": "cos", "sigmas": 3.0}, _run_feynman_kac),
        Experiment("couple", "coupled chains with per-step distance contraction", {"K": 1.0, "delta": 2.0**-7, "eps": 1e-3, "horizon": 1.0, "n_paths": 10000, "start": [0, 1], "compose_steps": 0, "dump_paths": 20}, _run_couple),
        Experiment("tensor", "Bochner scan on a product with the tensorized field", {"k": [0.0, 0.0], "family": None, "bumps": 4, "tolerance": None}, _run_tensor),
        Experiment("change-of-measure", "reweight by e^{-V}, shift k by lam and re-check", {"potential": {"name": "quadratic"}, "lam": 1.0, "k": 0.0, "check": "be", "family": None, "pairs": 10, "tolerance": None}, _run_change_of_measure),
        Experiment("refine-study", "cd margins across grid resolutions with first-order budget decay", {**_K, "ns": [101, 201, 401, 801], "pairs": 10, "t_grid": list(T_GRID), "S": 200}, _run_refine, needs_space=False),
    ]
}


def list_experiments() -> list[str]:
    return sorted(EXPERIMENTS)


def schema_help() -> str:
    lines = [
        "config file (JSON object):",
        '  {"experiment": NAME, "space": SPACE, "params": {...}, "seed": INT, "output": DIR}',
        "  unknown keys are rejected; omitted params take the defaults below.",
        "",
        "SPACE:",
        '  {"kind": "interval", "n": INT, "L": FLOAT, "potential": POT}',
        '  {"kind": "circle", "n": INT, "R": FLOAT, "potential": POT}',
        '  {"kind": "product", "factors": [SPACE, SPACE]}',
        '  {"kind": "graph", "lengths": [[...]], "weights": [[...]], "measure": [...]}',
        '  POT = {"name": "zero|quadratic|double_well|cosine|table", "params": {...}}',
        "",
        'curvature k: a number, a list of site values, or "hessian" (V\'\' of the potential)',
        "",
        "experiments and params (defaults):",
    ]
    for name in list_experiments():
        e = EXPERIMENTS[name]
        lines.append(f"  {name}: {e.summary}")
        lines.append("    " + json.dumps(e.defaults, sort_keys=True))
    return "\n".join(lines)


# --- config and output -------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    extra = set(cfg) - CONFIG_KEYS
    if extra:
        raise InputError(f"unknown config keys: {sorted(extra)}")
    name = cfg.get("experiment")
    if name not in EXPERIMENTS:
        raise InputError(f"unknown experiment {name!r}; choose from {list_experiments()}")
    params = cfg.get("params") or {}
    if not isinstance(params, dict):
        raise InputError("params must be an object")
    defaults = EXPERIMENTS[name].defaults
    unknown = set(params) - set(defaults)
    if unknown:
        raise InputError(f"unknown params for {name}: {sorted(unknown)}")
    if "space" not in cfg:
        raise InputError("config needs a space")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise InputError("seed must be a nonnegative integer")
    return {"experiment": name, "space": cfg["space"], "params": {**defaults, **params}, "seed": seed, "output": cfg.get("output")}


def run_config(cfg: dict) -> tuple[list[CheckReport], dict]:
    exp = EXPERIMENTS[cfg["experiment"]]
    if exp.needs_space:
        space = space_from_spec(cfg["space"])
        return exp.runner(space, cfg["params"], cfg["seed"])
    if not isinstance(cfg["space"], dict):
        raise InputError("space spec must be an object")
    return exp.runner(cfg["space"], cfg["params"], cfg["seed"])


def _csv_text(rows: list[dict]) -> str:
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in row.items()})
    return buf.getvalue()


def write_outputs(out: Path, cfg: dict, reports: list[CheckReport], plotdata: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    verdict = "pass" if all(r.passed for r in reports) else "fail"
    doc = {
        "schema": SCHEMA_VERSION,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "experiment": cfg["experiment"],
        "config": {k: v for k, v in cfg.items() if k != "output"},
        "seed": cfg["seed"],
        "verdict": verdict,
        "reports": [r.to_json() for r in reports],
    }
    doc = _plain(doc)
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
    rows = [row for r in reports for row in r.margin_rows()]
    (out / "margins.csv").write_text(_csv_text(rows))
    if plotdata:
        pdir = out / "plotdata"
        pdir.mkdir(exist_ok=True)
        for name, prow in sorted(plotdata.items()):
            (pdir / f"{name}.csv").write_text(_csv_text(_plain(prow)))
    return doc


# --- entry point ---------------------------------------------------------------------------


def _error(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    witness = getattr(exc, "witness", None)
    if witness is not None:
        payload["witness"] = _plain(witness)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ricci-lab", description="Numerical checks of variable Ricci curvature bounds on finite spaces.")
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run one experiment from a JSON config", description="Run one experiment.", epilog=schema_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="output directory")
    sub.add_parser("list", help="print the experiment catalog")
    parser.epilog = schema_help()
    parser.formatter_class = argparse.RawDescriptionHelpFormatter
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in (None, "list"):
        print("\n".join(list_experiments()))
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError("seed must be nonnegative")
            cfg["seed"] = args.seed
        out = Path(args.out or cfg["output"] or DEFAULT_OUTPUT)
        cfg["output"] = str(out)
        reports, plotdata = run_config(cfg)
        doc = write_outputs(out, cfg, reports, plotdata)
    except (InputError, UnsupportedGeometryError, CapacityError) as exc:
        return _error(2, exc)
    except (RicciLabError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        return _error(3, exc)
    for r in reports:
        print(f"{r.name}: {r.verdict} (min margin {r.min_margin:.3e}, tolerance {r.tolerance:.3e})")
    return 0 if doc["verdict"] == "pass" else 1


if __name__ == "__main__":
    sys.exit(main())
