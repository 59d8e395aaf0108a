"""Command-line experiment driver.

Every subcommand resolves its parameters as flags > config file > defaults,
runs one experiment and writes a report (JSON by default) to ``--output`` or
standard output.  Exit codes: 0 success, 1 domain error, 2 structural
failure (a finding, reported in full), 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import asympt, casimir, coords, counting, smoothing
from .errors import DomainError, OrbitLabError, StructuralFailure
from .liealg import build_explicit_basis_m3, build_basis

SCHEMA_VERSION = 1
EX_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EX_USAGE)


# ---------------------------------------------------------------------------
# value parsers shared by flags and the config file


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _ints(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _optional_ints(text):
    return None if str(text).lower() in ("", "none") else tuple(_ints(text))


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class Param:
    name: str
    type: Callable
    default: object
    help: str
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


COMMON = [
    Param("seed", int, 0, "random seed, recorded in every report"),
    Param("threads", int, os.cpu_count() or 1, "worker threads (default: available parallelism)"),
    Param("format", str, "json", "report format", ("json", "csv", "text")),
    Param("output", str, None, "report path (default: standard output)"),
    Param("quiet", _bool, False, "suppress progress messages on standard error"),
]


@dataclass
class Command:
    name: str
    help: str
    params: list
    run: Callable  # cfg -> (result, csv rows | pre-rendered csv | None, text | None)
    default_format: str = "json"
    all_params: list = field(init=False)

    def __post_init__(self):
        self.all_params = self.params + COMMON


def _progress(cfg, msg):
    if not cfg["quiet"]:
        print(msg, file=sys.stderr, flush=True)


def _spec(cfg) -> counting.OrbitSpec:
    return counting.OrbitSpec(cfg["m"], cfg.get("q", 1), cfg.get("residue"))


# ---------------------------------------------------------------------------
# subcommands


def run_count(cfg):
    m, method = cfg["m"], cfg["method"]
    Ts = cfg["T"]
    if method == "table" or method == "both":
        _progress(cfg, f"building shell table for m={m} up to T={max(Ts):g}")
    counts = [counting.count_primitive(m, T, method=method) for T in Ts]
    rows = [{"m": m, "T": T, "count": c} for T, c in zip(Ts, counts)]
    result = {"m": m, "method": method, "T": Ts, "counts": counts,
              "assumption": counting.ORBIT_ASSUMPTION}
    return result, rows, "\n".join(str(c) for c in counts)


def run_table(cfg):
    m, n_max = cfg["m"], cfg["n_max"]
    dtype = {"auto": None, "int32": np.int32, "int64": np.int64, "object": object}[cfg["dtype"]]
    _progress(cfg, f"building r_{m}(n) for n <= {n_max}")
    table = counting.build_table(m, n_max, dtype)
    if cfg["table"]:
        table.save(cfg["table"])
        _progress(cfg, f"wrote {cfg['table']}")
    buf = io.StringIO()
    table.to_csv(buf)
    result = {"m": m, "n_max": n_max, "dtype": str(table.r_all.dtype), "table": cfg["table"],
              "all_total": int(np.sum(table.r_all, dtype=object)),
              "primitive_total": int(np.sum(table.r_prim, dtype=object))}
    return result, buf.getvalue(), None


def run_orbit_count(cfg):
    spec = _spec(cfg)
    counter = counting.OrbitCounter(spec)
    counts = counter.counts(cfg["T"])
    rows = [{"T": T, "count": c} for T, c in zip(cfg["T"], counts)]
    result = {"orbit": spec.to_dict(), "T": cfg["T"], "counts": counts,
              "main_terms": [asympt.main_term(spec.m, T, spec.q) for T in cfg["T"]],
              "assumption": counting.ORBIT_ASSUMPTION}
    return result, rows, "\n".join(str(c) for c in counts)


def run_dirichlet(cfg):
    spec = _spec(cfg)
    s = float(spec.m) if cfg["s"] is None else cfg["s"]
    sums = counting.dirichlet_partial_sums(spec, s, cfg["R"])
    rows = [{"R": R, "partial_sum": v} for R, v in zip(cfg["R"], sums)]
    return {"orbit": spec.to_dict(), "s": s, "R": cfg["R"], "partial_sums": sums}, rows, None


def _translations(m, n, scale, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        Y = rng.normal(size=(m, m))
        Y -= np.trace(Y) / m * np.eye(m)
        out.append(expm(scale * Y / np.linalg.norm(Y)))
    return out


def run_haar_check(cfg):
    m = cfg["m"]
    seeds = np.random.SeedSequence(cfg["seed"]).generate_state(cfg["translations"] + 1)
    g0s = _translations(m, cfg["translations"], cfg["scale"], int(seeds[0]))
    checks = []
    for k, g0 in enumerate(g0s):
        _progress(cfg, f"haar check {k + 1}/{len(g0s)} (m={m}, {cfg['samples']} samples)")
        res = coords.haar_invariance_check(m, g0, samples=cfg["samples"], seed=int(seeds[k + 1]),
                                           blocks=cfg["blocks"], workers=cfg["threads"])
        checks.append(res.to_dict() | {"g0": g0.tolist()})
    worst = max(c["discrepancy"] for c in checks)
    result = {"m": m, "discrepancy": worst, "tolerance": cfg["tolerance"],
              "passed": worst < cfg["tolerance"], "checks": checks}
    rows = [{"translation": k, "discrepancy": c["discrepancy"], "stderr": c["stderr"],
             "integral": c["integral"], "integral_translated": c["integral_translated"]}
            for k, c in enumerate(checks)]
    if not result["passed"]:
        raise StructuralFailure(f"Haar discrepancy {worst:.3g} exceeds {cfg['tolerance']:g}", result)
    return result, rows, None


def run_casimir_check(cfg):
    m = cfg["m"]
    basis_name = cfg["basis"]
    if basis_name == "auto":
        basis_name = "explicit" if m == 3 else "general"
    if basis_name == "explicit":
        if m != 3:
            raise DomainError("the explicit basis exists only for m = 3")
        basis = build_explicit_basis_m3()
    else:
        basis = build_basis(m)
    _progress(cfg, f"calibrating the Casimir operator for m={m} ({basis_name} basis)")
    cal = casimir.calibrate_casimir(m, basis, n_points=cfg["points"], seed=cfg["seed"],
                                    tol=cfg["tolerance"], raise_on_failure=False)
    fit = casimir.fit_radial_operator(m, basis, n_points=cfg["points"], seed=cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    lams = rng.uniform(0.05, 1.0, cfg["pairs"])
    radii = rng.uniform(0.5, 3.0, cfg["pairs"])
    ode = [casimir.printed_solution_residuals(m, [lam], [r])[0] for lam, r in zip(lams, radii)]
    indicial = max(max(abs(row["indicial_plus"]), abs(row["indicial_minus"])) for row in ode)
    shifted = min(max(abs(row["shifted_plus"]), abs(row["shifted_minus"])) for row in ode)
    findings = []
    if not cal.spread < cfg["tolerance"]:
        findings.append(f"calibration spread {cal.spread:.4g} >= {cfg['tolerance']:g}: the numeric "
                        f"Casimir is not a constant multiple of r^2 F'' + r F'")
    if shifted > cfg["ode_tolerance"]:
        findings.append(f"r^(m-1 +/- s) fails the radial ODE (smallest residual {shifted:.3g})")
    result = {
        "m": m,
        "basis": basis_name,
        "calibration": {"kappa": cal.kappa, "spread": cal.spread, "tolerance": cfg["tolerance"],
                        "passed": cal.spread < cfg["tolerance"], "estimates": cal.estimates,
                        "radii": cal.radii},
        "radial_fit": fit,
        "radial_fit_prediction": {"a": (m - 1) / (2 * m * m), "b_over_a": m + 1},
        "ode": {"pairs": cfg["pairs"], "indicial_max_residual": indicial,
                "shifted_min_residual": shifted, "indicial_passed": indicial < cfg["ode_tolerance"]},
        "findings": findings,
    }
    rows = [{"lambda": row["lambda"], "r": row["r"], **{k: row[k] for k in
            ("indicial_plus", "indicial_minus", "shifted_plus", "shifted_minus")}} for row in ode]
    if findings:
        raise StructuralFailure("; ".join(findings), result)
    return result, rows, None


def _parse_matrix(text):
    text = text.strip()
    if text.startswith("["):
        return np.array(json.loads(text), dtype=float)
    return np.array([_floats(row) for row in text.split(";")], dtype=float)


def run_decompose(cfg):
    if cfg["matrix"] is None:
        raise DomainError("--matrix is required")
    g = coords.as_group_element(_parse_matrix(cfg["matrix"]))
    chart = coords.decompose(g)
    back = coords.compose(chart)
    result = {"m": chart.m, "chart": chart.to_dict(),
              "roundtrip_error": float(np.abs(back - g).max()),
              "haar_density": float(coords.haar_density(chart))}
    return result, None, None


def run_smooth(cfg):
    spec = _spec(cfg)
    T = cfg["T"]
    eps = smoothing.optimal_epsilon(spec.m, T) if cfg["epsilon"] is None else cfg["epsilon"]
    mol = smoothing.Mollifier(eps, cfg["c_width"])
    counter = counting.OrbitCounter(spec)
    smooth = smoothing.smoothed_count(spec, T, mol, counter)
    lo, hi = smoothing.sandwich_bounds(spec, T, mol, counter)
    exact = counter.count(T)
    result = {"orbit": spec.to_dict(), "T": T, "epsilon": eps, "c_width": cfg["c_width"],
              "lower": lo, "smoothed": smooth, "upper": hi, "exact": exact,
              "sandwich_holds": lo <= smooth <= hi, "l2_budget": smoothing.l2_budget(spec.m, eps)}
    if not result["sandwich_holds"]:
        raise StructuralFailure("sandwich inequality violated", result)
    return result, [{k: result[k] for k in ("T", "epsilon", "lower", "smoothed", "upper", "exact")}], None


def run_fit(cfg):
    spec = _spec(cfg)
    grid = asympt.geometric_grid(cfg["T_min"], cfg["T_max"], cfg["points"])
    _progress(cfg, f"counting on {len(grid)} radii up to T={grid[-1]:g}")
    counter = counting.OrbitCounter(spec)
    report = asympt.fit_error_exponent(spec.m, spec, grid, counter=counter)
    env = asympt.envelope_check(spec.m, grid, report.counts, spec.q,
                                T_min=min(cfg["envelope_T_min"], grid[0]))
    result = report.to_dict() | {
        "residue": list(spec.residue),
        "envelope": {"C": env["C"], "exponent": env["exponent"], "passed": env["passed"]},
        "slope_within_budget": report.fit.slope + 2 * report.fit.stderr <= report.eta_budget,
    }
    rows = [{"T": T, "count": c, "main_term": mt, "residual": r} for T, c, mt, r in
            zip(report.T_grid, report.counts, report.main_terms, report.residuals)]
    return result, rows, None


def run_eta(cfg):
    m = cfg["m"]
    e = smoothing.saving_exponent(m)
    holds = smoothing.exponent_identity(m)
    result = {"m": m, "eta": str(e), "eta_float": float(e), "identity_holds": holds,
              "error_exponent": str(m - e)}
    text = f"{e}\nm - eta = m/2 + eta (m+2)(m-1)/4: {'holds' if holds else 'FAILS'} (exact)"
    if not holds:
        raise StructuralFailure("exponent identity fails", result)
    return result, [{"m": m, "eta": str(e), "identity_holds": holds}], text


def run_kernel(cfg):
    m = cfg["m"]
    rows = []
    for lam in cfg["lambdas"]:
        s = casimir.spectral_parameter(lam, m)
        for T in cfg["T"]:
            k = complex(casimir.growth_kernel(T, lam, m))
            rows.append({"lambda": lam, "T": T, "s_re": complex(s).real, "s_im": complex(s).imag,
                         "kernel_re": k.real, "kernel_im": k.imag, "kernel_abs": abs(k),
                         "normalized": abs(k) / T ** (m - complex(s).real)})
    return {"m": m, "rows": rows}, rows, None


T_HELP = "radii, comma separated"
ORBIT = [
    Param("q", int, 1, "congruence modulus"),
    Param("residue", _optional_ints, None, "base residue mod q (default: e_m)"),
]

COMMANDS = {c.name: c for c in [
    Command("count", "exact primitive lattice-point count N_m(T) in the Euclidean T-ball (orbit of e_m under SL_m(Z))",
            [Param("m", int, 2, "dimension"), Param("T", _floats, [10.0], T_HELP),
             Param("method", str, "mobius", "counting path", ("mobius", "table", "both"))],
            run_count, "text"),
    Command("table", "theta-series shell table r_m(n) and its primitive part, in the binary table format",
            [Param("m", int, 2, "dimension"), Param("n_max", int, 10000, "largest squared norm"),
             Param("dtype", str, "auto", "counter width", ("auto", "int32", "int64", "object")),
             Param("table", str, None, "path for the binary table")],
            run_table),
    Command("orbit-count", "count of the congruence orbit e_m Gamma(q) in the T-ball",
            [Param("m", int, 2, "dimension"), *ORBIT, Param("T", _floats, [10.0], T_HELP)],
            run_orbit_count, "text"),
    Command("dirichlet", "partial sums of the orbital Dirichlet series sum |v|^{-s}",
            [Param("m", int, 2, "dimension"), *ORBIT, Param("s", _optional_float, None, "exponent (default: m)"),
             Param("R", _floats, [10.0, 100.0, 1000.0], T_HELP)],
            run_dirichlet),
    Command("haar-check", "Monte-Carlo right-invariance of the Haar density in the H x A x K_H\\K chart",
            [Param("m", int, 2, "dimension"), Param("samples", int, 1_000_000, "samples per integral"),
             Param("translations", int, 1, "number of random translations g0"),
             Param("scale", float, 0.15, "size of log(g0)"), Param("blocks", int, 8, "seed blocks"),
             Param("tolerance", float, 0.02, "largest allowed relative discrepancy")],
            run_haar_check),
    Command("casimir-check", "radial action of the Casimir operator and the radial eigenvalue ODE",
            [Param("m", int, 3, "dimension"),
             Param("basis", str, "auto", "Lie algebra basis (auto: explicit for m=3)", ("auto", "general", "explicit")),
             Param("points", int, 20, "sample points per test function"),
             Param("pairs", int, 50, "seeded (lambda, r) pairs for the ODE"),
             Param("tolerance", float, 1e-3, "calibration spread tolerance"),
             Param("ode_tolerance", float, 1e-5, "relative ODE residual tolerance")],
            run_casimir_check),
    Command("decompose", "coordinates g = n_H a_H k_H a(r) k(theta) of a matrix in SL_m(R)",
            [Param("matrix", str, None, "rows separated by ';', entries by ',' (or a JSON list)")],
            run_decompose),
    Command("smooth", "mollified orbit count and its sandwich between sharp counts at T(1 -/+ c eps)",
            [Param("m", int, 2, "dimension"), *ORBIT, Param("T", float, 100.0, "radius"),
             Param("epsilon", _optional_float, None, "smoothing width (default: T^{-eta_m})"),
             Param("c_width", float, 1.0, "width constant c")],
            run_smooth),
    Command("fit", "error-term exponent fit of |N(T) - main term| against the T^{m - eta_m} budget",
            [Param("m", int, 2, "dimension"), *ORBIT, Param("T_min", float, 100.0, "smallest radius"),
             Param("T_max", float, 10000.0, "largest radius"), Param("points", int, 25, "grid size"),
             Param("envelope_T_min", float, 50.0, "smallest radius used to calibrate the envelope")],
            run_fit),
    Command("eta", "exponent eta_m = 2m/((m+2)(m-1)+4) and the balancing identity, in exact rationals",
            [Param("m", int, 2, "dimension")],
            run_eta, "text"),
    Command("kernel", "spectral growth kernel K_T(lambda) = alpha_-(T)/alpha_-(1) and its T^{m-s} scaling",
            [Param("m", int, 2, "dimension"), Param("lambdas", _floats, [0.25, 0.5, 1.0, 2.0], "eigenvalues"),
             Param("T", _floats, [100.0, 1000.0, 10000.0], T_HELP)],
            run_kernel),
]}


# ---------------------------------------------------------------------------
# parsing and config resolution


def build_parser() -> _Parser:
    parser = _Parser(prog="orbitlab", description="Orbit counting experiments in SL_m.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS.values():
        p = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help,
                           argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat 'key = value' file; flags take precedence")
        for par in cmd.all_params:
            default = cmd.default_format if par.name == "format" else par.default
            text = par.help if "(default" in par.help else f"{par.help} (default: {default})"
            p.add_argument(par.flag, dest=par.name, type=par.type, choices=par.choices, help=text)
    return parser


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve(cmd: Command, ns: argparse.Namespace) -> dict:
    cfg = {p.name: p.default for p in cmd.all_params}
    cfg["format"] = cmd.default_format
    flags = vars(ns).copy()
    flags.pop("command")
    path = flags.pop("config", None)
    if path is not None:
        by_name = {p.name: p for p in cmd.all_params}
        for key, value in read_config(path).items():
            par = by_name.get(key)
            if par is None:
                raise UsageError(f"unknown config key {key!r} for {cmd.name}")
            try:
                cfg[key] = par.type(value)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if par.choices and cfg[key] not in par.choices:
                raise UsageError(f"config key {key!r} must be one of {par.choices}")
    cfg.update(flags)
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


def make_report(cmd, cfg, result, status="ok", message=None) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": cmd,
        "config": cfg,
        "seed": cfg["seed"],
        "status": status,
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "result": result,
    }
    if message is not None:
        report["message"] = message
    return _jsonable(report)


def _render(fmt, report, rows, text) -> str:
    if fmt == "text" and text is not None:
        return text + "\n"
    if fmt == "csv":
        if isinstance(rows, str):
            return rows
        if rows is None:
            rows = [{"key": k, "value": v} for k, v in report["result"].items()
                    if not isinstance(v, (dict, list))]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(_jsonable(rows))
        return buf.getvalue()
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _emit(cfg, payload: str) -> None:
    if cfg["output"]:
        with open(cfg["output"], "w", newline="") as fh:
            fh.write(payload)
    else:
        try:
            sys.stdout.write(payload)
            sys.stdout.flush()
        except BrokenPipeError:
            # reader went away (e.g. piped into head); silence the flush at exit
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cmd = COMMANDS[ns.command]
    try:
        cfg = resolve(cmd, ns)
    except (UsageError, OSError) as exc:
        print(f"orbitlab {cmd.name}: {exc}", file=sys.stderr)
        return EX_USAGE
    try:
        result, rows, text = cmd.run(cfg)
    except StructuralFailure as exc:
        print(f"orbitlab {cmd.name}: structural failure: {exc}", file=sys.stderr)
        report = make_report(cmd.name, cfg, exc.details, "structural_failure", str(exc))
        fmt = "json" if cfg["format"] == "text" else cfg["format"]
        _emit(cfg, _render(fmt, report, None, None))
        return 2
    except (OrbitLabError, ValueError) as exc:
        print(f"orbitlab {cmd.name}: {exc}", file=sys.stderr)
        return 1
    report = make_report(cmd.name, cfg, result)
    _emit(cfg, _render(cfg["format"], report, rows, text))
    return 0


if __name__ == "__main__":
    sys.exit(main())
