"""Command-line driver: convergence studies, mortar traces and diagnostics.

Exit codes: 0 success, 1 solver failure, 2 invalid configuration or output path.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .darcy import SolverError
from .geometry import DecompositionConfig, build_decomposition, refine
from .mortar import VARIANTS, MortarConditionError, check_mortar_condition, evaluate_mortar, mortar_spaces
from .solver import (
    DEFAULT_TOL, ConfigurationError, assemble_interface_matrix, divergence_free_basis, setup, solve,
)
from .verification import SMOOTH_CASE, ZERO_CASE, StudyConfig, run_study

log = logging.getLogger("fluxmortar")

PLOT_POINTS = 200
PROBLEMS = {"manufactured": SMOOTH_CASE, "zero": ZERO_CASE}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed run configuration (JSON file)."""

    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    order: int = 1
    variant: str = "both"
    levels: int = 6
    tol: float = DEFAULT_TOL
    maxit: Optional[int] = None
    problem: str = "manufactured"
    table_csv: str = "table.csv"
    plot_csv: str = "mortar.csv"
    report_json: Optional[str] = "report.json"

    @property
    def variants(self) -> tuple:
        return VARIANTS if self.variant == "both" else (self.variant,)

    @property
    def case(self):
        return PROBLEMS[self.problem]


def _get(d: dict, key: str, default, kind=None):
    v = d.get(key, default)
    if kind is not None and v is not None and not isinstance(v, kind):
        raise ConfigError(f"{key!r} must be {getattr(kind, '__name__', kind)}, got {v!r}")
    return v


def parse_config(data: dict) -> RunConfig:
    """Validate a config mapping; raises :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {"domain", "splits", "resolutions", "mortar", "variant", "levels", "cg", "problem", "outputs"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    base = DecompositionConfig()
    splits = _get(data, "splits", {}, dict)
    mortar = _get(data, "mortar", {}, dict)
    cg = _get(data, "cg", {}, dict)
    outputs = _get(data, "outputs", {}, dict)
    try:
        dcfg = DecompositionConfig(
            domain=tuple(float(v) for v in _get(data, "domain", base.domain, (list, tuple))),
            x_splits=tuple(float(v) for v in _get(splits, "x", base.x_splits, (list, tuple))),
            y_splits=tuple(float(v) for v in _get(splits, "y", base.y_splits, (list, tuple))),
            resolutions=tuple(tuple(int(n) for n in r) for r in _get(data, "resolutions", base.resolutions, (list, tuple))),
            mortar_elements=_get(mortar, "elements_per_interface", base.mortar_elements, int),
        )
        build_decomposition(dcfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid decomposition: {exc}") from exc
    order = _get(mortar, "order", 1, int)
    if order not in (0, 1):
        raise ConfigError(f"mortar order must be 0 or 1, got {order}")
    variant = _get(data, "variant", "both", str)
    if variant not in VARIANTS + ("both",):
        raise ConfigError(f"variant must be flat, sharp or both, got {variant!r}")
    levels = _get(data, "levels", 6, int)
    if levels < 1:
        raise ConfigError("levels must be positive")
    tol = float(_get(cg, "tol", DEFAULT_TOL, (int, float)))
    if not 0 < tol < 1:
        raise ConfigError("cg.tol must lie in (0, 1)")
    maxit = _get(cg, "maxit", None, int)
    if maxit is not None and maxit < 1:
        raise ConfigError("cg.maxit must be positive")
    problem = _get(data, "problem", "manufactured", str)
    if problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {sorted(PROBLEMS)}")
    return RunConfig(
        dcfg, order, variant, levels, tol, maxit, problem,
        _get(outputs, "table_csv", "table.csv", str),
        _get(outputs, "plot_csv", "mortar.csv", str),
        _get(outputs, "report_json", "report.json", str),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def _output_path(out_dir: Optional[str], name: str, suffix: str = "") -> str:
    if suffix:
        stem, ext = os.path.splitext(name)
        name = f"{stem}{suffix}{ext}"
    return os.path.join(out_dir, name) if out_dir else name


def _check_writable(path: str):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK):
        raise ConfigError(f"output path {path} is not writable")
    if os.path.isdir(path) or (os.path.exists(path) and not os.access(path, os.W_OK)):
        raise ConfigError(f"output path {path} is not writable")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    if getattr(args, "mortar_order", None) is not None:
        cfg.order = args.mortar_order
    return cfg


def _prepare_out(args):
    if args.out:
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {args.out}: {exc.strerror}") from exc


# --- commands --------------------------------------------------------------------

def cmd_study(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _prepare_out(args)
    combos = [(cfg.order, v) for v in cfg.variants]
    multi = len(combos) > 1
    tables = {
        c: _output_path(args.out, cfg.table_csv, f"_{c[1]}_p{c[0]}" if multi else "") for c in combos
    }
    report_path = _output_path(args.out, cfg.report_json) if cfg.report_json else None
    paths = list(tables.values()) + ([report_path] if report_path else [])
    for p in paths:
        _check_writable(p)

    study = StudyConfig(cfg.decomposition, (cfg.order,), cfg.variants, cfg.levels, cfg.tol, cfg.maxit, cfg.case)

    def progress(order, variant, row):
        log.info("P%d %s level %d: e_u=%.3e e_p=%.3e cg=%d (%.1fs)",
                 order, variant, row.level, row.e_u, row.e_p, row.iterations, row.seconds)

    reports = run_study(study, progress)
    for rep in reports:
        path = tables[rep.order, rep.variant]
        with open(path, "w", newline="") as fh:
            fh.write(rep.to_csv())
        print(f"wrote {path}")
    if report_path:
        with open(report_path, "w") as fh:
            json.dump({"config": args.config, "runs": [r.summary() for r in reports]}, fh, indent=2, sort_keys=True)
        print(f"wrote {report_path}")
    return 0


def parse_selector(text: str):
    """``"x=0.5"`` -> ``(0, 0.5)``: normal axis and line position."""
    try:
        axis, value = text.split("=")
        axis = {"x": 0, "y": 1}[axis.strip().lower()]
        return axis, float(value)
    except (ValueError, KeyError):
        raise ConfigError(f"interface selector must look like x=<value> or y=<value>, got {text!r}") from None


def cmd_plot_mortar(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    axis, value = parse_selector(args.interface)
    if args.level < 0:
        raise ConfigError("level must be non-negative")
    dd = refine(build_decomposition(cfg.decomposition), args.level)
    ifaces = [f for f in dd.interfaces if f.normal_axis == axis and abs(f.position - value) < 1e-12]
    if not ifaces:
        raise ConfigError(f"no interface on the line {args.interface}")
    ifaces.sort(key=lambda f: f.start[f.tangent_axis])
    _prepare_out(args)
    multi = len(cfg.variants) > 1
    paths = {v: _output_path(args.out, cfg.plot_csv, f"_{v}_p{cfg.order}" if multi else "") for v in cfg.variants}
    for p in paths.values():
        _check_writable(p)

    spaces = mortar_spaces(dd, cfg.order)
    case = cfg.case
    for variant, path in paths.items():
        sol = solve(dd, spaces, variant, 1.0, case.source, cfg.tol, case.pressure, maxit=cfg.maxit)
        origin = ifaces[0].start[ifaces[0].tangent_axis]
        lines = ["s,lambda_exact,lambda_h"]
        for iface in ifaces:
            # each interface is sampled including both end points, so the junction
            # appears twice with the one-sided values
            s = np.linspace(0.0, iface.length, PLOT_POINTS)
            exact = case.flux(iface, s)
            approx = evaluate_mortar(sol.lam, iface.id, s)
            offset = iface.start[iface.tangent_axis] - origin
            lines += [f"{a + offset:.6e},{b:.6e},{c:.6e}" for a, b, c in zip(s, exact, approx)]
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {path}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dd0 = build_decomposition(cfg.decomposition)
    violated = 0
    print(f"mortar condition constants (P{cfg.order})")
    print("level,interface,variant,c_gamma,status")
    for level in range(cfg.levels):
        spaces = mortar_spaces(refine(dd0, level), cfg.order)
        for space in spaces:
            for variant in cfg.variants:
                c = check_mortar_condition(space, variant)
                status = "ok" if c > 0 else "VIOLATED"
                violated += c == 0
                i, j = space.id
                print(f"{level},{i}-{j},{variant},{c:.6e},{status}")
    if violated:
        print(f"WARNING: mortar condition VIOLATED in {violated} case(s)")
    spaces = mortar_spaces(dd0, cfg.order)
    print("interface operator at level 0")
    print("variant,dim,lambda_min,lambda_max,condition")
    for variant in cfg.variants:
        try:
            ctx = setup(dd0, spaces, variant)
            A = assemble_interface_matrix(ctx, divergence_free_basis(ctx.coarse))
        except (MortarConditionError, SolverError, ConfigurationError) as exc:
            print(f"{variant},n/a,n/a,n/a,{exc}")
            continue
        if A.size == 0:
            print(f"{variant},0,,,")
            continue
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        cond = ev[-1] / ev[0] if ev[0] > 0 else float("inf")
        print(f"{variant},{len(ev)},{ev[0]:.6e},{ev[-1]:.6e},{cond:.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxmortar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-level progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--variant", choices=list(VARIANTS) + ["both"])
        p.add_argument("--mortar-order", type=int, choices=[0, 1])
        p.add_argument("--out", help="output directory (default: current directory)")

    p = sub.add_parser("study", help="convergence study on the manufactured problem")
    common(p)
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("plot-mortar", help="sample exact and discrete mortar flux along a line")
    common(p)
    p.add_argument("--interface", required=True, help="line selector, e.g. y=1 or x=0.5")
    p.add_argument("--level", type=int, default=0)
    p.set_defaults(func=cmd_plot_mortar)
    p = sub.add_parser("diagnose", help="mortar condition constants and interface operator spectrum")
    common(p)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, MortarConditionError, ConfigurationError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None and report.residuals:
            print(f"  after {report.iterations} CG iterations, residual {report.residuals[-1]:.3e}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
