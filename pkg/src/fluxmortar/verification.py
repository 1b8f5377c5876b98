"""Manufactured solution, discrete error norms and convergence studies."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import DecompositionConfig, build_decomposition, refine
from .mortar import VARIANTS, MortarSpaces, evaluate_mortar, gauss_rule, mortar_spaces, project
from .solver import DEFAULT_TOL, DDSolution, assemble_systems, setup, solve

TABLE_HEADER = ["level", "e_u", "r_u", "e_p", "r_p", "e_lambda", "r_lambda", "e_Qlambda", "r_Qlambda"]
ERROR_KEYS = ("e_u", "e_p", "e_lambda", "e_Qlambda")

_gx, _gw = np.polynomial.legendre.leggauss(2)
GAUSS2_POINTS, GAUSS2_WEIGHTS = 0.5 * (_gx + 1.0), 0.5 * _gw
_gx3, _gw3 = np.polynomial.legendre.leggauss(3)
GAUSS3_POINTS, GAUSS3_WEIGHTS = 0.5 * (_gx3 + 1.0), 0.5 * _gw3


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact pressure, velocity ``u = -K grad p`` and source ``f = div u``.

    All callables take coordinate arrays ``(x, y)``; ``velocity`` returns the
    pair ``(ux, uy)``.
    """

    pressure: Callable
    velocity: Callable
    source: Callable
    name: str = "manufactured"

    def flux(self, interface, s) -> np.ndarray:
        """Normal flux ``nu . u`` along an interface at arclength ``s``."""
        xy = interface.points(s)
        return np.asarray(self.velocity(xy[..., 0], xy[..., 1])[interface.normal_axis], dtype=float)


def _p(x, y):
    return y**2 * (1 - y / 3) + x * (1 - x) * y * np.sin(2 * np.pi * x)


def _u(x, y):
    s, c = np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)
    ux = -y * ((1 - 2 * x) * s - 2 * np.pi * (x - 1) * x * c)
    uy = -((2 - y) * y + x * (1 - x) * s)
    return ux, uy


def _f(x, y):
    # f = -laplace p, with g(x) = x(1-x) sin(2 pi x)
    s, c = np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)
    g2 = -2 * s + 4 * np.pi * (1 - 2 * x) * c - 4 * np.pi**2 * x * (1 - x) * s
    return -(2 - 2 * y) - y * g2


SMOOTH_CASE = ManufacturedCase(_p, _u, _f, "smooth")

ZERO_CASE = ManufacturedCase(
    lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
    lambda x, y: (np.zeros_like(np.asarray(x, dtype=float)),) * 2,
    lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
    "zero",
)


def exact_eval(point, case: ManufacturedCase = SMOOTH_CASE):
    """``(p, (ux, uy))`` at one point."""
    x, y = point
    ux, uy = case.velocity(x, y)
    return float(case.pressure(x, y)), (float(ux), float(uy))


def fd_divergence(case: ManufacturedCase, x, y, h=1e-5):
    """Centered finite-difference divergence of the exact velocity."""
    dux = (case.velocity(x + h, y)[0] - case.velocity(x - h, y)[0]) / (2 * h)
    duy = (case.velocity(x, y + h)[1] - case.velocity(x, y - h)[1]) / (2 * h)
    return dux + duy


def fd_velocity(case: ManufacturedCase, x, y, h=1e-6, K=1.0):
    """``-K grad p`` by centered finite differences."""
    px = (case.pressure(x + h, y) - case.pressure(x - h, y)) / (2 * h)
    py = (case.pressure(x, y + h) - case.pressure(x, y - h)) / (2 * h)
    return -K * px, -K * py


# --- error norms ---------------------------------------------------------------

def _cell_points(grid, gp):
    """Tensor quadrature points ``(n_cells, q, 2)`` and reference coordinates."""
    xi, eta = np.meshgrid(gp, gp, indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    x0 = grid.cell_centers[:, 0] - 0.5 * grid.hx
    y0 = grid.cell_centers[:, 1] - 0.5 * grid.hy
    X = x0[:, None] + xi[None, :] * grid.hx
    Y = y0[:, None] + eta[None, :] * grid.hy
    return X, Y, xi, eta


def pressure_error_sq(grid, p_h, pressure) -> float:
    """``||p - p_h||^2`` for piecewise-constant ``p_h`` (3x3 Gauss per cell)."""
    X, Y, _, _ = _cell_points(grid, GAUSS3_POINTS)
    w = np.outer(GAUSS3_WEIGHTS, GAUSS3_WEIGHTS).ravel()
    d = pressure(X, Y) - p_h[:, None]
    return float(((d**2) @ w * grid.cell_volumes).sum())


def rt0_velocity(grid, face_fluxes, xi, eta):
    """Lowest-order RT velocity of each cell at reference points ``(xi, eta)``."""
    nx = grid.nx
    i, j = grid.cell_ij[:, 0], grid.cell_ij[:, 1]
    left = j * (nx + 1) + i
    bottom = grid.n_xfaces + j * nx + i
    uL, uR = face_fluxes[left], face_fluxes[left + 1]
    uB, uT = face_fluxes[bottom], face_fluxes[bottom + nx]
    ux = (uL[:, None] * (1 - xi) + uR[:, None] * xi) / grid.hy
    uy = (uB[:, None] * (1 - eta) + uT[:, None] * eta) / grid.hx
    return ux, uy


def velocity_error_sq(grid, face_fluxes, velocity) -> float:
    """``||u - u_h||^2`` with RT0 reconstruction and 2x2 Gauss per cell."""
    X, Y, xi, eta = _cell_points(grid, GAUSS2_POINTS)
    w = np.outer(GAUSS2_WEIGHTS, GAUSS2_WEIGHTS).ravel()
    ux, uy = rt0_velocity(grid, face_fluxes, xi, eta)
    ex, ey = velocity(X, Y)
    d = (ex - ux) ** 2 + (ey - uy) ** 2
    return float((d @ w * grid.cell_volumes).sum())


def compute_errors(solution: DDSolution, case: ManufacturedCase) -> dict:
    """``e_u, e_p, e_lambda, e_Qlambda`` of a solution against the exact case.

    ``e_Qlambda`` sums the squared side-signed trace errors over both sides of
    every interface.
    """
    spaces = solution.spaces
    dd = spaces.dd
    if len(solution.states) != len(dd.grids):
        raise ValueError("solution does not match the decomposition of its mortar spaces")
    eu = ep = el = eq = 0.0
    for grid, st in zip(dd.grids, solution.states):
        if st.face_fluxes.shape != (grid.n_faces,):
            raise ValueError(f"state does not fit {grid}")
        eu += velocity_error_sq(grid, st.face_fluxes, case.velocity)
        ep += pressure_error_sq(grid, st.cell_pressures, case.pressure)
    for space in spaces:
        iface = space.interface
        pts, wts = gauss_rule(space.nodes)
        d = case.flux(iface, pts) - evaluate_mortar(solution.lam, iface.id, pts)
        el += float(wts @ d**2)
        psis = project(solution.lam, space, solution.variant)
        for psi in psis:
            part = space.partitions[psi.subdomain_id]
            pts, wts = gauss_rule(part.breaks)
            face = np.repeat(np.arange(len(part.faces)), len(GAUSS3_POINTS))
            exact = space.signs[psi.subdomain_id] * case.flux(iface, pts)
            eq += float(wts @ (exact - psi.values[face]) ** 2)
    return {"e_u": math.sqrt(eu), "e_p": math.sqrt(ep), "e_lambda": math.sqrt(el), "e_Qlambda": math.sqrt(eq)}


def rates(errors: Sequence[float]) -> list[Optional[float]]:
    """``log2(e_{k-1} / e_k)``; ``None`` for the first level and undefined rates."""
    out: list[Optional[float]] = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        if a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b):
            out.append(math.log2(a / b))
        else:
            out.append(None)
    return out


# --- convergence report --------------------------------------------------------

@dataclass
class LevelResult:
    level: int
    e_u: float
    e_p: float
    e_lambda: float
    e_Qlambda: float
    r_u: Optional[float] = None
    r_p: Optional[float] = None
    r_lambda: Optional[float] = None
    r_Qlambda: Optional[float] = None
    iterations: int = 0
    flux_jump: float = float("nan")
    max_mass_defect: float = float("nan")
    seconds: float = 0.0


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.5e}"


def _parse(v: str) -> Optional[float]:
    return None if v == "" else float(v)


@dataclass
class ConvergenceReport:
    variant: str
    order: int
    h_gamma0: Optional[float] = None
    resolutions: tuple = ()
    levels: list[LevelResult] = field(default_factory=list)

    def add(self, row: LevelResult):
        self.levels.append(row)
        self._update_rates()

    def _update_rates(self):
        for key in ERROR_KEYS:
            rs = rates([getattr(r, key) for r in self.levels])
            for row, rate in zip(self.levels, rs):
                setattr(row, "r_" + key[2:], rate)

    def column(self, key: str) -> list:
        return [getattr(r, key) for r in self.levels]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in self.levels:
            w.writerow([r.level] + [_fmt(getattr(r, k)) for k in TABLE_HEADER[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, variant: str = "", order: int = -1) -> "ConvergenceReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != TABLE_HEADER:
            raise ValueError("not a convergence table")
        rep = cls(variant, order)
        for row in rows[1:]:
            vals = dict(zip(TABLE_HEADER, row))
            rep.levels.append(LevelResult(
                int(vals["level"]), *(float(vals[k]) for k in ERROR_KEYS),
                **{k: _parse(vals[k]) for k in ("r_u", "r_p", "r_lambda", "r_Qlambda")},
            ))
        return rep

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "mortar_order": self.order,
            "h_gamma0": self.h_gamma0,
            "resolutions": [list(r) for r in self.resolutions],
            "levels": [vars(r).copy() for r in self.levels],
        }


# --- studies -------------------------------------------------------------------

@dataclass
class StudyConfig:
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    orders: tuple = (1,)
    variants: tuple = VARIANTS
    levels: int = 6
    tol: float = DEFAULT_TOL
    maxit: Optional[int] = None
    case: ManufacturedCase = SMOOTH_CASE
    K: object = 1.0


def _h_gamma0(cfg: DecompositionConfig) -> Optional[float]:
    # mortar size on the shortest interface at level 0
    dd = build_decomposition(cfg)
    if not dd.interfaces:
        return None
    return min(f.length for f in dd.interfaces) / cfg.mortar_elements


def check_case(case: ManufacturedCase, domain, n=50, seed=0, K=1.0):
    """Finite-difference consistency of the case (velocity vs pressure, source vs velocity)."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = domain
    x = rng.uniform(x0 + 1e-3, x1 - 1e-3, n)
    y = rng.uniform(y0 + 1e-3, y1 - 1e-3, n)
    ux, uy = case.velocity(x, y)
    fx, fy = fd_velocity(case, x, y, K=K)
    vel_err = float(max(np.max(np.abs(ux - fx)), np.max(np.abs(uy - fy))))
    div_err = float(np.max(np.abs(case.source(x, y) - fd_divergence(case, x, y))))
    return vel_err, div_err


def run_study(config: StudyConfig, progress: Optional[Callable] = None) -> list[ConvergenceReport]:
    """Solve on every level for each (mortar order, variant) and collect errors."""
    vel_err, div_err = check_case(config.case, config.decomposition.domain)
    if vel_err > 1e-8 or div_err > 1e-6:
        raise ValueError(f"manufactured case is inconsistent (velocity {vel_err:.2e}, divergence {div_err:.2e})")
    dd0 = build_decomposition(config.decomposition)
    hg = _h_gamma0(config.decomposition)
    reports = {
        (o, v): ConvergenceReport(v, o, hg, config.decomposition.resolutions)
        for o in config.orders for v in config.variants
    }
    for level in range(config.levels):
        dd = refine(dd0, level)
        systems = assemble_systems(dd, config.K)
        for order in config.orders:
            spaces = mortar_spaces(dd, order)
            for variant in config.variants:
                t0 = time.perf_counter()
                ctx = setup(dd, spaces, variant, config.K, config.case.source, config.case.pressure, systems)
                sol = solve(dd, spaces, variant, tol=config.tol, maxit=config.maxit, ctx=ctx)
                errs = compute_errors(sol, config.case)
                from .extension import weak_flux_jump

                jump = float(np.max(np.abs(weak_flux_jump(spaces, systems, sol.states)), initial=0.0))
                row = LevelResult(
                    level, **errs, iterations=sol.report.iterations, flux_jump=jump,
                    max_mass_defect=max(sol.report.mass_defects), seconds=time.perf_counter() - t0,
                )
                reports[order, variant].add(row)
                if progress:
                    progress(order, variant, row)
    return list(reports.values())


def solve_level(config: DecompositionConfig, level: int, order: int, variant: str,
                case: ManufacturedCase = SMOOTH_CASE, tol=DEFAULT_TOL, K=1.0):
    """One solve of ``case`` on a refinement level; returns ``(solution, spaces)``."""
    dd = refine(build_decomposition(config), level)
    spaces: MortarSpaces = mortar_spaces(dd, order)
    sol = solve(dd, spaces, variant, K, case.source, tol, pressure_bc=case.pressure)
    return sol, spaces
