"""Flux-mortar solve by reduction to an interface problem, and a direct oracle.

The iterative path works in four steps:

1. ``step1_coarse_flux``: mortar flux carrying the source mean of each interior
   subdomain (coarse problem on ``S_H``).
2. ``step2_local_source``: independent subdomain solves with that flux, the
   source and the boundary pressure; the resulting velocity is locally mass
   conservative.
3. ``step3_interface_cg``: CG on the divergence-free mortar subspace for the
   weak pressure continuity; every update is divergence free.
4. ``step4_coarse_pressure``: mean pressure correction on interior subdomains.

``monolithic_solve`` assembles the global saddle system on the same discrete
spaces and solves it directly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .darcy import Conductivity, LocalSystem, SolverError, SubdomainState, assemble_local
from .extension import extend, extend_minimal, trace_operators, trace_totals
from .geometry import DecompositionConfig, DomainDecomposition, build_decomposition
from .mortar import GAUSS_POINTS, GAUSS_WEIGHTS, MortarFunction, MortarSpaces

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


class ConfigurationError(ValueError):
    """The decomposition admits no well-posed coarse problem."""


class CGError(SolverError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# --- problem data --------------------------------------------------------------

def cell_integrals(grid, f: Optional[Callable]) -> np.ndarray:
    """Per-cell integrals of ``f(x, y)`` with a 3x3 Gauss rule."""
    if f is None:
        return np.zeros(grid.n_cells)
    gx = (GAUSS_POINTS - 0.5)[:, None] * np.array([grid.hx, 0.0])
    gy = (GAUSS_POINTS - 0.5)[:, None] * np.array([0.0, grid.hy])
    offs = (gx[:, None, :] + gy[None, :, :]).reshape(-1, 2)
    w = np.outer(GAUSS_WEIGHTS, GAUSS_WEIGHTS).ravel()
    pts = grid.cell_centers[:, None, :] + offs[None, :, :]
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    return (vals * w).sum(axis=1) * grid.cell_volumes


def boundary_pressures(local: LocalSystem, g: Optional[Callable]) -> Optional[np.ndarray]:
    """Boundary pressure ``g`` sampled at the outer-boundary face midpoints."""
    if g is None or local.dirichlet_faces.size == 0:
        return None
    xy = local.grid.face_centers[local.dirichlet_faces]
    return np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))


def assemble_systems(dd: DomainDecomposition, K: Conductivity = 1.0) -> list[LocalSystem]:
    return [assemble_local(g, K, g.subdomain_id in dd.interior_subdomain_ids) for g in dd.grids]


@dataclass
class DDContext:
    """Everything the reduction steps share for one (decomposition, variant)."""

    dd: DomainDecomposition
    spaces: MortarSpaces
    variant: str
    systems: list[LocalSystem]
    coarse: "CoarseOperator"
    sources: list[np.ndarray]
    gbs: list[Optional[np.ndarray]]
    f_norm: float

    @property
    def ops(self):
        return trace_operators(self.spaces, self.systems, self.variant)


def setup(dd, spaces, variant, K=1.0, f=None, pressure_bc=None, systems=None) -> DDContext:
    if systems is None:
        systems = assemble_systems(dd, K)
    sources = [cell_integrals(loc.grid, f) for loc in systems]
    gbs = [
        loc.dirichlet_rhs(boundary_pressures(loc, pressure_bc)) if pressure_bc is not None else None
        for loc in systems
    ]
    f_norm = 0.0
    if f is not None:
        f_norm = float(np.sqrt(sum(cell_integrals(loc.grid, lambda x, y: f(x, y) ** 2).sum() for loc in systems)))
    coarse = build_coarse(dd, spaces, variant, systems)
    return DDContext(dd, spaces, variant, systems, coarse, sources, gbs, f_norm)


# --- coarse space ---------------------------------------------------------------

class CoarseOperator:
    """``B: mortar -> S_H`` with ``(B mu)_s = b(extend_minimal(mu), 1_s)``.

    Works in the Euclidean coefficient inner product: the divergence-free
    subspace is ``ker B`` and its complement is ``range B^T``.
    """

    def __init__(self, B: np.ndarray, interior_ids: list[int]):
        self.B = np.asarray(B, dtype=float)
        self.interior_ids = list(interior_ids)
        self.ndof = self.B.shape[1]
        if self.interior_ids:
            sv = np.linalg.svd(self.B, compute_uv=False)
            if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
                raise ConfigurationError(
                    "coarse operator is rank deficient: some interior subdomain has no "
                    "controllable mean flux"
                )
            self._chol = sla.cho_factor(self.B @ self.B.T)

    @property
    def dim(self) -> int:
        return len(self.interior_ids)

    def apply(self, mu) -> np.ndarray:
        return self.B @ mu

    def project(self, v) -> np.ndarray:
        """Orthogonal projection onto ``ker B``."""
        if not self.dim:
            return np.array(v, dtype=float)
        return v - self.B.T @ sla.cho_solve(self._chol, self.B @ v)

    def lift(self, F) -> np.ndarray:
        """The element of ``range B^T`` mapped to ``F``."""
        if not self.dim:
            return np.zeros(self.ndof)
        return self.B.T @ sla.cho_solve(self._chol, np.asarray(F, dtype=float))

    def solve_transpose(self, h) -> np.ndarray:
        """Least-squares solution of ``B^T y = h`` (exact on ``range B^T``)."""
        if not self.dim:
            return np.zeros(0)
        return sla.cho_solve(self._chol, self.B @ h)


def build_coarse(dd, spaces, variant, systems) -> CoarseOperator:
    interior = sorted(dd.interior_subdomain_ids)
    B = np.zeros((len(interior), spaces.ndof))
    if interior:
        sub = [systems[s] for s in interior]
        for k in range(spaces.ndof):
            e = np.zeros(spaces.ndof)
            e[k] = 1.0
            ext = extend_minimal(spaces.function(e), variant, systems)
            for row, (loc, s) in enumerate(zip(sub, interior)):
                B[row, k] = (loc.div @ ext.states[s].face_fluxes).sum()
    return CoarseOperator(B, interior)


# --- interface functionals ------------------------------------------------------

def trace_functional(ctx: DDContext, states: list[SubdomainState]) -> np.ndarray:
    """Coefficients of ``mu -> a(u, extend_minimal(mu)) - b(extend_minimal(mu), p)``."""
    out = np.zeros(ctx.spaces.ndof)
    for loc, E, st in zip(ctx.systems, ctx.ops, states):
        if loc.n_trace:
            g = loc.trace_mass * trace_totals(loc, st) - st.cell_pressures[loc.trace_cells]
            out += E.T @ g
    return out


def apply_interface_operator(ctx: DDContext, lam0, return_extension=False):
    """Interface operator on the divergence-free mortar subspace."""
    lam0 = np.asarray(lam0, dtype=float)
    ext = extend(ctx.spaces.function(lam0), ctx.variant, ctx.systems)
    y = ctx.coarse.project(trace_functional(ctx, ext.states))
    return (y, ext) if return_extension else y


def assemble_interface_matrix(ctx: DDContext, basis: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense interface matrix in an orthonormal basis of the divergence-free subspace."""
    if basis is None:
        basis = divergence_free_basis(ctx.coarse)
    cols = [apply_interface_operator(ctx, basis[:, k]) for k in range(basis.shape[1])]
    return basis.T @ np.column_stack(cols) if cols else np.zeros((0, 0))


def divergence_free_basis(coarse: CoarseOperator) -> np.ndarray:
    if not coarse.dim:
        return np.eye(coarse.ndof)
    return sla.null_space(coarse.B)


# --- the four steps -------------------------------------------------------------

def step1_coarse_flux(ctx: DDContext) -> np.ndarray:
    F = [ctx.sources[s].sum() for s in ctx.coarse.interior_ids]
    return ctx.coarse.lift(F)


@dataclass
class LocalSourceResult:
    states: list[SubdomainState]

    @property
    def r_f(self) -> list:
        return [st.r for st in self.states]


def step2_local_source(ctx: DDContext, lam_bar) -> LocalSourceResult:
    """Subdomain solves with trace flux of ``extend_minimal(lam_bar)``, f and g.

    The returned velocities are ``u_f = u_f0 + extend_minimal(lam_bar)``; the
    pressures have zero mean on interior subdomains.
    """
    states = [
        loc.solve_totals(E @ lam_bar, F, gb)
        for loc, E, F, gb in zip(ctx.systems, ctx.ops, ctx.sources, ctx.gbs)
    ]
    return LocalSourceResult(states)


@dataclass
class CGReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    mass_defects: list = field(default_factory=list)
    converged: bool = False

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "mass_defect"])
            for k, (r, m) in enumerate(zip(self.residuals, self.mass_defects)):
                w.writerow([k, f"{r:.5e}", f"{m:.5e}"])


def _max_mass_defect(ctx: DDContext, states) -> float:
    return max(
        (float(np.max(np.abs(loc.div @ st.face_fluxes - F))) for loc, st, F in zip(ctx.systems, states, ctx.sources)),
        default=0.0,
    )


def step3_interface_cg(ctx: DDContext, rhs, base_states, tol=DEFAULT_TOL, maxit=None):
    """Plain CG on the divergence-free mortar subspace.

    ``base_states`` is the source solution ``u_f``; the running velocity
    ``u_f + R lam0_k`` is monitored for per-cell mass balance at every iterate.
    Returns ``(lam0, extension states of lam0, report)``.
    """
    n = ctx.spaces.ndof
    if maxit is None:
        maxit = 10 * max(n - ctx.coarse.dim, 1)
    b = ctx.coarse.project(np.asarray(rhs, dtype=float))
    x = np.zeros(n)
    acc = [SubdomainState(np.zeros(loc.grid.n_faces), np.zeros(loc.grid.n_cells), 0.0 if loc.s_dim else None)
           for loc in ctx.systems]
    running = [st.face_fluxes.copy() for st in base_states]
    report = CGReport()
    bnorm = np.linalg.norm(b)
    report.residuals.append(1.0 if bnorm > 0 else 0.0)
    report.mass_defects.append(_max_mass_defect(ctx, base_states))
    if bnorm == 0.0:
        report.converged = True
        return x, acc, report
    r = b.copy()
    p = r.copy()
    rs = r @ r
    for k in range(1, maxit + 1):
        Ap, ext = apply_interface_operator(ctx, p, return_extension=True)
        pAp = p @ Ap
        if pAp <= 0:
            raise CGError(f"interface operator not positive definite (p.Ap = {pAp:.3e}); "
                          "check the mortar condition", report)
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        for a, st, run in zip(acc, ext.states, running):
            a.axpy(alpha, st)
            run += alpha * st.face_fluxes
        report.iterations = k
        report.residuals.append(float(np.linalg.norm(r) / bnorm))
        report.mass_defects.append(
            max(float(np.max(np.abs(loc.div @ u - F))) for loc, u, F in zip(ctx.systems, running, ctx.sources))
        )
        if report.residuals[-1] <= tol:
            report.converged = True
            break
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not report.converged:
        raise CGError(f"CG did not reach tol={tol:g} in {maxit} iterations "
                      f"(residual {report.residuals[-1]:.3e})", report)
    log.debug("CG converged in %d iterations", report.iterations)
    return x, acc, report


def step4_coarse_pressure(ctx: DDContext, states) -> np.ndarray:
    """Mean pressure corrections of the interior subdomains (interior-id order)."""
    return ctx.coarse.solve_transpose(trace_functional(ctx, states))


# --- full solves ----------------------------------------------------------------

@dataclass
class DDSolution:
    states: list[SubdomainState]
    lam: MortarFunction
    variant: str
    report: CGReport = field(default_factory=CGReport)
    lam0: Optional[np.ndarray] = None
    lam_bar: Optional[np.ndarray] = None
    p_bar: Optional[np.ndarray] = None

    @property
    def spaces(self) -> MortarSpaces:
        return self.lam.spaces

    def pressures(self) -> np.ndarray:
        return np.concatenate([s.cell_pressures for s in self.states])

    def fluxes(self) -> np.ndarray:
        return np.concatenate([s.face_fluxes for s in self.states])


def solve(dd, spaces, variant, K=1.0, f=None, tol=DEFAULT_TOL, pressure_bc=None, systems=None,
          maxit=None, ctx: Optional[DDContext] = None) -> DDSolution:
    """Iterative flux-mortar solve: coarse flux, local solves, interface CG, coarse pressure."""
    if ctx is None:
        ctx = setup(dd, spaces, variant, K, f, pressure_bc, systems)
    lam_bar = step1_coarse_flux(ctx)
    src = step2_local_source(ctx, lam_bar)
    rhs = -trace_functional(ctx, src.states)
    lam0, ext0, report = step3_interface_cg(ctx, rhs, src.states, tol, maxit)
    states = []
    for a, st in zip(ext0, src.states):
        states.append(SubdomainState(a.face_fluxes + st.face_fluxes, a.cell_pressures + st.cell_pressures))
    p_bar = step4_coarse_pressure(ctx, states)
    for s, c in zip(ctx.coarse.interior_ids, p_bar):
        states[s].cell_pressures += c
    lam = spaces.function(lam0 + lam_bar)
    return DDSolution(states, lam, variant, report, lam0, lam_bar, p_bar)


def residual_audit(ctx: DDContext, sol: DDSolution) -> dict:
    """Max residuals of the discrete equations over all basis test functions.

    ``darcy_interior``: Darcy's law tested with every free face;
    ``pressure_continuity``: tested with ``extend_minimal`` of every mortar basis
    function; ``mass``: per-cell mass balance; ``trace_consistency``: interface face
    fluxes against the projection of the mortar solution.
    """
    darcy = mass = trace = 0.0
    for loc, st, F, gb, E in zip(ctx.systems, sol.states, ctx.sources, ctx.gbs, ctx.ops):
        fr = loc.free_faces
        res = loc.face_mass[fr] * st.face_fluxes[fr] - loc.div_free.T @ st.cell_pressures
        if gb is not None:
            res -= gb[fr]
        darcy = max(darcy, float(np.max(np.abs(res), initial=0.0)))
        mass = max(mass, float(np.max(np.abs(loc.div @ st.face_fluxes - F))))
        if loc.n_trace:
            trace = max(trace, float(np.max(np.abs(trace_totals(loc, st) - E @ sol.lam.coeffs))))
    cont = float(np.max(np.abs(trace_functional(ctx, sol.states)), initial=0.0))
    return {"darcy_interior": darcy, "pressure_continuity": cont, "mass": mass, "trace_consistency": trace}


def monolithic_solve(dd, spaces, variant, K=1.0, f=None, pressure_bc=None, systems=None,
                     ctx: Optional[DDContext] = None) -> DDSolution:
    """Direct solve of the global saddle system on ``V_h0 + R Lambda_h`` times ``W_h``."""
    if ctx is None:
        ctx = setup(dd, spaces, variant, K, f, pressure_bc, systems)
    systems = ctx.systems
    face_off = np.cumsum([0] + [loc.grid.n_faces for loc in systems])
    cell_off = np.cumsum([0] + [loc.grid.n_cells for loc in systems])
    nF, nL = face_off[-1], spaces.ndof

    free = np.concatenate([loc.free_faces + o for loc, o in zip(systems, face_off)])
    S = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(nF, len(free)))
    cols = []
    for k in range(nL):
        e = np.zeros(nL)
        e[k] = 1.0
        ext = extend(spaces.function(e), variant, systems)
        cols.append(sp.csr_matrix(np.concatenate([st.face_fluxes for st in ext.states])[:, None]))
    R = sp.hstack(cols).tocsr() if cols else sp.csr_matrix((nF, 0))
    Phi = sp.hstack([S, R]).tocsr()

    mass = np.concatenate([loc.face_mass for loc in systems])
    D = sp.block_diag([loc.div for loc in systems]).tocsr()
    A = Phi.T @ sp.diags(mass) @ Phi
    DPhi = D @ Phi
    gb = np.concatenate([g if g is not None else np.zeros(loc.grid.n_faces) for loc, g in zip(systems, ctx.gbs)])
    F = np.concatenate(ctx.sources)
    K_ = sp.bmat([[A, -DPhi.T], [-DPhi, None]], format="csc")
    rhs = np.concatenate([Phi.T @ gb, -F])
    try:
        sol = spla.spsolve(K_, rhs)
    except RuntimeError as exc:
        raise SolverError(f"monolithic system singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError("monolithic system singular; check the mortar condition")
    c, p = sol[: Phi.shape[1]], sol[Phi.shape[1]:]
    U = Phi @ c
    states = [
        SubdomainState(U[face_off[s]:face_off[s + 1]].copy(), p[cell_off[s]:cell_off[s + 1]].copy())
        for s in range(len(systems))
    ]
    lam = spaces.function(c[len(free):])
    return DDSolution(states, lam, variant)


def single_domain_solve(domain, cells, K=1.0, f=None, pressure_bc=None):
    """TPFA solve on one undecomposed tensor grid (reference for conforming checks).

    Returns ``(grid, state)``.
    """
    dd = build_decomposition(DecompositionConfig(tuple(domain), (), (), (tuple(cells),), 1))
    grid = dd.grids[0]
    loc = assemble_local(grid, K, interior=False)
    gb = loc.dirichlet_rhs(boundary_pressures(loc, pressure_bc)) if pressure_bc is not None else None
    return grid, loc.solve_totals(None, cell_integrals(grid, f), gb)
