"""Lowest-order mixed method on a subdomain, reduced to two-point fluxes.

With the trapezoidal rule for the RT0 velocity mass matrix the mixed system
on a rectangle grid has a diagonal velocity block. Each face then carries a
lumped mass ``m_f``: ``d1/(K1 L) + d2/(K2 L)`` for an interior face (the
inverse transmissibility), ``d/(K L)`` for a face on the outer boundary or on
an interface, ``d`` being the center-to-face distance. Eliminating the
velocity of the free faces leaves the usual TPFA cell-pressure system.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SubdomainGrid

# diagonal conductivity: a scalar, an (kx, ky) pair, per-cell (n, 2) array, or
# a callable (x, y) -> kx, ky evaluated at cell centers
Conductivity = Union[float, tuple, np.ndarray, Callable]


class SolverError(RuntimeError):
    """A subdomain or interface linear solve failed."""


@dataclass
class SubdomainState:
    """Face fluxes (+x/+y oriented totals), cell pressures and multiplier r."""

    face_fluxes: np.ndarray
    cell_pressures: np.ndarray
    r: Optional[float] = None

    def copy(self) -> "SubdomainState":
        return SubdomainState(self.face_fluxes.copy(), self.cell_pressures.copy(), self.r)

    def axpy(self, alpha: float, other: "SubdomainState"):
        """In-place ``self += alpha * other``."""
        self.face_fluxes += alpha * other.face_fluxes
        self.cell_pressures += alpha * other.cell_pressures
        if self.r is not None and other.r is not None:
            self.r += alpha * other.r


def _cell_conductivity(grid: SubdomainGrid, K: Conductivity) -> np.ndarray:
    if callable(K):
        kx, ky = K(grid.cell_centers[:, 0], grid.cell_centers[:, 1])
        k = np.column_stack([np.broadcast_to(kx, grid.n_cells), np.broadcast_to(ky, grid.n_cells)])
    else:
        k = np.asarray(K, dtype=float)
        if k.ndim == 0:
            k = np.full((grid.n_cells, 2), float(k))
        elif k.shape == (2,):
            k = np.tile(k, (grid.n_cells, 1))
        elif k.shape != (grid.n_cells, 2):
            raise ValueError(f"conductivity of shape {k.shape} does not fit {grid}")
    k = np.array(k, dtype=float)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ValueError("conductivity must be positive and bounded")
    return k


class LocalSystem:
    """Assembled TPFA operators of one subdomain.

    Trace faces (on the interfaces) carry essential flux data. All other faces
    are free: interior faces and faces on the outer Dirichlet boundary.
    Trace slots are the trace faces of all incident interfaces concatenated in
    interface-id order; ``trace_slices`` gives each interface's slot range.
    """

    def __init__(self, grid: SubdomainGrid, K: Conductivity, interior: bool):
        self.grid = grid
        self.subdomain_id = grid.subdomain_id
        self.k = _cell_conductivity(grid, K)
        self.s_dim = 1 if interior else 0
        if interior and grid.dirichlet_faces.size:
            raise ValueError(f"subdomain {grid.subdomain_id} is interior but touches the boundary")

        ax = grid.face_axis
        half = np.where(ax == 0, 0.5 * grid.hx, 0.5 * grid.hy)
        L = grid.face_lengths
        c0, c1 = grid.face_cells[:, 0], grid.face_cells[:, 1]
        fidx = np.arange(grid.n_faces)
        k0 = np.where(c0 >= 0, self.k[np.maximum(c0, 0), ax], np.inf)
        k1 = np.where(c1 >= 0, self.k[np.maximum(c1, 0), ax], np.inf)
        # lumped face mass: sum of half-cell resistances of the existing sides
        self.face_mass = (half / k0 + half / k1) / L
        self.transmissibility = 1.0 / self.face_mass

        trace_ids = sorted(grid.trace_faces)
        slots, slices, start = [], {}, 0
        for iid in trace_ids:
            faces = grid.trace_faces[iid]
            slots.append(faces)
            slices[iid] = slice(start, start + len(faces))
            start += len(faces)
        self.trace_faces = np.concatenate(slots) if slots else np.zeros(0, int)
        self.trace_slices = slices
        self.trace_cells = grid.boundary_cell(self.trace_faces) if slots else np.zeros(0, int)
        self.trace_sign = grid.outward_sign(self.trace_faces) if slots else np.zeros(0)
        self.trace_lengths = L[self.trace_faces]
        self.trace_mass = self.face_mass[self.trace_faces]

        self.dirichlet_faces = grid.dirichlet_faces
        self.dirichlet_cells = grid.boundary_cell(self.dirichlet_faces) if self.dirichlet_faces.size else np.zeros(0, int)
        self.dirichlet_sign = grid.outward_sign(self.dirichlet_faces) if self.dirichlet_faces.size else np.zeros(0)

        free = np.ones(grid.n_faces, bool)
        free[self.trace_faces] = False
        self.free_faces = fidx[free]

        # div[c, f] = +1 if f is the +x/+y face of c, -1 if it is the -x/-y face
        rows = np.concatenate([c0[c0 >= 0], c1[c1 >= 0]])
        cols = np.concatenate([fidx[c0 >= 0], fidx[c1 >= 0]])
        vals = np.concatenate([np.ones((c0 >= 0).sum()), -np.ones((c1 >= 0).sum())])
        self.div = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_faces))
        self.div_free = self.div[:, self.free_faces].tocsc()
        self.div_trace = self.div[:, self.trace_faces].tocsc()

    @property
    def cell_volumes(self) -> np.ndarray:
        return self.grid.cell_volumes

    @property
    def n_trace(self) -> int:
        return len(self.trace_faces)

    @cached_property
    def pressure_operator(self) -> sp.csc_matrix:
        T = sp.diags(self.transmissibility[self.free_faces])
        return (self.div_free @ T @ self.div_free.T).tocsc()

    @cached_property
    def _factor(self):
        A = self.pressure_operator
        if not self.s_dim and not self.dirichlet_faces.size:
            raise SolverError(
                f"subdomain {self.subdomain_id}: pure Neumann problem without mean constraint is singular"
            )
        if self.s_dim:
            v = sp.csc_matrix(self.cell_volumes[:, None])
            A = sp.bmat([[A, -v], [-v.T, None]], format="csc")
        try:
            return spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"subdomain {self.subdomain_id}: singular local system ({exc})") from exc

    def dirichlet_rhs(self, values) -> np.ndarray:
        """Free-face right-hand side ``gb`` for boundary pressures ``values``.

        Darcy on a free face reads ``m_f U_f - (div^T p)_f = gb_f``.
        """
        gb = np.zeros(self.grid.n_faces)
        if values is not None and self.dirichlet_faces.size:
            gb[self.dirichlet_faces] = -self.dirichlet_sign * np.asarray(values, dtype=float)
        return gb

    def solve_totals(self, trace_totals=None, source=None, gb=None) -> SubdomainState:
        """Neumann solve with outward total fluxes on the trace slots.

        ``source`` holds per-cell integrals of f, ``gb`` the free-face Dirichlet
        term from :meth:`dirichlet_rhs`.
        """
        grid = self.grid
        rhs = np.zeros(grid.n_cells)
        if source is not None:
            rhs += source
        U = np.zeros(grid.n_faces)
        if trace_totals is not None and self.n_trace:
            Ut = self.trace_sign * trace_totals
            U[self.trace_faces] = Ut
            rhs -= self.div_trace @ Ut
        Tf = self.transmissibility[self.free_faces]
        if gb is not None:
            rhs -= self.div_free @ (Tf * gb[self.free_faces])
        if self.s_dim:
            sol = self._factor.solve(np.append(rhs, 0.0))
            p, r = sol[:-1], float(sol[-1])
        else:
            p, r = self._factor.solve(rhs), None
        Gp = self.div_free.T @ p
        if gb is not None:
            Gp = Gp + gb[self.free_faces]
        U[self.free_faces] = Tf * Gp
        state = SubdomainState(U, p, r)
        if not np.all(np.isfinite(p)):
            raise SolverError(f"subdomain {self.subdomain_id}: non-finite solution")
        return state


def assemble_local(grid: SubdomainGrid, K: Conductivity = 1.0, interior: Optional[bool] = None) -> LocalSystem:
    """Assemble the TPFA system of one subdomain.

    ``interior`` defaults to "no face on the outer boundary", which is the
    classification used by :class:`~fluxmortar.geometry.DomainDecomposition`.
    """
    if interior is None:
        interior = grid.dirichlet_faces.size == 0
    return LocalSystem(grid, K, interior)


def solve_neumann(local: LocalSystem, trace_flux=None, source=None, dirichlet_value=None) -> SubdomainState:
    """Solve the subdomain problem with prescribed interface fluxes.

    Parameters
    ----------
    trace_flux : array, optional
        Outward flux densities on the trace slots of ``local``.
    source : array, optional
        Per-cell integrals of the source f.
    dirichlet_value : array, optional
        Pressure on each face of ``local.dirichlet_faces``; zero if omitted.

    For interior subdomains the pressure has zero mean and the multiplier
    ``r`` absorbs the incompatibility of the data so that every cell balances
    ``net outflow = source + r * volume``.
    """
    totals = None
    if trace_flux is not None:
        trace_flux = np.asarray(trace_flux, dtype=float)
        if trace_flux.shape != (local.n_trace,):
            raise ValueError(f"expected {local.n_trace} trace values, got {trace_flux.shape}")
        totals = trace_flux * local.trace_lengths
    gb = local.dirichlet_rhs(dirichlet_value) if dirichlet_value is not None else None
    return local.solve_totals(totals, source, gb)


def eliminate_to_pressure_system(local: LocalSystem) -> sp.csc_matrix:
    """Cell-pressure operator left after eliminating the free face fluxes."""
    return local.pressure_operator


def mass_defect(local: LocalSystem, state: SubdomainState, source=None) -> np.ndarray:
    """Per-cell ``net outflow - source - r * volume``."""
    d = local.div @ state.face_fluxes
    if source is not None:
        d = d - source
    if state.r is not None:
        d = d - state.r * local.cell_volumes
    return d
