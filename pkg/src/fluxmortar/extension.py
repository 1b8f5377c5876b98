"""Discrete extension of mortar data into the subdomains.

``extend`` projects the mortar function onto each trace space (flat or sharp
variant) and lifts it with a Neumann subdomain solve. ``extend_minimal`` puts
the same trace data on the interface faces and zero everywhere else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .darcy import LocalSystem, SubdomainState
from .mortar import MortarFunction, MortarSpaces, TraceFunction, weak_jump

MINIMAL = "minimal"


@dataclass
class ExtensionResult:
    states: list[SubdomainState]
    variant: str


def trace_operators(spaces: MortarSpaces, systems: list[LocalSystem], variant: str) -> list[sp.csr_matrix]:
    """Per-subdomain matrices taking mortar coefficients to outward trace fluxes.

    Row ``k`` of the matrix for subdomain ``s`` is trace slot ``k`` of
    ``systems[s]``; entries are total fluxes through the face. The slot
    layout only depends on the grids, so the result is cached on ``spaces``.
    """
    cache = spaces.trace_op_cache
    if variant in cache:
        return cache[variant]
    ops = []
    for local in systems:
        blocks = sp.lil_matrix((local.n_trace, spaces.ndof))
        for iid, rows in local.trace_slices.items():
            space = spaces.space(iid)
            blocks[rows, spaces.dofs(iid)] = space.trace_map(variant)[space.side_rows(local.subdomain_id)]
        ops.append(blocks.tocsr())
    cache[variant] = ops
    return ops


def trace_totals(local: LocalSystem, state: SubdomainState) -> np.ndarray:
    """Outward total fluxes of ``state`` on the trace slots."""
    return local.trace_sign * state.face_fluxes[local.trace_faces]


def extend(lam: MortarFunction, variant: str, systems: list[LocalSystem]) -> ExtensionResult:
    """Harmonic extension of ``lam`` with zero source and zero boundary pressure."""
    ops = trace_operators(lam.spaces, systems, variant)
    states = [local.solve_totals(E @ lam.coeffs) for local, E in zip(systems, ops)]
    return ExtensionResult(states, variant)


def extend_minimal(mu: MortarFunction, variant: str, systems: list[LocalSystem]) -> ExtensionResult:
    """Extension by zero: trace faces carry the projected mortar data, nothing else."""
    ops = trace_operators(mu.spaces, systems, variant)
    states = []
    for local, E in zip(systems, ops):
        U = np.zeros(local.grid.n_faces)
        U[local.trace_faces] = local.trace_sign * (E @ mu.coeffs)
        states.append(SubdomainState(U, np.zeros(local.grid.n_cells), 0.0 if local.s_dim else None))
    return ExtensionResult(states, MINIMAL)


def trace_functions(systems: list[LocalSystem], states: list[SubdomainState]) -> dict:
    """Outward flux densities of ``states`` per (subdomain, interface)."""
    out = {}
    for local, state in zip(systems, states):
        W = trace_totals(local, state) / local.trace_lengths
        for iid, rows in local.trace_slices.items():
            out[local.subdomain_id, iid] = TraceFunction(local.subdomain_id, iid, W[rows])
    return out


def weak_flux_jump(spaces: MortarSpaces, systems: list[LocalSystem], states: list[SubdomainState]) -> np.ndarray:
    """Weak normal-flux jump tested against every mortar basis function."""
    traces = trace_functions(systems, states)
    jump = np.zeros(spaces.ndof)
    for space in spaces:
        i, j = space.id
        jump[spaces.dofs(space.id)] = weak_jump(space, traces[i, space.id], traces[j, space.id])
    return jump


def flux_norm(local: LocalSystem, state: SubdomainState) -> float:
    """Discrete weighted L2 norm ``sqrt(sum m_f U_f^2)`` of the face fluxes."""
    return float(np.sqrt(np.sum(local.face_mass * state.face_fluxes**2)))
