"""Mortar spaces on interfaces and the projections onto subdomain trace spaces.

Every interface carries its own P0 or continuous P1 mortar space; spaces on
different interfaces are not coupled. Trace spaces are piecewise constants on
the subdomain faces along the interface. All integrals are evaluated with
3-point Gauss rules on the common refinement of the partitions involved, which
is exact for every product of mortar and trace basis functions.

Sign convention: a mortar function ``lam`` on interface ``(i, j)`` models the
flux along the interface normal, so side ``i`` sees ``lam`` and side ``j``
sees ``-lam`` as its outward flux.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry import DomainDecomposition, Interface, TracePartition, trace_partition

_gx, _gw = np.polynomial.legendre.leggauss(3)
GAUSS_POINTS = 0.5 * (_gx + 1.0)
GAUSS_WEIGHTS = 0.5 * _gw

FLAT, SHARP = "flat", "sharp"
VARIANTS = (FLAT, SHARP)

# below this fraction of the largest generalized eigenvalue the mortar
# condition is reported as violated
RANK_TOL = 1e-10


class MortarConditionError(RuntimeError):
    """The mortar space is not controlled by the trace spaces on an interface."""


def merge_breaks(*partitions, tol=1e-12) -> np.ndarray:
    pts = np.sort(np.concatenate(partitions))
    scale = max(pts[-1] - pts[0], 1.0)
    keep = np.append(True, np.diff(pts) > tol * scale)
    return pts[keep]


def gauss_rule(breaks) -> tuple[np.ndarray, np.ndarray]:
    """Composite 3-point Gauss points and weights on a partition."""
    a, h = breaks[:-1], np.diff(breaks)
    pts = (a[:, None] + h[:, None] * GAUSS_POINTS).ravel()
    wts = (h[:, None] * GAUSS_WEIGHTS).ravel()
    return pts, wts


def _cell_index(breaks, s):
    return np.clip(np.searchsorted(breaks, s, side="right") - 1, 0, len(breaks) - 2)


class MortarSpace:
    """P0 or P1 mortar space on one interface, with both adjacent trace spaces."""

    def __init__(self, interface: Interface, order: int, side_i: TracePartition, side_j: TracePartition):
        if order not in (0, 1):
            raise ValueError(f"mortar order must be 0 or 1, got {order}")
        self.interface = interface
        self.id = interface.id
        self.order = order
        self.nodes = np.asarray(interface.mortar_nodes, dtype=float)
        self.n_elements = len(self.nodes) - 1
        self.ndof = self.n_elements + order
        i, j = interface.id
        self.partitions = {i: side_i, j: side_j}
        self.signs = {i: 1.0, j: -1.0}
        for part in (side_i, side_j):
            if abs(part.breaks[-1] - interface.length) > 1e-12 * max(1.0, interface.length):
                raise ValueError(f"trace partition does not cover interface {interface.id}")

    @property
    def length(self) -> float:
        return self.interface.length

    def basis(self, s) -> np.ndarray:
        """Basis values ``(len(s), ndof)`` at arclength points ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        k = _cell_index(self.nodes, s)
        out = np.zeros((len(s), self.ndof))
        rows = np.arange(len(s))
        if self.order == 0:
            out[rows, k] = 1.0
        else:
            t = (s - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k])
            out[rows, k] = 1.0 - t
            out[rows, k + 1] = t
        return out

    def _face_integrals(self, breaks, values_at) -> np.ndarray:
        """Integrals of ``values_at(points)`` (shape (nq, m)) over each face."""
        pts, wts = gauss_rule(merge_breaks(breaks, self.nodes))
        face = _cell_index(breaks, pts)
        W = sp.csr_matrix((wts, (face, np.arange(len(pts)))), shape=(len(breaks) - 1, len(pts)))
        return W @ values_at(pts)

    @cached_property
    def gram(self) -> np.ndarray:
        pts, wts = gauss_rule(self.nodes)
        phi = self.basis(pts)
        return phi.T @ (wts[:, None] * phi)

    def moments(self, subdomain_id: int) -> np.ndarray:
        """``C[k, f] = integral of basis k over trace face f`` on one side."""
        return self._moments[subdomain_id]

    @cached_property
    def _moments(self) -> dict:
        return {
            sid: self._face_integrals(part.breaks, self.basis).T
            for sid, part in self.partitions.items()
        }

    def face_integrals(self, subdomain_id: int, lam) -> np.ndarray:
        """Integrals of a mortar function (coefficients) or callable over one side's faces."""
        if callable(lam):
            return self._face_integrals(self.partitions[subdomain_id].breaks, lambda s: np.asarray(lam(s), dtype=float))
        return self.moments(subdomain_id).T @ np.asarray(lam, dtype=float)

    # --- operators mapping mortar coefficients to outward total trace fluxes
    @cached_property
    def flat_map(self) -> np.ndarray:
        i, j = self.id
        return np.vstack([self.moments(i).T, -self.moments(j).T])

    @cached_property
    def _sharp_lu(self):
        if check_mortar_condition(self, FLAT) == 0.0:
            raise MortarConditionError(
                f"interface {self.id}: mortar condition violated, sharp projection is singular"
            )
        i, j = self.id
        L = np.concatenate([self.partitions[i].lengths, self.partitions[j].lengths])
        C = np.hstack([self.moments(i), self.moments(j)])
        kkt = np.block([[np.diag(L), C.T], [C, np.zeros((self.ndof, self.ndof))]])
        return sla.lu_factor(kkt), L

    def solve_sharp(self, b_i, b_j):
        """Solve the weakly continuous projection system for face moments ``b``."""
        (lu, L) = self._sharp_lu
        n = len(L)
        rhs = np.concatenate([b_i, b_j])
        rhs = np.concatenate([rhs, np.zeros((self.ndof,) + rhs.shape[1:])])
        sol = sla.lu_solve(lu, rhs)
        ni = len(b_i)
        return sol[:ni], sol[ni:n], sol[n:]

    @cached_property
    def sharp_map(self) -> np.ndarray:
        i, j = self.id
        psi_i, psi_j, _ = self.solve_sharp(self.moments(i).T, -self.moments(j).T)
        L = self._sharp_lu[1]
        return L[:, None] * np.vstack([psi_i, psi_j])

    def trace_map(self, variant: str) -> np.ndarray:
        if variant == FLAT:
            return self.flat_map
        if variant == SHARP:
            return self.sharp_map
        raise ValueError(f"unknown variant {variant!r}")

    def side_rows(self, subdomain_id: int) -> slice:
        i, _ = self.id
        ni = len(self.partitions[i].faces)
        return slice(0, ni) if subdomain_id == i else slice(ni, ni + len(self.partitions[subdomain_id].faces))

    def __repr__(self):
        return f"MortarSpace(interface={self.id}, P{self.order}, elements={self.n_elements})"


class MortarSpaces:
    """The global mortar space: one :class:`MortarSpace` per interface."""

    def __init__(self, dd: DomainDecomposition, order: int):
        self.dd = dd
        self.order = order
        self.spaces: list[MortarSpace] = []
        self.offsets = [0]
        for iface in dd.interfaces:
            i, j = iface.id
            space = MortarSpace(
                iface, order, trace_partition(dd.grids[i], iface), trace_partition(dd.grids[j], iface)
            )
            self.spaces.append(space)
            self.offsets.append(self.offsets[-1] + space.ndof)
        self._index = {s.id: k for k, s in enumerate(self.spaces)}
        self.ndof = self.offsets[-1]
        self.trace_op_cache: dict = {}

    def space(self, interface_id) -> MortarSpace:
        return self.spaces[self._index[tuple(interface_id)]]

    def dofs(self, interface_id) -> slice:
        k = self._index[tuple(interface_id)]
        return slice(self.offsets[k], self.offsets[k + 1])

    def function(self, coeffs=None) -> "MortarFunction":
        c = np.zeros(self.ndof) if coeffs is None else np.asarray(coeffs, dtype=float)
        if c.shape != (self.ndof,):
            raise ValueError(f"expected {self.ndof} mortar coefficients, got {c.shape}")
        return MortarFunction(self, c)

    def gram(self) -> np.ndarray:
        return sla.block_diag(*[s.gram for s in self.spaces]) if self.spaces else np.zeros((0, 0))

    def __iter__(self):
        return iter(self.spaces)

    def __len__(self):
        return len(self.spaces)


def mortar_spaces(dd: DomainDecomposition, order: int) -> MortarSpaces:
    return MortarSpaces(dd, order)


@dataclass
class MortarFunction:
    spaces: MortarSpaces
    coeffs: np.ndarray

    def on(self, interface_id) -> np.ndarray:
        return self.coeffs[self.spaces.dofs(interface_id)]

    def side_signed(self, subdomain_id: int, interface_id) -> np.ndarray:
        """Coefficients of ``lam_i`` as seen from ``subdomain_id``."""
        return self.spaces.space(interface_id).signs[subdomain_id] * self.on(interface_id)

    def __add__(self, other: "MortarFunction") -> "MortarFunction":
        return MortarFunction(self.spaces, self.coeffs + other.coeffs)


@dataclass
class TraceFunction:
    """Piecewise-constant outward flux density on one side of one interface."""

    subdomain_id: int
    interface_id: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


InterfaceData = Union[MortarFunction, np.ndarray, Callable]


def _local_lambda(lam: InterfaceData, space: MortarSpace):
    if isinstance(lam, MortarFunction):
        return lam.on(space.id)
    if callable(lam):
        return lam
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (space.ndof,):
        raise ValueError(f"expected {space.ndof} coefficients on interface {space.id}")
    return lam


def project_flat(lam: InterfaceData, space: MortarSpace, subdomain_id: int) -> TraceFunction:
    """L2 projection of ``lam`` onto the trace space of ``subdomain_id`` (side-signed)."""
    if subdomain_id not in space.partitions:
        raise KeyError(f"subdomain {subdomain_id} is not adjacent to interface {space.id}")
    lam = _local_lambda(lam, space)
    part = space.partitions[subdomain_id]
    vals = space.signs[subdomain_id] * space.face_integrals(subdomain_id, lam) / part.lengths
    return TraceFunction(subdomain_id, space.id, vals)


def project_sharp(lam: InterfaceData, space: MortarSpace):
    """Projection of ``lam`` onto weakly continuous traces on one interface.

    Returns ``(psi_i, psi_j, chi)`` where ``chi`` holds the mortar coefficients
    of the multiplier enforcing weak continuity.
    """
    lam = _local_lambda(lam, space)
    i, j = space.id
    b_i = space.face_integrals(i, lam)
    b_j = -space.face_integrals(j, lam)
    psi_i, psi_j, chi = space.solve_sharp(b_i, b_j)
    return TraceFunction(i, space.id, psi_i), TraceFunction(j, space.id, psi_j), chi


def project(lam: InterfaceData, space: MortarSpace, variant: str) -> tuple[TraceFunction, TraceFunction]:
    i, j = space.id
    if variant == FLAT:
        return project_flat(lam, space, i), project_flat(lam, space, j)
    if variant == SHARP:
        psi_i, psi_j, _ = project_sharp(lam, space)
        return psi_i, psi_j
    raise ValueError(f"unknown variant {variant!r}")


def weak_jump(space: MortarSpace, psi_i: TraceFunction, psi_j: TraceFunction) -> np.ndarray:
    """``sum over sides of (psi_side, mu_k)`` for every mortar basis function."""
    i, j = space.id
    return space.moments(i) @ psi_i.values + space.moments(j) @ psi_j.values


def check_mortar_condition(space: MortarSpace, variant: str = FLAT) -> float:
    """Largest ``c`` with ``||mu|| <= (||Q_i mu|| ... )/c`` on the interface.

    Computed as the square root of the smallest generalized eigenvalue of
    ``(sum of side norms of Q mu, mortar Gram)``; returns 0 if that pencil is
    rank deficient.
    """
    i, j = space.id
    if variant == FLAT:
        S = sum(
            space.moments(s) @ (space.moments(s).T / space.partitions[s].lengths[:, None])
            for s in (i, j)
        )
    elif variant == SHARP:
        if check_mortar_condition(space, FLAT) == 0.0:
            return 0.0
        L = space._sharp_lu[1]
        psi = space.sharp_map / L[:, None]
        S = psi.T @ (L[:, None] * psi)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    ev = sla.eigh(0.5 * (S + S.T), space.gram, eigvals_only=True)
    lo, hi = ev[0], ev[-1]
    if hi <= 0 or lo <= RANK_TOL * hi:
        return 0.0
    return float(np.sqrt(lo))


def evaluate_mortar(lam: MortarFunction, interface_id, points) -> np.ndarray:
    """Point values of a mortar function on one interface."""
    space = lam.spaces.space(interface_id)
    s = np.atleast_1d(np.asarray(points, dtype=float))
    tol = 1e-12 * max(1.0, space.length)
    if np.any(s < -tol) or np.any(s > space.length + tol):
        raise ValueError(f"points outside interface {space.id} of length {space.length}")
    return space.basis(np.clip(s, 0.0, space.length)) @ lam.on(interface_id)
