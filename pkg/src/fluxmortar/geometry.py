"""Decomposed rectangular domains, subdomain tensor grids and interfaces.

The domain is an axis-aligned rectangle cut by full-length vertical and
horizontal split lines into a tensor arrangement of rectangular subdomains.
Subdomains are numbered in row-major order starting from the bottom row, so
for every interface the lower id lies to the left of (or below) the higher id
and the interface normal points in +x (or +y).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MAX_CELLS_PER_AXIS = 2**31 - 1


class DecompositionError(ValueError):
    """Invalid decomposition configuration."""


@dataclass(frozen=True)
class DecompositionConfig:
    """Geometric description of a decomposition.

    ``resolutions`` holds one ``(nx, ny)`` pair per subdomain in row-major
    order (bottom row first). ``mortar_elements`` is the number of mortar
    elements on every interface.
    """

    domain: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 2.0)
    x_splits: tuple[float, ...] = (0.5,)
    y_splits: tuple[float, ...] = (1.0,)
    resolutions: tuple[tuple[int, int], ...] = ((4, 8), (5, 10), (6, 12), (7, 14))
    mortar_elements: int = 2

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        object.__setattr__(self, "x_splits", tuple(float(v) for v in self.x_splits))
        object.__setattr__(self, "y_splits", tuple(float(v) for v in self.y_splits))
        object.__setattr__(
            self, "resolutions", tuple((int(a), int(b)) for a, b in self.resolutions)
        )
        object.__setattr__(self, "mortar_elements", int(self.mortar_elements))

    def scaled(self, factor: int) -> "DecompositionConfig":
        """Same geometry with every cell and mortar element count times ``factor``."""
        return DecompositionConfig(
            domain=self.domain,
            x_splits=self.x_splits,
            y_splits=self.y_splits,
            resolutions=tuple((nx * factor, ny * factor) for nx, ny in self.resolutions),
            mortar_elements=self.mortar_elements * factor,
        )


@dataclass(frozen=True)
class Subdomain:
    id: int
    row: int
    col: int
    rect: tuple[float, float, float, float]
    nx: int
    ny: int

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class Interface:
    """Straight interface between subdomains ``i < j``.

    The arclength parameter ``s`` runs from ``start`` along the interface;
    ``normal_axis`` is 0 for a vertical interface (normal +x) and 1 for a
    horizontal one (normal +y).
    """

    id: tuple[int, int]
    start: tuple[float, float]
    length: float
    normal_axis: int
    mortar_nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def normal(self) -> np.ndarray:
        nu = np.zeros(2)
        nu[self.normal_axis] = 1.0
        return nu

    @property
    def tangent_axis(self) -> int:
        return 1 - self.normal_axis

    @property
    def n_elements(self) -> int:
        return len(self.mortar_nodes) - 1

    @property
    def position(self) -> float:
        """Coordinate of the interface line along its normal axis."""
        return self.start[self.normal_axis]

    def points(self, s) -> np.ndarray:
        """Physical coordinates ``(len(s), 2)`` of arclength parameters ``s``."""
        s = np.asarray(s, dtype=float)
        xy = np.empty(s.shape + (2,))
        xy[..., self.normal_axis] = self.start[self.normal_axis]
        xy[..., self.tangent_axis] = self.start[self.tangent_axis] + s
        return xy


class TracePartition(NamedTuple):
    """Trace faces of one subdomain on one interface, ordered by arclength."""

    faces: np.ndarray
    breaks: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breaks)

    def intervals(self) -> list[tuple[int, float, float]]:
        return [
            (int(f), float(a), float(b))
            for f, a, b in zip(self.faces, self.breaks[:-1], self.breaks[1:])
        ]


# edge labels of a subdomain rectangle
LEFT, RIGHT, BOTTOM, TOP = "left", "right", "bottom", "top"


class SubdomainGrid:
    """Uniform tensor grid on a rectangular subdomain.

    Faces are numbered x-normal first: face ``j*(nx+1) + i`` sits at
    ``x = x0 + i*hx`` in cell row ``j``; then y-normal faces ``nfx + j*nx + i``
    at ``y = y0 + j*hy``. A face flux is positive in the +x (+y) direction.
    ``face_cells[f] = (minus-side cell, plus-side cell)`` with -1 outside.
    """

    def __init__(self, subdomain: Subdomain, edge_kinds: dict[str, object]):
        self.subdomain_id = subdomain.id
        self.rect = subdomain.rect
        self.nx, self.ny = subdomain.nx, subdomain.ny
        nx, ny = self.nx, self.ny
        x0, y0, x1, y1 = self.rect
        self.hx = (x1 - x0) / nx
        self.hy = (y1 - y0) / ny
        self.n_cells = nx * ny
        self.n_xfaces = (nx + 1) * ny
        self.n_faces = self.n_xfaces + nx * (ny + 1)

        ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
        ci, cj = ci.ravel(), cj.ravel()
        self.cell_ij = np.column_stack([ci, cj])
        self.cell_centers = np.column_stack(
            [x0 + (ci + 0.5) * self.hx, y0 + (cj + 0.5) * self.hy]
        )
        self.cell_volumes = np.full(self.n_cells, self.hx * self.hy)

        # x-normal faces
        fi, fj = np.meshgrid(np.arange(nx + 1), np.arange(ny))
        fi, fj = fi.ravel(), fj.ravel()
        xm = np.where(fi > 0, fj * nx + fi - 1, -1)
        xp = np.where(fi < nx, fj * nx + fi, -1)
        xc = np.column_stack([x0 + fi * self.hx, y0 + (fj + 0.5) * self.hy])
        # y-normal faces
        gi, gj = np.meshgrid(np.arange(nx), np.arange(ny + 1))
        gi, gj = gi.ravel(), gj.ravel()
        ym = np.where(gj > 0, (gj - 1) * nx + gi, -1)
        yp = np.where(gj < ny, gj * nx + gi, -1)
        yc = np.column_stack([x0 + (gi + 0.5) * self.hx, y0 + gj * self.hy])

        self.face_cells = np.concatenate(
            [np.column_stack([xm, xp]), np.column_stack([ym, yp])]
        )
        self.face_centers = np.concatenate([xc, yc])
        self.face_axis = np.concatenate(
            [np.zeros(self.n_xfaces, int), np.ones(self.n_faces - self.n_xfaces, int)]
        )
        self.face_lengths = np.where(self.face_axis == 0, self.hy, self.hx)

        self.edge_faces = {
            LEFT: np.arange(ny) * (nx + 1),
            RIGHT: np.arange(ny) * (nx + 1) + nx,
            BOTTOM: self.n_xfaces + np.arange(nx),
            TOP: self.n_xfaces + ny * nx + np.arange(nx),
        }
        # edge_kinds maps edge label -> interface id or None (outer boundary)
        self.edge_kinds = dict(edge_kinds)
        self.trace_faces: dict[tuple[int, int], np.ndarray] = {}
        dirichlet = []
        for edge in (LEFT, RIGHT, BOTTOM, TOP):
            kind = self.edge_kinds[edge]
            if kind is None:
                dirichlet.append(self.edge_faces[edge])
            else:
                self.trace_faces[kind] = self.edge_faces[edge]
        self.dirichlet_faces = np.sort(np.concatenate(dirichlet)) if dirichlet else np.zeros(0, int)

    def boundary_cell(self, faces) -> np.ndarray:
        """Interior-side cell of boundary faces."""
        fc = self.face_cells[faces]
        return np.where(fc[:, 0] >= 0, fc[:, 0], fc[:, 1])

    def outward_sign(self, faces) -> np.ndarray:
        """+1 where the +x/+y orientation of a boundary face points outward."""
        return np.where(self.face_cells[faces, 1] < 0, 1.0, -1.0)

    def __repr__(self):
        return f"SubdomainGrid(id={self.subdomain_id}, nx={self.nx}, ny={self.ny})"


class DomainDecomposition:
    def __init__(self, config: DecompositionConfig, subdomains, interfaces, grids):
        self.config = config
        self.domain = config.domain
        self.subdomains: list[Subdomain] = subdomains
        self.interfaces: list[Interface] = interfaces
        self.grids: list[SubdomainGrid] = grids
        self._iface = {iface.id: iface for iface in interfaces}
        self.interior_subdomain_ids = frozenset(
            g.subdomain_id for g in grids if all(k is not None for k in g.edge_kinds.values())
        )

    def interface(self, interface_id) -> Interface:
        try:
            return self._iface[tuple(interface_id)]
        except KeyError:
            raise KeyError(f"no interface {interface_id}") from None

    def interfaces_of(self, subdomain_id: int) -> list[Interface]:
        return [f for f in self.interfaces if subdomain_id in f.id]

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    def __repr__(self):
        res = [(s.nx, s.ny) for s in self.subdomains]
        return (
            f"DomainDecomposition({len(self.subdomains)} subdomains, "
            f"{len(self.interfaces)} interfaces, cells={res})"
        )


def _validate(config: DecompositionConfig):
    x0, y0, x1, y1 = config.domain
    if not (x1 > x0 and y1 > y0):
        raise DecompositionError(f"degenerate domain rectangle {config.domain}")
    for name, splits, lo, hi in (("x", config.x_splits, x0, x1), ("y", config.y_splits, y0, y1)):
        s = np.asarray(splits)
        if np.any(s <= lo) or np.any(s >= hi):
            raise DecompositionError(f"{name}-split lines {splits} must lie strictly inside ({lo}, {hi})")
        if np.any(np.diff(s) <= 0):
            raise DecompositionError(
                f"{name}-split lines {splits} overlap or are unsorted; subdomains would not tile"
            )
    n_sub = (len(config.x_splits) + 1) * (len(config.y_splits) + 1)
    if len(config.resolutions) != n_sub:
        raise DecompositionError(
            f"expected {n_sub} subdomain resolutions, got {len(config.resolutions)}"
        )
    for nx, ny in config.resolutions:
        if nx <= 0 or ny <= 0:
            raise DecompositionError(f"cell counts must be positive, got {(nx, ny)}")
        if max(nx, ny) > MAX_CELLS_PER_AXIS:
            raise DecompositionError("cell count overflow")
    if config.mortar_elements <= 0:
        raise DecompositionError("mortar_elements must be positive")


def build_decomposition(config: DecompositionConfig) -> DomainDecomposition:
    """Build subdomains, interfaces and grids for a tensor split of the domain."""
    _validate(config)
    x0, y0, x1, y1 = config.domain
    xs = [x0, *config.x_splits, x1]
    ys = [y0, *config.y_splits, y1]
    ncol, nrow = len(xs) - 1, len(ys) - 1

    def sid(row, col):
        return row * ncol + col

    subdomains = []
    for row in range(nrow):
        for col in range(ncol):
            k = sid(row, col)
            nx, ny = config.resolutions[k]
            subdomains.append(
                Subdomain(k, row, col, (xs[col], ys[row], xs[col + 1], ys[row + 1]), nx, ny)
            )

    interfaces = []
    m = config.mortar_elements
    for row in range(nrow):
        for col in range(ncol):
            if col + 1 < ncol:
                length = ys[row + 1] - ys[row]
                interfaces.append(
                    Interface(
                        (sid(row, col), sid(row, col + 1)),
                        (xs[col + 1], ys[row]),
                        length,
                        0,
                        np.linspace(0.0, length, m + 1),
                    )
                )
            if row + 1 < nrow:
                length = xs[col + 1] - xs[col]
                interfaces.append(
                    Interface(
                        (sid(row, col), sid(row + 1, col)),
                        (xs[col], ys[row + 1]),
                        length,
                        1,
                        np.linspace(0.0, length, m + 1),
                    )
                )
    interfaces.sort(key=lambda f: f.id)

    grids = []
    for sd in subdomains:
        r, c = sd.row, sd.col
        kinds = {
            LEFT: (sid(r, c - 1), sd.id) if c > 0 else None,
            RIGHT: (sd.id, sid(r, c + 1)) if c + 1 < ncol else None,
            BOTTOM: (sid(r - 1, c), sd.id) if r > 0 else None,
            TOP: (sd.id, sid(r + 1, c)) if r + 1 < nrow else None,
        }
        grids.append(SubdomainGrid(sd, kinds))
    return DomainDecomposition(config, subdomains, interfaces, grids)


def refine(dd: DomainDecomposition, level: int) -> DomainDecomposition:
    """Refine all subdomain grids and mortar grids ``level`` times by a factor two."""
    if level < 0:
        raise ValueError("refinement level must be nonnegative")
    if level == 0:
        return dd
    return build_decomposition(dd.config.scaled(2**level))


def trace_partition(grid: SubdomainGrid, interface: Interface) -> TracePartition:
    """Faces of ``grid`` on ``interface`` with their arclength intervals."""
    faces = grid.trace_faces.get(interface.id)
    if faces is None:
        raise KeyError(
            f"interface {interface.id} is not incident to subdomain {grid.subdomain_id}"
        )
    t = interface.tangent_axis
    lo = grid.face_centers[faces, t] - 0.5 * grid.face_lengths[faces]
    breaks = np.append(lo, lo[-1] + grid.face_lengths[faces[-1]]) - interface.start[t]
    # snap the ends onto the segment to avoid drift in the last bit
    breaks[0], breaks[-1] = 0.0, interface.length
    return TracePartition(faces, breaks)


def reference_config(h_gamma0: float = 0.25) -> DecompositionConfig:
    """Four-subdomain layout on [0,1]x[0,2] with non-matching grids.

    ``h_gamma0`` is the mortar size on the horizontal interfaces (length 1/2)
    at level 0; 1/4 gives two and 1/6 three elements per interface.
    """
    m = int(round(0.5 / h_gamma0))
    if m <= 0 or abs(0.5 / m - h_gamma0) > 1e-12:
        raise DecompositionError(f"h_gamma0={h_gamma0} does not divide the interface length 1/2")
    return DecompositionConfig(mortar_elements=m)

