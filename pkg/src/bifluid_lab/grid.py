"""Structured box grids, discrete calculus and the sine eigenbasis.

Vertex-centered grids include the boundary nodes, so Dirichlet data is
imposed exactly.  All difference operators are centered and close at the
walls through ghost nodes that mirror the field evenly (Neumann) or oddly
(Dirichlet); together with trapezoid quadrature this makes summation by
parts, div(curl) = 0 and discrete mode orthonormality exact to rounding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


class BoundaryCondition(enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


NEUMANN = BoundaryCondition.NEUMANN
DIRICHLET = BoundaryCondition.DIRICHLET


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box, `cells` intervals (hence cells+1 nodes) per axis."""

    dim: int
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extent) != self.dim or len(self.cells) != self.dim:
            raise DomainError("extent/cells length must equal dim")
        if any(c < 8 for c in self.cells):
            raise DomainError(f"need at least 8 cells per dimension, got {self.cells}")
        if any(not (e > 0.0) for e in self.extent):
            raise DomainError(f"extent must be positive, got {self.extent}")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extent, self.cells))

    @property
    def n_points(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_points

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(0.0, self.extent[i], self.n_points[i])

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays of shape `self.shape` (ij indexing)."""
        return list(np.meshgrid(*(self.axis(i) for i in range(self.dim)), indexing="ij"))

    def axis_weights(self, i: int) -> np.ndarray:
        w = np.full(self.n_points[i], self.spacing[i])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def weight_array(self) -> np.ndarray:
        """Trapezoid quadrature weights, shaped like a field."""
        w = self.axis_weights(0)
        for i in range(1, self.dim):
            w = np.multiply.outer(w, self.axis_weights(i))
        return w


def make_grid(dim, extent, cells) -> Grid:
    """Build a Grid from scalars or per-axis sequences."""
    if np.ndim(extent) == 0:
        extent = (float(extent),) * dim
    if np.ndim(cells) == 0:
        cells = (int(cells),) * dim
    return Grid(dim=dim, extent=tuple(float(e) for e in extent),
                cells=tuple(int(c) for c in cells))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    bc: BoundaryCondition

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise DomainError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.bc)

    def check_bc(self, tol=1e-10) -> float:
        """Worst boundary violation of the declared condition."""
        worst = 0.0
        for ax in range(self.grid.dim):
            lo = np.take(self.values, 0, axis=ax)
            hi = np.take(self.values, -1, axis=ax)
            if self.bc is DIRICHLET:
                worst = max(worst, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
            else:
                nxt = np.take(self.values, 1, axis=ax)
                prv = np.take(self.values, -2, axis=ax)
                h = self.grid.spacing[ax]
                worst = max(
                    worst,
                    float(np.max(np.abs(nxt - lo))) / h,
                    float(np.max(np.abs(hi - prv))) / h,
                )
        return worst


@dataclass
class VectorField:
    grid: Grid
    values: np.ndarray  # shape (dim, *grid.shape)
    bc: BoundaryCondition

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.dim, *self.grid.shape):
            raise DomainError(
                f"vector field shape {self.values.shape} does not match grid"
            )

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy(), self.bc)

    def component(self, i: int) -> np.ndarray:
        return self.values[i]


def _slicer(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _pad(values, axis, bc):
    inner_lo = values[_slicer(values.ndim, axis, slice(1, 2))]
    inner_hi = values[_slicer(values.ndim, axis, slice(-2, -1))]
    if bc is NEUMANN:
        ghost_lo, ghost_hi = inner_lo, inner_hi
    else:
        ghost_lo, ghost_hi = -inner_lo, -inner_hi
    return np.concatenate([ghost_lo, values, ghost_hi], axis=axis)


def diff1_values(values, axis, h, bc):
    """Centered first difference with the bc-consistent ghost closure."""
    p = _pad(values, axis, bc)
    n = p.ndim
    return (p[_slicer(n, axis, slice(2, None))] - p[_slicer(n, axis, slice(None, -2))]) / (2.0 * h)


def diff2_values(values, axis, h, bc):
    """Centered second difference with the bc-consistent ghost closure."""
    p = _pad(values, axis, bc)
    n = p.ndim
    return (
        p[_slicer(n, axis, slice(2, None))]
        - 2.0 * p[_slicer(n, axis, slice(1, -1))]
        + p[_slicer(n, axis, slice(None, -2))]
    ) / h**2


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    comps = [diff1_values(f.values, ax, g.spacing[ax], f.bc) for ax in range(g.dim)]
    out_bc = DIRICHLET if f.bc is NEUMANN else NEUMANN
    return VectorField(g, np.stack(comps), out_bc)


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    total = sum(
        diff1_values(v.values[ax], ax, g.spacing[ax], v.bc) for ax in range(g.dim)
    )
    out_bc = NEUMANN if v.bc is DIRICHLET else DIRICHLET
    return ScalarField(g, total, out_bc)


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    total = sum(
        diff2_values(f.values, ax, g.spacing[ax], f.bc) for ax in range(g.dim)
    )
    return ScalarField(g, total, f.bc)


def curl(f):
    """2D curl: vector -> scalar, scalar (z-potential) -> vector."""
    g = f.grid
    if g.dim != 2:
        raise DomainError("curl is defined on 2D grids only")
    if f.bc is not DIRICHLET:
        raise DomainError("curl requires a Dirichlet field")
    hx, hy = g.spacing
    if isinstance(f, VectorField):
        vals = diff1_values(f.values[1], 0, hx, f.bc) - diff1_values(
            f.values[0], 1, hy, f.bc
        )
        return ScalarField(g, vals, NEUMANN)
    comps = np.stack(
        [diff1_values(f.values, 1, hy, f.bc), -diff1_values(f.values, 0, hx, f.bc)]
    )
    return VectorField(g, comps, DIRICHLET)


def integrate(f: ScalarField) -> float:
    return float(np.sum(f.grid.weight_array() * f.values))


def inner_product(f, g) -> float:
    if f.grid != g.grid:
        raise DomainError("inner_product requires fields on the same grid")
    if type(f) is not type(g):
        raise DomainError("inner_product requires fields of the same kind")
    w = f.grid.weight_array()
    if isinstance(f, VectorField):
        return float(sum(np.sum(w * f.values[i] * g.values[i]) for i in range(f.grid.dim)))
    return float(np.sum(w * f.values * g.values))


@dataclass(frozen=True, eq=False)
class GalerkinBasis:
    """Laplacian eigenmodes with homogeneous Dirichlet data on the box.

    Modes are analytic sine products sampled on the grid; under trapezoid
    quadrature they are exactly discretely orthonormal for mode indices
    below the per-axis Nyquist limit (cells - 1).
    """

    grid: Grid
    mode_count: int
    eigenvalues: np.ndarray                    # (k,)
    mode_indices: tuple[tuple[int, ...], ...]  # per-mode axis indices
    phi: np.ndarray                            # (k, npts)
    grad_phi: np.ndarray                       # (k, dim, npts)
    weights: np.ndarray                        # (npts,)

    def project_values(self, values: np.ndarray) -> np.ndarray:
        return self.phi @ (self.weights * values.reshape(-1))

    def reconstruct_values(self, coeffs: np.ndarray) -> np.ndarray:
        return (np.asarray(coeffs) @ self.phi).reshape(self.grid.shape)

    def reconstruct_gradient(self, coeffs: np.ndarray) -> np.ndarray:
        out = np.einsum("k,kdp->dp", np.asarray(coeffs), self.grad_phi)
        return out.reshape((self.grid.dim, *self.grid.shape))


def make_basis(grid: Grid, mode_count: int) -> GalerkinBasis:
    if mode_count < 1:
        raise DomainError("mode_count must be >= 1")
    limits = [c - 1 for c in grid.cells]
    candidates = []
    if grid.dim == 1:
        for j in range(1, limits[0] + 1):
            lam = (j * np.pi / grid.extent[0]) ** 2
            candidates.append((lam, (j,)))
    else:
        for a in range(1, limits[0] + 1):
            for b in range(1, limits[1] + 1):
                lam = (a * np.pi / grid.extent[0]) ** 2 + (b * np.pi / grid.extent[1]) ** 2
                candidates.append((lam, (a, b)))
    if mode_count > len(candidates):
        raise DomainError(
            f"mode_count {mode_count} exceeds the Nyquist limit "
            f"({len(candidates)} resolvable modes on {grid.cells} cells)"
        )
    candidates.sort(key=lambda t: (t[0], t[1]))
    chosen = candidates[:mode_count]

    axes = [grid.axis(i) for i in range(grid.dim)]
    npts = int(np.prod(grid.shape))
    phi = np.empty((mode_count, npts))
    grad = np.empty((mode_count, grid.dim, npts))
    lams = np.empty(mode_count)
    for row, (lam, idx) in enumerate(chosen):
        lams[row] = lam
        parts_s = []
        parts_c = []
        for ax, j in enumerate(idx):
            L = grid.extent[ax]
            kx = j * np.pi / L
            norm = np.sqrt(2.0 / L)
            parts_s.append(norm * np.sin(kx * axes[ax]))
            parts_c.append(norm * kx * np.cos(kx * axes[ax]))
        if grid.dim == 1:
            phi[row] = parts_s[0]
            grad[row, 0] = parts_c[0]
        else:
            phi[row] = np.multiply.outer(parts_s[0], parts_s[1]).reshape(-1)
            grad[row, 0] = np.multiply.outer(parts_c[0], parts_s[1]).reshape(-1)
            grad[row, 1] = np.multiply.outer(parts_s[0], parts_c[1]).reshape(-1)
    return GalerkinBasis(
        grid=grid,
        mode_count=mode_count,
        eigenvalues=lams,
        mode_indices=tuple(idx for _, idx in chosen),
        phi=phi,
        grad_phi=grad,
        weights=grid.weight_array().reshape(-1),
    )


def project_onto_basis(f: ScalarField, basis: GalerkinBasis) -> np.ndarray:
    if f.grid != basis.grid:
        raise DomainError("field and basis live on different grids")
    if f.bc is not DIRICHLET:
        raise DomainError("projection requires a Dirichlet field")
    return basis.project_values(f.values)


def reconstruct(coeffs: np.ndarray, basis: GalerkinBasis) -> ScalarField:
    return ScalarField(basis.grid, basis.reconstruct_values(coeffs), DIRICHLET)
