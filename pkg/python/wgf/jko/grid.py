from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps


class GridError(ValueError):
    """An exception when a grid or a field defined on it is malformed."""


@dataclass(frozen=True)
class Grid:
    """A uniform cell-centered grid in one or two dimensions.

    Densities live at cell centers, fluxes on the faces between cells. Cells
    are flattened row-major with x varying fastest, so a 2D field of shape
    ``(ny, nx)`` maps onto the canonical ordering with ``ravel()``.

    Parameters
    ----------
    nx
        Number of cells along x.
    xmin, xmax
        Domain bounds along x.
    ny
        Number of cells along y, ``None`` for a 1D grid.
    ymin, ymax
        Domain bounds along y (2D only).
    """

    nx: int
    xmin: float
    xmax: float
    ny: int | None = None
    ymin: float | None = None
    ymax: float | None = None

    def __post_init__(self):
        if self.nx < 1:
            raise GridError(f"nx must be positive, got {self.nx}")
        if not self.xmax > self.xmin:
            raise GridError(f"empty x range [{self.xmin}, {self.xmax}]")
        if self.ny is not None:
            if self.ny < 1:
                raise GridError(f"ny must be positive, got {self.ny}")
            if self.ymin is None or self.ymax is None or not self.ymax > self.ymin:
                raise GridError(f"empty y range [{self.ymin}, {self.ymax}]")

    @staticmethod
    def from_spacing(
        xmin: float, xmax: float, dx: float, ymin: float | None = None, ymax: float | None = None
    ) -> Grid:
        """Build a grid with the cell count closest to the requested width."""
        nx = max(1, int(round((xmax - xmin) / dx)))
        if ymin is None:
            return Grid(nx, xmin, xmax)
        ny = max(1, int(round((ymax - ymin) / dx)))
        return Grid(nx, xmin, xmax, ny, ymin, ymax)

    @property
    def dim(self) -> int:
        return 1 if self.ny is None else 2

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.nx

    @property
    def dy(self) -> float | None:
        if self.ny is None:
            return None
        return (self.ymax - self.ymin) / self.ny

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a cell field, ``(nx,)`` or ``(ny, nx)``."""
        return (self.nx,) if self.ny is None else (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx if self.ny is None else self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx if self.ny is None else self.dx * self.dy

    @property
    def x_face_shape(self) -> tuple[int, ...]:
        return (self.nx + 1,) if self.ny is None else (self.ny, self.nx + 1)

    @property
    def y_face_shape(self) -> tuple[int, ...]:
        return (0,) if self.ny is None else (self.ny + 1, self.nx)

    @cached_property
    def faces(self) -> InteriorFaces:
        """The interior faces, x-normal faces first, then y-normal faces."""
        index = np.arange(self.n_cells).reshape(self.shape)
        if self.ny is None:
            left, right = index[:-1], index[1:]
            spacing = np.full(left.size, self.dx)
            return InteriorFaces(left, right, spacing, n_x=left.size)
        x_left, x_right = index[:, :-1].ravel(), index[:, 1:].ravel()
        y_left, y_right = index[:-1, :].ravel(), index[1:, :].ravel()
        spacing = np.concatenate([np.full(x_left.size, self.dx), np.full(y_left.size, self.dy)])
        return InteriorFaces(
            np.concatenate([x_left, y_left]),
            np.concatenate([x_right, y_right]),
            spacing,
            n_x=x_left.size,
        )

    @property
    def n_interior_faces(self) -> int:
        return self.faces.size


@dataclass(frozen=True, eq=False)
class InteriorFaces:
    """Adjacency of the grid: one entry per interior face.

    Parameters
    ----------
    left
        Cell index on the low side of each face.
    right
        Cell index on the high side of each face.
    spacing
        Distance between the two cell centers (``dx`` or ``dy``).
    n_x
        Number of x-normal faces; they come first in every face array.
    """

    left: np.ndarray
    right: np.ndarray
    spacing: np.ndarray
    n_x: int

    @property
    def size(self) -> int:
        return self.left.size


@dataclass(frozen=True, eq=False)
class DensityField:
    """Cell-centered density on a grid.

    Parameters
    ----------
    grid
        The grid the values live on.
    values
        One nonnegative value per cell in canonical ordering.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.n_cells:
            raise GridError(f"density has {values.size} values for {self.grid.n_cells} cells")
        if np.any(values < 0):
            raise GridError(f"density has negative values (min {values.min():g})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def as_array(self) -> np.ndarray:
        """Return the values shaped like the grid."""
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class FluxField:
    """Face-centered momentum with no-flux boundary faces.

    Parameters
    ----------
    grid
        The grid the faces belong to.
    mx
        Values on x-normal faces, boundary faces included, flattened from
        ``grid.x_face_shape``.
    my
        Values on y-normal faces (empty in 1D), flattened from
        ``grid.y_face_shape``.
    """

    grid: Grid
    mx: np.ndarray
    my: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        mx = np.array(self.mx, dtype=float).ravel()
        my = np.array(self.my, dtype=float).ravel()
        if mx.size != int(np.prod(self.grid.x_face_shape)):
            raise GridError(f"x flux has {mx.size} values, expected shape {self.grid.x_face_shape}")
        expected_y = 0 if self.grid.ny is None else int(np.prod(self.grid.y_face_shape))
        if my.size != expected_y:
            raise GridError(f"y flux has {my.size} values, expected {expected_y}")
        mx_arr = mx.reshape(self.grid.x_face_shape)
        if np.any(mx_arr[..., 0] != 0) or np.any(mx_arr[..., -1] != 0):
            raise GridError("x flux must vanish on the boundary faces")
        if expected_y:
            my_arr = my.reshape(self.grid.y_face_shape)
            if np.any(my_arr[0] != 0) or np.any(my_arr[-1] != 0):
                raise GridError("y flux must vanish on the boundary faces")
        mx.setflags(write=False)
        my.setflags(write=False)
        object.__setattr__(self, "mx", mx)
        object.__setattr__(self, "my", my)

    @staticmethod
    def zeros(grid: Grid) -> FluxField:
        return FluxField.from_interior(grid, np.zeros(grid.n_interior_faces))

    @staticmethod
    def from_interior(grid: Grid, values: np.ndarray) -> FluxField:
        """Build a flux from interior face values in `Grid.faces` order."""
        values = np.asarray(values, dtype=float)
        if values.size != grid.n_interior_faces:
            raise GridError(f"{values.size} interior fluxes for {grid.n_interior_faces} faces")
        mx = np.zeros(grid.x_face_shape)
        n_x = grid.faces.n_x
        if grid.ny is None:
            mx[1:-1] = values[:n_x]
            return FluxField(grid, mx)
        mx[:, 1:-1] = values[:n_x].reshape(grid.ny, grid.nx - 1)
        my = np.zeros(grid.y_face_shape)
        my[1:-1, :] = values[n_x:].reshape(grid.ny - 1, grid.nx)
        return FluxField(grid, mx, my)

    def interior(self) -> np.ndarray:
        """Return the interior face values in `Grid.faces` order."""
        mx = self.mx.reshape(self.grid.x_face_shape)
        if self.grid.ny is None:
            return mx[1:-1].copy()
        my = self.my.reshape(self.grid.y_face_shape)
        return np.concatenate([mx[:, 1:-1].ravel(), my[1:-1, :].ravel()])


def divergence(m: FluxField) -> np.ndarray:
    """Discrete divergence of a flux, one value per cell.

    Cell ``j`` receives ``(m[j+1/2] - m[j-1/2]) / dx``, summed over both axes
    in 2D. The boundary faces are zero so the result always sums to zero.
    """
    grid = m.grid
    mx = m.mx.reshape(grid.x_face_shape)
    div = np.diff(mx, axis=-1) / grid.dx
    if grid.ny is not None:
        my = m.my.reshape(grid.y_face_shape)
        div = div + np.diff(my, axis=0) / grid.dy
    return div.ravel()


def divergence_operator(grid: Grid) -> sps.csr_matrix:
    """Sparse matrix mapping interior face fluxes to cell divergences."""
    faces = grid.faces
    columns = np.arange(faces.size)
    inv_h = 1.0 / faces.spacing
    rows = np.concatenate([faces.left, faces.right])
    cols = np.concatenate([columns, columns])
    vals = np.concatenate([inv_h, -inv_h])
    return sps.csr_matrix((vals, (rows, cols)), shape=(grid.n_cells, faces.size))


def face_average(rho: DensityField) -> np.ndarray:
    """Arithmetic mean of the two cells adjacent to each interior face."""
    faces = rho.grid.faces
    return 0.5 * (rho.values[faces.left] + rho.values[faces.right])


def cell_centers(grid: Grid) -> np.ndarray:
    """Midpoint coordinates of every cell.

    Returns
    -------
    numpy.ndarray
        Shape ``(nx,)`` in 1D, ``(n_cells, 2)`` with columns ``(x, y)`` in 2D.
    """
    x = grid.xmin + (np.arange(grid.nx) + 0.5) * grid.dx
    if grid.ny is None:
        return x
    y = grid.ymin + (np.arange(grid.ny) + 0.5) * grid.dy
    xx, yy = np.meshgrid(x, y)
    return np.column_stack([xx.ravel(), yy.ravel()])
