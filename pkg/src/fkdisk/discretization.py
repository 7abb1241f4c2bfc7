"""Discrete residual and Jacobian of ``Lap(u) + lam^2 exp(u) = 0`` on a polar grid.

The Laplacian is assembled in conservative (finite-volume) form on the
cell-centred grid.  On a uniform grid this is the usual second-order stencil

    (u[i+1] - 2u[i] + u[i-1]) / h^2 + (u[i+1] - u[i-1]) / (2 h rho_i)
        + (u[j+1] - 2u[j] + u[j-1]) / (rho_i dtheta)^2

with the wall handled by a ghost value: ``-u_last`` behind a conducting face
(linear interpolation through ``u = 0`` at ``rho = 1``) and ``u_last`` behind
an insulated one.  No equation is needed at the origin: the innermost face
has zero radius, so its flux vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .geometry import PolarGrid


@dataclass(eq=False)
class SolutionField:
    """Reduced temperature at the cell centres of ``grid`` for a given ``lam``."""

    grid: PolarGrid
    values: np.ndarray
    lam: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def lam_sq(self) -> float:
        return self.lam * self.lam

    @classmethod
    def zeros(cls, grid: PolarGrid, lam: float = 0.0) -> "SolutionField":
        return cls(grid, np.zeros(grid.shape), lam)

    @classmethod
    def from_function(cls, grid: PolarGrid, func, lam: float) -> "SolutionField":
        """Sample ``func(rho, theta)`` at cell centres; ``theta`` is the absolute angle."""
        rho, theta = np.meshgrid(grid.rho_coords, grid.theta_origin + grid.theta_coords, indexing="ij")
        return cls(grid, func(rho, theta) * np.ones(grid.shape), lam)

    def copy(self, values=None, lam=None) -> "SolutionField":
        return SolutionField(
            self.grid,
            self.values.copy() if values is None else values,
            self.lam if lam is None else lam,
        )

    def max_norm(self) -> float:
        return float(self.values.max())

    def l2_norm(self) -> float:
        """Volume-weighted L2 norm over the disk (wedges scaled to the disk)."""
        vol = self.grid.cell_volumes
        return float(np.sqrt((vol * self.values**2).sum() / vol.sum() * np.pi))

    def full_disk(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(rho, theta, u)`` on the whole disk, unfolding wedge grids."""
        theta, cols = self.grid.full_disk_angles()
        return self.grid.rho_coords, theta, self.values[:, cols]

    def to_csv(self) -> str:
        """``rho, theta, u`` rows under a header line ``n_r, n_theta, lambda``.

        Rows are theta-major: theta varies slowest.
        """
        rho, theta, u = self.full_disk()
        lines = [f"# n_r={len(rho)} n_theta={len(theta)} lambda={self.lam:.12g}", "rho,theta,u"]
        rho_s = [f"{r:.12g}" for r in rho]
        for j, t in enumerate(theta):
            ts = f"{t:.12g}"
            lines.extend(f"{r},{ts},{v:.12g}" for r, v in zip(rho_s, u[:, j]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def read_field_csv(path) -> tuple[dict, np.ndarray]:
    """Read a dump written by :meth:`SolutionField.write_csv`.

    Returns the header as a dict and the ``(rho, theta, u)`` rows.
    """
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = {k: float(v) for k, v in (item.split("=") for item in header)}
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    return meta, data


@dataclass(frozen=True)
class Conductances:
    """Face coefficients of the finite-volume Laplacian.

    Flux across a face is ``k * (u_right - u_left)``; a row of the operator is
    the net flux into a cell divided by its volume.  ``wall`` is zero on
    insulated faces.
    """

    radial: np.ndarray  # (n_r - 1, n_theta), between rings i and i+1
    angular: np.ndarray  # (n_r, n_theta - 1), between columns j and j+1
    wrap: np.ndarray | None  # (n_r,), between the last and first column
    wall: np.ndarray  # (n_theta,), conducting wall faces
    volume: np.ndarray  # (n_r, n_theta)


@lru_cache(maxsize=16)
def conductances(grid: PolarGrid) -> Conductances:
    R, r = grid.rho_faces, grid.rho_coords
    T, t = grid.theta_faces, grid.theta_coords
    dr, dt = np.diff(R), np.diff(T)
    radial = (R[1:-1] / np.diff(r))[:, None] * dt[None, :]
    angular = (dr / r)[:, None] / np.diff(t)[None, :]
    wrap = None
    if grid.periodic:
        gap = t[0] + (T[-1] - T[0]) - t[-1]
        wrap = dr / r / gap
    # conducting face: flux (0 - u_last) / (1 - r_last), i.e. ghost value -u_last
    wall = np.where(grid.wall_dirichlet, R[-1] * dt / (R[-1] - r[-1]), 0.0)
    return Conductances(radial, angular, wrap, wall, grid.cell_volumes)


def apply_laplacian(grid: PolarGrid, u: np.ndarray) -> np.ndarray:
    """Laplacian of ``u`` (shape ``grid.shape``) evaluated face by face.

    Differencing before scaling keeps round-off proportional to the gradient
    rather than to ``u / h^2``.
    """
    k = conductances(grid)
    net = np.zeros(grid.shape)
    g = k.radial * (u[1:] - u[:-1])
    net[:-1] += g
    net[1:] -= g
    g = k.angular * (u[:, 1:] - u[:, :-1])
    net[:, :-1] += g
    net[:, 1:] -= g
    if k.wrap is not None:
        g = k.wrap * (u[:, 0] - u[:, -1])
        net[:, -1] += g
        net[:, 0] -= g
    net[-1] -= k.wall * u[-1]
    return net / k.volume


@lru_cache(maxsize=16)
def laplacian(grid: PolarGrid) -> sp.csr_matrix:
    """Sparse matrix of :func:`apply_laplacian` (radial-major unknown order)."""
    n_r, n_t = grid.shape
    k = conductances(grid)
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def couple(a, b, c):
        a, b, c = a.ravel(), b.ravel(), c.ravel()
        rows.extend([a, a, b, b])
        cols.extend([a, b, b, a])
        vals.extend([-c, c, -c, c])

    couple(idx[:-1], idx[1:], k.radial)
    couple(idx[:, :-1], idx[:, 1:], k.angular)
    if k.wrap is not None and n_t > 1:
        couple(idx[:, -1], idx[:, 0], k.wrap)
    rows.append(idx[-1])
    cols.append(idx[-1])
    vals.append(-k.wall)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return (sp.diags(1.0 / k.volume.ravel()) @ A).tocsr()


def residual(field: SolutionField) -> np.ndarray:
    """``F(u) = Lap(u) + lam^2 exp(u)`` flattened radial-major."""
    u = field.values
    return (apply_laplacian(field.grid, u) + field.lam_sq * np.exp(u)).ravel()


def jacobian(field: SolutionField) -> sp.csr_matrix:
    """Exact derivative of :func:`residual`: Laplacian plus ``diag(lam^2 exp(u))``."""
    u = field.values.ravel()
    J = laplacian(field.grid) + sp.diags(field.lam_sq * np.exp(u))
    return J.tocsr()


def weighted_laplacian(grid: PolarGrid) -> sp.csr_matrix:
    """Laplacian rows multiplied by the cell volumes; symmetric by construction."""
    return (sp.diags(grid.cell_volumes.ravel()) @ laplacian(grid)).tocsr()
