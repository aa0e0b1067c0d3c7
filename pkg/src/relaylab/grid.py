"""Periodic square grid and its spectral workspace.

All fields live on an nx-by-ny uniform grid over [0, L)^2 with integer
wavenumbers scaled by 2*pi/L. The workspace precomputes every wavenumber
array the solver and the diagnostics need, so repeated operations share
one set of allocations.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Square periodic grid.

    Attributes:
        nx, ny: grid points per direction (powers of two).
        domain_length: physical side length, 2*pi by default so that
            integer wavenumbers are also physical wavenumbers.
    """

    nx: int = 64
    ny: int = 64
    domain_length: float = 2.0 * np.pi

    def __post_init__(self):
        if not (_is_power_of_two(self.nx) and _is_power_of_two(self.ny)):
            raise ValueError(f"grid dims must be powers of two, got {self.nx}x{self.ny}")
        if self.domain_length <= 0:
            raise ValueError("domain_length must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.domain_length / self.nx

    def coordinates(self):
        """Mesh of (x, y) node coordinates, 'ij' indexing."""
        x = np.arange(self.nx) * (self.domain_length / self.nx)
        y = np.arange(self.ny) * (self.domain_length / self.ny)
        return np.meshgrid(x, y, indexing="ij")


class SpectralWorkspace:
    """Wavenumber arrays and transforms for one Grid.

    Spectral layout is the full complex fft2 grid, axes ordered (x, y).
    The 2/3-rule mask keeps |k| <= floor(n/3) per axis; nonlinear products
    are truncated with it.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        scale = 2.0 * np.pi / grid.domain_length
        kx = scale * np.fft.fftfreq(grid.nx, 1.0 / grid.nx)
        ky = scale * np.fft.fftfreq(grid.ny, 1.0 / grid.ny)
        self.kx = kx[:, None]
        self.ky = ky[None, :]
        self.k2 = self.kx**2 + self.ky**2
        inv_k2 = np.zeros_like(self.k2)
        nonzero = self.k2 > 0
        inv_k2[nonzero] = 1.0 / self.k2[nonzero]
        self.inv_k2 = inv_k2

        cutoff_x = scale * (grid.nx // 3)
        cutoff_y = scale * (grid.ny // 3)
        self.dealias = ((np.abs(self.kx) <= cutoff_x + 1e-12)
                        & (np.abs(self.ky) <= cutoff_y + 1e-12))
        # |k| rounded to the nearest integer shell, for spectrum binning
        self.shell_index = np.rint(np.sqrt(self.k2) / scale).astype(np.int64)
        self.n_shells = max(grid.nx, grid.ny) // 2 + 1

    def fft(self, field):
        return sfft.fft2(field, axes=(-2, -1))

    def ifft(self, spectrum):
        return sfft.ifft2(spectrum, axes=(-2, -1))

    def to_real(self, spectrum):
        """Inverse transform keeping only the real part."""
        return np.real(self.ifft(spectrum))


_workspaces: dict = {}


def workspace_for(grid: Grid) -> SpectralWorkspace:
    """Shared per-grid workspace (grids are frozen, so caching is safe)."""
    ws = _workspaces.get(grid)
    if ws is None:
        ws = SpectralWorkspace(grid)
        _workspaces[grid] = ws
    return ws
