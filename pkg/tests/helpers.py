"""Shared test utilities: analytic phantoms and coordinate grids."""

import numpy as np

from cbct.geometry import Volume
from cbct.metrics import EMPTY_SPACE, KERNEL, SHELL


def voxel_grid(n, phys_size):
    """Voxel-center coordinates (z, y, x meshgrids) of an n^3 cube."""
    c = (np.arange(n) + 0.5) * (phys_size / n) - phys_size / 2
    return np.meshgrid(c, c, c, indexing="ij")


def ball_volume(geometry, radius, value=0.22, center=(0.0, 0.0, 0.0)):
    """Uniform ball of the given attenuation on the geometry's grid."""
    zz, yy, xx = voxel_grid(geometry.n_voxels, geometry.phys_size)
    r2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2
    return Volume(np.where(r2 <= radius**2, value, 0.0), geometry)


def shell_phantom(n, mu=0.22):
    """Spherical shell with an inner kernel ball, plus its analytic labels.

    Outer shell radius 0.40 n, inner 0.30 n, kernel 0.18 n (voxel units);
    shell intensity mu, kernel 0.3 mu.  Returns (volume array, gold labels).
    """
    c = (np.arange(n) + 0.5) - n / 2
    zz, yy, xx = np.meshgrid(c, c, c, indexing="ij")
    r = np.sqrt(xx**2 + yy**2 + zz**2)
    r_outer, r_inner, r_kernel = 0.40 * n, 0.30 * n, 0.18 * n
    vol = np.zeros((n, n, n))
    vol[(r <= r_outer) & (r >= r_inner)] = mu
    vol[r <= r_kernel] = 0.3 * mu
    gold = np.zeros((n, n, n), dtype=np.uint8)
    gold[(r <= r_outer) & (r >= r_inner)] = SHELL
    gold[(r < r_inner) & (r > r_kernel)] = EMPTY_SPACE
    gold[r <= r_kernel] = KERNEL
    return vol, gold
