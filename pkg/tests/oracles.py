"""Independent reference implementations the package code never touches.

The brute-force compositor loops per pixel over a global depth sort with
no tiling or binning; the SH table spells out the real basis polynomials
with their normalization constants in closed form.
"""

import numpy as np

CUTOFF = 9.0
W_MAX = 0.999


def brute_force_composite(means2d, conic, opacity, values, depth, width, height):
    """O(pixels x gaussians) compositing. Returns [H, W, C+1], alpha last."""
    n, c = values.shape
    order = np.lexsort((np.arange(n), depth))
    out = np.zeros((height, width, c + 1), dtype=np.float64)
    for row in range(height):
        for col in range(width):
            px, py = col + 0.5, row + 0.5
            trans = 1.0
            acc = np.zeros(c + 1)
            for i in order:
                dx = px - means2d[i, 0]
                dy = py - means2d[i, 1]
                rho = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
                if rho > CUTOFF:
                    continue
                w = min(opacity[i] * np.exp(-0.5 * rho), W_MAX)
                acc[:c] += values[i] * (w * trans)
                acc[c] += w * trans
                trans *= 1.0 - w
            out[row, col] = acc
    return out


# real spherical harmonics with closed-form normalizations
_PI = np.pi
SH_TABLE = [
    # l = 0
    lambda x, y, z: 0.5 * np.sqrt(1.0 / _PI) * np.ones_like(x),
    # l = 1 (3DGS sign convention: -y, +z, -x)
    lambda x, y, z: -np.sqrt(3.0 / (4.0 * _PI)) * y,
    lambda x, y, z: np.sqrt(3.0 / (4.0 * _PI)) * z,
    lambda x, y, z: -np.sqrt(3.0 / (4.0 * _PI)) * x,
    # l = 2
    lambda x, y, z: 0.5 * np.sqrt(15.0 / _PI) * x * y,
    lambda x, y, z: -0.5 * np.sqrt(15.0 / _PI) * y * z,
    lambda x, y, z: 0.25 * np.sqrt(5.0 / _PI) * (2.0 * z * z - x * x - y * y),
    lambda x, y, z: -0.5 * np.sqrt(15.0 / _PI) * x * z,
    lambda x, y, z: 0.25 * np.sqrt(15.0 / _PI) * (x * x - y * y),
    # l = 3
    lambda x, y, z: -0.25 * np.sqrt(35.0 / (2.0 * _PI)) * y * (3.0 * x * x - y * y),
    lambda x, y, z: 0.5 * np.sqrt(105.0 / _PI) * x * y * z,
    lambda x, y, z: -0.25 * np.sqrt(21.0 / (2.0 * _PI)) * y * (4.0 * z * z - x * x - y * y),
    lambda x, y, z: 0.25 * np.sqrt(7.0 / _PI) * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
    lambda x, y, z: -0.25 * np.sqrt(21.0 / (2.0 * _PI)) * x * (4.0 * z * z - x * x - y * y),
    lambda x, y, z: 0.25 * np.sqrt(105.0 / _PI) * z * (x * x - y * y),
    lambda x, y, z: -0.25 * np.sqrt(35.0 / (2.0 * _PI)) * x * (x * x - 3.0 * y * y),
]


def sh_color_oracle(sh, direction):
    """Evaluate SH colors from the polynomial table, plus the 0.5 offset."""
    x, y, z = direction[..., 0], direction[..., 1], direction[..., 2]
    n_terms = sh.shape[-1]
    basis = np.stack([SH_TABLE[i](x, y, z) for i in range(n_terms)], axis=-1)
    return np.einsum("...cb,...b->...c", sh, basis) + 0.5
