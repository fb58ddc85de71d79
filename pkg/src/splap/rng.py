"""Reproducible random streams.

Uniforms come from the counter-based Philox4x32 generator keyed by a 64-bit
seed; Gaussians are produced from them with the Box-Muller transform, so the
output depends only on the seed and not on numpy's normal sampler.
Independent streams for ensemble member ``i`` are keyed by
``mix_seed(base_seed, i)``.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_seed(base_seed: int, index: int) -> int:
    """64-bit stream key for member ``index`` of an ensemble rooted at ``base_seed``."""
    return splitmix64((splitmix64(int(base_seed) & _MASK) + int(index)) & _MASK)


def uniforms(seed: int, n: int) -> np.ndarray:
    """``n`` doubles in [0, 1) from the Philox stream keyed by ``seed``."""
    bitgen = np.random.Philox(key=int(seed) & _MASK)
    return np.random.Generator(bitgen).random(n)


def standard_normals(seed: int, n: int) -> np.ndarray:
    m = (n + 1) // 2
    u = uniforms(seed, 2 * m)
    u1 = 1.0 - u[:m]  # (0, 1]
    u2 = u[m:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]
