"""Two-dimensional toy problems (X and Y both scalar)."""

from __future__ import annotations

import numpy as np

# a small step keeps the toy flows slow enough to watch them converge
TOY_STEP_SIZE = 0.05

MIXTURE_STD = 0.5
TARGET_MODES = ((-2.0, 1.0), (2.0, -1.0))
INITIAL_MODES = ((-2.0, -1.0), (2.0, 1.0))


def gaussian_mixture(n: int, modes, rng, std: float = MIXTURE_STD) -> np.ndarray:
    """``n`` points split evenly (alternating) between isotropic Gaussian modes."""
    modes = np.asarray(modes, dtype=np.float64)
    comp = np.arange(n) % len(modes)
    return modes[comp] + std * rng.standard_normal((n, modes.shape[1]))


def crossed_mixture(n: int, rng, initial: bool = False) -> np.ndarray:
    """Target mixture, or with ``initial`` the start mixture whose modes sit
    at the same x but opposite y."""
    return gaussian_mixture(n, INITIAL_MODES if initial else TARGET_MODES, rng)


def binary_conditions(n: int) -> np.ndarray:
    return np.where(np.arange(n) % 2 == 0, -1.0, 1.0)


def conditional_gaussian(n: int, rng, mean_scale: float = 2.0, std: float = 0.5):
    """``y`` in {-1, +1} (balanced) and ``x | y ~ N(mean_scale * y, std^2)``."""
    y = binary_conditions(n)
    x = mean_scale * y + std * rng.standard_normal(n)
    return x[:, None], y[:, None]
