"""The 10-bin discrete steering scale. Bin 0 is full left (u=-1), bin 9 full right."""
from __future__ import annotations

import numpy as np

N_BINS = 10

BIN_CENTERS = np.linspace(-1.0, 1.0, N_BINS)


def bin_to_u(b: int) -> float:
    """Steering command for a bin index: u = -1 + 2*b/9."""
    if not 0 <= b < N_BINS:
        raise ValueError(f"bin {b} outside 0..{N_BINS - 1}")
    return -1.0 + 2.0 * b / (N_BINS - 1)


def u_to_bin(u: float) -> int:
    """Nearest bin to a continuous command; ties resolve toward the lower index."""
    if not -1.0 <= u <= 1.0:
        raise ValueError(f"steering command {u} outside [-1, 1]")
    return int(np.argmin(np.abs(BIN_CENTERS - u)))


def one_hot(b: int) -> np.ndarray:
    v = np.zeros(N_BINS)
    v[b] = 1.0
    return v
