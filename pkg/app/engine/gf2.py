"""
Dense GF(2) helpers on numpy uint8 matrices and packed integer words.

Bit convention: bit j of an integer word is symbol j of the block
(least significant bit first).
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np


def row_echelon(M: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """Row-reduce a binary matrix over GF(2); returns (R, pivot_cols)."""
    R = (np.asarray(M, dtype=np.uint8) % 2).copy()
    m, n = R.shape
    pivot_cols: List[int] = []
    pivot_row = 0
    for col in range(n):
        if pivot_row >= m:
            break
        rows = np.nonzero(R[pivot_row:, col])[0]
        if rows.size == 0:
            continue
        found = pivot_row + int(rows[0])
        if found != pivot_row:
            R[[pivot_row, found]] = R[[found, pivot_row]]
        below = np.nonzero(R[pivot_row + 1:, col])[0] + pivot_row + 1
        R[below] ^= R[pivot_row]
        pivot_cols.append(col)
        pivot_row += 1
    return R, pivot_cols


def rank(M: np.ndarray) -> int:
    M = np.asarray(M)
    if M.size == 0:
        return 0
    return len(row_echelon(M)[1])


def random_full_row_rank(rows: int, cols: int, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    """Uniform random binary matrix, redrawn until it has full row rank."""
    if rows > cols:
        raise ValueError(f"cannot have full row rank with {rows} rows and {cols} columns")
    if rows == 0:
        return np.zeros((0, cols), dtype=np.uint8)
    for _ in range(max_tries):
        M = rng.integers(0, 2, size=(rows, cols), dtype=np.uint8)
        if rank(M) == rows:
            return M
    raise RuntimeError(f"no full-rank {rows}x{cols} matrix after {max_tries} draws")


def int_to_bits(words, width: int) -> np.ndarray:
    """Unpack integer words (any shape) into a trailing axis of `width` bits."""
    w = np.asarray(words, dtype=np.int64)
    return ((w[..., None] >> np.arange(width, dtype=np.int64)) & 1).astype(np.uint8)


def bits_to_int(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    width = b.shape[-1]
    if width == 0:
        return np.zeros(b.shape[:-1], dtype=np.int64)
    return (b << np.arange(width, dtype=np.int64)).sum(axis=-1)


def apply(M: np.ndarray, words, width: int) -> np.ndarray:
    """Syndromes M·w over GF(2) for every word in `words` (any shape)."""
    M = np.asarray(M, dtype=np.int64)
    bits = int_to_bits(words, width).astype(np.int64)
    if M.shape[0] == 0:
        return np.zeros(np.shape(words), dtype=np.int64)
    syn = (bits @ M.T) & 1
    return bits_to_int(syn)


def popcount(words) -> np.ndarray:
    w = np.asarray(words, dtype=np.int64)
    count = np.zeros(w.shape, dtype=np.int64)
    while np.any(w):
        count += w & 1
        w = w >> 1
    return count


def low_mask(width: int) -> int:
    return (1 << width) - 1
