"""Reproducibility and reporting helpers shared by the experiment harness."""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(root: int, *indices: int) -> int:
    """Splittable seed derivation: one substream per (root, index...) path."""
    s = _mix(root & MASK64)
    for idx in indices:
        s = _mix((s ^ ((idx & MASK64) * 0xD1B54A32D192ED03)) & MASK64)
    return s


def mean_se(samples):
    """Sample mean and its standard error."""
    arr = np.asarray(samples, dtype=float)
    n = len(arr)
    if n < 2:
        return float(arr.mean()) if n else math.nan, math.inf
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(n))


def empirical_pmf(samples, length=None) -> np.ndarray:
    """Occupancy histogram normalised to a pmf."""
    arr = np.asarray(samples, dtype=np.int64)
    hi = int(arr.max()) + 1 if len(arr) else 1
    length = max(hi, length or 1)
    counts = np.bincount(arr, minlength=length)
    return counts / counts.sum()
