"""Unit-energy symbol constellations and minimum-distance detection."""
from __future__ import annotations

import numpy as np


def qam(order: int) -> np.ndarray:
    """Square QAM with unit average energy."""
    side = int(round(np.sqrt(order)))
    if side * side != order or side < 2:
        raise ValueError(f"square QAM needs a perfect-square order, got {order}")
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    return normalize(pts)


def normalize(points) -> np.ndarray:
    pts = np.asarray(points, dtype=complex).ravel()
    if pts.size < 2:
        raise ValueError("a constellation needs at least two points")
    energy = np.mean(np.abs(pts) ** 2)
    if energy <= 0:
        raise ValueError("constellation has zero energy")
    return pts / np.sqrt(energy)


NAMED = {"QPSK": 4, "QAM16": 16, "QAM64": 64}


def get(spec) -> np.ndarray:
    """Constellation from a name (``QPSK``, ``QAM16``, ``QAM64``) or a point list."""
    if isinstance(spec, str):
        key = spec.upper().replace("-", "")
        if key.startswith("16QAM") or key.startswith("64QAM"):
            key = "QAM" + key[:2]
        if key not in NAMED:
            raise ValueError(f"unknown constellation {spec!r}")
        return qam(NAMED[key])
    pts = np.asarray(spec)
    if pts.ndim == 2 and pts.shape[1] == 2:
        pts = pts[:, 0] + 1j * pts[:, 1]
    return normalize(pts)


def detect(z: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the nearest constellation point for each sample of ``z``."""
    return np.argmin(np.abs(z[..., None] - points) ** 2, axis=-1)
