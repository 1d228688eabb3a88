"""Time-domain phase-noise synthesis.

Each component is white Gaussian noise shaped by ``(1 - z^-1)^(-alpha/2)``:
alpha = 0 for the floor, 2 (a running sum) for the 1/f^2 region and 3 (a
truncated fractional integrator) for the 1/f^3 region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import signal

from ..spectrum import OscillatorProfile

Convention = Literal["one_sided", "two_sided_paper_table"]
_CONVENTION_SCALE = {"one_sided": 1.0, "two_sided_paper_table": 0.5}

BURN_IN_FACTOR = 4


@dataclass(frozen=True)
class PnTrace:
    phi: np.ndarray
    phi0: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray
    T: float
    seed: object = None


def frac_filter_coeffs(order_half: float, length: int) -> np.ndarray:
    """Impulse response of ``(1 - z^-1)^(-d)``, d = ``order_half``, truncated.

    h[0] = 1, h[k] = h[k-1] (k - 1 + d) / k.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    k = np.arange(1, length, dtype=float)
    h = np.empty(length)
    h[0] = 1.0
    h[1:] = np.cumprod((k - 1.0 + order_half) / k)
    return h


def input_variances(profile: OscillatorProfile, T: float,
                    convention: Convention = "one_sided") -> dict[str, float]:
    """Driving-noise variance of each branch.

    ``one_sided`` gives K0/T, 4 pi^2 K2 T and 8 pi^3 K3 T^2, which reproduce
    the increment statistics used by the bound; ``two_sided_paper_table``
    halves all three.
    """
    try:
        s = _CONVENTION_SCALE[convention]
    except KeyError:
        raise ValueError(f"unknown convention {convention!r}") from None
    return {
        "w0": s * profile.k0 / T,
        "w2": s * 4.0 * math.pi**2 * profile.k2 * T,
        "w3": s * 8.0 * math.pi**3 * profile.k3 * T**2,
    }


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_pn(profile: OscillatorProfile, T: float, length: int, seed=None,
                convention: Convention = "one_sided") -> PnTrace:
    """Draw a phase-noise realisation of ``length`` samples at period ``T``.

    The cumulative branches run over ``(1 + BURN_IN_FACTOR) * length``
    samples and keep the last ``length``, so the block starts at whatever
    phase the burn-in accumulated.  ``profile.gamma`` is not modelled here.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    rng = _rng(seed)
    var = input_variances(profile, T, convention)
    total = (1 + BURN_IN_FACTOR) * length

    # fixed draw order keeps traces reproducible whichever levels are zero
    w0 = rng.standard_normal(length)
    w2 = rng.standard_normal(total)
    w3 = rng.standard_normal(total)

    phi0 = math.sqrt(var["w0"]) * w0
    phi2 = math.sqrt(var["w2"]) * np.cumsum(w2)[-length:]
    if profile.k3 > 0:
        h = frac_filter_coeffs(1.5, total)
        phi3 = math.sqrt(var["w3"]) * signal.fftconvolve(w3, h)[total - length:total]
    else:
        phi3 = np.zeros(length)
    return PnTrace(phi0 + phi2 + phi3, phi0, phi2, phi3, T,
                   seed if not isinstance(seed, np.random.Generator) else None)
