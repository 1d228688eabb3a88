"""Three-region oscillator phase-noise spectrum model.

The single-sideband spectrum L(f) of an oscillator is described by three
power-law regions::

    S(f) = K3 / (|f|^3 + gamma^3) + K2 / (f^2 + gamma^2) + K0

with ``K3/f^3`` the -30 dB/decade region (integrated flicker noise),
``K2/f^2`` the -20 dB/decade region (integrated white noise) and ``K0`` the
white floor.  ``gamma`` flattens the cumulative regions at low offsets; it
is the PLL loop bandwidth for a locked oscillator and a small value (1 Hz by
default) for a free-running one.

The levels are L(f) levels: S(f) is a symmetric density, so its integral
over [-1/2T, 1/2T] is the in-band phase variance.  A one-sided estimate
(e.g. a Welch periodogram) of a trace with this spectrum reads ``2 S(f)``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize


class SpectrumError(ValueError):
    """Invalid spectrum parameters or measurement data."""


class UndefinedCornerError(SpectrumError):
    pass


class DegenerateMeasurementError(SpectrumError):
    pass


class FitFailureError(SpectrumError):
    pass


@dataclass(frozen=True)
class OscillatorProfile:
    """Phase-noise levels of an oscillator.

    Attributes
    ----------
    k3 : float
        Level of the 1/f^3 region, rad^2 Hz^2.
    k2 : float
        Level of the 1/f^2 region, rad^2 Hz.
    k0 : float
        White floor, rad^2/Hz.
    gamma : float
        Low cut-off frequency in Hz.
    center_freq_hz : float, optional
        Carrier frequency, informational only.
    """

    k3: float
    k2: float
    k0: float
    gamma: float = 1.0
    center_freq_hz: float | None = None

    def __post_init__(self):
        for name in ("k3", "k2", "k0"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise SpectrumError(f"{name} must be finite and >= 0, got {value!r}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise SpectrumError(f"gamma must be > 0, got {self.gamma!r}")
        if self.k3 == 0 and self.k2 == 0 and self.k0 == 0:
            raise SpectrumError("at least one of k3, k2, k0 must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["center_freq_hz"] is None:
            del d["center_freq_hz"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OscillatorProfile":
        unknown = set(d) - {"k3", "k2", "k0", "gamma", "center_freq_hz"}
        if unknown:
            raise SpectrumError(f"unknown profile fields: {sorted(unknown)}")
        try:
            return cls(
                k3=float(d["k3"]),
                k2=float(d["k2"]),
                k0=float(d["k0"]),
                gamma=float(d.get("gamma", 1.0)),
                center_freq_hz=(None if d.get("center_freq_hz") is None
                                else float(d["center_freq_hz"])),
            )
        except KeyError as exc:
            raise SpectrumError(f"profile is missing field {exc.args[0]!r}") from None

    def scaled(self, k3: float = 1.0, k2: float = 1.0, k0: float = 1.0) -> "OscillatorProfile":
        """Return a copy with each level multiplied by the given factor."""
        return OscillatorProfile(self.k3 * k3, self.k2 * k2, self.k0 * k0,
                                 self.gamma, self.center_freq_hz)


@dataclass(frozen=True)
class SsbMeasurement:
    """Measured SSB phase-noise points, offsets in Hz and levels in dBc/Hz."""

    offsets_hz: tuple[float, ...]
    levels_dbc: tuple[float, ...]

    def __post_init__(self):
        f = np.asarray(self.offsets_hz, dtype=float)
        L = np.asarray(self.levels_dbc, dtype=float)
        if f.ndim != 1 or f.shape != L.shape:
            raise SpectrumError("offsets and levels must be 1-D and of equal length")
        if f.size < 3:
            raise SpectrumError("a measurement needs at least 3 points")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(L))):
            raise SpectrumError("measurement contains non-finite values")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise SpectrumError("offsets must be positive and strictly increasing")
        object.__setattr__(self, "offsets_hz", tuple(float(x) for x in f))
        object.__setattr__(self, "levels_dbc", tuple(float(x) for x in L))

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "SsbMeasurement":
        if len(points) == 0:
            raise SpectrumError("empty measurement")
        f, L = zip(*points)
        return cls(tuple(f), tuple(L))

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.offsets_hz, self.levels_dbc))


def dbc_to_linear(level_dbc):
    return 10.0 ** (np.asarray(level_dbc, dtype=float) / 10.0)


def linear_to_dbc(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise SpectrumError("linear_to_dbc needs strictly positive input")
    return 10.0 * np.log10(x)


def total_psd(profile: OscillatorProfile, f):
    """Evaluate the three-region PSD at offset(s) ``f`` (Hz), rad^2/Hz."""
    f = np.abs(np.asarray(f, dtype=float))
    g = profile.gamma
    return profile.k3 / (f**3 + g**3) + profile.k2 / (f**2 + g**2) + profile.k0


def corner_frequency(profile: OscillatorProfile) -> float:
    """Offset where the 1/f^3 and 1/f^2 asymptotes intersect, K3/K2."""
    if profile.k3 <= 0 or profile.k2 <= 0:
        raise UndefinedCornerError("corner frequency needs k3 > 0 and k2 > 0")
    return profile.k3 / profile.k2


def synthesize_measurement(profile: OscillatorProfile, offsets_hz) -> SsbMeasurement:
    """Sample the model at ``offsets_hz`` as an SSB measurement in dBc/Hz."""
    f = np.asarray(offsets_hz, dtype=float)
    return SsbMeasurement(tuple(f), tuple(linear_to_dbc(total_psd(profile, f))))


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------

class FitResult(NamedTuple):
    profile: OscillatorProfile
    rms_db: float


# A simpler model is preferred when it fits within this margin of the best one.
_PARSIMONY_DB = 0.05
_EXPONENTS = (3, 2, 0)


def _model_db(logk, terms, f, gamma):
    lin = np.zeros_like(f)
    for lk, a in zip(logk, terms):
        k = 10.0**lk
        lin = lin + (k / (f**a + gamma**a) if a else k)
    return 10.0 * np.log10(lin)


def _fit_subset(terms, f, L, gamma):
    lin = dbc_to_linear(L)
    # each term alone must stay below the data, so min(L f^a) bounds its level
    x0 = np.array([np.log10(np.min(lin * (f**a + gamma**a if a else 1.0))) for a in terms])
    best = None
    for shift in (0.0, -0.5, -1.5):
        res = optimize.least_squares(
            lambda x: _model_db(x, terms, f, gamma) - L,
            x0 + shift, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
        rms = float(np.sqrt(np.mean(res.fun**2)))
        if best is None or rms < best[1]:
            best = (res.x, rms)
    return best


def fit_profile(meas: SsbMeasurement, gamma: float = 1.0,
                max_rms_db: float = 3.0) -> FitResult:
    """Least-squares fit of the three-region model to measured SSB points.

    The fit minimises the dB residual with uniform weights.  Every non-empty
    subset of {K3, K2, K0} is fitted in log-level space; excluded levels are
    clamped to zero.  The subset with the lowest residual wins, with ties
    (within 0.05 dB RMS) going to the model with fewer terms.  Offsets below
    ``gamma`` are ignored.

    Raises
    ------
    DegenerateMeasurementError
        Fewer than 3 usable points, or usable offsets span less than a decade.
    FitFailureError
        Best RMS residual exceeds ``max_rms_db``.
    """
    f = np.asarray(meas.offsets_hz)
    L = np.asarray(meas.levels_dbc)
    keep = f >= gamma
    f, L = f[keep], L[keep]
    if f.size < 3:
        raise DegenerateMeasurementError("fewer than 3 points above gamma")
    if f[-1] / f[0] < 10.0 * (1 - 1e-12):
        raise DegenerateMeasurementError("offsets must span at least one decade")

    candidates = []
    for r in (1, 2, 3):
        for terms in itertools.combinations(_EXPONENTS, r):
            logk, rms = _fit_subset(terms, f, L, gamma)
            candidates.append((rms, r, terms, logk))
    best_rms = min(c[0] for c in candidates)
    rms, _, terms, logk = min(
        (c for c in candidates if c[0] <= best_rms + _PARSIMONY_DB),
        key=lambda c: (c[1], c[0]),
    )
    if rms > max_rms_db:
        raise FitFailureError(f"fit residual {rms:.2f} dB exceeds {max_rms_db} dB")
    levels = {a: 10.0**lk for a, lk in zip(terms, logk)}
    profile = OscillatorProfile(levels.get(3, 0.0), levels.get(2, 0.0),
                                levels.get(0, 0.0), gamma)
    return FitResult(profile, rms)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

def read_measurement_csv(path) -> SsbMeasurement:
    """Read a CSV with header ``offset_hz,dbc_per_hz``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"offset_hz", "dbc_per_hz"} <= set(reader.fieldnames):
            raise SpectrumError(f"{path}: expected header 'offset_hz,dbc_per_hz'")
        try:
            points = [(float(row["offset_hz"]), float(row["dbc_per_hz"])) for row in reader]
        except (TypeError, ValueError) as exc:
            raise SpectrumError(f"{path}: bad number ({exc})") from None
    return SsbMeasurement.from_points(points)


def write_measurement_csv(meas: SsbMeasurement, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["offset_hz", "dbc_per_hz"])
        for f, L in meas.points:
            w.writerow([repr(f), repr(L)])


def read_profile_json(path) -> OscillatorProfile:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpectrumError(f"{path}: invalid JSON ({exc})") from None
    return OscillatorProfile.from_dict(data)


def write_profile_json(profile: OscillatorProfile, path) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=2) + "\n", encoding="utf-8")
