"""Discrete-time phase-noise statistics and the prior covariance of a block.

Sampling at the symbol period T, the cumulative noise components are sums of
stationary increments zeta[n] = phi[n] - phi[n-1].  Their autocorrelations,
together with the in-band white variance, fix the Gaussian prior of the
phase vector of a block of N symbols.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import integrate, linalg

from .spectrum import OscillatorProfile

EULER_GAMMA = 0.5772156649015329
LAMBDA = EULER_GAMMA - 1.5

# 2*pi*gamma*T below this uses the gamma -> 0 limit of the 1/f^2 increments
GAMMA_FREE_THRESHOLD = 1e-8
# gamma*T at or above this invalidates the small-lag expansion of the 1/f^3 form
R_ZETA3_MAX_GAMMA_T = 0.1

DEFAULT_INIT_VAR = 1e4
JITTER_EPS = 1e-10


class StatisticsError(ValueError):
    pass


class ValidityError(StatisticsError):
    """The 1/f^3 closed form is used outside its small gamma*T regime."""


class SingularCovarianceError(StatisticsError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class IncrementAutocorrelation:
    values: np.ndarray  # R[0..M]
    symbol_period: float
    source: Literal["zeta2", "zeta3"]

    def __getitem__(self, m):
        return self.values[np.abs(m)]

    def symmetric(self) -> np.ndarray:
        """Values for lags -M..M."""
        return np.concatenate([self.values[:0:-1], self.values])


@dataclass(frozen=True)
class PriorCovariance:
    matrix: np.ndarray
    init_var_phi3: float
    init_var_phi2: float
    white_var: float
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor, applying the jitter policy if needed."""
        return _cholesky_with_jitter(self.matrix)[0]


def white_pn_variance(k0: float, T: float) -> float:
    """In-band variance of the white floor, K0/T."""
    if k0 < 0 or T <= 0:
        raise StatisticsError("need k0 >= 0 and T > 0")
    return k0 / T


def r_zeta2(k2: float, gamma: float, T: float, m):
    """Autocorrelation of the 1/f^2 increments at integer lag(s) ``m``.

    Locked case (gamma > 0)::

        R[m] = (K2 pi / gamma) (2 e^{-a|m|} - e^{-a|m-1|} - e^{-a|m+1|}),  a = 2 pi gamma T

    For 2 pi gamma T below ``GAMMA_FREE_THRESHOLD`` the free-running limit
    ``4 K2 pi^2 T delta[m]`` is returned instead.
    """
    if T <= 0 or gamma < 0:
        raise StatisticsError("need T > 0 and gamma >= 0")
    m = np.abs(np.asarray(m))
    a = 2.0 * math.pi * gamma * T
    if a < GAMMA_FREE_THRESHOLD:
        out = np.where(m == 0, 4.0 * k2 * math.pi**2 * T, 0.0)
    else:
        # expm1/sinh forms avoid cancellation for small a:
        # m = 0: 2(1 - e^{-a});  m >= 1: e^{-am}(2 - e^{a} - e^{-a}) = -4 e^{-am} sinh^2(a/2)
        out = np.where(
            m == 0,
            (k2 * math.pi / gamma) * (-2.0 * np.expm1(-a)),
            -(k2 * math.pi / gamma) * 4.0 * np.exp(-a * m) * math.sinh(a / 2) ** 2,
        )
    return out[()] if out.ndim == 0 else out


def _log_term(x, gT):
    # Lambda + log(2 pi gamma T |x|); x > 0
    return LAMBDA + np.log(2.0 * math.pi * gT * x)


def r_zeta3(k3: float, gamma: float, T: float, m):
    """Closed-form (small-lag) autocorrelation of the 1/f^3 increments.

    Raises ``ValidityError`` when gamma*T >= 0.1.  Accuracy degrades as
    2 pi gamma T |m| approaches 1; values are not clamped to |R[m]| <= R[0].
    """
    if T <= 0 or gamma <= 0:
        raise StatisticsError("need T > 0 and gamma > 0")
    gT = gamma * T
    if gT >= R_ZETA3_MAX_GAMMA_T:
        raise ValidityError(f"gamma*T = {gT:g} >= {R_ZETA3_MAX_GAMMA_T}; 1/f^3 closed form invalid")
    m = np.abs(np.asarray(m))
    scale = -8.0 * k3 * math.pi**2 * T**2
    mf = m.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        general = (-mf**2 * _log_term(mf, gT)
                   + 0.5 * (mf + 1) ** 2 * _log_term(mf + 1, gT)
                   + 0.5 * (mf - 1) ** 2 * _log_term(np.maximum(mf - 1, 1e-300), gT))
    out = np.where(
        m == 0, _log_term(1.0, gT),
        np.where(m == 1, LAMBDA + math.log(8.0 * math.pi * gT), general),
    ) * scale
    return out[()] if out.ndim == 0 else out


def increment_autocorrelation(profile: OscillatorProfile, T: float, max_lag: int,
                              source: Literal["zeta2", "zeta3"]) -> IncrementAutocorrelation:
    m = np.arange(max_lag + 1)
    if source == "zeta2":
        vals = r_zeta2(profile.k2, profile.gamma, T, m)
    elif source == "zeta3":
        vals = r_zeta3(profile.k3, profile.gamma, T, m)
    else:
        raise StatisticsError(f"unknown source {source!r}")
    return IncrementAutocorrelation(np.asarray(vals, dtype=float), T, source)


def psd_of_increments(component: Literal["k2", "k3"], level: float, gamma: float,
                      T: float, f):
    """PSD of the increment process, S_phi(f) |1 - e^{-j2 pi f T}|^2."""
    f = np.abs(np.asarray(f, dtype=float))
    if component == "k2":
        s = level / (f**2 + gamma**2)
    elif component == "k3":
        s = level / (f**3 + gamma**3)
    else:
        raise StatisticsError(f"unknown component {component!r}")
    return s * 4.0 * np.sin(math.pi * f * T) ** 2


# --------------------------------------------------------------------------
# Quadrature oracle for the 1/f^3 increments
# --------------------------------------------------------------------------

def r_zeta3_oracle(k3: float, gamma: float, T: float, tau: float,
                   rtol: float = 1e-6, max_panels: int = 200_000) -> float:
    """Numerical value of 8 int_0^inf K3/(f^3+gamma^3) sin^2(pi f T) cos(2 pi f tau) df.

    Adaptive Gauss-Kronrod on [0, 10/T], broken at log-spaced points up to
    the first oscillation and at every half period after it.  The tail
    beyond 10/T is summed panel by panel (composite Simpson, one half period
    of the fastest oscillation per panel) until the envelope bound of the
    next panel drops below 1e-9 of the running total, or of the summed
    absolute head panels when cancellation leaves the total near zero.
    """
    if gamma <= 0 or T <= 0:
        raise StatisticsError("need gamma > 0 and T > 0")
    tau = abs(tau)
    fmax = 10.0 / T
    half = 1.0 / (2.0 * (tau + T))  # half period of the fastest cosine

    def integrand(f):
        return 8.0 * k3 / (f**3 + gamma**3) * np.sin(math.pi * f * T) ** 2 * np.cos(2 * math.pi * f * tau)

    lo = min(gamma / 10.0, half / 10.0)
    edges = np.unique(np.concatenate([
        [0.0], np.geomspace(lo, half, 40), np.arange(half, fmax, half), [fmax]]))
    edges = edges[edges <= fmax]
    head = 0.0
    abs_head = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol * 1e-3, limit=200)
        head += val
        abs_head += abs(val)
    if abs_head == 0.0:
        return 0.0

    # Simpson panels over the tail
    n_sub = 16
    tail = 0.0
    a = fmax
    for _ in range(max_panels):
        b = a + half
        x = np.linspace(a, b, n_sub + 1)
        y = integrand(x)
        tail += (b - a) / (3 * n_sub) * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
        a = b
        envelope = 8.0 * k3 / a**3 * half
        # relative to the running total, or to the accumulated absolute value
        # when the result itself is nearly cancelled (long lags)
        if envelope < 1e-9 * max(abs(head + tail), abs_head):
            return head + tail
    raise QuadratureError("tail summation did not converge within the panel budget")


# --------------------------------------------------------------------------
# Covariance assembly
# --------------------------------------------------------------------------

def assemble_increment_covariance(kernel, n: int):
    """S[l, k] = sum_{m=2..l} sum_{m'=2..k} G[m - m'] for l, k = 1..n (1-based).

    ``kernel`` holds G[-(n-1)..(n-1)].  Runs in O(n^2) through two cumulative
    sums over the Toeplitz matrix.  Works for any dtype supporting ``+``,
    including ``object`` arrays of exact rationals.
    """
    kernel = np.asarray(kernel)
    if kernel.shape != (2 * n - 1,):
        raise StatisticsError("kernel must have length 2n-1")
    idx = np.arange(n)
    toeplitz = kernel[(idx[:, None] - idx[None, :]) + (n - 1)]
    toeplitz[0, :] = 0
    toeplitz[:, 0] = 0
    return np.cumsum(np.cumsum(toeplitz, axis=0), axis=1)


def assemble_increment_covariance_bruteforce(kernel, n: int):
    """Reference O(n^4) evaluation of the same double sum."""
    kernel = list(np.asarray(kernel))
    out = np.empty((n, n), dtype=np.asarray(kernel).dtype)
    zero = kernel[0] - kernel[0]
    for l in range(1, n + 1):
        for k in range(1, n + 1):
            s = zero
            for m in range(2, l + 1):
                for mp in range(2, k + 1):
                    s = s + kernel[m - mp + n - 1]
            out[l - 1, k - 1] = s
    return out


def increment_kernel(profile: OscillatorProfile, T: float, n: int) -> np.ndarray:
    """Combined increment autocorrelation G[m], m = -(n-1)..(n-1)."""
    lags = np.arange(-(n - 1), n)
    g = np.zeros(lags.size)
    if profile.k3 > 0:
        g += r_zeta3(profile.k3, profile.gamma, T, lags)
    if profile.k2 > 0:
        g += r_zeta2(profile.k2, profile.gamma, T, lags)
    return g


def build_covariance(profile: OscillatorProfile, T: float, n: int,
                     init_var_phi3: float = DEFAULT_INIT_VAR,
                     init_var_phi2: float = DEFAULT_INIT_VAR) -> PriorCovariance:
    """Prior covariance of the phase of an ``n``-symbol block.

    ``C[l,k] = s3 + s2 + sum_{m=2..l} sum_{m'=2..k} (R3 + R2)[m-m'] + delta[l-k] K0/T``

    Correlations between the initial phase and later increments are left out.
    """
    if n < 1:
        raise StatisticsError("block length must be >= 1")
    if T <= 0:
        raise StatisticsError("T must be positive")
    if init_var_phi3 < 0 or init_var_phi2 < 0:
        raise StatisticsError("initial-phase variances must be >= 0")
    white = white_pn_variance(profile.k0, T)
    c = assemble_increment_covariance(increment_kernel(profile, T, n), n)
    c += init_var_phi3 + init_var_phi2
    c[np.diag_indices(n)] += white
    c = 0.5 * (c + c.T)
    return PriorCovariance(c, init_var_phi3, init_var_phi2, white)


def _cholesky_with_jitter(c: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return linalg.cholesky(c, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    n = c.shape[0]
    jitter = JITTER_EPS * np.trace(c) / n
    try:
        return linalg.cholesky(c + jitter * np.eye(n), lower=True), jitter
    except linalg.LinAlgError:
        raise SingularCovarianceError(
            "prior covariance is not positive definite, even after jitter; "
            "check the profile / gamma / block length combination") from None


def ensure_positive_definite(cov: PriorCovariance) -> PriorCovariance:
    """Return ``cov`` with the jitter policy applied if its Cholesky fails."""
    _, jitter = _cholesky_with_jitter(cov.matrix)
    if jitter == 0.0:
        return cov
    n = cov.n
    return PriorCovariance(cov.matrix + jitter * np.eye(n), cov.init_var_phi3,
                           cov.init_var_phi2, cov.white_var, jitter)


def write_covariance_csv(cov: PriorCovariance, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in cov.matrix:
            w.writerow([repr(float(x)) for x in row])


def write_autocorrelation_csv(acf: IncrementAutocorrelation, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "value"])
        for m, v in enumerate(acf.values):
            w.writerow([m, repr(float(v))])
