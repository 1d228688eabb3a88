"""MAP phase-noise estimation with pilots and decision feedback."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .. import constellation as const
from ..statistics import PriorCovariance, _cholesky_with_jitter


class ConvergenceError(RuntimeError):
    pass


def prior_precision(cov: PriorCovariance) -> np.ndarray:
    """C^-1 via Cholesky (jitter policy applied)."""
    L, _ = _cholesky_with_jitter(cov.matrix)
    p = linalg.cho_solve((L, True), np.eye(L.shape[0]))
    return 0.5 * (p + p.T)


def objective(phi, y, s, precision, sigma2_w):
    """Log-posterior up to a constant.

    ``sum (2/sigma_w^2) Re{y s* e^{-j phi}} - phi^T C^-1 phi / 2``
    """
    z = y * np.conj(s)
    lik = (2.0 / sigma2_w) * np.real(z * np.exp(-1j * phi)).sum()
    return lik - 0.5 * phi @ (precision @ phi)


def gradient(phi, y, s, precision, sigma2_w):
    z = y * np.conj(s)
    return (2.0 / sigma2_w) * np.imag(z * np.exp(-1j * phi)) - precision @ phi


@dataclass
class MapResult:
    phi: np.ndarray
    decisions: np.ndarray  # symbol used at each position (pilots included)
    newton_steps: int
    outer_passes: int
    converged: bool


def _newton(phi, y, s, precision, sigma2_w, max_newton, tol):
    """Damped Newton ascent at fixed symbols.

    The Hessian's likelihood part is ``-a cos(phi - theta)``; negative
    curvatures are clipped to zero so the step system stays positive
    definite, and steps are halved until the objective does not decrease.
    """
    z = y * np.conj(s)
    a = (2.0 / sigma2_w) * np.abs(z)
    theta = np.angle(z)
    n = phi.size
    f_old = objective(phi, y, s, precision, sigma2_w)
    for step in range(1, max_newton + 1):
        d = phi - theta
        g = -a * np.sin(d) - precision @ phi
        h = precision.copy()
        h[np.diag_indices(n)] += np.maximum(a * np.cos(d), 0.0)
        try:
            delta = linalg.cho_solve(linalg.cho_factor(h, lower=True, check_finite=False), g,
                                     check_finite=False)
        except linalg.LinAlgError:
            delta = g / np.diag(h)
        t = 1.0
        while True:
            cand = phi + t * delta
            f_new = objective(cand, y, s, precision, sigma2_w)
            if f_new >= f_old:
                break
            t *= 0.5
            if t < 1e-10:
                # no ascent left at working precision: stationary point
                return phi, step, True
        phi, f_old = cand, f_new
        if np.max(np.abs(t * delta)) < tol:
            return phi, step, True
    return phi, max_newton, False


def initial_phase(y, s_pilot, pilot_idx, n):
    """Pilot-anchored initial phase track: unwrapped pilot angles, linearly interpolated."""
    ang = np.unwrap(np.angle(y[pilot_idx] * np.conj(s_pilot)))
    if pilot_idx.size == 1:
        return np.full(n, ang[0])
    return np.interp(np.arange(n), pilot_idx, ang)


def tracking_phase(y, s_pilot, pilot_idx, points, gain=0.3, reverse=False):
    """Decision-directed first-order tracker, re-anchored on every pilot."""
    n = y.size
    known = dict(zip(pilot_idx.tolist(), s_pilot))
    order = range(n - 1, -1, -1) if reverse else range(n)
    anchor = pilot_idx[-1] if reverse else pilot_idx[0]
    phase = np.angle(y[anchor] * np.conj(known[anchor]))
    track = np.empty(n)
    for i in order:
        z = y[i] * np.exp(-1j * phase)
        ref = known.get(i)
        if ref is None:
            ref = points[np.argmin(np.abs(z - points))]
        phase = phase + gain * np.angle(z * np.conj(ref))
        track[i] = phase
    return track


def joint_log_posterior(phi, y, s, precision, sigma2_w):
    """Log-posterior of (phase, symbols) including the symbol-energy term."""
    return (-np.sum(np.abs(y - s * np.exp(1j * phi)) ** 2) / sigma2_w
            - 0.5 * phi @ (precision @ phi))


def _refine(phi, y, s, unknown, points, precision, sigma2_w, max_outer, max_newton, tol):
    """Alternate Newton ascent in phase with re-detection of the unknown symbols."""
    total_steps = 0
    s = s.copy()
    if unknown.any():
        s[unknown] = points[const.detect(y[unknown] * np.exp(-1j * phi[unknown]), points)]
    for outer in range(1, max_outer + 1):
        phi, steps, ok = _newton(phi, y, s, precision, sigma2_w, max_newton, tol)
        total_steps += steps
        if not ok:
            return MapResult(phi, s, total_steps, outer, False)
        if not unknown.any():
            return MapResult(phi, s, total_steps, outer, True)
        new = points[const.detect(y[unknown] * np.exp(-1j * phi[unknown]), points)]
        if np.array_equal(new, s[unknown]):
            return MapResult(phi, s, total_steps, outer, True)
        s[unknown] = new
    return MapResult(phi, s, total_steps, max_outer, False)


def map_estimate(y, pilot_idx, s_pilot, cov: PriorCovariance | None, sigma2_w: float,
                 points=None, precision=None, max_outer: int = 10,
                 max_newton: int = 50, tol: float = 1e-9) -> MapResult:
    """Maximise the phase posterior of a received block.

    With fixed symbols the objective is
    ``sum (2/sigma_w^2) Re{y s* e^{-j phi}} - phi^T C^-1 phi / 2``, climbed by
    damped Newton.  Unknown symbols are replaced by hard decisions after each
    Newton solve until the decisions stop changing.  The loop is started from
    the interpolated pilot phases and from forward and backward
    decision-directed tracks; the converged start with the highest joint
    posterior is returned.

    Parameters
    ----------
    y : complex ndarray
        Received samples.
    pilot_idx, s_pilot : ndarray
        Positions and values of the known symbols.
    cov : PriorCovariance
        Prior of the phase vector; ``precision`` may be passed instead to
        reuse a factorisation across blocks.
    sigma2_w : float
        Complex AWGN variance.
    points : ndarray, optional
        Constellation used to decide the unknown symbols.  Required unless
        every symbol is a pilot.
    """
    y = np.asarray(y, dtype=complex)
    n = y.size
    pilot_idx = np.asarray(pilot_idx, dtype=int)
    s_pilot = np.asarray(s_pilot, dtype=complex)
    if pilot_idx.size == 0:
        raise ValueError("at least one pilot is required")
    if precision is None:
        if cov is None or cov.n != n:
            raise ValueError("covariance dimension must match the block length")
        precision = prior_precision(cov)
    unknown = np.ones(n, dtype=bool)
    unknown[pilot_idx] = False
    if unknown.any() and points is None:
        raise ValueError("constellation points are needed for decision feedback")

    s0 = np.zeros(n, dtype=complex)
    s0[pilot_idx] = s_pilot
    starts = [initial_phase(y, s_pilot, pilot_idx, n)]
    if unknown.any():
        starts.append(tracking_phase(y, s_pilot, pilot_idx, points))
        starts.append(tracking_phase(y, s_pilot, pilot_idx, points, reverse=True))

    best, best_val = None, -np.inf
    for phi0 in starts:
        res = _refine(phi0, y, s0, unknown, points, precision, sigma2_w,
                      max_outer, max_newton, tol)
        if not res.converged:
            continue
        val = joint_log_posterior(res.phi, y, res.decisions, precision, sigma2_w)
        if val > best_val:
            best, best_val = res, val
    if best is None:
        return res
    return best
