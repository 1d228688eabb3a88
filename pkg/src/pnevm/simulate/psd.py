"""PSD measurement of generated traces and the matching analytic references."""
from __future__ import annotations

import numpy as np
from scipy import signal

from ..spectrum import OscillatorProfile


def psd_estimate(trace, T: float, segment_len: int, overlap: float = 0.5):
    """Welch PSD with a Hann window, one-sided, density scaling.

    The result integrates over [0, 1/2T] to the variance of the trace.

    Returns
    -------
    freqs, psd : ndarray
        Frequency grid in Hz and PSD in units^2/Hz.
    """
    x = np.asarray(trace, dtype=float)
    if segment_len < 1 or segment_len & (segment_len - 1):
        raise ValueError("segment_len must be a power of two")
    if x.ndim != 1 or x.size < 2 * segment_len:
        raise ValueError("trace must hold at least two segments")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    return signal.welch(x, fs=1.0 / T, window="hann", nperseg=segment_len,
                        noverlap=int(round(overlap * segment_len)),
                        detrend="constant", scaling="density",
                        return_onesided=True)


def sampled_psd(profile: OscillatorProfile, T: float, f, n_alias: int = 2000):
    """One-sided PSD of the model sampled at period ``T``.

    The cumulative regions fold into [0, 1/2T] from every image
    ``f + k/T``; the floor is band-limited and does not alias.  The return
    value is twice the folded symmetric density, the scale a one-sided
    estimate of a sampled trace converges to.
    """
    f = np.abs(np.asarray(f, dtype=float))
    fs = 1.0 / T
    k = np.arange(-n_alias, n_alias + 1)
    fk = np.abs(f[..., None] + k * fs)
    g = profile.gamma
    cum = profile.k3 / (fk**3 + g**3) + profile.k2 / (fk**2 + g**2)
    folded = cum.sum(axis=-1)
    # remainder of the image sum beyond |k| > n_alias, ~ 2 sum_k K/(k fs)^a
    kk = n_alias + 0.5
    folded = folded + 2 * (profile.k2 / (fs**2 * kk) + profile.k3 / (2 * fs**3 * kk**2))
    return 2.0 * (folded + profile.k0)


def loglog_slope(freqs, psd, fmin: float, fmax: float) -> float:
    """Least-squares slope of log10(psd) against log10(f) over [fmin, fmax]."""
    freqs = np.asarray(freqs)
    sel = (freqs >= fmin) & (freqs <= fmax)
    if sel.sum() < 2:
        raise ValueError("fewer than two bins in the fit band")
    return float(np.polyfit(np.log10(freqs[sel]), np.log10(np.asarray(psd)[sel]), 1)[0])
