"""Modified Bayesian Cramer-Rao bound on phase tracking and the EVM it implies.

For a block of N symbols with unit average energy the Bayesian information
matrix is ``B = (2 SNR) I + C^-1``.  Its inverse diagonal bounds the
per-symbol residual phase variance, and a Gaussian residual of variance
``s2`` yields ``EVM = sqrt(2 (1 - exp(-s2/2)))``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import constellation as const
from .spectrum import OscillatorProfile
from .statistics import (
    DEFAULT_INIT_VAR,
    PriorCovariance,
    SingularCovarianceError,
    _cholesky_with_jitter,
    build_covariance,
)


@dataclass(frozen=True)
class LinkConfig:
    symbol_rate: float
    snr_db: float
    block_len: int
    constellation: str | tuple = "QAM16"
    pilot_fraction: float = 0.1

    def __post_init__(self):
        if not self.symbol_rate > 0:
            raise ValueError("symbol_rate must be > 0")
        if int(self.block_len) != self.block_len or self.block_len < 1:
            raise ValueError("block_len must be a positive integer")
        if not 0 < self.pilot_fraction <= 1:
            raise ValueError("pilot_fraction must lie in (0, 1]")
        if self.pilot_fraction * self.block_len < 1 - 1e-12:
            raise ValueError("pilot_fraction * block_len must be >= 1")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        const.get(self.constellation)  # validates

    @property
    def T(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def points(self) -> np.ndarray:
        return const.get(self.constellation)

    def n_pilots(self) -> int:
        return max(1, int(math.ceil(self.pilot_fraction * self.block_len - 1e-9)))

    def pilot_indices(self) -> np.ndarray:
        """Evenly spaced pilot positions (0-based) from the first to the last symbol."""
        n_p = self.n_pilots()
        if n_p == 1:
            return np.array([0])
        return np.unique(np.round(np.linspace(0, self.block_len - 1, n_p)).astype(int))

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(self.constellation, str):
            pts = const.get(self.constellation)
            d["constellation"] = [[p.real, p.imag] for p in pts]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        c = d.get("constellation", "QAM16")
        if not isinstance(c, str):
            c = tuple(tuple(p) for p in c)
        return cls(float(d["symbol_rate"]), float(d["snr_db"]), int(d["block_len"]),
                   c, float(d.get("pilot_fraction", 0.1)))


@dataclass(frozen=True)
class EvmReport:
    sigma2_eps: np.ndarray
    evm: np.ndarray
    evm_avg: float
    evm_avg_db: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config,
            "sigma2_eps": self.sigma2_eps.tolist(),
            "evm": self.evm.tolist(),
            "evm_avg": self.evm_avg,
            "evm_avg_db": self.evm_avg_db,
        }, indent=2)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "sigma2_eps", "evm"])
            for n, (s, e) in enumerate(zip(self.sigma2_eps, self.evm), start=1):
                w.writerow([n, repr(float(s)), repr(float(e))])


def evm_from_variance(sigma2_eps):
    """EVM of a zero-mean Gaussian phase error with variance ``sigma2_eps``."""
    s = np.asarray(sigma2_eps, dtype=float)
    if np.any(s < 0):
        raise ValueError("variance must be >= 0")
    out = np.sqrt(-2.0 * np.expm1(-0.5 * s))
    return out[()] if out.ndim == 0 else out


def bayesian_information_matrix(cov: PriorCovariance, link: LinkConfig) -> np.ndarray:
    """B = (2 Es / sigma_w^2) I + C^-1 with Es = 1."""
    n = cov.n
    if n != link.block_len:
        raise ValueError(f"covariance is {n}x{n} but block_len is {link.block_len}")
    L, _ = _cholesky_with_jitter(cov.matrix)
    c_inv = linalg.cho_solve((L, True), np.eye(n))
    b = 2.0 * link.snr * np.eye(n) + 0.5 * (c_inv + c_inv.T)
    return b


def mbcrb_diagonal(cov: PriorCovariance, snr: float) -> np.ndarray:
    """Diagonal of B^-1 without forming C^-1.

    With C = L L^T, ``B^-1 = L (I + a L^T L)^-1 L^T`` (a = 2 SNR).  The middle
    matrix has all eigenvalues >= 1, so the initial-phase variance, however
    large, never has to be inverted.
    """
    L, _ = _cholesky_with_jitter(cov.matrix)
    n = L.shape[0]
    a = 2.0 * snr
    m = np.eye(n) + a * (L.T @ L)
    try:
        r = linalg.cholesky(m, lower=False)
    except linalg.LinAlgError:
        raise SingularCovarianceError("information matrix is not positive definite") from None
    # B^-1 = (L R^-1)(L R^-1)^T ; solve R^T Y^T = L^T
    yt = linalg.solve_triangular(r, L.T, trans="T", lower=False)
    return np.einsum("ij,ij->j", yt, yt)


def evm_bound(profile: OscillatorProfile, link: LinkConfig,
              init_var_phi3: float = DEFAULT_INIT_VAR,
              init_var_phi2: float = DEFAULT_INIT_VAR) -> EvmReport:
    """Per-symbol and block-average EVM bound for ``profile`` on ``link``."""
    cov = build_covariance(profile, link.T, link.block_len, init_var_phi3, init_var_phi2)
    s2 = mbcrb_diagonal(cov, link.snr)
    evm = evm_from_variance(s2)
    avg = float(np.mean(evm))
    return EvmReport(
        sigma2_eps=s2,
        evm=evm,
        evm_avg=avg,
        evm_avg_db=20.0 * math.log10(avg) if avg > 0 else -math.inf,
        config={
            "profile": profile.to_dict(),
            "link": link.to_dict(),
            "init_var_phi3": init_var_phi3,
            "init_var_phi2": init_var_phi2,
        },
    )


def evm_gap_db(a: EvmReport, b: EvmReport) -> float:
    """20 log10(evm_avg(a) / evm_avg(b)); positive when ``b`` is better."""
    return 20.0 * math.log10(a.evm_avg / b.evm_avg)


def sweep(profile_fn, link_fn, values: Sequence[float],
          init_var_phi3: float = DEFAULT_INIT_VAR,
          init_var_phi2: float = DEFAULT_INIT_VAR) -> np.ndarray:
    """evm_avg for each ``v`` in ``values`` with ``profile_fn(v)`` and ``link_fn(v)``."""
    return np.array([
        evm_bound(profile_fn(v), link_fn(v), init_var_phi3, init_var_phi2).evm_avg
        for v in values
    ])
