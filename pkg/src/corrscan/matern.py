"""Matérn covariance, covariance assembly, Cholesky factors and GRF simulation."""

from __future__ import annotations

import re as _re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky as _scipy_cholesky
from scipy.special import gamma as _gamma, kv as _kv

__all__ = [
    "MaternParams",
    "CovFactor",
    "NotPositiveDefiniteError",
    "matern_cov",
    "build_cov",
    "cholesky",
    "simulate_grf",
]

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class MaternParams:
    """Marginal std. dev. sigma, range rho (map units), smoothness nu."""

    sigma: float
    rho: float
    nu: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "rho", "nu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


class NotPositiveDefiniteError(LinAlgError):
    def __init__(self, minor_index, jitter_tried):
        self.minor_index = minor_index
        self.jitter_tried = jitter_tried
        super().__init__(
            f"covariance not positive definite (leading minor {minor_index}) "
            f"even with jitter {jitter_tried:g}"
        )


def matern_cov(d, p: MaternParams, scaled_range_form: bool = False):
    """Matérn covariance at distance(s) d >= 0.

    Standard form: sigma^2 / (2^(nu-1) Gamma(nu)) * (d/rho)^nu * K_nu(d/rho),
    with value sigma^2 at d = 0.  ``scaled_range_form`` inserts a nu^(1/2)
    factor inside the power term only (sensitivity variant; identical at
    nu = 1).
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    u = d / p.rho
    scale = p.sigma**2 / (2 ** (p.nu - 1) * _gamma(p.nu))
    power = (np.sqrt(p.nu) * u) if scaled_range_form else u
    with np.errstate(invalid="ignore"):
        c = scale * power**p.nu * _kv(p.nu, u)
    c = np.where(d == 0, p.sigma**2, c)
    return float(c) if c.ndim == 0 else c


def build_cov(dm, p: MaternParams, scaled_range_form: bool = False) -> np.ndarray:
    """Covariance matrix over a distance matrix."""
    return matern_cov(np.asarray(dm, dtype=float), p, scaled_range_form)


@dataclass(frozen=True)
class CovFactor:
    """Lower-triangular L with Sigma ~= L L', plus the diagonal jitter applied."""

    L: np.ndarray
    jitter: float

    @property
    def dimension(self):
        return self.L.shape[0]


def cholesky(sigma_mat, jitter_scale=None) -> CovFactor:
    """Cholesky factor with an escalating diagonal-jitter ladder.

    ``jitter_scale`` defaults to the mean diagonal (sigma^2 for a Matérn
    matrix); each ladder rung is jitter_scale * {0, 1e-10, 1e-8, 1e-6}.
    """
    sigma_mat = np.asarray(sigma_mat, dtype=float)
    if jitter_scale is None:
        jitter_scale = float(np.mean(np.diag(sigma_mat))) or 1.0
    minor = None
    for rung in JITTER_LADDER:
        jitter = rung * jitter_scale
        try:
            L = _scipy_cholesky(sigma_mat + jitter * np.eye(sigma_mat.shape[0]), lower=True)
        except LinAlgError as exc:
            # scipy reports the index of the offending leading minor
            m = _re.search(r"\d+", str(exc))
            minor = int(m.group()) if m else -1
            continue
        L = np.tril(L)
        L.setflags(write=False)
        return CovFactor(L=L, jitter=jitter)
    raise NotPositiveDefiniteError(minor, JITTER_LADDER[-1] * jitter_scale)


def simulate_grf(factor: CovFactor, seed=None, size=1):
    """Draw Z = L eps with eps i.i.d. standard normal; (size, m) or (m,)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = rng.standard_normal((size, factor.dimension))
    z = eps @ factor.L.T
    return z[0] if size == 1 else z
