"""Likelihood-ratio scan statistic, null simulation and Monte Carlo p-values.

The statistic is the log of the normalized likelihood ratio comparing the
rate inside a window against the rate outside, gated to zero unless the
inside rate is the higher one.  All work is in log space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .region import CandidateCluster, StudyRegion, WindowSet

__all__ = [
    "ScanResult",
    "log_lr",
    "log_lr_vector",
    "scan",
    "simulate_null_model1",
    "model1_simulator",
    "llr_star_batch",
    "mc_pvalue",
]


def _xlogy(x, y):
    """x*log(y) with the 0*log(0) = 0 convention, vectorized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    mask = x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        np.copyto(out, x * np.log(y), where=mask)
    return out


def log_lr_vector(y_c, n_c, y_g, n_g):
    """Vectorized window log likelihood ratio; zero unless inside rate is higher."""
    y_c = np.asarray(y_c, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    y_g = np.asarray(y_g, dtype=float)
    n_g = np.asarray(n_g, dtype=float)
    y_out = y_g - y_c
    n_out = n_g - n_c
    overall = y_g / n_g
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = y_c / n_c
        outside = np.where(n_out > 0, y_out / np.maximum(n_out, 1e-300), np.inf)
    llr = (
        _xlogy(y_c, inside)
        - _xlogy(y_c, overall)
        + _xlogy(y_out, outside)
        - _xlogy(y_out, overall)
    )
    high = inside > outside
    return np.where(high, np.maximum(llr, 0.0), 0.0)


def log_lr(y_c, n_c, y_g, n_g):
    """Scalar log likelihood ratio for one window (contract-checked)."""
    if not 0 <= y_c <= y_g:
        raise ValueError("require 0 <= Y_C <= Y_G")
    if not 0 < n_c < n_g:
        raise ValueError("require 0 < N_C < N_G (window must be a proper subset)")
    return float(log_lr_vector(y_c, n_c, y_g, n_g))


@dataclass(frozen=True)
class ScanResult:
    """Maximized statistic with primary and non-overlapping secondary clusters."""

    llr_star: float
    primary: CandidateCluster | None
    primary_llr: float
    primary_y: int
    primary_n: float
    secondaries: tuple  # of (cluster, llr, y_c, n_c)
    p_value: float | None = None
    mc_size: int | None = None

    def with_pvalue(self, p, mc_size):
        return ScanResult(
            self.llr_star,
            self.primary,
            self.primary_llr,
            self.primary_y,
            self.primary_n,
            self.secondaries,
            p_value=p,
            mc_size=mc_size,
        )

    def to_dict(self, sr: StudyRegion | None = None):
        def cluster_dict(c, llr, y, n):
            d = {
                "center": c.center,
                "members": list(c.members),
                "Y_C": int(y),
                "N_C": float(n),
                "llr": float(llr),
            }
            if sr is not None:
                d["member_ids"] = list(c.member_ids(sr))
            return d

        return {
            "llr_star": self.llr_star,
            "p_value": self.p_value,
            "M": self.mc_size,
            "primary": None
            if self.primary is None
            else cluster_dict(self.primary, self.primary_llr, self.primary_y, self.primary_n),
            "secondaries": [cluster_dict(c, llr, y, n) for c, llr, y, n in self.secondaries],
        }

    def to_json(self, sr=None, **kwargs):
        return json.dumps(self.to_dict(sr), **kwargs)


def _tie_key(windows, idx):
    w = windows[idx]
    return (len(w.members), tuple(sorted(w.members)))


def scan(sr: StudyRegion, windows: WindowSet, period=None, counts=None) -> ScanResult:
    """Maximize the statistic over windows; report primary and secondaries.

    ``counts`` overrides the stored per-period counts (used for simulated
    data on the same geometry).
    """
    if len(windows) == 0:
        raise ValueError("no candidate windows")
    y = np.asarray(counts if counts is not None else sr.period_cases(period), dtype=float)
    n = sr.period_populations(period)
    y_g = y.sum()
    n_g = n.sum()
    if y_g == 0:
        return ScanResult(0.0, None, 0.0, 0, 0.0, ())
    y_c = windows.aggregate(y)
    n_c = windows.aggregate(n)
    # a window equal to the whole region gets outside rate inf -> gated to 0
    llr = log_lr_vector(y_c, n_c, y_g, n_g)

    best = np.flatnonzero(llr == llr.max())
    primary_idx = min(best, key=lambda i: _tie_key(windows, i))
    order = sorted(range(len(windows)), key=lambda i: (-llr[i],) + _tie_key(windows, i))
    taken = set(windows[primary_idx].members)
    secondaries = []
    for i in order:
        if i == primary_idx or llr[i] <= 0:
            continue
        members = set(windows[i].members)
        if members & taken:
            continue
        taken |= members
        secondaries.append((windows[i], float(llr[i]), int(y_c[i]), float(n_c[i])))
    return ScanResult(
        llr_star=float(llr[primary_idx]),
        primary=windows[primary_idx],
        primary_llr=float(llr[primary_idx]),
        primary_y=int(y_c[primary_idx]),
        primary_n=float(n_c[primary_idx]),
        secondaries=tuple(secondaries),
    )


def simulate_null_model1(sr: StudyRegion, period=None, seed=None, size=1):
    """Multinomial redistribution of the observed total, conditional on Y_G."""
    rng = np.random.default_rng(seed)
    n = sr.period_populations(period)
    y_g = sr.total_cases(period)
    counts = rng.multinomial(y_g, n / n.sum(), size=size)
    return counts[0] if size == 1 else counts


def model1_simulator(sr: StudyRegion, period=None):
    """Batch simulator closure for :func:`mc_pvalue` (Model I, conditional)."""
    n = sr.period_populations(period)
    p = n / n.sum()
    y_g = sr.total_cases(period)

    def simulate(rng, size):
        return rng.multinomial(y_g, p, size=size)

    return simulate


def llr_star_batch(counts, populations, windows: WindowSet):
    """Max statistic for each row of a (k, m) count matrix, vectorized."""
    counts = np.asarray(counts, dtype=float)
    n = np.asarray(populations, dtype=float)
    y_c = windows.aggregate(counts)  # (k, n_win)
    n_c = windows.aggregate(n)  # (n_win,)
    y_g = counts.sum(axis=1, keepdims=True)
    n_g = n.sum()
    llr = log_lr_vector(y_c, n_c[None, :], y_g, n_g)
    return llr.max(axis=1)


def mc_pvalue(observed_llr, sr: StudyRegion, windows: WindowSet, M=999,
              null_simulator=None, seed=None, period=None, counts=None):
    """Rank-based Monte Carlo p-value r/(M+1) against a pluggable null.

    ``counts`` overrides the stored per-period counts when conditioning the
    default Model I simulator on a simulated dataset's total."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if null_simulator is not None:
        simulate = null_simulator
    else:
        n = sr.period_populations(period)
        y_g = int(np.asarray(counts).sum()) if counts is not None else sr.total_cases(period)
        p = n / n.sum()
        simulate = lambda r, size: r.multinomial(y_g, p, size=size)
    counts = simulate(rng, M)
    sims = llr_star_batch(counts, sr.period_populations(period), windows)
    r = 1 + int(np.count_nonzero(sims >= observed_llr))
    return r / (M + 1)
