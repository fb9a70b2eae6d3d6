"""Study-region data model: geometry, populations, counts, candidate windows.

Input files follow the common surveillance text layout: a geometry file
(`id x y`), a population file (`id [period] population`) and a case file
(`id [period] count`).  Fields are separated by runs of whitespace or a
single comma; lines starting with '#' are ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StudyRegion",
    "CandidateCluster",
    "WindowSet",
    "InputError",
    "load_study_region",
    "distance_matrix",
    "enumerate_windows",
]

_SPLIT = re.compile(r"[,\s]+")


class InputError(ValueError):
    """Malformed or inconsistent input data."""


def _parse_lines(path):
    """Yield (lineno, fields) for every non-comment, non-blank line."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, _SPLIT.split(line)


def _period_sort_key(label):
    try:
        return (0, int(label), label)
    except ValueError:
        return (1, 0, label)


@dataclass(frozen=True)
class StudyRegion:
    """Regions with centroids, per-period populations and case counts.

    ``populations`` and ``cases`` are (n_periods, m) arrays aligned with
    ``ids`` (sorted) and ``periods`` (natural order).
    """

    ids: tuple
    centroids: np.ndarray
    periods: tuple
    populations: np.ndarray
    cases: np.ndarray

    def __post_init__(self):
        ids = tuple(self.ids)
        periods = tuple(self.periods)
        centroids = np.asarray(self.centroids, dtype=float).reshape(len(ids), 2)
        pops = np.asarray(self.populations, dtype=float).reshape(len(periods), len(ids))
        cases = np.asarray(self.cases, dtype=np.int64).reshape(len(periods), len(ids))
        if len(set(ids)) != len(ids):
            raise InputError("duplicate region ids")
        if not np.all(np.isfinite(centroids)):
            raise InputError("non-finite centroid coordinate")
        if not np.all(pops > 0):
            raise InputError("nonpositive population")
        if np.any(cases < 0):
            raise InputError("negative case count")
        for arr in (centroids, pops, cases):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "populations", pops)
        object.__setattr__(self, "cases", cases)

    @property
    def m(self):
        return len(self.ids)

    @property
    def n_periods(self):
        return len(self.periods)

    def period_index(self, period):
        if period is None:
            if self.n_periods != 1:
                raise InputError("period required for multi-period data")
            return 0
        if isinstance(period, (int, np.integer)) and period not in self.periods:
            return int(period)
        try:
            return self.periods.index(period)
        except ValueError:
            raise InputError(f"unknown period {period!r}") from None

    def period_cases(self, period=None):
        return self.cases[self.period_index(period)]

    def period_populations(self, period=None):
        return self.populations[self.period_index(period)]

    def total_cases(self, period=None):
        return int(self.period_cases(period).sum())

    def total_population(self, period=None):
        return float(self.period_populations(period).sum())

    def restrict(self, keep):
        """Sub-region with only the given region indices (sorted)."""
        keep = sorted(set(int(i) for i in keep))
        return StudyRegion(
            ids=tuple(self.ids[i] for i in keep),
            centroids=self.centroids[keep],
            periods=self.periods,
            populations=self.populations[:, keep],
            cases=self.cases[:, keep],
        )


def load_study_region(geo_file, pop_file, cas_file):
    """Load and validate a :class:`StudyRegion` from the three text files."""
    coords = {}
    for lineno, f in _parse_lines(geo_file):
        if len(f) != 3:
            raise InputError(f"{geo_file}:{lineno}: expected 'id x y', got {len(f)} fields")
        try:
            coords[f[0]] = (float(f[1]), float(f[2]))
        except ValueError:
            raise InputError(f"{geo_file}:{lineno}: bad coordinate") from None
    if not coords:
        raise InputError(f"{geo_file}: no regions")

    def read_table(path, value_name, parse):
        out = {}
        for lineno, f in _parse_lines(path):
            if len(f) == 3:
                rid, period, val = f
            elif len(f) == 2:
                rid, period, val = f[0], "__single__", f[1]
            else:
                raise InputError(f"{path}:{lineno}: expected 'id [period] {value_name}'")
            if rid not in coords:
                raise InputError(f"{path}:{lineno}: unknown region id {rid!r}")
            try:
                out[(rid, period)] = parse(val)
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad {value_name} {val!r}") from None
        return out

    pop = read_table(pop_file, "population", float)
    cas = read_table(cas_file, "count", int)
    if not pop:
        raise InputError(f"{pop_file}: no population records")

    periods = sorted({p for _, p in pop} | {p for _, p in cas}, key=_period_sort_key)
    if "__single__" in periods and len(periods) > 1:
        raise InputError("mixed single-period and multi-period records")
    ids = tuple(sorted(coords))
    populations = np.empty((len(periods), len(ids)))
    cases = np.zeros((len(periods), len(ids)), dtype=np.int64)
    for t, period in enumerate(periods):
        for j, rid in enumerate(ids):
            try:
                populations[t, j] = pop[(rid, period)]
            except KeyError:
                raise InputError(
                    f"{pop_file}: missing population for region {rid!r}, period {period!r}"
                ) from None
            cases[t, j] = cas.get((rid, period), 0)
    labels = tuple(p for p in periods) if periods != ["__single__"] else ("all",)
    return StudyRegion(
        ids=ids,
        centroids=np.array([coords[rid] for rid in ids]),
        periods=labels,
        populations=populations,
        cases=cases,
    )


def distance_matrix(sr: StudyRegion) -> np.ndarray:
    """Symmetric matrix of Euclidean centroid distances."""
    diff = sr.centroids[:, None, :] - sr.centroids[None, :, :]
    dm = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(dm, 0.0)
    dm = 0.5 * (dm + dm.T)  # exact symmetry
    dm.setflags(write=False)
    return dm


@dataclass(frozen=True)
class CandidateCluster:
    """A centroid-centred distance ball: center index, member indices, radius."""

    center: int
    members: tuple
    radius: float

    def __post_init__(self):
        members = tuple(int(i) for i in self.members)
        if int(self.center) not in members:
            raise ValueError("center must be a member of its own window")
        object.__setattr__(self, "center", int(self.center))
        object.__setattr__(self, "members", members)

    def member_ids(self, sr: StudyRegion):
        return tuple(sr.ids[i] for i in self.members)


class WindowSet:
    """Deterministic list of candidate windows plus a membership matrix.

    ``membership`` is an (n_windows, m) float array with 1.0 where a region
    belongs to a window, so per-window aggregates are a single matmul.
    """

    def __init__(self, windows, m):
        self.windows = list(windows)
        self.m = m
        mat = np.zeros((len(self.windows), m))
        for r, w in enumerate(self.windows):
            mat[r, list(w.members)] = 1.0
        mat.setflags(write=False)
        self.membership = mat

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __getitem__(self, i):
        return self.windows[i]

    def aggregate(self, values):
        """Per-window sums of a length-m vector (or (k, m) batch)."""
        return np.asarray(values) @ self.membership.T


def enumerate_windows(sr: StudyRegion, dm: np.ndarray, max_fraction: float = 0.5) -> WindowSet:
    """Enumerate circular candidate windows centred at region centroids.

    For each center, regions are sorted by (distance, id) and every prefix
    whose population stays within ``max_fraction`` of the study total is a
    candidate.  The population cap uses populations summed over periods, so
    geometry is enumerated once.  Duplicate member sets are dropped.
    """
    if not 0 < max_fraction <= 1:
        raise ValueError("max_fraction must be in (0, 1]")
    pop = sr.populations.sum(axis=0)
    cap = max_fraction * pop.sum()
    seen = {}
    for center in range(sr.m):
        # center leads even under distance-zero ties (coincident centroids)
        order = [center] + sorted(
            (k for k in range(sr.m) if k != center),
            key=lambda k: (dm[center, k], sr.ids[k]),
        )
        members = []
        total = 0.0
        for k in order:
            members.append(k)
            total += pop[k]
            if total > cap:
                break
            key = tuple(sorted(members))
            if key not in seen:
                seen[key] = CandidateCluster(
                    center=center, members=tuple(members), radius=float(dm[center, k])
                )
    return WindowSet(seen.values(), sr.m)
