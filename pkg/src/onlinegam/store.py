"""Aggregated statistics and the dynamic candidate bandwidth bookkeeping.

Exactly L statistic sets are kept.  After each block, set l is the convex
combination of the previous set whose centroid is closest (L1) to the
block's l-th candidate bandwidth and the block's fresh sub-statistics.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .blockstats import SubStatistics
from .estimate import AdditiveEstimate
from .family import get_family
from .grid import GridSpec, get_kernel

SNAPSHOT_VERSION = 1
_FIELDS = ("U", "V", "T3", "Vb", "T3b", "bT3b")


def candidate_sequence(h_tilde, L: int) -> np.ndarray:
    """Descending candidates ``((L - l + 1) / L)**(1/5) * h_tilde``, shape (L, d)."""
    if L < 1:
        raise ValueError("candidate sequence length must be at least 1")
    h = np.atleast_1d(np.asarray(h_tilde, dtype=float))
    if np.any(h <= 0):
        raise ValueError("bandwidth must be positive")
    factors = ((L - np.arange(L)) / L) ** 0.2
    return factors[:, None] * h[None, :]


def match_index(candidate, centroids) -> int:
    """0-based index of the centroid nearest to ``candidate`` in L1 (lowest on ties)."""
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    if centroids.shape[0] == 0:
        raise ValueError("no centroids")
    dist = np.abs(centroids - np.asarray(candidate, dtype=float)[None, :]).sum(axis=1)
    return int(np.argmin(dist))  # argmin returns the first minimiser


@dataclass
class StatisticsSet:
    """One aggregated set of statistics plus its centroid bandwidth.

    ``rho_inv`` and ``rho_sq`` are the running N-weighted means of the
    merged pseudo-bandwidths raised to -1 and 2.
    """

    U: np.ndarray
    V: np.ndarray
    T3: np.ndarray
    Vb: np.ndarray
    T3b: np.ndarray
    bT3b: np.ndarray
    centroid: np.ndarray
    rho_inv: np.ndarray
    rho_sq: np.ndarray
    hull_lo: np.ndarray
    hull_hi: np.ndarray
    weight: float = 1.0

    @property
    def W(self):
        return self.T3[0]

    @property
    def Wb(self):
        return self.T3b[0]

    @property
    def bWb(self):
        return self.bT3b[0]

    def S(self, j):
        return self.T3[1 + j]

    def Sb(self, j):
        return self.T3b[1 + j]

    def bSb(self, j):
        return self.bT3b[1 + j]


def merge_statistics(prev: StatisticsSet | None, fresh: SubStatistics, w: float) -> StatisticsSet:
    """``(1 - w) * prev + w * fresh`` for every field and the centroid."""
    if not 0.0 < w <= 1.0:
        raise ValueError(f"merge weight must lie in (0, 1], got {w}")
    eta = np.asarray(fresh.eta, dtype=float)
    if prev is None:
        if w != 1.0:
            raise ValueError("first merge must have weight 1")
        return StatisticsSet(*(np.array(getattr(fresh, f)) for f in _FIELDS),
                             centroid=eta.copy(), rho_inv=1.0 / eta, rho_sq=eta**2,
                             hull_lo=eta.copy(), hull_hi=eta.copy())
    merged = []
    for f in _FIELDS:
        a, b = getattr(prev, f), getattr(fresh, f)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch in field {f}: {a.shape} vs {b.shape}")
        merged.append((1.0 - w) * a + w * b)
    return StatisticsSet(
        *merged,
        centroid=(1.0 - w) * prev.centroid + w * eta,
        rho_inv=(1.0 - w) * prev.rho_inv + w / eta,
        rho_sq=(1.0 - w) * prev.rho_sq + w * eta**2,
        hull_lo=np.minimum(prev.hull_lo, eta),
        hull_hi=np.maximum(prev.hull_hi, eta),
        weight=(1.0 - w) * prev.weight + w,
    )


@dataclass
class CandidateState:
    candidates: np.ndarray  # (L, d)
    matches: np.ndarray  # (L,) 0-based indices used at the last merge


@dataclass
class StreamState:
    """Everything an online fit keeps between blocks (size independent of K)."""

    grid: GridSpec
    family: str
    kernel: str
    L: int
    degree: int = 1
    K: int = 0
    N: int = 0
    estimate: AdditiveEstimate | None = None
    sets: list[StatisticsSet] = field(default_factory=list)
    candidates: CandidateState | None = None

    @property
    def centroids(self) -> np.ndarray:
        return np.array([s.centroid for s in self.sets])


def advance(state: StreamState, subs: list[SubStatistics], estimate: AdditiveEstimate,
            n: int) -> StreamState:
    """Merge one block's sub-statistics for all L candidates into the store."""
    if len(subs) != state.L:
        raise ValueError(f"expected {state.L} sub-statistics, got {len(subs)}")
    N = state.N + n
    w = n / N
    eta = np.array([s.eta for s in subs])
    if state.sets:
        old = state.centroids
        matches = np.array([match_index(e, old) for e in eta])
        sets = [merge_statistics(state.sets[m], s, w) for m, s in zip(matches, subs)]
    else:
        matches = np.arange(state.L)
        sets = [merge_statistics(None, s, 1.0) for s in subs]
    return StreamState(state.grid, state.family, state.kernel, state.L, state.degree,
                       state.K + 1, N, estimate, sets, CandidateState(eta, matches))


# -- snapshot -----------------------------------------------------------------

def state_to_arrays(state: StreamState, prefix: str = "") -> tuple[dict, dict]:
    meta = {
        "version": SNAPSHOT_VERSION,
        "grid_points": state.grid.points,
        "d": state.grid.d,
        "family": state.family,
        "kernel": state.kernel,
        "L": state.L,
        "degree": state.degree,
        "K": state.K,
        "N": state.N,
        "has_estimate": state.estimate is not None,
    }
    arrays = {}
    if state.estimate is not None:
        e = state.estimate
        arrays[prefix + "est_intercept"] = np.array(e.intercept)
        arrays[prefix + "est_components"] = e.components
        arrays[prefix + "est_derivatives"] = e.derivatives
        arrays[prefix + "est_bandwidth"] = e.bandwidth
    for i, s in enumerate(state.sets):
        for f in _FIELDS + ("centroid", "rho_inv", "rho_sq", "hull_lo", "hull_hi"):
            arrays[f"{prefix}set{i}_{f}"] = getattr(s, f)
        arrays[f"{prefix}set{i}_weight"] = np.array(s.weight)
    if state.candidates is not None:
        arrays[prefix + "candidates"] = state.candidates.candidates
        arrays[prefix + "matches"] = state.candidates.matches
    return meta, arrays


def state_from_arrays(meta: dict, arrays, prefix: str = "") -> StreamState:
    if meta.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {meta.get('version')}")
    grid = GridSpec(meta["grid_points"], meta["d"])
    get_family(meta["family"])
    get_kernel(meta["kernel"])
    est = None
    if meta["has_estimate"]:
        est = AdditiveEstimate(float(arrays[prefix + "est_intercept"]),
                               arrays[prefix + "est_components"],
                               arrays[prefix + "est_derivatives"],
                               arrays[prefix + "est_bandwidth"])
    sets = []
    i = 0
    while f"{prefix}set{i}_U" in arrays:
        kw = {f: np.array(arrays[f"{prefix}set{i}_{f}"])
              for f in _FIELDS + ("centroid", "rho_inv", "rho_sq", "hull_lo", "hull_hi")}
        sets.append(StatisticsSet(**kw, weight=float(arrays[f"{prefix}set{i}_weight"])))
        i += 1
    cand = None
    if prefix + "candidates" in arrays:
        cand = CandidateState(np.array(arrays[prefix + "candidates"]),
                              np.array(arrays[prefix + "matches"]))
    return StreamState(grid, meta["family"], meta["kernel"], meta["L"], meta["degree"],
                       meta["K"], meta["N"], est, sets, cand)


def save_snapshot(path, states: dict[str, StreamState], extra: dict | None = None,
                  extra_arrays: dict | None = None) -> None:
    """Write named stream states (and optional extras) to one ``.npz`` file."""
    metas = {}
    arrays = {}
    for name, st in states.items():
        m, a = state_to_arrays(st, prefix=f"{name}/")
        metas[name] = m
        arrays.update(a)
    for k, v in (extra_arrays or {}).items():
        arrays["extra/" + k] = np.asarray(v)
    header = {"version": SNAPSHOT_VERSION, "states": metas, "extra": extra or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez_compressed(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_snapshot(path) -> tuple[dict[str, StreamState], dict, dict]:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(arrays.pop("__meta__").tobytes().decode())
    if header.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {header.get('version')}")
    states = {name: state_from_arrays(meta, arrays, prefix=f"{name}/")
              for name, meta in header["states"].items()}
    extra_arrays = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return states, header["extra"], extra_arrays
