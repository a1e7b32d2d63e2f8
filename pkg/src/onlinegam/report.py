"""Efficiency, replication study and timing comparisons of online vs batch fits."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bandwidth import OnlineBandwidthSelector, batch_bandwidth
from .estimate import AdditiveEstimate
from .grid import GridSpec
from .simulation import SimulationTruth, centred_component, simulate
from .solver import SolverConfig, batch_fit, pool_blocks, process_block
from .store import StreamState

C1, C2 = 0.183, 0.003


def efficiency_lower_bound(L: int) -> float:
    """``(1 + 0.183/L + 0.003/L^2)^{-1}``: guaranteed relative efficiency for L candidates."""
    if L < 1:
        raise ValueError("L must be at least 1")
    return 1.0 / (1.0 + C1 / L + C2 / L**2)


def _centre(values, grid: GridSpec):
    return values - values @ grid.weights


def imse(estimate: AdditiveEstimate, target, grid: GridSpec, centre: bool = True) -> np.ndarray:
    """Per-component integrated squared error against ``target`` (d, M) on [0, 1].

    With ``centre`` both sides are shifted to mean zero over [0, 1] first,
    so only the shape of each component is compared.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    out = np.empty(estimate.d)
    for j in range(estimate.d):
        a, b = estimate.components[j], target[j]
        if centre:
            a, b = _centre(a, grid), _centre(b, grid)
        out[j] = ((a - b) ** 2) @ grid.weights
    return out


@dataclass
class EfficiencyReport:
    L: int
    imse_online: np.ndarray | None
    imse_batch: np.ndarray | None
    eff: np.ndarray | None
    bound: float
    discrepancy: np.ndarray | None = None
    replications: int = 1

    def as_record(self) -> dict:
        rec = {"L": self.L, "bound": self.bound, "replications": self.replications}
        for name in ("imse_online", "imse_batch", "eff", "discrepancy"):
            val = getattr(self, name)
            rec[name] = None if val is None else np.asarray(val).tolist()
        return rec


def efficiency_report(online, batch, grid: GridSpec, L: int, truth=None) -> EfficiencyReport:
    """Replication-averaged IMSE of online and batch fits and their ratio.

    ``online`` and ``batch`` are matching lists of estimates.  ``truth`` is a
    (d, M) array of true components on the grid; without it only the
    online-vs-batch discrepancy is reported.
    """
    online = list(online)
    batch = list(batch)
    if len(online) != len(batch) or not online:
        raise ValueError("need matching, non-empty lists of online and batch fits")
    disc = np.mean([imse(o, b.components, grid) for o, b in zip(online, batch)], axis=0)
    bound = efficiency_lower_bound(L)
    if truth is None:
        return EfficiencyReport(L, None, None, None, bound, disc, len(online))
    io = np.mean([imse(o, truth, grid) for o in online], axis=0)
    ib = np.mean([imse(b, truth, grid) for b in batch], axis=0)
    eff = np.where(io > 0, ib / np.where(io > 0, io, 1.0), 1.0)
    return EfficiencyReport(L, io, ib, eff, bound, disc, len(online))


def simulation_truth_grid(grid: GridSpec) -> np.ndarray:
    return np.stack([centred_component(j, grid.nodes) for j in range(2)])


@dataclass
class ReplicationResult:
    seed: int
    online: dict  # L -> AdditiveEstimate at the final block
    batch: AdditiveEstimate
    h_online: np.ndarray  # (K, d)
    h_batch: np.ndarray  # (d,)
    N: np.ndarray  # (K,)
    seconds: dict = field(default_factory=dict)


def replicate(seed: int, K: int, Ls=(10,), grid: GridSpec | None = None, G: float = 0.5,
              R: float = 0.5, L_pilot: int = 10, solver: SolverConfig | None = None,
              kernel: str = "epanechnikov") -> ReplicationResult:
    """One replication of the simulation study.

    The pilot fits and the bandwidth sequence are shared by every L; only
    the main fit is repeated per L.  The batch competitor is fitted once on
    all K blocks at its own plug-in bandwidth.
    """
    grid = grid or GridSpec(41, 2)
    solver = solver or SolverConfig()
    family = "poisson-log"
    selector = OnlineBandwidthSelector(grid, family, kernel, G, R, L_pilot, solver)
    states = {L: StreamState(grid, family, kernel, L) for L in Ls}
    seconds = {L: 0.0 for L in Ls}
    blocks, hs, Ns = [], [], []
    for block in simulate(seed, K):
        blocks.append(block)
        rep = selector.update(block)
        hs.append(rep.h)
        Ns.append(rep.N)
        for L in Ls:
            states[L], diag, _ = process_block(states[L], block, rep.h, solver)
            seconds[L] += diag.seconds
    pooled = pool_blocks(blocks)
    hb = batch_bandwidth(pooled, grid, family, kernel, G, R, solver)
    fit, _ = batch_fit(pooled, hb.h, grid, family, kernel, 1, solver)
    return ReplicationResult(seed, {L: s.estimate for L, s in states.items()}, fit,
                             np.array(hs), hb.h, np.array(Ns), seconds)


def study_efficiency(results, grid: GridSpec) -> dict:
    """EfficiencyReport per L from a list of ReplicationResult."""
    truth = simulation_truth_grid(grid)
    Ls = sorted(results[0].online)
    return {L: efficiency_report([r.online[L] for r in results], [r.batch for r in results],
                                 grid, L, truth) for L in Ls}


def bandwidth_errors(results, checkpoints, kernel: str = "epanechnikov") -> dict:
    """|h_online / h* - 1| per replication at each checkpoint K, shape (reps, d)."""
    truth = SimulationTruth()
    out = {}
    for K in checkpoints:
        rows = []
        for r in results:
            hstar = truth.optimal_bandwidth(int(r.N[K - 1]), kernel)
            rows.append(np.abs(r.h_online[K - 1] / hstar - 1.0))
        out[K] = np.array(rows)
    return out


def bench(blocks, grid: GridSpec, family: str, Ls=(10,), batch_every: int = 10,
          bandwidth=None, G: float = 0.5, R: float = 0.5, L_pilot: int = 10,
          solver: SolverConfig | None = None, kernel: str = "epanechnikov",
          batch_at=None) -> list[dict]:
    """Per-block wall times of the online and batch methods on one stream.

    Row kinds (``method`` column):

    * ``online``: main online update for one L at the shared bandwidth;
    * ``pilot``: the shared online bandwidth update (pilot mode only);
    * ``batch``: a full batch refit on all data so far, i.e. its own
      plug-in bandwidth (pilot mode) followed by the fit;
    * ``batch_fit``: the fit part of that refit alone.

    Refits happen every ``batch_every`` blocks (and at block 1), or exactly
    at the block counts in ``batch_at`` when given.
    """
    solver = solver or SolverConfig()
    selector = None
    if bandwidth is None:
        selector = OnlineBandwidthSelector(grid, family, kernel, G, R, L_pilot, solver)
    states = {L: StreamState(grid, family, kernel, L) for L in Ls}
    batch_at = None if batch_at is None else set(batch_at)
    seen = []
    rows = []
    for block in blocks:
        seen.append(block)
        K = len(seen)
        if selector:
            t0 = time.perf_counter()
            h = selector.update(block).h
            rows.append({"K": K, "L": L_pilot, "method": "pilot",
                         "seconds": time.perf_counter() - t0, "N": selector.pilot.N})
        else:
            h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (grid.d,))
        for L in Ls:
            t0 = time.perf_counter()
            states[L], _, _ = process_block(states[L], block, h, solver)
            rows.append({"K": K, "L": L, "method": "online",
                         "seconds": time.perf_counter() - t0, "N": states[L].N})
        due = (K in batch_at) if batch_at is not None else \
            bool(batch_every) and (K % batch_every == 0 or K == 1)
        if due:
            pooled = pool_blocks(seen)
            t0 = time.perf_counter()
            hb = batch_bandwidth(pooled, grid, family, kernel, G, R, solver).h if selector else h
            t1 = time.perf_counter()
            batch_fit(pooled, hb, grid, family, kernel, 1, solver)
            t2 = time.perf_counter()
            rows.append({"K": K, "L": 0, "method": "batch", "seconds": t2 - t0, "N": pooled.n})
            rows.append({"K": K, "L": 0, "method": "batch_fit", "seconds": t2 - t1,
                         "N": pooled.n})
    return rows
