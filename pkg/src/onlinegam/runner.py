"""Stream driver: bandwidth selection plus the main online fit, with snapshots."""
from __future__ import annotations

import numpy as np

from .bandwidth import FixedBandwidth, OnlineBandwidthSelector, PilotState, ScheduleBandwidth
from .blockstats import DataBlock
from .family import get_family
from .grid import GridSpec, get_kernel
from .solver import SolverConfig, process_block
from .store import StreamState, load_snapshot, save_snapshot


class OnlineGAM:
    """Online smooth backfitting fit fed one block at a time.

    ``bandwidth`` is ``"pilot"`` (plug-in from online pilots), a positive
    scalar or d-vector (fixed) or a (K, d) array (per-block schedule).
    """

    def __init__(self, grid: GridSpec, family="poisson-log", kernel="epanechnikov", L: int = 10,
                 bandwidth="pilot", G: float = 0.5, R: float = 0.5, L_pilot: int = 10,
                 solver: SolverConfig | None = None):
        self.grid = grid
        self.family = get_family(family).name
        self.kernel = get_kernel(kernel).name
        self.solver = solver or SolverConfig()
        if L < 1 or L_pilot < 1:
            raise ValueError("candidate sequence lengths must be at least 1")
        self.state = StreamState(grid, self.family, self.kernel, L, degree=1)
        if isinstance(bandwidth, str):
            if bandwidth != "pilot":
                raise ValueError(f"unknown bandwidth mode {bandwidth!r}")
            self.selector = OnlineBandwidthSelector(grid, self.family, self.kernel, G, R,
                                                    L_pilot, self.solver)
        else:
            arr = np.asarray(bandwidth, dtype=float)
            if arr.ndim == 2:
                self.selector = ScheduleBandwidth(arr, grid.d)
            else:
                self.selector = FixedBandwidth(arr, grid.d)

    @property
    def estimate(self):
        return self.state.estimate

    @property
    def K(self) -> int:
        return self.state.K

    def partial_fit(self, block: DataBlock) -> dict:
        """Process one block; returns a diagnostics record."""
        if block.d != self.grid.d:
            raise ValueError(f"block has {block.d} covariates, expected {self.grid.d}")
        block.check(self.family)
        report = self.selector.update(block)
        self.state, diag, _ = process_block(self.state, block, report.h, self.solver)
        rec = diag.as_record()
        rec["bandwidth_report"] = report.as_record()
        return rec

    def fit(self, blocks):
        """Process an iterable of blocks; yields one record per block."""
        for block in blocks:
            yield self.partial_fit(block)

    # -- persistence --------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        sel = self.selector
        states = {"main": self.state}
        meta = {"mode": sel.mode, "solver": vars(self.solver), "user": extra or {}}
        arrays = {}
        if isinstance(sel, OnlineBandwidthSelector):
            p = sel.pilot
            states["sigma"] = p.sigma
            states["theta"] = p.theta
            meta.update(G=p.G, R=p.R, N=p.N, dispersion_sum=p.dispersion_sum, h_max=sel.h_max)
            arrays.update(density=p.density, numerator=p.numerator)
        else:
            meta.update(K=sel.K, N=sel.N)
            arrays["h"] = sel.h
            if isinstance(sel, ScheduleBandwidth):
                arrays["schedule"] = sel.schedule
        save_snapshot(path, states, meta, arrays)

    @classmethod
    def load(cls, path) -> tuple["OnlineGAM", dict]:
        states, meta, arrays = load_snapshot(path)
        main = states["main"]
        solver = SolverConfig(**meta["solver"])
        mode = meta["mode"]
        if mode == "pilot":
            bw = "pilot"
        elif mode == "schedule":
            bw = arrays["schedule"]
        else:
            bw = arrays["h"]
        kw = {}
        if mode == "pilot":
            kw = dict(G=meta["G"], R=meta["R"], L_pilot=states["sigma"].L)
        obj = cls(main.grid, main.family, main.kernel, main.L, bw, solver=solver, **kw)
        obj.state = main
        if mode == "pilot":
            obj.selector.h_max = meta["h_max"]
            obj.selector.pilot = PilotState(states["sigma"], states["theta"],
                                            np.array(arrays["density"]),
                                            np.array(arrays["numerator"]),
                                            meta["dispersion_sum"], meta["N"],
                                            meta["G"], meta["R"])
        else:
            obj.selector.K = meta["K"]
            obj.selector.N = meta["N"]
            obj.selector.h = np.array(arrays["h"])
        return obj, meta["user"]
