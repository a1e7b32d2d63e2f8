"""Online smooth backfitting for generalized additive models on data streams."""
from .bandwidth import BandwidthReport, FixedBandwidth, OnlineBandwidthSelector, batch_bandwidth
from .blockstats import DataBlock, build_block_matrices, build_sub_statistics
from .estimate import AdditiveEstimate
from .family import get_family, quasi_derivatives
from .grid import GridSpec, get_kernel, integrate, kernel_weights
from .io import ingest
from .report import efficiency_lower_bound, efficiency_report
from .runner import OnlineGAM
from .simulation import simulate
from .solver import SolverConfig, batch_fit, process_block
from .store import StreamState, candidate_sequence, match_index

__version__ = "0.1.0"

__all__ = [
    "AdditiveEstimate", "BandwidthReport", "DataBlock", "FixedBandwidth", "GridSpec",
    "OnlineBandwidthSelector", "OnlineGAM", "SolverConfig", "StreamState", "batch_bandwidth",
    "batch_fit", "build_block_matrices", "build_sub_statistics", "candidate_sequence",
    "efficiency_lower_bound", "efficiency_report", "get_family", "get_kernel", "ingest",
    "integrate", "kernel_weights", "match_index", "process_block", "quasi_derivatives", "simulate",
]
