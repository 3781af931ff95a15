"""Decentralized LMMSE equalization simulator.

Centralized and decentralized MMSE equalizers for massive-MIMO uplink
under colored noise, simulated star/daisy-chain baseband-processing
fabrics with exact bandwidth accounting, and a Monte-Carlo SER bench.
"""

from .scenario import (
    ConfigError,
    SystemConfig,
    Realization,
    SymbolBlock,
    balanced_partition,
    derive_powers,
    gen_realization,
    gen_symbol_block,
    sample_covariance,
    constellation,
    modulate,
    slice_symbols,
)
from .equalizers import (
    EqualizerResult,
    lmmse_centralized,
    zf_centralized,
    bdac_mmse,
    sdr_mmse,
    cdr_mmse,
    bcd_solve,
    lrd_sequential,
    mse_matrix,
    local_compression,
    compressed_estimate,
)
from .dbpnet import (
    BandwidthLedger,
    Fabric,
    LocalityError,
    Topology,
    TopologyError,
    make_fabric,
)
from .bench import AlgoSpec, RunSpec, SerReport, run_sweep, paired_ordering_test

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "SystemConfig", "Realization", "SymbolBlock",
    "balanced_partition", "derive_powers", "gen_realization",
    "gen_symbol_block", "sample_covariance", "constellation", "modulate",
    "slice_symbols",
    "EqualizerResult", "lmmse_centralized", "zf_centralized", "bdac_mmse",
    "sdr_mmse", "cdr_mmse", "bcd_solve", "lrd_sequential", "mse_matrix",
    "local_compression", "compressed_estimate",
    "BandwidthLedger", "Fabric", "LocalityError", "Topology",
    "TopologyError", "make_fabric",
    "AlgoSpec", "RunSpec", "SerReport", "run_sweep", "paired_ordering_test",
]
