"""Decentralized proximal SVRG over time-varying networks."""

from .algorithms import (
    ConfigError,
    ErrorBounds,
    ErrorTrace,
    RunConfig,
    construct_errors,
    run_dpsvrg,
    run_dspg,
    run_inexact_prox_svrg,
    run_reference,
)
from .data import load_dataset, synth_dataset
from .metrics import CsvSink, ListSink, MetricsRecord
from .objective import CompositeObjective, Dataset
from .proximal import Regularizer, epsilon_of, prox_inexact, prox_l1, prox_numeric
from .topology import MixingSchedule, consensus_bound, gossip_once, make_schedule, multi_consensus, phi

__version__ = "0.1.0"
