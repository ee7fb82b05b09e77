"""Hierarchical federated learning of sparse networks via Beta-aggregated binary masks."""

from .bayes import BetaState, beta_mode, cloud_aggregate, edge_aggregate, reset_due, reset_priors
from .client import ClientState, client_round, compose_probability_mask, evaluate, finalize_model, split_mask
from .comm import CommMeter, CostModel, LinkRecord, payload_bits, round_total
from .config import RunConfig, load_config
from .data import LabeledDataset, load_idx, normalize, quantity_label_partition, synthetic_blobs
from .masknet import (
    ArchitectureSpec,
    apply_mask,
    build_architecture,
    forward,
    init_frozen_weights,
    logistic_transform,
    make_partition,
    sample_binary_mask,
    sgd_step,
)
from .orchestrator import Simulation, run_training
from .topology import Topology, build_topology

__version__ = "0.1.0"
