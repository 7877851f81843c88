"""Simulation and generalization-bound toolkit for federated edge learning
over noisy channels."""
from .bounds import BoundConstants, bound_cfl, bound_dfl, bound_generic, estimate_constants
from .channel import ChannelSpec, sigma_from_snr, transmit
from .data import (ClientPartition, LabeledDataset, MixtureSpec, default_mixture, dirichlet_partition,
                   gen_synthetic, global_test_set, heterogeneity)
from .model import ModelSpec
from .numerics import RngStream
from .topology import Graph, MixingMatrix, build_graph, contraction_check, lam, metropolis_weights
from .trainer import RoundMetrics, RunResult, TrainConfig, evaluate, local_gradient, run_cfl, run_dfl

__version__ = "0.1.0"
