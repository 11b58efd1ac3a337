"""Seeded graph matching with SeedGNN and classical baselines."""

from .assignment import Matching, brute_force_assignment, hungarian_max, matching_accuracy
from .graphs import (CorrelatedPairSpec, Graph, GraphPairInstance, GroundTruth, SeedSet,
                     generate_correlated_er, read_edge_list, sample_seeds, subsample_real_pair,
                     write_edge_list)
from .model import (ModelDims, SeedGnnModel, TrainConfig, forward, load_checkpoint,
                    loss_and_gradients, predict, save_checkpoint, train)

__version__ = "0.1.0"
