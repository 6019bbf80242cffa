"""Toy-scale self-supervised pose training against the scanalign bridge.

The harness owns the predictor (a residual CNN regressing quaternion +
translation from a pair of range images) and the training loop; all loss and
gradient computation happens in the scanalign core, reached exclusively
through its external interfaces: packed .bin scan files, the YAML config
file, CLI subcommands, and the newline-delimited JSON bridge protocol.
"""

from train_harness.network import PosePredictor
from train_harness.bridge_client import BridgeClient, BridgeError
from train_harness.train import TrainConfig, train_overfit

__all__ = [
    "BridgeClient",
    "BridgeError",
    "PosePredictor",
    "TrainConfig",
    "train_overfit",
]
