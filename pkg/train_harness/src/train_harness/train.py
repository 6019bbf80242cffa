"""Self-supervised training loop: network forward, bridge loss, injected grads.

Per pair: the network predicts (q, t) from the two range images; the bridge
returns the loss value and d(loss)/d(q, t) at that prediction; those
gradients are injected at the network outputs via the surrogate
(q . grad_q + t . grad_t), whose autograd derivative at the outputs equals
the injected vectors exactly. Backpropagation then flows through the network
weights only; normals and correspondences live on the core side and are
never differentiated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from train_harness.bridge_client import BridgeClient, BridgeError
from train_harness.data import ScanPair, pair_input_images
from train_harness.network import PosePredictor, stack_pair


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 3e-4
    # decaying the step late in the run lets Adam settle close to each
    # pair's minimum instead of hovering at its noise floor
    decay_milestones: tuple = (140, 180)
    decay_gamma: float = 1.0 / 3.0
    seed: int = 0
    curve_path: str | None = None  # training-curve table (TSV) destination


def surrogate_loss(q_pred: torch.Tensor, t_pred: torch.Tensor, response: dict):
    """Scalar whose gradients at (q_pred, t_pred) are the bridge gradients."""
    grad_q = torch.tensor(response["grad_q"], dtype=q_pred.dtype)
    grad_t = torch.tensor(response["grad_t"], dtype=t_pred.dtype)
    return (q_pred * grad_q).sum() + (t_pred * grad_t).sum()


def train_overfit(
    dataset_root,
    pairs: list[ScanPair],
    bridge: BridgeClient,
    cfg: TrainConfig = TrainConfig(),
):
    """Overfit the predictor on a fixed set of pairs.

    Returns (model, history) where history[e] is the mean bridge loss over
    pairs at epoch e (epoch 0 is the untrained network).
    """
    torch.manual_seed(cfg.seed)
    model = PosePredictor()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(cfg.decay_milestones), gamma=cfg.decay_gamma
    )

    inputs = [stack_pair(*pair_input_images(dataset_root, pair)) for pair in pairs]

    history = []
    started = time.perf_counter()
    for epoch in range(cfg.epochs + 1):
        epoch_losses = []
        for pair, image_pair in zip(pairs, inputs):
            q_pred, t_pred = model(image_pair)
            try:
                response = bridge.evaluate(
                    pair.curr_id,
                    pair.prev_id,
                    q_pred.detach().numpy().ravel(),
                    t_pred.detach().numpy().ravel(),
                )
            except BridgeError as exc:
                print(f"epoch {epoch}: pair {pair.curr_id}->{pair.prev_id} skipped: {exc}")
                continue
            epoch_losses.append(response["loss_total"])
            if epoch == 0:
                continue  # epoch 0 only measures the untrained network
            optimizer.zero_grad()
            surrogate_loss(q_pred[0], t_pred[0], response).backward()
            optimizer.step()
        if epoch > 0:
            scheduler.step()
        history.append(float(np.mean(epoch_losses)))

    if cfg.curve_path is not None:
        rows = ["epoch\tmean_loss"] + [
            f"{epoch}\t{loss:.10g}" for epoch, loss in enumerate(history)
        ]
        Path(cfg.curve_path).write_text("\n".join(rows) + "\n")

    elapsed = time.perf_counter() - started
    print(
        f"overfit: {len(pairs)} pairs, {cfg.epochs} epochs in {elapsed:.0f}s; "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}"
    )
    return model, history


def predict_pair(model: PosePredictor, dataset_root, pair: ScanPair):
    """(q, t) numpy prediction for one pair."""
    with torch.no_grad():
        q_pred, t_pred = model(stack_pair(*pair_input_images(dataset_root, pair)))
    return q_pred.numpy().ravel(), t_pred.numpy().ravel()
