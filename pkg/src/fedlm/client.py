"""Local adaptation on a single device.

One client round is K epochs of mini-batch SGD over the device's
transcripts, starting from the delivered global parameters. The client
reports the parameter difference (start minus end) together with an
aggregation weight, by default the device's total word count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Utterance
from .losses import LossMode, batch_loss, utterance_confidence
from .model import Model
from .seeds import derive_seed

WEIGHT_SCHEMES = ("words", "used_tokens")


@dataclass(frozen=True)
class ClientConfig:
    local_epochs: int = 1
    batch_size: int = 8
    local_lr: float = 1.0
    loss_mode: LossMode = LossMode("all")
    shuffle_seed: int = 0
    # "words" counts every local token; "used_tokens" counts only tokens
    # that survive hard thresholding.
    weight_scheme: str = "words"

    def __post_init__(self):
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")
        if self.local_lr <= 0:
            raise ValueError("local_lr must be positive")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")


@dataclass
class ClientUpdate:
    device_id: int
    delta: np.ndarray  # global params minus locally trained params
    weight: int
    tokens_trained: int
    batches_skipped: int
    mean_loss: float  # mean objective value over stepped batches


@dataclass
class SgdStats:
    tokens_trained: int = 0
    batches_skipped: int = 0
    batches_stepped: int = 0
    loss_sum: float = 0.0


def sgd_epochs(
    model: Model,
    params: np.ndarray,
    utts: Sequence[Utterance],
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    loss_mode: LossMode,
    shuffle_seed: int,
    epoch_offset: int = 0,
) -> SgdStats:
    """Run SGD in place on ``params``; shuffling is keyed per epoch.

    Epoch k uses the stream (shuffle_seed, "epoch", epoch_offset + k), so
    split invocations reproduce a single longer run.
    """
    stats = SgdStats()
    n = len(utts)
    for k in range(epochs):
        rng = np.random.default_rng(derive_seed(shuffle_seed, "epoch", epoch_offset + k))
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = [utts[i] for i in order[start : start + batch_size]]
            bl = batch_loss(model, params, batch, loss_mode)
            if bl.skipped:
                stats.batches_skipped += 1
                continue
            params -= lr * bl.gradient
            stats.tokens_trained += bl.tokens_used
            stats.loss_sum += bl.value
            stats.batches_stepped += 1
    return stats


def client_train(
    model: Model,
    global_params: np.ndarray,
    utts: Sequence[Utterance],
    cfg: ClientConfig,
    device_id: int = 0,
) -> ClientUpdate:
    """Train locally and return the update; ``global_params`` is untouched."""
    if not utts:
        raise ValueError("no local data")
    params = global_params.copy()
    stats = sgd_epochs(
        model,
        params,
        utts,
        epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.local_lr,
        loss_mode=cfg.loss_mode,
        shuffle_seed=cfg.shuffle_seed,
    )
    if cfg.weight_scheme == "words":
        weight = sum(len(u) for u in utts)
    else:
        if cfg.loss_mode.variant == "hard":
            weight = sum(
                len(u) for u in utts if utterance_confidence(u) >= cfg.loss_mode.threshold
            )
        else:
            weight = sum(len(u) for u in utts)
    mean_loss = stats.loss_sum / stats.batches_stepped if stats.batches_stepped else 0.0
    return ClientUpdate(
        device_id=device_id,
        delta=global_params - params,
        weight=weight,
        tokens_trained=stats.tokens_trained,
        batches_skipped=stats.batches_skipped,
        mean_loss=mean_loss,
    )
