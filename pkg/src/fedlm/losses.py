"""Training objectives over a batch of transcribed utterances.

Four variants of batch-mean cross entropy, differing in how per-token
confidence scores enter:

* ``all``          every utterance, unweighted
* ``hard:<c>``     drop utterances whose mean confidence falls below c
* ``utt``          weight each utterance by its mean confidence
* ``token``        weight each scored token by its own confidence

All variants share one accumulation path, so when the weights coincide
(e.g. all confidences 1.0) the values and gradients agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Utterance
from .model import Model

VARIANTS = ("all", "hard", "utt", "token")
DEFAULT_HARD_THRESHOLD = 0.5


@dataclass(frozen=True)
class LossMode:
    variant: str
    threshold: float = DEFAULT_HARD_THRESHOLD

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    def spec(self) -> str:
        if self.variant == "hard":
            return f"hard:{self.threshold:g}"
        return self.variant


def parse_loss_mode(text: str) -> LossMode:
    """Parse 'all' | 'hard:<c>' | 'utt' | 'token' (bare 'hard' uses c=0.5)."""
    text = text.strip().lower()
    if text.startswith("hard"):
        rest = text[4:]
        if rest == "":
            return LossMode("hard")
        if not rest.startswith(":"):
            raise ValueError(f"malformed loss spec {text!r}")
        return LossMode("hard", float(rest[1:]))
    return LossMode(text)


def utterance_confidence(utt: Utterance) -> float:
    """Mean of the utterance's token confidences."""
    if len(utt) < 1:
        raise ValueError("empty utterance")
    return float(np.mean(utt.confidences))


@dataclass
class BatchLoss:
    value: float
    gradient: np.ndarray
    tokens_used: int
    utts_used: int
    skipped: bool = False  # every utterance fell below the hard threshold


def batch_loss(
    model: Model,
    params: np.ndarray,
    batch: Sequence[Utterance],
    mode: LossMode,
) -> BatchLoss:
    """Value and exact gradient of the selected objective on one batch.

    Hard thresholding keeps utterances with mean confidence >= c (ties
    kept) and renormalizes by the retained count, so excluded utterances
    contribute nothing to either the value or the gradient. A batch whose
    every utterance is excluded comes back with ``skipped`` set and a zero
    gradient; callers should not step on it.
    """
    if not batch:
        raise ValueError("empty batch")
    if mode.variant == "hard":
        retained = [u for u in batch if utterance_confidence(u) >= mode.threshold]
    else:
        retained = list(batch)
    if not retained:
        return BatchLoss(0.0, np.zeros(model.n_params), 0, 0, skipped=True)

    n_eff = len(retained)
    value = 0.0
    gradient = np.zeros(model.n_params)
    tokens_used = 0
    for utt in retained:
        trace = model.forward(params, utt.tokens)
        S = trace.n_positions
        base = 1.0 / (n_eff * S)
        if mode.variant == "token":
            conf = utt.confidences
            if S == conf.size + 1:  # scored EOS carries unit confidence
                conf = np.concatenate((conf, [1.0]))
            weights = conf * base
        elif mode.variant == "utt":
            weights = np.full(S, utterance_confidence(utt) * base)
        else:
            weights = np.full(S, base)
        value += float(np.dot(weights, -trace.log_probs))
        gradient += model.backward(trace, weights)
        tokens_used += S
    return BatchLoss(value, gradient, tokens_used, n_eff)
