"""Server side of the federation: cohorts, aggregation, FedAdam, driver.

Each round delivers the current parameters to a sampled cohort, collects
weighted model differences, and applies an Adam-style update with the
averaged difference as pseudo-gradient. When a DP config is present the
deltas are clipped, summed in device order, noised, and averaged
uniformly over the cohort (word-count weights would make sensitivity
unbounded).

Everything is deterministic given the seeds: cohorts are drawn from a
per-round stream, each client's shuffle stream is keyed by (device,
round), and client training may run on a thread pool without affecting
results because updates are reduced in ascending device order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .client import ClientConfig, ClientUpdate, client_train
from .corpus import Utterance
from .errors import DataError
from .model import Model
from .privacy import (
    DEFAULT_ORDERS,
    DpConfig,
    RdpCurve,
    add_noise,
    clip_update,
    rdp_subsampled_gaussian,
)
from .seeds import derive_seed


@dataclass(frozen=True)
class FedAdamConfig:
    global_lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-7
    rounds: int = 1000
    cohort_size: int = 100
    min_device_words: int = 1
    sample_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0 or self.global_lr <= 0:
            raise ValueError("global_lr and eps must be positive")
        if self.rounds < 0 or self.cohort_size < 1 or self.min_device_words < 0:
            raise ValueError("bad rounds/cohort_size/min_device_words")


@dataclass
class ServerState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    round: int = 1

    def __post_init__(self):
        if not (self.params.shape == self.m.shape == self.v.shape):
            raise ValueError("state vectors must share one shape")
        if self.round < 1:
            raise ValueError("round counter starts at 1")


@dataclass
class RoundMetrics:
    round: int
    cohort_size: int
    total_weight: int
    mean_client_loss: float
    max_clipped_norm: float | None = None


@dataclass
class EvalPoint:
    round: int
    train_loss: float | None
    heldout_ppl: float
    epsilon: float | None


def init_server_state(params: np.ndarray) -> ServerState:
    return ServerState(
        params=params.copy(),
        m=np.zeros_like(params),
        v=np.zeros_like(params),
        round=1,
    )


def sample_cohort(
    eligible_ids: Sequence[int], cohort_size: int, round_t: int, seed: int
) -> np.ndarray:
    """Uniform sample without replacement, keyed by (seed, round)."""
    ids = np.sort(np.asarray(eligible_ids, dtype=np.int64))
    if cohort_size > ids.shape[0]:
        raise ValueError(
            f"cohort_size {cohort_size} exceeds {ids.shape[0]} eligible devices"
        )
    rng = np.random.default_rng(derive_seed(seed, "cohort", round_t))
    picked = rng.choice(ids, size=cohort_size, replace=False)
    return np.sort(picked)


def aggregate(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Weighted mean of deltas, summed in ascending device-id order."""
    if not updates:
        raise ValueError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.device_id)
    total_weight = float(sum(u.weight for u in ordered))
    if total_weight <= 0:
        raise ValueError("total update weight is zero")
    acc = np.zeros_like(ordered[0].delta)
    for u in ordered:
        acc += u.weight * u.delta
    return acc / total_weight


def fedadam_step(state: ServerState, delta: np.ndarray, cfg: FedAdamConfig) -> ServerState:
    """One Adam step on the pseudo-gradient; returns a fresh state."""
    t = state.round
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * delta
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * delta * delta
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    params = state.params - cfg.global_lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return ServerState(params=params, m=m, v=v, round=t + 1)


def eligible_devices(
    shards: Mapping[int, Sequence[Utterance]], min_device_words: int
) -> list[int]:
    return sorted(
        d
        for d, utts in shards.items()
        if sum(len(u) for u in utts) >= min_device_words
    )


def run_round(
    model: Model,
    state: ServerState,
    shards: Mapping[int, Sequence[Utterance]],
    client_cfg: ClientConfig,
    server_cfg: FedAdamConfig,
    dp_cfg: DpConfig | None = None,
    *,
    master_seed: int = 0,
    workers: int = 1,
    eligible: Sequence[int] | None = None,
) -> tuple[ServerState, RoundMetrics]:
    t = state.round
    if eligible is None:
        eligible = eligible_devices(shards, server_cfg.min_device_words)
    cohort = sample_cohort(eligible, server_cfg.cohort_size, t, server_cfg.sample_seed)

    def train_one(device: int) -> ClientUpdate:
        cfg = replace(
            client_cfg, shuffle_seed=derive_seed(master_seed, "shuffle", device, t)
        )
        return client_train(model, state.params, shards[device], cfg, device)

    if workers == 1:
        updates = [train_one(int(d)) for d in cohort]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(train_one, (int(d) for d in cohort)))
    updates.sort(key=lambda u: u.device_id)

    max_clipped = None
    if dp_cfg is None:
        delta = aggregate(updates)
    else:
        clipped = [clip_update(u.delta, dp_cfg.clip_norm) for u in updates]
        max_clipped = max(float(np.linalg.norm(c)) for c in clipped)
        total = np.zeros_like(state.params)
        for c in clipped:
            total += c
        noised = add_noise(
            total,
            dp_cfg.clip_norm,
            dp_cfg.noise_multiplier,
            len(clipped),
            derive_seed(dp_cfg.noise_seed, "noise", t),
        )
        delta = noised / len(updates)

    new_state = fedadam_step(state, delta, server_cfg)
    metrics = RoundMetrics(
        round=t,
        cohort_size=len(updates),
        total_weight=sum(u.weight for u in updates),
        mean_client_loss=float(np.mean([u.mean_loss for u in updates])),
        max_clipped_norm=max_clipped,
    )
    return new_state, metrics


@dataclass
class FederationResult:
    state: ServerState
    history: list[EvalPoint]
    rounds: list[RoundMetrics]


def run_federation(
    model: Model,
    init_params: np.ndarray,
    shards: Mapping[int, Sequence[Utterance]],
    heldout: Sequence[Utterance],
    client_cfg: ClientConfig,
    server_cfg: FedAdamConfig,
    dp_cfg: DpConfig | None = None,
    *,
    master_seed: int = 0,
    eval_every: int = 100,
    workers: int = 1,
) -> FederationResult:
    """Run the configured number of rounds with periodic heldout evals."""
    if eval_every < 1:
        raise ValueError("eval_every must be at least 1")
    eligible = eligible_devices(shards, server_cfg.min_device_words)

    per_round_rdp: RdpCurve | None = None
    if dp_cfg is not None and dp_cfg.noise_multiplier > 0:
        per_round_rdp = RdpCurve(
            DEFAULT_ORDERS,
            rdp_subsampled_gaussian(
                dp_cfg.sampling_rate, dp_cfg.noise_multiplier, DEFAULT_ORDERS
            ),
        )

    def epsilon_at(t: int) -> float | None:
        if dp_cfg is None:
            return None
        if t == 0:
            return 0.0
        if per_round_rdp is None:
            return None  # z = 0: no finite guarantee to report
        return per_round_rdp.scaled(t).to_epsilon(dp_cfg.delta)[0]

    state = init_server_state(init_params)
    history = [
        EvalPoint(0, None, model.perplexity(state.params, heldout), epsilon_at(0))
    ]
    round_log: list[RoundMetrics] = []
    window: list[float] = []
    for t in range(1, server_cfg.rounds + 1):
        state, rm = run_round(
            model,
            state,
            shards,
            client_cfg,
            server_cfg,
            dp_cfg,
            master_seed=master_seed,
            workers=workers,
            eligible=eligible,
        )
        round_log.append(rm)
        window.append(rm.mean_client_loss)
        if t % eval_every == 0 or t == server_cfg.rounds:
            history.append(
                EvalPoint(
                    t,
                    float(np.mean(window)),
                    model.perplexity(state.params, heldout),
                    epsilon_at(t),
                )
            )
            window = []
    return FederationResult(state=state, history=history, rounds=round_log)


def _fmt(value: float | None) -> str:
    if value is None:
        return "-"
    return format(value, ".12g")


def write_metrics(path, history: Sequence[EvalPoint]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in history:
            fh.write(
                f"{p.round}\t{_fmt(p.train_loss)}\t{_fmt(p.heldout_ppl)}\t{_fmt(p.epsilon)}\n"
            )


def read_metrics(path) -> list[EvalPoint]:
    history = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                rnd = int(parts[0])
                train = None if parts[1] == "-" else float(parts[1])
                ppl = float(parts[2])
                eps = None if parts[3] == "-" else float(parts[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            history.append(EvalPoint(rnd, train, ppl, eps))
    return history


def save_server_state(path, state: ServerState) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#server {state.round} {state.params.shape[0]}\n")
        for vec in (state.params, state.m, state.v):
            for x in vec:
                fh.write(format(x, ".17g") + "\n")


def load_server_state(path) -> ServerState:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "#server":
            raise DataError(f"{path}: malformed server state header")
        try:
            round_t, size = int(header[1]), int(header[2])
        except ValueError:
            raise DataError(f"{path}: malformed server state header") from None
        values = []
        for line in fh:
            line = line.strip()
            if line:
                try:
                    values.append(float(line))
                except ValueError:
                    raise DataError(f"{path}: bad float {line!r}") from None
    if len(values) != 3 * size:
        raise DataError(f"{path}: expected {3 * size} values, found {len(values)}")
    arr = np.asarray(values, dtype=np.float64)
    return ServerState(
        params=arr[:size].copy(), m=arr[size : 2 * size].copy(), v=arr[2 * size :].copy(),
        round=round_t,
    )
