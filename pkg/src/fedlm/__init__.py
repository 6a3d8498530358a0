"""Federated adaptation of small neural language models on noisy transcripts.

The pieces: a seeded synthetic corpus with per-token confidence scores
(`corpus`), a float64 recurrent LM with exact gradients (`model`), four
confidence-weighted training objectives (`losses`), local SGD clients
(`client`), a FedAdam server with a deterministic round driver (`server`),
DP update release with Renyi accounting (`privacy`), and a CLI (`cli`).
"""

from .client import ClientConfig, ClientUpdate, client_train, sgd_epochs
from .config import ExperimentConfig, load_config, parse_config_text
from .corpus import (
    CorruptionConfig,
    MarkovSource,
    Utterance,
    Vocab,
    ZipfConfig,
    assign_devices,
    build_vocab,
    corrupt,
    generate_synthetic_corpus,
    group_by_device,
    load_corpus,
    save_corpus,
    zipf_partition,
)
from .errors import DataError, FedlmError
from .losses import LossMode, batch_loss, parse_loss_mode, utterance_confidence
from .model import Model, ModelConfig, canonical_cell, load_checkpoint, save_checkpoint
from .privacy import (
    DEFAULT_ORDERS,
    DpConfig,
    RdpCurve,
    account,
    add_noise,
    clip_update,
    rdp_gaussian,
    rdp_subsampled_gaussian,
)
from .seeds import derive_seed
from .server import (
    EvalPoint,
    FedAdamConfig,
    FederationResult,
    RoundMetrics,
    ServerState,
    aggregate,
    eligible_devices,
    fedadam_step,
    init_server_state,
    load_server_state,
    read_metrics,
    run_federation,
    run_round,
    sample_cohort,
    save_server_state,
    write_metrics,
)

__version__ = "0.1.0"

__all__ = [
    "ClientConfig",
    "ClientUpdate",
    "client_train",
    "sgd_epochs",
    "ExperimentConfig",
    "load_config",
    "parse_config_text",
    "CorruptionConfig",
    "MarkovSource",
    "Utterance",
    "Vocab",
    "ZipfConfig",
    "assign_devices",
    "build_vocab",
    "corrupt",
    "generate_synthetic_corpus",
    "group_by_device",
    "load_corpus",
    "save_corpus",
    "zipf_partition",
    "DataError",
    "FedlmError",
    "LossMode",
    "batch_loss",
    "parse_loss_mode",
    "utterance_confidence",
    "Model",
    "ModelConfig",
    "canonical_cell",
    "load_checkpoint",
    "save_checkpoint",
    "DEFAULT_ORDERS",
    "DpConfig",
    "RdpCurve",
    "account",
    "add_noise",
    "clip_update",
    "rdp_gaussian",
    "rdp_subsampled_gaussian",
    "derive_seed",
    "EvalPoint",
    "FedAdamConfig",
    "FederationResult",
    "RoundMetrics",
    "ServerState",
    "aggregate",
    "eligible_devices",
    "fedadam_step",
    "init_server_state",
    "load_server_state",
    "read_metrics",
    "run_federation",
    "run_round",
    "sample_cohort",
    "save_server_state",
    "write_metrics",
    "__version__",
]
