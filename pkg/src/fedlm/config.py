"""Experiment configuration.

Config files are flat key-value text with dotted section prefixes:

    master_seed = 7
    server.rounds = 200
    client.loss = token     # comments run to end of line

Unknown keys and untypeable values are data errors, so typos fail loudly.
Defaults describe a desk-scale experiment that completes in minutes;
optimizer and client hyper-parameters default to the full-scale values.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .client import ClientConfig
from .corpus import CorruptionConfig, ZipfConfig
from .errors import DataError
from .losses import parse_loss_mode
from .model import ModelConfig
from .privacy import DpConfig
from .seeds import derive_seed
from .server import FedAdamConfig


@dataclass
class PathsBlock:
    out_dir: str = "runs"
    train_corpus: str = ""  # empty: <out_dir>/train_corrupted.txt
    clean_corpus: str = ""  # empty: <out_dir>/train_clean.txt
    heldout_corpus: str = ""  # empty: <out_dir>/heldout.txt
    proxy_corpus: str = ""  # empty: <out_dir>/proxy.txt
    checkpoint: str = ""  # empty: <out_dir>/pretrained.ckpt; "none": fresh init


@dataclass
class DataBlock:
    utts: int = 5000
    symbols: int = 22
    min_len: int = 2
    max_len: int = 10
    heldout_frac: float = 0.12
    proxy_utts: int = 4000
    proxy_blend: float = 0.5  # 0 = proxy matches the target domain, 1 = unrelated


@dataclass
class ModelBlock:
    embed_dim: int = 16
    hidden_dim: int = 32
    layers: int = 1
    cell: str = "lstm"


@dataclass
class CorruptionBlock:
    error_rate: float = 0.2


@dataclass
class PartitionBlock:
    devices: int = 200
    exponent: float = 1.0


@dataclass
class ClientBlock:
    epochs: int = 1
    batch_size: int = 8
    lr: float = 1.0
    loss: str = "all"
    weight_scheme: str = "words"


@dataclass
class ServerBlock:
    global_lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-7
    rounds: int = 200
    cohort: int = 20
    min_device_words: int = 1


@dataclass
class DpBlock:
    enabled: bool = False
    clip_norm: float = 0.5
    noise_multiplier: float = 1.5
    delta: float = 1e-5


@dataclass
class PretrainBlock:
    epochs: int = 5
    batch_size: int = 8
    lr: float = 0.5
    heldout_frac: float = 0.1


@dataclass
class EvalBlock:
    every: int = 50


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    paths: PathsBlock = field(default_factory=PathsBlock)
    data: DataBlock = field(default_factory=DataBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    corruption: CorruptionBlock = field(default_factory=CorruptionBlock)
    partition: PartitionBlock = field(default_factory=PartitionBlock)
    client: ClientBlock = field(default_factory=ClientBlock)
    server: ServerBlock = field(default_factory=ServerBlock)
    dp: DpBlock = field(default_factory=DpBlock)
    pretrain: PretrainBlock = field(default_factory=PretrainBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)

    # -- resolved paths -----------------------------------------------------

    def _resolve(self, explicit: str, default_name: str) -> str:
        return explicit or os.path.join(self.paths.out_dir, default_name)

    def train_corpus_path(self) -> str:
        return self._resolve(self.paths.train_corpus, "train_corrupted.txt")

    def clean_corpus_path(self) -> str:
        return self._resolve(self.paths.clean_corpus, "train_clean.txt")

    def heldout_corpus_path(self) -> str:
        return self._resolve(self.paths.heldout_corpus, "heldout.txt")

    def proxy_corpus_path(self) -> str:
        return self._resolve(self.paths.proxy_corpus, "proxy.txt")

    def checkpoint_path(self) -> str:
        if self.paths.checkpoint == "none":
            return "none"
        return self._resolve(self.paths.checkpoint, "pretrained.ckpt")

    # -- library config builders --------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embed_dim=self.model.embed_dim,
            hidden_dim=self.model.hidden_dim,
            n_layers=self.model.layers,
            cell=self.model.cell,
        )

    def client_config(self) -> ClientConfig:
        return ClientConfig(
            local_epochs=self.client.epochs,
            batch_size=self.client.batch_size,
            local_lr=self.client.lr,
            loss_mode=parse_loss_mode(self.client.loss),
            weight_scheme=self.client.weight_scheme,
        )

    def server_config(self) -> FedAdamConfig:
        return FedAdamConfig(
            global_lr=self.server.global_lr,
            beta1=self.server.beta1,
            beta2=self.server.beta2,
            eps=self.server.eps,
            rounds=self.server.rounds,
            cohort_size=self.server.cohort,
            min_device_words=self.server.min_device_words,
            sample_seed=derive_seed(self.master_seed, "cohort"),
        )

    def dp_config(self, sampling_rate: float) -> DpConfig | None:
        if not self.dp.enabled:
            return None
        return DpConfig(
            clip_norm=self.dp.clip_norm,
            noise_multiplier=self.dp.noise_multiplier,
            sampling_rate=sampling_rate,
            delta=self.dp.delta,
            noise_seed=derive_seed(self.master_seed, "noise"),
        )

    def corruption_config(self) -> CorruptionConfig:
        return CorruptionConfig(
            error_rate=self.corruption.error_rate,
            seed=derive_seed(self.master_seed, "corrupt"),
        )

    def zipf_config(self) -> ZipfConfig:
        return ZipfConfig(
            n_devices=self.partition.devices,
            exponent=self.partition.exponent,
            seed=derive_seed(self.master_seed, "partition"),
        )


_BLOCKS = (
    "paths",
    "data",
    "model",
    "corruption",
    "partition",
    "client",
    "server",
    "dp",
    "pretrain",
    "eval",
)

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(value: str, target_type: type, where: str) -> object:
    try:
        if target_type is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return target_type(value)
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from None


def set_config_key(cfg: ExperimentConfig, dotted: str, value: str, where: str = "<config>") -> None:
    if dotted == "master_seed":
        cfg.master_seed = int(_convert(value, int, where))
        return
    block_name, _, field_name = dotted.partition(".")
    if block_name not in _BLOCKS or not field_name:
        raise DataError(f"{where}: unknown config key {dotted!r}")
    block = getattr(cfg, block_name)
    for f in dataclasses.fields(block):
        if f.name == field_name:
            setattr(block, field_name, _convert(value, _field_type(f), where))
            return
    raise DataError(f"{where}: unknown config key {dotted!r}")


def _field_type(f: dataclasses.Field) -> type:
    # from __future__ annotations stringifies types; all block fields are
    # plain builtins so the name lookup is enough
    if isinstance(f.type, str):
        return {"int": int, "float": float, "str": str, "bool": bool}[f.type]
    return f.type


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{origin}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        set_config_key(cfg, key.strip(), value.strip(), f"{origin}: line {lineno}")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, origin=str(path))
