"""Small recurrent language model with exact reverse-mode gradients.

The model is embedding -> stacked recurrent cells (tanh or LSTM) ->
output projection -> softmax, all float64. Parameters live in one flat
vector (the unit of communication in the federation), with a fixed
layout: embedding, then per-layer input weights / recurrent weights /
bias, then output projection weights / bias. Forward and backward are
pure and deterministic: no dropout, no sampling, batching is a plain
loop over utterances.

Scoring convention: position s predicts token s given BOS plus the
tokens before s, so an utterance of length T contributes T scored
positions. With ``score_eos`` the end-of-sequence prediction is scored
too (T+1 positions).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .corpus import BOS_ID, EOS_ID, Utterance
from .errors import DataError

CELL_TANH = "tanh"
CELL_LSTM = "lstm"
_CELL_ALIASES = {
    "tanh": CELL_TANH,
    "tanh-rnn": CELL_TANH,
    "rnn": CELL_TANH,
    "lstm": CELL_LSTM,
}


def canonical_cell(name: str) -> str:
    try:
        return _CELL_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown cell type {name!r}") from None


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 32
    n_layers: int = 1
    cell: str = CELL_LSTM
    score_eos: bool = False

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim, self.n_layers) < 1:
            raise ValueError("all model dimensions must be >= 1")
        object.__setattr__(self, "cell", canonical_cell(self.cell))


class ParamLayout:
    """Slice map from a flat float64 vector to named parameter blocks."""

    def __init__(self, cfg: ModelConfig):
        V, E, H = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim
        gates = 4 if cfg.cell == CELL_LSTM else 1
        self.cfg = cfg
        self.gates = gates
        self.blocks: list[tuple[str, tuple[int, ...]]] = [("embed", (V, E))]
        in_dim = E
        for layer in range(cfg.n_layers):
            self.blocks.append((f"w_x{layer}", (in_dim, gates * H)))
            self.blocks.append((f"w_h{layer}", (H, gates * H)))
            self.blocks.append((f"b{layer}", (gates * H,)))
            in_dim = H
        self.blocks.append(("out_w", (H, V)))
        self.blocks.append(("out_b", (V,)))
        self.slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            self.slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self.slices[name]
        return params[sl].reshape(shape)

    def views(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Zero-copy named views; writing a view writes the flat vector."""
        if params.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {params.shape}")
        return {name: self.view(params, name) for name, _ in self.blocks}


@dataclass
class ForwardTrace:
    """Activations cached by forward, sufficient for one backward pass."""

    inputs: np.ndarray  # (S,) input ids, BOS first
    targets: np.ndarray  # (S,) ids scored at each position
    log_probs: np.ndarray  # (S,) log-prob of the observed target
    probs: np.ndarray = field(repr=False)  # (S, V) full softmax rows
    x_embed: np.ndarray = field(repr=False)  # (S, E)
    layer_caches: list[dict] = field(repr=False, default_factory=list)
    views: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def n_positions(self) -> int:
        return int(self.inputs.size)


class Model:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.layout = ParamLayout(cfg)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, seed: int, scale: float = 0.05) -> np.ndarray:
        """Uniform weights in [-scale, scale], zero biases, seeded."""
        if scale < 0:
            raise ValueError("scale must be non-negative")
        rng = np.random.default_rng(seed)
        params = np.zeros(self.layout.size)
        for name, shape in self.layout.blocks:
            if name.startswith("b") or name == "out_b":
                continue
            self.layout.view(params, name)[...] = rng.uniform(-scale, scale, shape)
        return params

    # -- forward ----------------------------------------------------------

    def forward(self, params: np.ndarray, tokens: np.ndarray) -> ForwardTrace:
        tokens = np.asarray(tokens, dtype=np.int64)
        V = self.cfg.vocab_size
        if tokens.size < 1:
            raise ValueError("cannot score an empty utterance")
        if np.any(tokens < 0) or np.any(tokens >= V):
            raise ValueError("token id outside vocab")
        if self.cfg.score_eos:
            inputs = np.concatenate(([BOS_ID], tokens))
            targets = np.concatenate((tokens, [EOS_ID]))
        else:
            inputs = np.concatenate(([BOS_ID], tokens[:-1]))
            targets = tokens
        views = self.layout.views(params)
        x = views["embed"][inputs]  # (S, E)
        h = x
        caches: list[dict] = []
        for layer in range(self.cfg.n_layers):
            h, cache = self._layer_forward(views, layer, h)
            caches.append(cache)
        logits = h @ views["out_w"] + views["out_b"]  # (S, V)
        m = logits.max(axis=1, keepdims=True)
        z = logits - m
        log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True)) + m
        log_probs_full = logits - log_norm
        probs = np.exp(log_probs_full)
        log_probs = log_probs_full[np.arange(targets.size), targets]
        return ForwardTrace(inputs, targets, log_probs, probs, x, caches, views)

    def _layer_forward(self, views, layer: int, x_seq: np.ndarray):
        w_x = views[f"w_x{layer}"]
        w_h = views[f"w_h{layer}"]
        b = views[f"b{layer}"]
        S = x_seq.shape[0]
        H = self.cfg.hidden_dim
        pre = x_seq @ w_x + b  # input contribution for all steps at once
        h = np.empty((S, H))
        if self.cfg.cell == CELL_TANH:
            h_prev = np.zeros(H)
            for s in range(S):
                h[s] = np.tanh(pre[s] + h_prev @ w_h)
                h_prev = h[s]
            return h, {"x": x_seq, "h": h}
        gi = np.empty((S, H))
        gf = np.empty((S, H))
        gg = np.empty((S, H))
        go = np.empty((S, H))
        c = np.empty((S, H))
        tanh_c = np.empty((S, H))
        h_prev = np.zeros(H)
        c_prev = np.zeros(H)
        for s in range(S):
            a = pre[s] + h_prev @ w_h
            gi[s] = expit(a[:H])
            gf[s] = expit(a[H : 2 * H])
            gg[s] = np.tanh(a[2 * H : 3 * H])
            go[s] = expit(a[3 * H :])
            c[s] = gf[s] * c_prev + gi[s] * gg[s]
            tanh_c[s] = np.tanh(c[s])
            h[s] = go[s] * tanh_c[s]
            h_prev = h[s]
            c_prev = c[s]
        return h, {"x": x_seq, "h": h, "i": gi, "f": gf, "g": gg, "o": go, "c": c, "tc": tanh_c}

    # -- backward ---------------------------------------------------------

    def backward(self, trace: ForwardTrace, weights: np.ndarray) -> np.ndarray:
        """Exact gradient of sum_s weights[s] * (-log p_s) w.r.t. params."""
        weights = np.asarray(weights, dtype=np.float64)
        S = trace.n_positions
        if weights.shape != (S,):
            raise ValueError(f"expected {S} position weights, got {weights.shape}")
        views = trace.views
        grad = np.zeros(self.layout.size)
        gviews = self.layout.views(grad)
        # d/dlogits of weighted NLL: w * (softmax - onehot(target))
        dlogits = trace.probs * weights[:, None]
        dlogits[np.arange(S), trace.targets] -= weights
        h_top = trace.layer_caches[-1]["h"]
        gviews["out_w"] += h_top.T @ dlogits
        gviews["out_b"] += dlogits.sum(axis=0)
        dh = dlogits @ views["out_w"].T
        for layer in reversed(range(self.cfg.n_layers)):
            dh = self._layer_backward(views, gviews, layer, trace.layer_caches[layer], dh)
        np.add.at(gviews["embed"], trace.inputs, dh)
        return grad

    def _layer_backward(self, views, gviews, layer: int, cache, d_h: np.ndarray):
        w_x = views[f"w_x{layer}"]
        w_h = views[f"w_h{layer}"]
        x_seq = cache["x"]
        h = cache["h"]
        S, H = h.shape
        if self.cfg.cell == CELL_TANH:
            da = np.empty((S, H))
            carry = np.zeros(H)
            for s in reversed(range(S)):
                da[s] = (d_h[s] + carry) * (1.0 - h[s] * h[s])
                carry = da[s] @ w_h.T
        else:
            gi, gf, gg, go = cache["i"], cache["f"], cache["g"], cache["o"]
            c, tc = cache["c"], cache["tc"]
            da = np.empty((S, 4 * H))
            carry_h = np.zeros(H)
            carry_c = np.zeros(H)
            for s in reversed(range(S)):
                dh_s = d_h[s] + carry_h
                do = dh_s * tc[s]
                dc = carry_c + dh_s * go[s] * (1.0 - tc[s] * tc[s])
                c_prev = c[s - 1] if s > 0 else 0.0
                di = dc * gg[s]
                df = dc * c_prev
                dg = dc * gi[s]
                carry_c = dc * gf[s]
                da[s, :H] = di * gi[s] * (1.0 - gi[s])
                da[s, H : 2 * H] = df * gf[s] * (1.0 - gf[s])
                da[s, 2 * H : 3 * H] = dg * (1.0 - gg[s] * gg[s])
                da[s, 3 * H :] = do * go[s] * (1.0 - go[s])
                carry_h = da[s] @ w_h.T
        h_shift = np.vstack((np.zeros((1, H)), h[:-1]))
        gviews[f"w_x{layer}"] += x_seq.T @ da
        gviews[f"w_h{layer}"] += h_shift.T @ da
        gviews[f"b{layer}"] += da.sum(axis=0)
        return da @ w_x.T

    # -- evaluation -------------------------------------------------------

    def utterance_nll(self, params: np.ndarray, tokens: np.ndarray) -> tuple[float, int]:
        trace = self.forward(params, tokens)
        return float(-trace.log_probs.sum()), trace.n_positions

    def perplexity(self, params: np.ndarray, utts: Sequence[Utterance]) -> float:
        """exp(total NLL / total scored tokens) over the corpus."""
        if not utts:
            raise ValueError("empty corpus")
        total_nll = 0.0
        total_tokens = 0
        for u in utts:
            nll, n = self.utterance_nll(params, u.tokens)
            total_nll += nll
            total_tokens += n
        return float(np.exp(total_nll / total_tokens))


# ---------------------------------------------------------------------------
# Checkpoints: "#model <vocab> <embed> <hidden> <layers> <cell>" then one
# value per line, 17 significant digits for a bit-exact round trip.
# ---------------------------------------------------------------------------


def save_checkpoint(path, cfg: ModelConfig, params: np.ndarray) -> None:
    layout = ParamLayout(cfg)
    if params.shape != (layout.size,):
        raise ValueError("params length does not match model config")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"#model {cfg.vocab_size} {cfg.embed_dim} {cfg.hidden_dim} "
            f"{cfg.n_layers} {cfg.cell}\n"
        )
        for v in params:
            f.write(format(v, ".17g") + "\n")


def load_checkpoint(path) -> tuple[ModelConfig, np.ndarray]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("#model "):
        raise DataError(f"{path}: line 1: expected '#model' header")
    fields = lines[0].split()
    if len(fields) != 6:
        raise DataError(f"{path}: line 1: expected 5 header fields")
    try:
        cfg = ModelConfig(
            vocab_size=int(fields[1]),
            embed_dim=int(fields[2]),
            hidden_dim=int(fields[3]),
            n_layers=int(fields[4]),
            cell=fields[5],
        )
    except ValueError as e:
        raise DataError(f"{path}: line 1: {e}") from None
    layout = ParamLayout(cfg)
    values = lines[1:]
    if len(values) != layout.size:
        raise DataError(
            f"{path}: expected {layout.size} parameter lines, found {len(values)}"
        )
    try:
        params = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        raise DataError(f"{path}: unparseable parameter value") from None
    return cfg, params
