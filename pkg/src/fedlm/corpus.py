"""Synthetic token corpora with per-token confidence scores.

This module generates clean utterances from a seeded Markov source,
corrupts them the way an imperfect transcription front end would (random
token substitutions plus a confidence score per token), assigns each
utterance to a simulated device via a Zipf law, and serializes the result
to a line-oriented text format.

Ground-truth ``correct_flags`` exist only for evaluation and tests; no
training code path may read them.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED_TOKENS = ("<bos>", "<eos>", "<unk>")


class Vocab:
    """Immutable token-string <-> dense-id mapping with reserved ids 0..2."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:3] != RESERVED_TOKENS:
            raise ValueError("vocab must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token in vocab")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def lookup(self, token: str) -> int:
        """Id of ``token``, or the UNK id when out of vocabulary."""
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def encode(self, text: Sequence[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in text], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]


def build_vocab(texts: Sequence[Sequence[str]], min_count: int = 1) -> Vocab:
    """Vocab over all tokens occurring at least ``min_count`` times.

    Ids are assigned after the reserved entries, in order of descending
    count with ties broken lexicographically, so the result is a pure
    function of the input.
    """
    if not texts:
        raise ValueError("empty corpus")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(text)
    if any(tok in counts for tok in RESERVED_TOKENS):
        raise ValueError("corpus contains a reserved token string")
    kept = [tok for tok, n in counts.items() if n >= min_count]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(RESERVED_TOKENS + tuple(kept))


@dataclass(eq=False)
class Utterance:
    """One transcript: token ids with per-token confidences.

    ``correct_flags`` carries synthetic ground truth (True where the token
    survived corruption); it is None for data loaded without flags.
    """

    tokens: np.ndarray
    confidences: np.ndarray
    correct_flags: np.ndarray | None = None
    device_id: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if self.correct_flags is not None:
            self.correct_flags = np.asarray(self.correct_flags, dtype=bool)
        if self.tokens.size < 1:
            raise ValueError("utterance must contain at least one token")
        if self.tokens.shape != self.confidences.shape:
            raise ValueError("confidences length must match tokens")
        if self.correct_flags is not None and self.correct_flags.shape != self.tokens.shape:
            raise ValueError("correct_flags length must match tokens")
        if np.any(self.confidences < 0.0) or np.any(self.confidences > 1.0):
            raise ValueError("confidence outside [0, 1]")
        if self.device_id < 0:
            raise ValueError("device_id must be non-negative")

    def __len__(self) -> int:
        return int(self.tokens.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        flags_equal = (
            (self.correct_flags is None and other.correct_flags is None)
            or (
                self.correct_flags is not None
                and other.correct_flags is not None
                and np.array_equal(self.correct_flags, other.correct_flags)
            )
        )
        return (
            flags_equal
            and self.device_id == other.device_id
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.confidences, other.confidences)
        )


@dataclass(frozen=True)
class CorruptionConfig:
    """Synthetic stand-in for a transcription confidence model.

    Each token is independently replaced with probability ``error_rate``;
    confidences are drawn from a Beta distribution conditioned on whether
    the token survived. The correct-token Beta must have the higher mean,
    otherwise confidence carries no signal and weighting is meaningless.
    """

    error_rate: float
    conf_correct: tuple[float, float] = (9.0, 1.0)
    conf_wrong: tuple[float, float] = (1.0, 9.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.error_rate < 1.0:
            raise ValueError("error_rate must lie in [0, 1)")
        for a, b in (self.conf_correct, self.conf_wrong):
            if a <= 0 or b <= 0:
                raise ValueError("Beta parameters must be positive")
        mean_correct = self.conf_correct[0] / sum(self.conf_correct)
        mean_wrong = self.conf_wrong[0] / sum(self.conf_wrong)
        if mean_correct <= mean_wrong:
            raise ValueError("correct-token confidence must exceed wrong-token mean")


@dataclass(frozen=True)
class ZipfConfig:
    """Device-population model: utterances land on devices Zipf-style."""

    n_devices: int
    exponent: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        if self.exponent <= 0:
            raise ValueError("exponent must be positive")


@dataclass(frozen=True)
class MarkovSource:
    """Seeded Markov chain over a small symbol alphabet.

    ``transition`` has one row per state, a state being the last ``order``
    symbol indices encoded base-``len(symbols)``. The first ``order``
    tokens of an utterance are drawn i.i.d. from ``initial``.
    """

    symbols: tuple[str, ...]
    order: int
    initial: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)

    @classmethod
    def from_seed(
        cls,
        seed: int,
        n_symbols: int = 22,
        order: int = 1,
        concentration: float = 0.3,
    ) -> "MarkovSource":
        """Random peaked-transition source; low concentration = low entropy."""
        if n_symbols < 2:
            raise ValueError("need at least two symbols")
        if order < 1:
            raise ValueError("markov order must be >= 1")
        rng = np.random.default_rng(seed)
        symbols = tuple(f"s{i:02d}" for i in range(n_symbols))
        initial = rng.dirichlet(np.full(n_symbols, 2.0))
        n_states = n_symbols**order
        transition = rng.dirichlet(np.full(n_symbols, concentration), size=n_states)
        return cls(symbols, order, initial, transition)

    def blended_with(self, other: "MarkovSource", weight: float) -> "MarkovSource":
        """Row-wise mixture (1-weight)*self + weight*other.

        Used to fabricate "close in domain" proxy text: weight 0 is this
        source, weight 1 an unrelated one.
        """
        if self.transition.shape != other.transition.shape:
            raise ValueError("sources must share alphabet and order")
        if not 0.0 <= weight <= 1.0:
            raise ValueError("weight must lie in [0, 1]")
        return MarkovSource(
            self.symbols,
            self.order,
            (1.0 - weight) * self.initial + weight * other.initial,
            (1.0 - weight) * self.transition + weight * other.transition,
        )

    def sample_texts(
        self,
        rng: np.random.Generator,
        n_utts: int,
        len_range: tuple[int, int],
    ) -> list[list[str]]:
        lo, hi = len_range
        if not 1 <= lo <= hi:
            raise ValueError("length range must satisfy 1 <= min <= max")
        n_sym = len(self.symbols)
        texts: list[list[str]] = []
        for _ in range(n_utts):
            length = int(rng.integers(lo, hi + 1))
            idx = np.empty(length, dtype=np.int64)
            for pos in range(length):
                if pos < self.order:
                    p = self.initial
                else:
                    state = 0
                    for k in range(self.order):
                        state = state * n_sym + int(idx[pos - self.order + k])
                    p = self.transition[state]
                idx[pos] = rng.choice(n_sym, p=p)
            texts.append([self.symbols[i] for i in idx])
        return texts


def generate_synthetic_corpus(
    source_seed: int,
    n_utts: int,
    len_range: tuple[int, int],
    markov_order: int = 1,
    n_symbols: int = 22,
    source: MarkovSource | None = None,
    vocab: Vocab | None = None,
) -> tuple[list[Utterance], Vocab]:
    """Clean utterances from a seeded Markov source, plus their vocab.

    When ``source`` is given it overrides the seeded construction (the
    seed still drives sampling); when ``vocab`` is given, encoding reuses
    it instead of rebuilding from the sample, which keeps token ids
    aligned across corpora drawn from the same alphabet.
    """
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    if source is None:
        source = MarkovSource.from_seed(source_seed, n_symbols=n_symbols, order=markov_order)
    rng = np.random.default_rng(source_seed)
    texts = source.sample_texts(rng, n_utts, len_range)
    if vocab is None:
        vocab = build_vocab(texts, min_count=1)
    utts = [
        Utterance(vocab.encode(text), np.ones(len(text)), correct_flags=None)
        for text in texts
    ]
    return utts, vocab


def corrupt(
    utts: Sequence[Utterance],
    vocab: Vocab,
    cfg: CorruptionConfig,
) -> list[Utterance]:
    """Simulate transcription errors over a clean corpus.

    Each token is independently replaced by a uniformly random *different*
    non-reserved token with probability ``cfg.error_rate``. Confidences
    are drawn per token from the Beta matching its (hidden) correctness.
    Input confidences are ignored; counts, lengths and device ids are
    preserved.
    """
    rng = np.random.default_rng(cfg.seed)
    n_real = len(vocab) - len(RESERVED_TOKENS)
    if n_real < 2 and cfg.error_rate > 0.0:
        raise ValueError("need at least two non-reserved tokens to corrupt")
    a_c, b_c = cfg.conf_correct
    a_w, b_w = cfg.conf_wrong
    out: list[Utterance] = []
    for utt in utts:
        tokens = utt.tokens.copy()
        flags = np.ones(len(utt), dtype=bool)
        confs = np.empty(len(utt), dtype=np.float64)
        for s in range(len(utt)):
            if cfg.error_rate > 0.0 and rng.random() < cfg.error_rate:
                orig = int(tokens[s])
                # uniform over real ids excluding the original
                pick = int(rng.integers(0, n_real - 1)) + len(RESERVED_TOKENS)
                if orig >= len(RESERVED_TOKENS) and pick >= orig:
                    pick += 1
                tokens[s] = pick
                flags[s] = False
                confs[s] = rng.beta(a_w, b_w)
            else:
                confs[s] = rng.beta(a_c, b_c)
        out.append(Utterance(tokens, confs, flags, utt.device_id))
    return out


def zipf_partition(n_utts: int, cfg: ZipfConfig) -> np.ndarray:
    """Draw a device id per utterance, i.i.d. with P(r) proportional to (r+1)^-s."""
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    ranks = np.arange(1, cfg.n_devices + 1, dtype=np.float64)
    p = ranks**-cfg.exponent
    p /= p.sum()
    rng = np.random.default_rng(cfg.seed)
    return rng.choice(cfg.n_devices, size=n_utts, p=p)


def assign_devices(utts: Sequence[Utterance], device_ids: np.ndarray) -> list[Utterance]:
    if len(utts) != len(device_ids):
        raise ValueError("one device id per utterance required")
    return [replace(u, device_id=int(d)) for u, d in zip(utts, device_ids)]


def group_by_device(utts: Sequence[Utterance]) -> dict[int, list[Utterance]]:
    shards: dict[int, list[Utterance]] = {}
    for u in utts:
        shards.setdefault(u.device_id, []).append(u)
    return shards


# ---------------------------------------------------------------------------
# Serialization. Line-oriented UTF-8:
#   #vocab <n>
#   <token>            (n lines, id order)
#   device<TAB>t1,t2<TAB>c1,c2<TAB>f1,f2    flags field is "-" when absent
# Confidences carry 17 significant digits so float64 round-trips exactly.
# ---------------------------------------------------------------------------


def _fmt_conf(c: float) -> str:
    return format(c, ".17g")


def save_corpus(utts: Sequence[Utterance], vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#vocab {len(vocab)}\n")
        for tok in vocab.tokens:
            f.write(tok + "\n")
        for u in utts:
            toks = ",".join(str(int(t)) for t in u.tokens)
            confs = ",".join(_fmt_conf(c) for c in u.confidences)
            if u.correct_flags is None:
                flags = "-"
            else:
                flags = ",".join("1" if b else "0" for b in u.correct_flags)
            f.write(f"{u.device_id}\t{toks}\t{confs}\t{flags}\n")


def load_corpus(path) -> tuple[list[Utterance], Vocab]:
    def fail(line_no: int, why: str):
        raise DataError(f"{path}: line {line_no}: {why}")

    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("#vocab "):
        fail(1, "expected '#vocab <n>' header")
    try:
        n_vocab = int(lines[0].split(" ", 1)[1])
    except (IndexError, ValueError):
        fail(1, "unparseable vocab size")
    if n_vocab < len(RESERVED_TOKENS) or len(lines) < 1 + n_vocab:
        fail(1, "vocab size inconsistent with file length")
    try:
        vocab = Vocab(lines[1 : 1 + n_vocab])
    except ValueError as e:
        fail(2, str(e))
    utts: list[Utterance] = []
    for offset, line in enumerate(lines[1 + n_vocab :]):
        line_no = 2 + n_vocab + offset
        if not line:
            fail(line_no, "blank line")
        parts = line.split("\t")
        if len(parts) != 4:
            fail(line_no, f"expected 4 tab-separated fields, got {len(parts)}")
        dev_s, toks_s, confs_s, flags_s = parts
        try:
            device_id = int(dev_s)
            tokens = np.array([int(t) for t in toks_s.split(",")], dtype=np.int64)
            confs = np.array([float(c) for c in confs_s.split(",")], dtype=np.float64)
        except ValueError:
            fail(line_no, "unparseable token id, confidence, or device id")
        if device_id < 0:
            fail(line_no, "negative device id")
        if np.any(tokens < 0) or np.any(tokens >= n_vocab):
            fail(line_no, "token id outside vocab")
        if np.any(confs < 0.0) or np.any(confs > 1.0):
            fail(line_no, "confidence outside [0,1]")
        if flags_s == "-":
            flags = None
        else:
            raw = flags_s.split(",")
            if any(r not in ("0", "1") for r in raw):
                fail(line_no, "flags must be 0 or 1")
            flags = np.array([r == "1" for r in raw], dtype=bool)
        if tokens.size != confs.size or (flags is not None and flags.size != tokens.size):
            fail(line_no, "field lengths disagree")
        if tokens.size == 0:
            fail(line_no, "empty utterance")
        utts.append(Utterance(tokens, confs, flags, device_id))
    return utts, vocab
