"""Command-line front end.

Subcommands: gen-data, pretrain, federate, evaluate, account, table.
Exit codes: 0 success, 1 usage error (bad flags/values), 2 data error
(missing or malformed files).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, load_config
from .corpus import (
    MarkovSource,
    assign_devices,
    corrupt,
    generate_synthetic_corpus,
    group_by_device,
    load_corpus,
    save_corpus,
    zipf_partition,
)
from .client import sgd_epochs
from .errors import DataError, FedlmError
from .losses import LossMode
from .model import Model, load_checkpoint, save_checkpoint
from .privacy import DpConfig, account
from .seeds import derive_seed
from .server import (
    eligible_devices,
    read_metrics,
    run_federation,
    write_metrics,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we want 1
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (key = value lines)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out-dir", help="output directory override")


def build_parser() -> _Parser:
    parser = _Parser(prog="fedlm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate corpora (train/heldout/proxy)")
    _add_common(p)
    p.add_argument("--utts", type=int, help="adaptation corpus size")
    p.add_argument("--devices", type=int, help="device population size")
    p.add_argument("--symbols", type=int, help="alphabet size (vocab minus reserved)")
    p.add_argument("--error-rate", type=float, help="token corruption probability")
    p.add_argument("--proxy-utts", type=int, help="proxy corpus size")
    p.add_argument("--proxy-blend", type=float, help="proxy domain mismatch in [0,1]")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="centralized training on the proxy corpus")
    _add_common(p)
    p.add_argument("--epochs", type=int, help="pretraining epochs")
    p.add_argument("--lr", type=float, help="pretraining learning rate")
    p.add_argument("--checkpoint-out", help="checkpoint path to write")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("federate", help="run federated adaptation rounds")
    _add_common(p)
    p.add_argument("--rounds", type=int, help="number of rounds")
    p.add_argument("--cohort", type=int, help="clients sampled per round")
    p.add_argument("--loss", help="all | hard[:<c>] | utt | token")
    p.add_argument("--eval-every", type=int, help="evaluation cadence in rounds")
    p.add_argument("--workers", type=int, default=1, help="client worker threads")
    p.add_argument("--no-pretrain", action="store_true", help="start from fresh init")
    p.add_argument("--checkpoint", help="starting checkpoint path override")
    p.add_argument("--dp", action="store_true", help="enable the DP pipeline")
    p.add_argument("--noise-multiplier", type=float, help="DP noise multiplier z")
    p.add_argument("--clip-norm", type=float, help="DP clip norm C")
    p.add_argument("--metrics-out", help="metrics file path")
    p.add_argument("--checkpoint-out", help="adapted checkpoint path")
    p.set_defaults(func=cmd_federate)

    p = sub.add_parser("evaluate", help="perplexity of a checkpoint on a corpus")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("account", help="(epsilon, delta) from the RDP accountant")
    p.add_argument("--q", type=float, required=True, help="sampling rate per round")
    p.add_argument("--z", type=float, required=True, help="noise multiplier")
    p.add_argument("--rounds", type=int, required=True, help="number of rounds")
    p.add_argument("--delta", type=float, default=1e-5)
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("table", help="compare metrics files; write CSV and figures")
    p.add_argument("metrics", nargs="+", help="metrics files from federate runs")
    p.add_argument("--labels", help="comma-separated run labels")
    p.add_argument("--baseline", help="label of the baseline run (default: first)")
    p.add_argument("--csv", default="table.csv", help="CSV output path")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_table)

    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "out_dir", None):
        cfg.paths.out_dir = args.out_dir
    return cfg


def _override(obj, **pairs) -> None:
    for name, value in pairs.items():
        if value is not None:
            setattr(obj, name, value)


# -- gen-data ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    _override(cfg.data, utts=args.utts, symbols=args.symbols,
              proxy_utts=args.proxy_utts, proxy_blend=args.proxy_blend)
    _override(cfg.partition, devices=args.devices)
    _override(cfg.corruption, error_rate=args.error_rate)
    master = cfg.master_seed
    os.makedirs(cfg.paths.out_dir, exist_ok=True)

    source = MarkovSource.from_seed(
        derive_seed(master, "markov"), n_symbols=cfg.data.symbols
    )
    len_range = (cfg.data.min_len, cfg.data.max_len)
    clean, vocab = generate_synthetic_corpus(
        derive_seed(master, "adapt-texts"), cfg.data.utts, len_range, source=source
    )

    rng = np.random.default_rng(derive_seed(master, "split"))
    n_held = max(1, int(round(cfg.data.utts * cfg.data.heldout_frac)))
    if n_held >= len(clean):
        raise ValueError("heldout_frac leaves no training utterances")
    perm = rng.permutation(len(clean))
    heldout = [clean[i] for i in sorted(perm[:n_held])]
    train_clean = [clean[i] for i in sorted(perm[n_held:])]

    device_ids = zipf_partition(len(train_clean), cfg.zipf_config())
    train_clean = assign_devices(train_clean, device_ids)
    train_corrupted = corrupt(train_clean, vocab, cfg.corruption_config())

    mismatch = MarkovSource.from_seed(
        derive_seed(master, "proxy-markov"), n_symbols=cfg.data.symbols
    )
    proxy_source = source.blended_with(mismatch, cfg.data.proxy_blend)
    proxy, _ = generate_synthetic_corpus(
        derive_seed(master, "proxy-texts"),
        cfg.data.proxy_utts,
        len_range,
        source=proxy_source,
        vocab=vocab,
    )

    outputs = [
        (cfg.train_corpus_path(), train_corrupted),
        (cfg.clean_corpus_path(), train_clean),
        (cfg.heldout_corpus_path(), heldout),
        (cfg.proxy_corpus_path(), proxy),
    ]
    for path, utts in outputs:
        save_corpus(utts, vocab, path)
        print(f"wrote {path} ({len(utts)} utterances)")
    n_devices = len({u.device_id for u in train_corrupted})
    print(f"vocab {len(vocab)} tokens; {n_devices} devices hold data")
    return 0


# -- pretrain ------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    _override(cfg.pretrain, epochs=args.epochs, lr=args.lr)
    proxy, vocab = load_corpus(cfg.proxy_corpus_path())
    model = Model(cfg.model_config(len(vocab)))
    params = model.init_params(derive_seed(cfg.master_seed, "init"))

    n_held = max(1, int(round(len(proxy) * cfg.pretrain.heldout_frac)))
    if n_held >= len(proxy):
        raise ValueError("pretrain heldout fraction leaves no training data")
    train, held = proxy[:-n_held], proxy[-n_held:]
    print(f"epoch 0: proxy heldout ppl {model.perplexity(params, held):.4f}")
    for epoch in range(cfg.pretrain.epochs):
        sgd_epochs(
            model,
            params,
            train,
            epochs=1,
            batch_size=cfg.pretrain.batch_size,
            lr=cfg.pretrain.lr,
            loss_mode=LossMode("all"),
            shuffle_seed=derive_seed(cfg.master_seed, "pretrain"),
            epoch_offset=epoch,
        )
        ppl = model.perplexity(params, held)
        print(f"epoch {epoch + 1}: proxy heldout ppl {ppl:.4f}")

    out = args.checkpoint_out or cfg.checkpoint_path()
    if out == "none":
        out = os.path.join(cfg.paths.out_dir, "pretrained.ckpt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_checkpoint(out, model.cfg, params)
    print(f"wrote {out}")
    return 0


# -- federate ------------------------------------------------------------------


def _run_tag(cfg: ExperimentConfig, scratch: bool) -> str:
    tag = cfg.client_config().loss_mode.spec().replace(":", "-")
    if cfg.dp.enabled:
        tag += "_dp"
    if scratch:
        tag += "_scratch"
    return tag


def cmd_federate(args) -> int:
    cfg = _load_cfg(args)
    _override(cfg.server, rounds=args.rounds, cohort=args.cohort)
    _override(cfg.client, loss=args.loss)
    _override(cfg.eval, every=args.eval_every)
    _override(cfg.dp, noise_multiplier=args.noise_multiplier, clip_norm=args.clip_norm)
    if args.dp:
        cfg.dp.enabled = True
    if args.checkpoint:
        cfg.paths.checkpoint = args.checkpoint

    train, vocab = load_corpus(cfg.train_corpus_path())
    heldout, held_vocab = load_corpus(cfg.heldout_corpus_path())
    if held_vocab != vocab:
        raise DataError("train and heldout corpora use different vocabularies")
    shards = group_by_device(train)

    scratch = args.no_pretrain or cfg.checkpoint_path() == "none"
    if scratch:
        model = Model(cfg.model_config(len(vocab)))
        params = model.init_params(derive_seed(cfg.master_seed, "init"))
    else:
        ckpt_path = cfg.checkpoint_path()
        if not os.path.exists(ckpt_path):
            raise DataError(f"missing checkpoint {ckpt_path} (run pretrain first)")
        model_cfg, params = load_checkpoint(ckpt_path)
        if model_cfg.vocab_size != len(vocab):
            raise DataError("checkpoint vocab size does not match corpus")
        model = Model(model_cfg)

    server_cfg = cfg.server_config()
    eligible = eligible_devices(shards, server_cfg.min_device_words)
    if not eligible:
        raise DataError("no eligible devices in the training corpus")
    dp_cfg = cfg.dp_config(sampling_rate=min(1.0, server_cfg.cohort_size / len(eligible)))

    result = run_federation(
        model,
        params,
        shards,
        heldout,
        cfg.client_config(),
        server_cfg,
        dp_cfg,
        master_seed=cfg.master_seed,
        eval_every=cfg.eval.every,
        workers=args.workers,
    )

    for p in result.history:
        eps = "-" if p.epsilon is None else f"{p.epsilon:.4g}"
        train_loss = "-" if p.train_loss is None else f"{p.train_loss:.4f}"
        print(f"round {p.round}\ttrain_loss {train_loss}\theldout_ppl "
              f"{p.heldout_ppl:.4f}\teps {eps}")

    os.makedirs(cfg.paths.out_dir, exist_ok=True)
    tag = _run_tag(cfg, scratch)
    metrics_out = args.metrics_out or os.path.join(cfg.paths.out_dir, f"metrics_{tag}.txt")
    ckpt_out = args.checkpoint_out or os.path.join(cfg.paths.out_dir, f"adapted_{tag}.ckpt")
    write_metrics(metrics_out, result.history)
    save_checkpoint(ckpt_out, model.cfg, result.state.params)
    print(f"wrote {metrics_out}")
    print(f"wrote {ckpt_out}")
    return 0


# -- evaluate ------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    model_cfg, params = load_checkpoint(args.checkpoint)
    utts, vocab = load_corpus(args.corpus)
    if model_cfg.vocab_size != len(vocab):
        raise DataError("checkpoint vocab size does not match corpus")
    model = Model(model_cfg)
    total_nll = 0.0
    total_tokens = 0
    for u in utts:
        nll, n = model.utterance_nll(params, u.tokens)
        total_nll += nll
        total_tokens += n
    ppl = math.exp(total_nll / total_tokens)
    print(f"tokens={total_tokens} ppl={ppl:.10g}")
    return 0


# -- account -------------------------------------------------------------------


def cmd_account(args) -> int:
    dp = DpConfig(
        clip_norm=1.0,  # accounting depends only on q, z, delta
        noise_multiplier=args.z,
        sampling_rate=args.q,
        delta=args.delta,
    )
    eps, alpha = account(dp, args.rounds)
    print(f"epsilon={eps:.6g} alpha={alpha:g}")
    return 0


# -- table ---------------------------------------------------------------------


def cmd_table(args) -> int:
    labels = (
        [s.strip() for s in args.labels.split(",")]
        if args.labels
        else [os.path.splitext(os.path.basename(p))[0] for p in args.metrics]
    )
    if len(labels) != len(args.metrics):
        raise ValueError("need as many labels as metrics files")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")

    histories = [(label, read_metrics(path)) for label, path in zip(labels, args.metrics)]
    for label, history in histories:
        if not history:
            raise DataError(f"metrics for {label!r} are empty")

    base_label = args.baseline or labels[0]
    if base_label not in labels:
        raise ValueError(f"baseline {base_label!r} is not among the labels")
    base_ppl = dict((l, h[-1].heldout_ppl) for l, h in histories)[base_label]

    rows = []
    for label, history in histories:
        final = history[-1]
        rel = 100.0 * (final.heldout_ppl - base_ppl) / base_ppl
        rows.append((label, final.round, final.heldout_ppl, rel, final.epsilon))

    width = max(len(l) for l in labels)
    print(f"{'run':<{width}}  {'round':>6}  {'final_ppl':>10}  {'vs_base':>8}  epsilon")
    for label, rnd, ppl, rel, eps in rows:
        eps_s = "-" if eps is None else f"{eps:.4g}"
        print(f"{label:<{width}}  {rnd:>6}  {ppl:>10.4f}  {rel:>+7.1f}%  {eps_s}")

    with open(args.csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "round", "final_ppl", "rel_delta_pct", "epsilon"])
        for label, rnd, ppl, rel, eps in rows:
            writer.writerow([label, rnd, f"{ppl:.6f}", f"{rel:.3f}",
                             "-" if eps is None else f"{eps:.6g}"])
    print(f"wrote {args.csv}")

    if not args.no_figures:
        from . import report  # deferred: pulls in matplotlib

        fig_dir = os.path.dirname(os.path.abspath(args.csv))
        curves = os.path.join(fig_dir, "ppl_curves.png")
        bars = os.path.join(fig_dir, "final_ppl.png")
        report.render_ppl_curves(histories, curves)
        report.render_final_ppl_bars([(r[0], r[2]) for r in rows], bars)
        print(f"wrote {curves}")
        print(f"wrote {bars}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FedlmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
