"""Small shared test utilities."""

import numpy as np

from fedlm import Model, Utterance, batch_loss


def make_utt(tokens, confs=None, device=0, flags=None):
    tokens = np.asarray(tokens, dtype=np.int64)
    if confs is None:
        confs = np.ones(tokens.size)
    return Utterance(tokens, np.asarray(confs, dtype=np.float64), flags, device)


def rand_utts(rng, n, vocab_size, len_range=(2, 5), conf="random", device=0):
    """Random utterances over the non-reserved id range [3, vocab_size)."""
    lo, hi = len_range
    utts = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        toks = rng.integers(3, vocab_size, size=length)
        if conf == "ones":
            confs = np.ones(length)
        else:
            confs = rng.uniform(0.0, 1.0, size=length)
        utts.append(make_utt(toks, confs, device=device))
    return utts


def fd_gradient_check(
    model: Model, params, batch, mode, rng, n_coords=20, h=1e-5
):
    """Max relative error between analytic and central-difference gradients."""
    analytic = batch_loss(model, params, batch, mode).gradient
    coords = rng.choice(params.size, size=n_coords, replace=False)
    worst = 0.0
    for i in coords:
        p = params.copy()
        p[i] += h
        up = batch_loss(model, p, batch, mode).value
        p[i] -= 2 * h
        down = batch_loss(model, p, batch, mode).value
        fd = (up - down) / (2 * h)
        err = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst
