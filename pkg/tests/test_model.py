import numpy as np
import pytest

from fedlm import (
    DataError,
    Model,
    ModelConfig,
    canonical_cell,
    load_checkpoint,
    save_checkpoint,
)
from fedlm.corpus import BOS_ID, EOS_ID
from fedlm.model import ParamLayout

from helpers import make_utt


# -- configuration and layout -------------------------------------------


def test_cell_aliases():
    assert canonical_cell("tanh") == "tanh"
    assert canonical_cell("tanh-rnn") == "tanh"
    assert canonical_cell("RNN") == "tanh"
    assert canonical_cell("LSTM") == "lstm"
    with pytest.raises(ValueError):
        canonical_cell("gru")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=6, n_layers=0)
    assert ModelConfig(vocab_size=6, cell="rnn").cell == "tanh"


@pytest.mark.parametrize(
    "cfg,expected",
    [
        # hand sums: embed + per-layer (w_x + w_h + b) + out_w + out_b
        (ModelConfig(10, 4, 8, 1, "tanh"), 10 * 4 + (4 * 8 + 8 * 8 + 8) + (8 * 10 + 10)),
        (ModelConfig(6, 3, 4, 1, "lstm"), 6 * 3 + (3 * 16 + 4 * 16 + 16) + (4 * 6 + 6)),
        (ModelConfig(5, 2, 3, 2, "tanh"), 5 * 2 + (2 * 3 + 9 + 3) + (3 * 3 + 9 + 3) + (3 * 5 + 5)),
    ],
)
def test_param_count_hand_cases(cfg, expected):
    assert Model(cfg).n_params == expected


def test_layout_slices_partition_the_vector():
    layout = ParamLayout(ModelConfig(7, 3, 5, 2, "lstm"))
    covered = np.zeros(layout.size, dtype=int)
    for name, _ in layout.blocks:
        sl, shape = layout.slices[name]
        assert (sl.stop - sl.start) == int(np.prod(shape))
        covered[sl] += 1
    assert np.all(covered == 1)


def test_views_are_zero_copy():
    model = Model(ModelConfig(6, 3, 4))
    params = model.init_params(0)
    views = model.layout.views(params)
    views["out_b"][...] = 7.0
    assert np.all(model.layout.view(params, "out_b") == 7.0)


def test_init_params_distribution():
    model = Model(ModelConfig(10, 4, 8, 1, "tanh"))
    p = model.init_params(3, scale=0.05)
    assert p.shape == (model.n_params,)
    assert np.array_equal(p, model.init_params(3, scale=0.05))
    assert not np.array_equal(p, model.init_params(4, scale=0.05))
    for name in ("b0", "out_b"):
        assert np.all(model.layout.view(p, name) == 0.0)
    for name in ("embed", "w_x0", "w_h0", "out_w"):
        block = model.layout.view(p, name)
        assert np.all(np.abs(block) <= 0.05)
        assert np.any(block != 0.0)
    assert np.all(model.init_params(3, scale=0.0) == 0.0)


# -- forward -------------------------------------------------------------


def test_zero_params_give_uniform_predictions():
    model = Model(ModelConfig(8, 3, 4))
    params = np.zeros(model.n_params)
    trace = model.forward(params, np.array([3, 4, 5]))
    assert np.allclose(trace.probs, 1.0 / 8, atol=1e-15)
    assert np.allclose(trace.log_probs, -np.log(8), atol=1e-15)
    utts = [make_utt([3, 4], [1, 1]), make_utt([5], [1])]
    assert np.isclose(model.perplexity(params, utts), 8.0, rtol=1e-12)


@pytest.mark.parametrize("cell", ["tanh", "lstm"])
def test_softmax_rows_normalized(cell):
    model = Model(ModelConfig(9, 4, 5, 2, cell))
    params = model.init_params(1, scale=0.8)
    trace = model.forward(params, np.array([3, 8, 4, 6]))
    assert np.allclose(trace.probs.sum(axis=1), 1.0, atol=1e-12)
    picked = trace.probs[np.arange(4), trace.targets]
    assert np.allclose(np.log(picked), trace.log_probs, atol=1e-12)


def test_scoring_convention_next_token():
    model = Model(ModelConfig(6, 3, 4))
    trace = model.forward(np.zeros(model.n_params), np.array([3, 4, 5]))
    assert trace.n_positions == 3
    assert np.array_equal(trace.inputs, [BOS_ID, 3, 4])
    assert np.array_equal(trace.targets, [3, 4, 5])


def test_scoring_convention_with_eos():
    model = Model(ModelConfig(6, 3, 4, score_eos=True))
    trace = model.forward(np.zeros(model.n_params), np.array([3, 4]))
    assert trace.n_positions == 3
    assert np.array_equal(trace.inputs, [BOS_ID, 3, 4])
    assert np.array_equal(trace.targets, [3, 4, EOS_ID])
    nll, n = model.utterance_nll(np.zeros(model.n_params), np.array([3, 4]))
    assert n == 3 and np.isclose(nll, 3 * np.log(6), atol=1e-12)


def test_forward_rejects_bad_tokens():
    model = Model(ModelConfig(6, 3, 4))
    params = np.zeros(model.n_params)
    with pytest.raises(ValueError):
        model.forward(params, np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        model.forward(params, np.array([6]))
    with pytest.raises(ValueError):
        model.forward(params, np.array([-1]))


def test_forward_rejects_wrong_param_length():
    model = Model(ModelConfig(6, 3, 4))
    with pytest.raises(ValueError):
        model.forward(np.zeros(model.n_params + 1), np.array([3]))


# -- backward ------------------------------------------------------------


def _weighted_nll(model, params, tokens, weights):
    trace = model.forward(params, tokens)
    return float(np.dot(weights, -trace.log_probs))


@pytest.mark.parametrize("cell", ["tanh", "lstm"])
@pytest.mark.parametrize("n_layers", [1, 2])
def test_gradient_matches_finite_differences(cell, n_layers):
    rng = np.random.default_rng(20)
    model = Model(ModelConfig(7, 3, 4, n_layers, cell))
    params = model.init_params(2, scale=0.4)
    tokens = np.array([3, 6, 4, 5, 3])
    weights = rng.uniform(0.1, 1.0, size=tokens.size)
    grad = model.backward(model.forward(params, tokens), weights)
    h = 1e-5
    coords = rng.choice(model.n_params, size=30, replace=False)
    for i in coords:
        probe = params.copy()
        probe[i] += h
        up = _weighted_nll(model, probe, tokens, weights)
        probe[i] -= 2 * h
        down = _weighted_nll(model, probe, tokens, weights)
        fd = (up - down) / (2 * h)
        # floor the denominator so near-zero coordinates are judged absolutely
        rel = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-4)
        assert rel < 1e-6, f"coord {i}: analytic {grad[i]} vs fd {fd}"


def test_gradient_is_linear_in_position_weights():
    rng = np.random.default_rng(21)
    model = Model(ModelConfig(6, 3, 4, 1, "lstm"))
    params = model.init_params(5, scale=0.3)
    tokens = np.array([3, 4, 5, 4])
    trace = model.forward(params, tokens)
    w1 = rng.uniform(0, 1, 4)
    w2 = rng.uniform(0, 1, 4)
    combined = model.backward(trace, w1 + w2)
    parts = model.backward(trace, w1) + model.backward(trace, w2)
    assert np.allclose(combined, parts, rtol=1e-12, atol=1e-15)
    assert np.all(model.backward(trace, np.zeros(4)) == 0.0)


def test_backward_rejects_wrong_weight_count():
    model = Model(ModelConfig(6, 3, 4))
    trace = model.forward(model.init_params(0), np.array([3, 4]))
    with pytest.raises(ValueError):
        model.backward(trace, np.ones(3))


def test_gradient_descent_memorizes_one_utterance():
    model = Model(ModelConfig(6, 4, 8, 1, "lstm"))
    params = model.init_params(0)
    tokens = np.array([3, 4, 5, 3, 4, 5])
    weights = np.full(tokens.size, 1.0 / tokens.size)
    for _ in range(300):
        trace = model.forward(params, tokens)
        params -= 0.5 * model.backward(trace, weights)
    nll, n = model.utterance_nll(params, tokens)
    assert np.exp(nll / n) < 1.5  # measured 1.2998 at this seed


# -- evaluation ----------------------------------------------------------


def test_perplexity_pools_tokens_not_utterances():
    # pooled NLL/token, so a split corpus scores the same as a joined one
    model = Model(ModelConfig(6, 3, 4))
    params = model.init_params(9, scale=0.4)
    u1, u2 = make_utt([3, 4, 5], [1, 1, 1]), make_utt([5, 3], [1, 1])
    nll1, n1 = model.utterance_nll(params, u1.tokens)
    nll2, n2 = model.utterance_nll(params, u2.tokens)
    expected = np.exp((nll1 + nll2) / (n1 + n2))
    assert np.isclose(model.perplexity(params, [u1, u2]), expected, rtol=1e-12)
    with pytest.raises(ValueError):
        model.perplexity(params, [])


# -- checkpoints ---------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = ModelConfig(11, 5, 6, 2, "lstm")
    params = Model(cfg).init_params(7, scale=0.3)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, cfg, params)
    cfg2, params2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert np.array_equal(params, params2)


def test_checkpoint_rejects_mismatched_params(tmp_path):
    cfg = ModelConfig(6, 3, 4)
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.ckpt", cfg, np.zeros(3))


@pytest.mark.parametrize(
    "content",
    [
        "not a checkpoint\n",
        "#model 6 3 4 1\n",  # missing cell field
        "#model 6 3 4 1 gru\n",  # unknown cell
        "#model 6 3 4 1 lstm\n1.0\n",  # wrong value count
        "#model 0 3 4 1 lstm\n",  # bad dimension
    ],
)
def test_checkpoint_rejects_malformed(tmp_path, content):
    path = tmp_path / "bad.ckpt"
    path.write_text(content)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_rejects_unparseable_value(tmp_path):
    cfg = ModelConfig(4, 1, 1)
    path = tmp_path / "bad.ckpt"
    save_checkpoint(path, cfg, np.zeros(Model(cfg).n_params))
    lines = path.read_text().splitlines()
    lines[3] = "zzz"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError):
        load_checkpoint(path)
