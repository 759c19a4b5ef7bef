import numpy as np
import pytest
from conftest import LOSS_MODES, fd_max_rel_error, toy_batch, toy_model
from hypothesis import given, settings
from hypothesis import strategies as st

from tiedlm.linalg import ContractError
from tiedlm.net import (CHECKPOINT_MAGIC, CheckpointError, ModelConfig, ModelParams, backward,
                        forward, init_params, load_checkpoint, parameter_count, param_shapes,
                        predict_proba, renormalize_embedding_rows, sample_masks, save_checkpoint,
                        zero_state)


def test_config_validation():
    with pytest.raises(ContractError):
        ModelConfig(100, 10, 20, tie_weights=True)
    with pytest.raises(ContractError):
        ModelConfig(100, dropout_p=1.0)
    with pytest.raises(ContractError):
        ModelConfig(100, dropout_p=-0.1)
    ModelConfig(100, 20, 20, tie_weights=True, dropout_p=0.0)


def test_init_is_seeded_and_bounded():
    cfg = ModelConfig(50, 6, 6, seed=3)
    a, b = init_params(cfg), init_params(cfg)
    for name in a.names():
        assert a[name].tobytes() == b[name].tobytes()
    assert not np.array_equal(a["L"], init_params(cfg, seed=4)["L"])
    for name, t in a.tensors.items():
        if t.ndim == 1:
            assert np.all(t == 0), name
        else:
            assert np.abs(t).max() <= 0.05


@pytest.mark.parametrize("d", [200, 650, 1500])
def test_parameter_count_difference(d):
    untied = ModelConfig(10_000, d, d)
    tied = ModelConfig(10_000, d, d, tie_weights=True)
    assert parameter_count(untied) - parameter_count(tied) == 10_000 * (d + 1)
    if d == 200:
        assert parameter_count(untied) - parameter_count(tied) == 2_010_000


def test_parameter_count_by_hand():
    # L 4x10, two layers of 4*5 gates, W 10x5 and b 10
    cfg = ModelConfig(10, 4, 5)
    expected = 4 * 10 + (20 * 4 + 20 * 5 + 20) + (20 * 5 + 20 * 5 + 20) + 10 * 5 + 10
    assert parameter_count(cfg) == expected
    assert init_params(cfg).parameter_count() == expected


def test_tied_stores_no_projection():
    p = init_params(ModelConfig(30, 8, 8, tie_weights=True))
    assert p.tied and "W" not in p and "b" not in p


def test_zero_parameters_give_uniform_output():
    p = init_params(ModelConfig(12, 4, 4)).zeros_like()
    _, logits, _ = forward(p, np.array([[1, 2, 3]]))
    assert np.all(logits == 0)
    probs, _ = predict_proba(p, [1, 2, 3])
    np.testing.assert_allclose(probs, np.full(12, 1 / 12))


def test_all_ones_masks_match_no_dropout():
    p = toy_model()
    ids, _ = toy_batch()
    ones = sample_masks(p.config, 2, 0)
    assert all(np.all(m == 1.0) for m in ones)
    assert np.array_equal(forward(p, ids, ones)[1], forward(p, ids)[1])


def test_tied_logits_are_embedding_products():
    p = toy_model(tied=True)
    ids, _ = toy_batch()
    tape, logits, _ = forward(p, ids)
    for t in range(ids.shape[1]):
        h = tape.top[t]  # batch x d
        np.testing.assert_allclose(logits[:, t], (p["L"].T @ h.T).T, rtol=1e-13, atol=1e-13)


def test_untied_with_transposed_embedding_equals_tied():
    tied = toy_model(tied=True)
    cfg = ModelConfig(20, 8, 8, tie_weights=False)
    tensors = {k: v.copy() for k, v in tied.tensors.items()}
    tensors["W"] = tied["L"].T.copy()
    tensors["b"] = np.zeros(20)
    untied = ModelParams(cfg, tensors)
    ids, _ = toy_batch()
    assert forward(tied, ids)[1].tobytes() == forward(untied, ids)[1].tobytes()


def test_state_carry_matches_single_window():
    p = toy_model()
    ids = np.random.default_rng(5).integers(0, 20, (3, 8))
    _, whole, s_whole = forward(p, ids)
    _, first, s1 = forward(p, ids[:, :4])
    _, second, s2 = forward(p, ids[:, 4:], state=s1)
    np.testing.assert_allclose(np.concatenate([first, second], axis=1), whole, atol=1e-10)
    for (h_a, c_a), (h_b, c_b) in zip(s_whole, s2):
        np.testing.assert_allclose(h_a, h_b, atol=1e-10)
        np.testing.assert_allclose(c_a, c_b, atol=1e-10)


def test_forward_errors():
    p = toy_model()
    with pytest.raises(ContractError):
        forward(p, np.array([[0, 20]]))
    with pytest.raises(ContractError):
        forward(p, np.array([[-1, 0]]))
    with pytest.raises(ContractError):
        forward(p, np.array([[0, 1]]), state=zero_state(ModelConfig(20, 8, 5), 1))
    with pytest.raises(ContractError):
        forward(p, np.array([0, 1]))


def test_backward_zero_dlogits():
    p = toy_model()
    ids, _ = toy_batch()
    tape, logits, _ = forward(p, ids)
    g = backward(tape, p, np.zeros_like(logits))
    assert all(np.all(t == 0) for t in g.tensors.values())
    with pytest.raises(ContractError):
        backward(tape, p, np.zeros((2, 2, 20)))


@pytest.mark.parametrize("tied", [False, True])
@pytest.mark.parametrize("dropout", [0.0, 0.5])
def test_finite_differences_baseline(tied, dropout):
    p = toy_model(tied=tied, dropout=dropout)
    ids, tgt = toy_batch()
    masks = sample_masks(p.config, 2, 11) if dropout else None
    assert fd_max_rel_error(p, ids, tgt, LOSS_MODES["baseline"], masks) <= 1e-5


def test_tied_gradient_is_sum_of_untied_paths():
    tied = toy_model(tied=True)
    cfg = ModelConfig(20, 8, 8)
    tensors = {k: v.copy() for k, v in tied.tensors.items()}
    tensors["W"] = tied["L"].T.copy()
    tensors["b"] = np.zeros(20)
    untied = ModelParams(cfg, tensors)
    ids = np.random.default_rng(1).integers(0, 20, (2, 2))
    d = np.random.default_rng(2).normal(size=(2, 2, 20))
    g_tied = backward(forward(tied, ids)[0], tied, d)
    g_untied = backward(forward(untied, ids)[0], untied, d)
    np.testing.assert_allclose(g_tied["L"], g_untied["L"] + g_untied["W"].T, atol=1e-13)


def test_renormalize_examples():
    p = init_params(ModelConfig(3, 2, 2))
    p["L"][:] = [[3.0, 0.6, 0.0], [4.0, 0.8, 0.0]]
    zero = renormalize_embedding_rows(p)
    np.testing.assert_allclose(p["L"][:, 0], [0.6, 0.8])
    np.testing.assert_allclose(p["L"][:, 1], [0.6, 0.8], atol=1e-12)
    assert zero == [2]
    assert np.all(p["L"][:, 2] == 0)


def test_mask_statistics_and_determinism():
    cfg = ModelConfig(10, 4, 1000, dropout_p=0.3)
    masks = sample_masks(cfg, 500, 9)
    values = np.concatenate([m.ravel() for m in masks])
    assert values.size == 1_000_000
    assert set(np.unique(values)) <= {0.0, 1 / 0.7}
    assert abs(np.mean(values > 0) - 0.7) <= 0.007
    again = sample_masks(cfg, 500, 9)
    assert all(np.array_equal(a, b) for a, b in zip(masks, again))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.booleans(), st.integers(1, 4), st.integers(1, 5))
def test_output_is_probability(seed, tied, batch, steps):
    p = toy_model(tied=tied, seed=seed)
    ids = np.random.default_rng(seed).integers(0, 20, (batch, steps))
    _, logits, _ = forward(p, ids)
    z = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    for tied in (False, True):
        p = toy_model(tied=tied)
        path = tmp_path / f"m{tied}.ckpt"
        save_checkpoint(path, p)
        q = load_checkpoint(path)
        assert q.config == p.config
        assert q.names() == p.names()
        ids, _ = toy_batch()
        assert forward(p, ids)[1].tobytes() == forward(q, ids)[1].tobytes()
        save_checkpoint(tmp_path / "again.ckpt", q)
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    p = init_params(ModelConfig(3, 2, 2, num_layers=1, tie_weights=True))
    save_checkpoint(tmp_path / "c.ckpt", p)
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw.startswith(CHECKPOINT_MAGIC)
    header, _, body = raw[len(CHECKPOINT_MAGIC):].partition(b"\n\n")
    keys = [line.split(b"=")[0].decode() for line in header.split(b"\n")]
    assert keys == ["vocab_size", "embed_dim", "hidden_dim", "num_layers", "tie_weights",
                    "dropout_p", "unit_norm_embeddings", "seed"]
    count, _, rest = body.partition(b"\n")
    assert int(count) == len(param_shapes(p.config)) == 4
    name_line, _, data = rest.partition(b"\n")
    assert name_line == b"L 2 3"
    np.testing.assert_array_equal(np.frombuffer(data[:48], "<f8").reshape(2, 3), p["L"])
    # the bias of the single layer is stored as a column
    assert b"b0 8 1\n" in raw


def test_checkpoint_rejects_corruption(tmp_path):
    p = toy_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    for blob in (b"XIEDLM1\n" + raw[8:], raw[:-8], raw + b"\0", raw[:40]):
        bad.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
