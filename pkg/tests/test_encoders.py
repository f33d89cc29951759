import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionseq import autodiff as ad
from fusionseq.autodiff import DimensionError, SeededRng, Tensor, finite_difference_check
from fusionseq.encoders import (PAD, UNK, EmbeddingTable, GruParams, Vocabulary, bigru_read,
                                embed_tokens, encode_sequence, gru_cell_step, init_bigru, last_valid)
from fusionseq.errors import ConfigError, EmptySequenceError, VocabularyError
from fusionseq.params import ParamStore


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def zero_gru(d_in, d):
    return GruParams(Tensor(np.zeros((d_in, 3 * d))), Tensor(np.zeros((d, 3 * d))),
                     Tensor(np.zeros(3 * d)))


def random_gru(seed, d_in, d, scale=0.5):
    rng = SeededRng(seed)
    return GruParams(Tensor(rng.normal((d_in, 3 * d), scale)), Tensor(rng.normal((d, 3 * d), scale)),
                     Tensor(rng.normal(3 * d, scale)))


def scalar_gru(x, h, p):
    """Per-component loop over the GRU equations, gate blocks (z, r, candidate)."""
    W, U, b = p.W.data, p.U.data, p.b.data
    d = len(h)
    z = np.zeros(d)
    r = np.zeros(d)
    for j in range(d):
        z[j] = sigmoid(sum(x[i] * W[i, j] for i in range(len(x))) + sum(h[k] * U[k, j] for k in range(d)) + b[j])
        r[j] = sigmoid(sum(x[i] * W[i, d + j] for i in range(len(x)))
                       + sum(h[k] * U[k, d + j] for k in range(d)) + b[d + j])
    out = np.zeros(d)
    for j in range(d):
        cand = np.tanh(sum(x[i] * W[i, 2 * d + j] for i in range(len(x)))
                       + sum(r[k] * h[k] * U[k, 2 * d + j] for k in range(d)) + b[2 * d + j])
        out[j] = (1 - z[j]) * h[j] + z[j] * cand
    return out


# --- vocabulary and embeddings ---------------------------------------------

def test_vocabulary_reserved_ids():
    v = Vocabulary(["hello"])
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert v.id("hello") == 4 and v.id("nope") == UNK


def test_vocabulary_from_corpus_threshold_and_order():
    v = Vocabulary.from_corpus([["b", "a", "a", "b", "c", "c", "c", "d"]], min_freq=2)
    assert v.itos[4:] == ["c", "a", "b"]


def test_vocabulary_round_trip():
    v = Vocabulary(["x", "y"])
    assert Vocabulary.from_list(v.to_list()) == v
    assert v.decode(v.encode(["x", "y"]) + [2, 5]) == ["x", "y"]


def test_embed_pad_row_is_zero():
    store = ParamStore(SeededRng(0))
    table = EmbeddingTable.create(store, "e", 6, 4)
    out = embed_tokens([PAD], table)
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_embed_repeated_ids_identical_rows():
    table = EmbeddingTable.create(ParamStore(SeededRng(0)), "e", 6, 4)
    out = embed_tokens([5, 5], table)
    np.testing.assert_array_equal(out.data[0], out.data[1])


def test_embed_out_of_range():
    table = EmbeddingTable.create(ParamStore(SeededRng(0)), "e", 6, 4)
    with pytest.raises(VocabularyError):
        embed_tokens([6], table)


def test_embedding_gradient_rows_fd():
    table = EmbeddingTable.create(ParamStore(SeededRng(1)), "e", 6, 3)
    w = Tensor(SeededRng(2).normal((3, 3)))
    f = lambda t: (ad.embedding(t, [5, 3, 5]) * w).sum()
    assert finite_difference_check(f, table.weight) <= 1e-8
    np.testing.assert_array_equal(table.weight.grad[[0, 1, 2, 4]], 0.0)
    assert np.all(table.weight.grad[[3, 5]] != 0)


def test_pad_row_gets_no_gradient():
    table = EmbeddingTable.create(ParamStore(SeededRng(1)), "e", 6, 3)
    with ad.Tape() as tape:
        out = (ad.embedding(table.weight, [0, 2, 0]) * 2.0).sum()
    ad.backward(out, tape)
    np.testing.assert_array_equal(table.weight.grad[0], 0.0)


# --- GRU cell ----------------------------------------------------------------

def test_gru_zero_params_halves_state():
    out = gru_cell_step(Tensor(np.zeros(3)), Tensor([4.0, -2.0]), zero_gru(3, 2))
    np.testing.assert_allclose(out.data, [2.0, -1.0])


def test_gru_recurrent_only_when_input_zero():
    p = random_gru(0, 3, 2)
    p_no_in = GruParams(Tensor(np.zeros_like(p.W.data)), p.U, p.b)
    h = Tensor([0.3, -0.7])
    np.testing.assert_allclose(gru_cell_step(Tensor(np.zeros(3)), h, p).data,
                               gru_cell_step(Tensor(np.zeros(3)), h, p_no_in).data)


@pytest.mark.parametrize("seed", range(5))
def test_gru_matches_scalar_oracle(seed):
    rng = SeededRng(100 + seed)
    p = random_gru(seed, 3, 3)
    x, h = rng.normal(3), rng.normal(3)
    np.testing.assert_allclose(gru_cell_step(Tensor(x), Tensor(h), p).data, scalar_gru(x, h, p),
                               atol=1e-12)


def test_gru_shape_errors():
    with pytest.raises(DimensionError):
        gru_cell_step(Tensor(np.zeros(4)), Tensor(np.zeros(2)), zero_gru(3, 2))
    with pytest.raises(DimensionError):
        gru_cell_step(Tensor(np.zeros(3)), Tensor(np.zeros(3)), zero_gru(3, 2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_gru_output_is_between_state_and_unit_interval(seed):
    rng = SeededRng(seed)
    p = random_gru(seed, 2, 4, scale=2.0)
    h = rng.normal(4, 3.0)
    out = gru_cell_step(Tensor(rng.normal(2, 3.0)), Tensor(h), p).data
    assert np.all(out >= np.minimum(h, -1) - 1e-12)
    assert np.all(out <= np.maximum(h, 1) + 1e-12)


# --- sequence encoders -------------------------------------------------------

def test_encode_single_step():
    p = random_gru(3, 2, 3)
    x = Tensor(SeededRng(4).normal((1, 2)))
    enc = encode_sequence(x, p)
    expected = gru_cell_step(x[0], Tensor(np.zeros(3)), p)
    np.testing.assert_allclose(enc.states.data, expected.data[None])
    np.testing.assert_array_equal(enc.last.data, enc.states.data[-1])


def test_encode_zero_params_halves_thrice():
    enc = encode_sequence(Tensor(np.zeros((3, 2))), zero_gru(2, 1), h0=Tensor([8.0]))
    np.testing.assert_allclose(enc.last.data, [1.0])


def test_encode_matches_manual_unroll():
    p = random_gru(5, 3, 4)
    x = SeededRng(6).normal((4, 3))
    h = np.zeros(4)
    rows = []
    for t in range(4):
        h = scalar_gru(x[t], h, p)
        rows.append(h)
    enc = encode_sequence(Tensor(x), p)
    np.testing.assert_allclose(enc.states.data, np.array(rows), atol=1e-12)


def test_encode_empty_sequence():
    with pytest.raises(EmptySequenceError):
        encode_sequence(Tensor(np.zeros((0, 2))), zero_gru(2, 2))


def test_masked_batch_matches_unpadded_runs():
    p = random_gru(7, 3, 4)
    rng = SeededRng(8)
    a, b = rng.normal((5, 3)), rng.normal((2, 3))
    batch = np.zeros((2, 5, 3))
    batch[0], batch[1, :2] = a, b
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 0, 0, 0]], dtype=float)
    enc = encode_sequence(Tensor(batch), p, mask=mask)
    np.testing.assert_allclose(enc.last.data[0], encode_sequence(Tensor(a), p).last.data, atol=1e-12)
    np.testing.assert_allclose(enc.last.data[1], encode_sequence(Tensor(b), p).last.data, atol=1e-12)
    np.testing.assert_allclose(last_valid(enc.states, mask).data, enc.last.data, atol=1e-12)


# --- bidirectional reader ----------------------------------------------------

def test_bigru_odd_width_rejected():
    with pytest.raises(ConfigError):
        init_bigru(ParamStore(SeededRng(0)), "r", 4, 5)


def test_bigru_single_step():
    fwd, bwd = random_gru(1, 4, 2), random_gru(2, 4, 2)
    u = Tensor(SeededRng(3).normal((1, 4)))
    out = bigru_read(u, fwd, bwd).data[0]
    zero = Tensor(np.zeros(2))
    np.testing.assert_allclose(out, np.concatenate([gru_cell_step(u[0], zero, fwd).data,
                                                    gru_cell_step(u[0], zero, bwd).data]))


def test_bigru_palindrome_symmetry():
    p = random_gru(4, 4, 2)
    u = SeededRng(5).normal((2, 4))
    pal = np.concatenate([u, u[::-1]])  # length 4 palindrome
    out = bigru_read(Tensor(pal), p, p).data
    np.testing.assert_allclose(out[:, :2], out[::-1, 2:], atol=1e-12)


def test_bigru_equals_two_encoders():
    fwd, bwd = random_gru(6, 4, 2), random_gru(7, 4, 2)
    u = SeededRng(8).normal((3, 4))
    f = encode_sequence(Tensor(u), fwd).states.data
    b = encode_sequence(Tensor(u[::-1].copy()), bwd).states.data[::-1]
    np.testing.assert_allclose(bigru_read(Tensor(u), fwd, bwd).data, np.concatenate([f, b], axis=1),
                               atol=1e-12)


def test_bigru_causality_probe():
    fwd, bwd = random_gru(9, 4, 3), random_gru(10, 4, 3)
    u = SeededRng(11).normal((5, 4))
    base = bigru_read(Tensor(u), fwd, bwd).data
    t = 2
    later = u.copy()
    later[t + 1:] += 1.0
    earlier = u.copy()
    earlier[:t] += 1.0
    np.testing.assert_array_equal(bigru_read(Tensor(later), fwd, bwd).data[t, :3], base[t, :3])
    np.testing.assert_array_equal(bigru_read(Tensor(earlier), fwd, bwd).data[t, 3:], base[t, 3:])


def test_encoder_gradients():
    p = random_gru(12, 3, 4)
    x = Tensor(SeededRng(13).normal((4, 3)))
    f = lambda xs: (encode_sequence(xs[0], GruParams(xs[1], xs[2], xs[3])).states * 0.7).sum()
    assert finite_difference_check(f, [x, p.W, p.U, p.b]) <= 1e-6
