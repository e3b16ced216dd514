import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biphase.encoder import (
    HiddenStates,
    ToyEncoder,
    apply_template_k,
    compute_memberships,
    compute_memberships_batch,
    encode,
    term_membership,
    term_scores,
    top_k_entries,
    topic_membership,
)
from biphase.errors import ConfigError, DataError
from biphase.fileio import FileFormatError


def small_encoder(w=6, d=3, m=4, seed=0):
    return ToyEncoder.random(w, d, m, seed)


def manual_encoder(token_emb, seq_proj=None, topics=None, bias=None, w1=None, b1=None, w2=None, b2=0.0):
    token_emb = np.asarray(token_emb, dtype=float)
    w, d = token_emb.shape
    return ToyEncoder(
        token_emb=token_emb,
        seq_proj=np.eye(d) if seq_proj is None else seq_proj,
        topics=np.eye(d) if topics is None else np.asarray(topics, dtype=float),
        topic_bias=np.zeros(d) if bias is None else np.asarray(bias, dtype=float),
        mlp_w1=np.eye(d) if w1 is None else np.asarray(w1, dtype=float),
        mlp_b1=np.zeros(d) if b1 is None else np.asarray(b1, dtype=float),
        mlp_w2=np.ones(d) if w2 is None else np.asarray(w2, dtype=float),
        mlp_b2=np.asarray(b2, dtype=float),
    )


class TestEncode:
    def test_identity_projection_single_token(self):
        enc = manual_encoder([[2.0, -1.0, 0.5], [0.0, 0.0, 0.0]])
        hs = encode(enc, [0])
        np.testing.assert_allclose(hs.h0, [2.0, -1.0, 0.5])

    def test_opposite_embeddings_cancel(self):
        enc = manual_encoder([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
        hs = encode(enc, [0, 1])
        np.testing.assert_allclose(hs.h0, np.zeros(3), atol=1e-15)

    def test_seeded_matches_matrix_arithmetic(self):
        enc = small_encoder(seed=3)
        tokens = [1, 4]
        hs = encode(enc, tokens)
        # standalone recomputation from the raw parameter arrays
        mean = (enc.token_emb[1] + enc.token_emb[4]) / 2.0
        expected = enc.seq_proj.dot(mean)
        np.testing.assert_allclose(hs.h0, expected, atol=1e-6)
        np.testing.assert_allclose(hs.per_token, enc.token_emb[[1, 4]])

    def test_empty_sequence_is_error(self):
        with pytest.raises(DataError):
            encode(small_encoder(), [])


class TestTopicMembership:
    def test_zero_state_returns_bias(self):
        enc = small_encoder(seed=1)
        np.testing.assert_allclose(
            topic_membership(enc, np.zeros(enc.dim)), enc.topic_bias
        )

    def test_identity_topics(self):
        enc = manual_encoder(np.zeros((2, 3)), topics=np.eye(3), bias=np.zeros(3))
        np.testing.assert_allclose(
            topic_membership(enc, np.array([2.0, -1.0, 0.0])), [2.0, -1.0, 0.0]
        )

    def test_seeded_matches_matvec_oracle(self):
        rng = np.random.default_rng(7)
        topics = rng.normal(size=(3, 2))
        bias = np.array([0.1, 0.2, 0.3])
        enc = manual_encoder(
            np.zeros((2, 2)), topics=topics, bias=bias,
            w1=np.eye(2), w2=np.ones(2),
        )
        h0 = rng.normal(size=2)
        expected = np.array([topics[i, 0] * h0[0] + topics[i, 1] * h0[1] + bias[i] for i in range(3)])
        np.testing.assert_allclose(topic_membership(enc, h0), expected, atol=1e-6)

    def test_linear_in_h0_up_to_bias(self):
        enc = small_encoder(seed=9)
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=enc.dim), rng.normal(size=enc.dim)
        a, c = 0.7, -1.3
        lhs = topic_membership(enc, a * x + c * y)
        rhs = a * topic_membership(enc, x) + c * topic_membership(enc, y) + (1 - a - c) * enc.topic_bias
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestTermMembership:
    def test_all_negative_scores_empty(self):
        # outer pre-activation is -1 for every token
        enc = manual_encoder(np.zeros((3, 2)), w2=np.ones(2), b2=-1.0)
        hs = encode(enc, [0, 1])
        assert term_membership(enc, [0, 1], hs) == {}

    def test_max_over_occurrences(self):
        # hand-built hidden states give token 7's two occurrences pre-clamp
        # scores 0.3 and 0.7; the membership keeps the max
        enc = manual_encoder(np.zeros((8, 1)), w1=[[1.0]], w2=[1.0], b2=0.0)
        hs = HiddenStates(h0=np.zeros(1), per_token=np.array([[0.3], [0.7]]))
        assert term_membership(enc, [7, 7], hs) == {7: pytest.approx(0.7)}

    def test_absent_token_not_in_map(self):
        enc = manual_encoder(np.ones((10, 2)), b2=1.0)
        hs = encode(enc, [1, 2])
        result = term_membership(enc, [1, 2], hs)
        assert 9 not in result

    def test_scores_match_two_layer_oracle(self):
        enc = small_encoder(w=5, d=4, seed=11)
        hs = encode(enc, [0, 2, 4])
        got = term_scores(enc, hs.per_token)
        for j in range(3):
            inner = np.maximum(enc.mlp_w1 @ hs.per_token[j] + enc.mlp_b1, 0.0)
            expected = max(float(enc.mlp_w2 @ inner + enc.mlp_b2), 0.0)
            assert got[j] == pytest.approx(expected, abs=1e-12)

    def test_values_strictly_positive(self):
        enc = small_encoder(seed=5)
        hs = encode(enc, [0, 1, 2, 3])
        assert all(v > 0 for v in term_membership(enc, [0, 1, 2, 3], hs).values())

    def test_mismatched_states_rejected(self):
        enc = small_encoder()
        hs = encode(enc, [0, 1])
        with pytest.raises(DataError):
            term_membership(enc, [0], hs)


class TestTopKEntries:
    def test_dense_basic(self):
        assert top_k_entries(np.array([3.0, 1.0, 2.0]), 2) == [0, 2]

    def test_tie_break_smaller_id(self):
        assert top_k_entries(np.array([1.0, 1.0, 1.0]), 2) == [0, 1]

    def test_sparse_underfull(self):
        assert top_k_entries({5: 0.2}, 16) == [5]

    def test_sparse_tie_break(self):
        assert top_k_entries({9: 1.0, 4: 1.0, 2: 0.5}, 2) == [4, 9]

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.integers(1, 12))
    def test_nested_prefixes(self, values, k):
        arr = np.array(values)
        k = min(k, len(values))
        if k >= 2:
            assert set(top_k_entries(arr, k - 1)) <= set(top_k_entries(arr, k))


class TestApplyTemplateK:
    def test_masks_outside_top_k(self):
        np.testing.assert_array_equal(
            apply_template_k(np.array([3.0, 1.0, 2.0]), 2), [3.0, 0.0, 2.0]
        )

    def test_k_equal_m_is_identity(self):
        phi = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(apply_template_k(phi, 3), phi)

    def test_negative_values_still_selected(self):
        np.testing.assert_array_equal(
            apply_template_k(np.array([-1.0, -2.0, -3.0]), 1), [-1.0, 0.0, 0.0]
        )

    def test_k_above_m_rejected(self):
        with pytest.raises(ConfigError):
            apply_template_k(np.array([1.0]), 2)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=10), st.integers(0, 10))
    def test_bounded_support(self, values, k):
        phi = np.array(values)
        k = min(k, len(values))
        assert np.count_nonzero(apply_template_k(phi, k)) <= k

    @given(st.lists(st.floats(0.001, 10), min_size=1, max_size=10), st.integers(0, 10))
    def test_idempotent_when_selected_values_positive(self, values, k):
        # Masking can only be a fixed point when the kept values outrank the
        # zeros it introduces, i.e. when the selected entries are positive,
        # the situation for real memberships chosen for indexing.
        phi = np.array(values)
        k = min(k, len(values))
        once = apply_template_k(phi, k)
        np.testing.assert_array_equal(apply_template_k(once, k), once)

    @given(
        st.lists(st.floats(0.1, 10), min_size=1, max_size=10, unique=True),
        st.integers(1, 10),
    )
    def test_support_equals_top_k_for_positive_values(self, values, k):
        phi = np.array(values)
        k = min(k, len(values))
        support = sorted(np.flatnonzero(apply_template_k(phi, k)))
        assert support == top_k_entries(phi, k)


class TestComputeMemberships:
    def test_empty_tokens_error(self):
        with pytest.raises(DataError):
            compute_memberships(small_encoder(), [], 2)

    def test_single_token_term_part(self):
        mem = compute_memberships(small_encoder(seed=2), [3], 2)
        assert len(mem.term) <= 1

    def test_seeded_equals_composition(self):
        enc = small_encoder(w=8, d=4, m=5, seed=13)
        tokens = [0, 3, 3, 7]
        mem = compute_memberships(enc, tokens, 2)
        hs = encode(enc, tokens)
        np.testing.assert_allclose(
            mem.topic, apply_template_k(topic_membership(enc, hs.h0), 2)
        )
        assert mem.term == term_membership(enc, tokens, hs)

    def test_batch_matches_single(self):
        enc = small_encoder(w=9, d=4, m=6, seed=17)
        seqs = [[0, 1], [5, 5, 2], [8]]
        batch = compute_memberships_batch(enc, seqs, 3)
        for seq, got in zip(seqs, batch):
            want = compute_memberships(enc, seq, 3)
            np.testing.assert_allclose(got.topic, want.topic, atol=1e-12)
            assert set(got.term) == set(want.term)
            for tid, val in want.term.items():
                assert got.term[tid] == pytest.approx(val, abs=1e-12)

    def test_batch_returns_states(self):
        enc = small_encoder(seed=19)
        seqs = [[0, 1, 2], [3]]
        _, states = compute_memberships_batch(enc, seqs, 2, return_states=True)
        for i, seq in enumerate(seqs):
            np.testing.assert_allclose(states[i], encode(enc, seq).h0, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip_after_quantize(self, tmp_path):
        enc = small_encoder(w=7, d=3, m=5, seed=23).quantized()
        path = tmp_path / "enc.bin"
        enc.save(str(path))
        loaded = ToyEncoder.load(str(path))
        for name, arr in enc.params().items():
            np.testing.assert_array_equal(arr, loaded.params()[name])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "enc.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FileFormatError):
            ToyEncoder.load(str(path))

    def test_truncated(self, tmp_path):
        enc = small_encoder()
        path = tmp_path / "enc.bin"
        enc.save(str(path))
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FileFormatError):
            ToyEncoder.load(str(path))
