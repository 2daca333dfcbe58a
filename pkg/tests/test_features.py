import numpy as np
import pytest

from simvec import EmbeddingSet, SimVecConfig, abs_diff, extract_sim_vec, hadamard
from simvec.errors import ConfigError, ShapeError, ValidationError
from simvec.features import (MODE_FULL, MODE_RAW, feature_rows, token_count,
                             tokenize, tokenize_backward)

from helpers import random_embedding_set


def sve_oracle(e):
    """Independent double-loop elementwise reference for the feature groups."""
    n = e.n_refs
    d_clip, d_rb = e.d_clip, e.d_rb
    h_clip = np.zeros((n + 1, d_clip))
    dd_clip = np.zeros((n + 1, d_clip))
    for k in range(d_clip):
        h_clip[0][k] = e.c_clip[k] * e.v[k]
        dd_clip[0][k] = abs(e.c_clip[k] - e.v[k])
        for i in range(n):
            h_clip[i + 1][k] = e.c_clip[k] * e.r_clip[i][k]
            dd_clip[i + 1][k] = abs(e.c_clip[k] - e.r_clip[i][k])
    h_rb = np.zeros((n, d_rb))
    dd_rb = np.zeros((n, d_rb))
    for k in range(d_rb):
        for i in range(n):
            h_rb[i][k] = e.c_rb[k] * e.r_rb[i][k]
            dd_rb[i][k] = abs(e.c_rb[k] - e.r_rb[i][k])
    return h_clip, dd_clip, h_rb, dd_rb


def make_projections(rng, d_clip, d_rb, d_model):
    return {
        "clip": (rng.normal(size=(d_clip, d_model)), rng.normal(size=d_model)),
        "rb": (rng.normal(size=(d_rb, d_model)), rng.normal(size=d_model)),
    }


class TestElementwiseOps:
    def test_hadamard_hand(self):
        assert np.array_equal(hadamard(np.array([1.0, 2.0]),
                                       np.array([3.0, 4.0])), [3.0, 8.0])

    def test_hadamard_identity_and_zero(self, rng):
        a = rng.normal(size=7)
        assert np.array_equal(hadamard(a, np.ones(7)), a)
        assert np.array_equal(hadamard(a, np.zeros(7)), np.zeros(7))

    def test_hadamard_shape_error(self):
        with pytest.raises(ShapeError):
            hadamard(np.ones(3), np.ones(4))

    def test_abs_diff_hand(self):
        assert np.array_equal(abs_diff(np.array([1.0, 5.0]),
                                       np.array([4.0, 2.0])), [3.0, 3.0])

    def test_abs_diff_self_is_zero(self, rng):
        a = rng.normal(size=5)
        assert np.array_equal(abs_diff(a, a), np.zeros(5))

    def test_abs_diff_symmetric(self, rng):
        a, b = rng.normal(size=9), rng.normal(size=9)
        assert np.array_equal(abs_diff(a, b), abs_diff(b, a))

    def test_abs_diff_shape_error(self):
        with pytest.raises(ShapeError):
            abs_diff(np.ones(2), np.ones(3))


class TestExtractSimVec:
    def test_hand_example(self):
        e = EmbeddingSet(v=[3.0, 4.0], c_clip=[1.0, 2.0],
                         r_clip=[[0.0, 1.0]], c_rb=[1.0], r_rb=[[1.0]])
        f = extract_sim_vec(e)
        assert np.array_equal(f.h_clip, [[3.0, 8.0], [0.0, 2.0]])
        assert np.array_equal(f.dd_clip, [[2.0, 2.0], [1.0, 1.0]])

    def test_degenerate_equality(self):
        c = np.array([0.5, -1.5, 2.0])
        e = EmbeddingSet(v=c, c_clip=c, r_clip=c[None, :],
                         c_rb=[1.0], r_rb=[[1.0]])
        f = extract_sim_vec(e)
        assert np.array_equal(f.dd_clip, np.zeros((2, 3)))
        assert np.allclose(f.h_clip, np.vstack([c * c, c * c]))

    def test_group_sizes_n4(self, rng):
        f = extract_sim_vec(random_embedding_set(rng, 4, 6, 5))
        assert (f.h_clip.shape[0], f.dd_clip.shape[0],
                f.h_rb.shape[0], f.dd_rb.shape[0]) == (5, 5, 4, 4)

    def test_matches_bruteforce_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 4))
            d_clip = int(rng.integers(1, 9))
            d_rb = int(rng.integers(1, 9))
            e = random_embedding_set(rng, n, d_clip, d_rb)
            f = extract_sim_vec(e)
            h_clip, dd_clip, h_rb, dd_rb = sve_oracle(e)
            assert np.array_equal(f.h_clip, h_clip)
            assert np.array_equal(f.dd_clip, dd_clip)
            assert np.array_equal(f.h_rb, h_rb)
            assert np.array_equal(f.dd_rb, dd_rb)

    def test_differences_nonnegative(self, rng):
        f = extract_sim_vec(random_embedding_set(rng, 3, 8, 8))
        assert np.all(f.dd_clip >= 0) and np.all(f.dd_rb >= 0)

    def test_raw_inputs_excluded(self, rng):
        e = random_embedding_set(rng, 2, 6, 6)
        raws = [np.asarray(e.v), np.asarray(e.c_clip), np.asarray(e.c_rb),
                *np.atleast_2d(e.r_clip), *np.atleast_2d(e.r_rb)]
        for _, _, vec in feature_rows(e, MODE_FULL):
            for raw in raws:
                assert not np.array_equal(vec, raw)


class TestTokenize:
    def _tok(self, rng, e, mode, d_model=4):
        cfg = SimVecConfig(d_clip=e.d_clip, d_rb=e.d_rb, d_model=d_model,
                           max_refs=8, mode=mode)
        proj = make_projections(rng, e.d_clip, e.d_rb, d_model)
        cls = rng.normal(size=d_model)
        return tokenize(e, proj, cls, cfg), proj, cls

    def test_token_counts(self, rng):
        for n, mode, expected in [(1, MODE_FULL, 7), (4, MODE_FULL, 19),
                                  (1, MODE_RAW, 6), (4, MODE_RAW, 12)]:
            e = random_embedding_set(rng, n, 5, 3)
            tok, _, _ = self._tok(rng, e, mode)
            assert len(tok) == expected == token_count(n, mode)

    def test_cls_at_position_zero(self, rng):
        e = random_embedding_set(rng, 2, 5, 3)
        tok, _, cls = self._tok(rng, e, MODE_FULL)
        assert np.array_equal(tok.tokens[0], cls)
        assert tok.source_tags[0] == "cls"

    def test_group_order(self, rng):
        e = random_embedding_set(rng, 2, 5, 3)
        tok, _, _ = self._tok(rng, e, MODE_FULL)
        groups = [t.split(":")[0] for t in tok.source_tags[1:]]
        assert groups == (["h_clip"] * 3 + ["dd_clip"] * 3
                          + ["h_rb"] * 2 + ["dd_rb"] * 2)

    def test_projection_applied(self, rng):
        e = random_embedding_set(rng, 1, 5, 3)
        tok, proj, _ = self._tok(rng, e, MODE_FULL)
        w, b = proj["clip"]
        f = extract_sim_vec(e)
        assert np.allclose(tok.tokens[1], f.h_clip[0] @ w + b)

    def test_missing_projection(self, rng):
        e = random_embedding_set(rng, 1, 5, 3)
        cfg = SimVecConfig(d_clip=5, d_rb=3, d_model=4, mode=MODE_FULL)
        proj = {"clip": make_projections(rng, 5, 3, 4)["clip"]}
        with pytest.raises(ConfigError):
            tokenize(e, proj, rng.normal(size=4), cfg)

    def test_too_many_refs_rejected(self, rng):
        e = random_embedding_set(rng, 3, 5, 3)
        cfg = SimVecConfig(d_clip=5, d_rb=3, d_model=4, max_refs=2,
                           mode=MODE_FULL)
        proj = make_projections(rng, 5, 3, 4)
        with pytest.raises(ValidationError):
            tokenize(e, proj, rng.normal(size=4), cfg)

    def test_reference_permutation_equivariance(self, rng):
        e = random_embedding_set(rng, 4, 6, 5)
        perm = [2, 0, 3, 1]
        tok, proj, cls = self._tok(rng, e, MODE_FULL)
        cfg = SimVecConfig(d_clip=6, d_rb=5, d_model=4, max_refs=8,
                           mode=MODE_FULL)
        tok_p = tokenize(e.permuted_refs(perm), proj, cls, cfg)
        # CLS and image-derived tokens fixed
        for fixed in ("cls", "h_clip:img", "dd_clip:img"):
            i = tok.source_tags.index(fixed)
            assert np.array_equal(tok.tokens[i], tok_p.tokens[i])
        # reference tokens permute within their group
        for group, n in [("h_clip", 4), ("dd_clip", 4), ("h_rb", 4),
                         ("dd_rb", 4)]:
            for new_pos, old_pos in enumerate(perm):
                i_old = tok.source_tags.index(f"{group}:ref{old_pos}")
                i_new = tok_p.source_tags.index(f"{group}:ref{new_pos}")
                assert np.array_equal(tok.tokens[i_old], tok_p.tokens[i_new])

    def test_backward_matches_finite_difference(self, rng):
        e = random_embedding_set(rng, 2, 5, 3)
        cfg = SimVecConfig(d_clip=5, d_rb=3, d_model=4, mode=MODE_FULL)
        proj = make_projections(rng, 5, 3, 4)
        cls = rng.normal(size=4)
        tok = tokenize(e, proj, cls, cfg)
        weights = rng.normal(size=tok.tokens.shape)  # arbitrary cotangent
        grads, d_cls = tokenize_backward(weights, tok, proj)
        h = 1e-6
        w = proj["clip"][0]
        idx = (1, 2)
        orig = w[idx]
        for sign in (1, -1):
            w[idx] = orig + sign * h
            t = tokenize(e, proj, cls, cfg)
            if sign == 1:
                fp = float((t.tokens * weights).sum())
            else:
                fm = float((t.tokens * weights).sum())
        w[idx] = orig
        fd = (fp - fm) / (2 * h)
        assert abs(fd - grads["clip"][0][idx]) < 1e-5
        assert np.array_equal(d_cls, weights[0])
