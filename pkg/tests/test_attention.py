import numpy as np
import pytest

from proxyseg.attention import (
    AttentionConfig,
    apply_attention,
    attention_scores,
    build_mask,
    normalize_similarity,
    similarity,
)
from proxyseg.errors import ConfigError, ProxysegError, ShapeError
from proxyseg.feature_io import ClipHeadWeights, WindowFeatures


def make_window(rng, seq_x=16, x_grid=(4, 4), dx=5, seq_v=4, v_grid=(2, 2), dv=3, n=2, with_qk=True):
    return WindowFeatures(
        rect=(0, 0, 16, 16),
        x_vfm=rng.randn(seq_x, dx).astype(np.float32),
        x_grid=x_grid,
        v_clip=rng.randn(n, seq_v, dv).astype(np.float32),
        v_grid=v_grid,
        q_clip=rng.randn(n, seq_v, dv).astype(np.float32) if with_qk else None,
        k_clip=rng.randn(n, seq_v, dv).astype(np.float32) if with_qk else None,
    )


def make_weights(rng, d, d_joint, identity=False):
    if identity:
        return ClipHeadWeights(
            out_proj_weight=np.eye(d, dtype=np.float32),
            out_proj_bias=np.zeros(d, dtype=np.float32),
            ln_post_weight=np.ones(d, dtype=np.float32),
            ln_post_bias=np.zeros(d, dtype=np.float32),
            ln_eps=1e-5,
            visual_proj=np.eye(d, d_joint, dtype=np.float32),
        )
    return ClipHeadWeights(
        out_proj_weight=(rng.randn(d, d) * 0.3).astype(np.float32),
        out_proj_bias=(rng.randn(d) * 0.1).astype(np.float32),
        ln_post_weight=(1.0 + 0.05 * rng.randn(d)).astype(np.float32),
        ln_post_bias=(0.01 * rng.randn(d)).astype(np.float32),
        ln_eps=1e-5,
        visual_proj=(rng.randn(d, d_joint) * 0.4).astype(np.float32),
    )


class TestConfig:
    def test_defaults(self):
        cfg = AttentionConfig()
        assert cfg.beta == 1.2 and cfg.gamma == 3.0
        assert cfg.mask_mode == "adaptive" and cfg.attn_source == "proxy"

    def test_bad_mask_mode(self):
        with pytest.raises(ConfigError) as exc:
            AttentionConfig(mask_mode="soft")
        assert exc.value.field == "mask_mode"

    def test_bad_source(self):
        with pytest.raises(ConfigError):
            AttentionConfig(attn_source="runway")

    def test_gamma_must_be_positive(self):
        with pytest.raises(ConfigError):
            AttentionConfig(gamma=0.0)
        with pytest.raises(ConfigError):
            AttentionConfig(gamma=-1.0)

    def test_alpha_must_be_finite_in_hard_mode(self):
        with pytest.raises(ConfigError):
            AttentionConfig(mask_mode="hard", alpha=float("nan"))
        AttentionConfig(mask_mode="hard", alpha=0.4)


class TestSimilarity:
    def test_orthonormal_rows_give_identity(self, backend):
        s = similarity(np.eye(3, dtype=np.float32))
        assert np.allclose(s, np.eye(3), atol=1e-7)

    def test_identical_rows_give_ones(self, backend):
        x = np.array([[2.0, 1.0], [2.0, 1.0]], dtype=np.float32)
        assert np.allclose(similarity(x), np.ones((2, 2)), atol=1e-7)

    def test_symmetric_unit_diagonal_bounded(self, backend, rng):
        s = similarity(rng.randn(9, 4).astype(np.float32))
        assert np.allclose(s, s.T, atol=1e-6)
        assert np.allclose(np.diag(s), 1.0, atol=1e-6)
        assert s.min() >= -1.0 - 1e-6 and s.max() <= 1.0 + 1e-6

    def test_against_pairwise_dot_oracle(self, backend, rng):
        x = rng.randn(5, 3).astype(np.float32)
        s = similarity(x)
        xn = x.astype(np.float64)
        xn /= np.linalg.norm(xn, axis=1, keepdims=True)
        for i in range(5):
            for j in range(5):
                assert abs(s[i, j] - float(np.dot(xn[i], xn[j]))) < 1e-6

    def test_rejects_non_matrix(self):
        with pytest.raises(ShapeError):
            similarity(np.zeros((2, 2, 2), dtype=np.float32))


class TestNormalizeSimilarity:
    def test_worked_example(self):
        s = np.eye(2, dtype=np.float32)
        a = normalize_similarity(s, beta=1.2, gamma=3.0)
        expected = np.array([[1.2, -1.8], [-1.8, 1.2]])
        assert np.allclose(a, expected, atol=1e-6)

    def test_zero_beta_is_pure_scaling(self, rng):
        s = rng.randn(4, 4)
        assert np.allclose(normalize_similarity(s, 0.0, 2.5), 2.5 * s, atol=0)

    def test_mean_includes_diagonal(self):
        # 2x2 with distinct diagonal: mean over all 4 entries, not just off-diagonal
        s = np.array([[1.0, 0.0], [0.0, 0.0]])
        a = normalize_similarity(s, beta=1.0, gamma=1.0)
        assert np.allclose(a, s - 0.25, atol=1e-12)

    def test_scalar_oracle(self, rng):
        s = rng.randn(6, 6)
        beta, gamma = 1.2, 3.0
        a = normalize_similarity(s, beta, gamma)
        mean = sum(float(v) for v in s.ravel()) / s.size
        for i in range(6):
            for j in range(6):
                assert abs(a[i, j] - gamma * (s[i, j] - beta * mean)) < 1e-6


class TestBuildMask:
    def test_adaptive_worked_example(self):
        a = np.array([[1.2, -1.8], [-1.8, 1.2]])
        m = build_mask(a, "adaptive")
        assert m[0, 0] == 0.0 and m[1, 1] == 0.0
        assert np.isneginf(m[0, 1]) and np.isneginf(m[1, 0])

    def test_hard_all_ones_high_threshold_keeps_all(self):
        m = build_mask(np.ones((3, 3)), "hard", alpha=0.8)
        assert np.array_equal(m, np.zeros((3, 3)))

    def test_diagonal_always_kept(self):
        a = -np.ones((4, 4))
        m = build_mask(a, "adaptive")
        assert np.all(np.diag(m) == 0.0)
        off = ~np.eye(4, dtype=bool)
        assert np.all(np.isneginf(m[off]))

    def test_adaptive_equals_hard_at_shifted_threshold(self, rng):
        # A_ij >= 0 iff S_ij >= beta * mean(S): the two modes mask the same set
        beta, gamma = 1.2, 3.0
        for _ in range(100):
            x = rng.randn(rng.randint(2, 9), rng.randint(2, 6)).astype(np.float32)
            s = similarity(x)
            a = normalize_similarity(s, beta, gamma)
            adaptive = build_mask(a, "adaptive")
            hard = build_mask(s, "hard", alpha=beta * np.mean(s))
            assert np.array_equal(np.isneginf(adaptive), np.isneginf(hard))

    def test_mask_fraction_monotone_in_alpha(self, rng):
        s = similarity(rng.randn(8, 4).astype(np.float32))
        fractions = []
        for alpha in (0.0, 0.2, 0.4, 0.6, 0.8):
            m = build_mask(s, "hard", alpha=alpha)
            fractions.append(np.isneginf(m).mean())
        assert all(b >= a for a, b in zip(fractions, fractions[1:]))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            build_mask(np.zeros((2, 3)), "adaptive")


class TestAttentionScores:
    def test_orthonormal_features_give_identity_attention(self, backend):
        win = WindowFeatures(
            rect=(0, 0, 4, 4),
            x_vfm=np.eye(2, dtype=np.float32),
            x_grid=(1, 2),
            v_clip=np.zeros((1, 2, 3), dtype=np.float32),
            v_grid=(1, 2),
        )
        res = attention_scores(win, AttentionConfig())
        assert np.allclose(res.attn, np.eye(2), atol=1e-6)
        assert res.grid == (1, 2)
        assert res.mask_fraction == pytest.approx(0.5)

    def test_rows_sum_to_one(self, backend, rng):
        win = make_window(rng)
        for mode in ("adaptive", "hard", "none"):
            res = attention_scores(win, AttentionConfig(mask_mode=mode, alpha=0.2))
            sums = res.attn.sum(axis=-1)
            assert np.allclose(sums, 1.0, atol=1e-6)
            assert res.attn.min() >= 0.0 and res.attn.max() <= 1.0 + 1e-6

    def test_beta_invariance_without_mask(self, backend, rng):
        for _ in range(10):
            win = make_window(rng)
            a0 = attention_scores(win, AttentionConfig(beta=0.0, mask_mode="none"))
            a5 = attention_scores(win, AttentionConfig(beta=5.0, mask_mode="none"))
            assert np.abs(a0.attn.astype(np.float64) - a5.attn.astype(np.float64)).max() < 1e-6

    def test_masked_pairs_get_zero_weight(self, backend, rng):
        win = make_window(rng)
        cfg = AttentionConfig()
        res = attention_scores(win, cfg)
        s = similarity(win.x_vfm)
        a = normalize_similarity(s, cfg.beta, cfg.gamma)
        m = build_mask(a, "adaptive")
        assert np.all(res.attn[np.isneginf(m)] == 0.0)
        assert res.mask_fraction == pytest.approx(np.isneginf(m).mean())

    def test_constant_features_degenerate_to_identity(self, backend):
        win = WindowFeatures(
            rect=(0, 0, 4, 4),
            x_vfm=np.ones((4, 3), dtype=np.float32),
            x_grid=(2, 2),
            v_clip=np.zeros((1, 4, 2), dtype=np.float32),
            v_grid=(2, 2),
        )
        res = attention_scores(win, AttentionConfig(beta=1.2))
        assert np.isfinite(res.attn).all()
        assert np.allclose(res.attn, np.eye(4), atol=1e-7)

    def test_naive_oracle_proxy(self, backend, rng):
        # from-scratch recomputation: cosine, shift-scale, mask, softmax
        win = make_window(rng, seq_x=6, x_grid=(2, 3), dx=4)
        cfg = AttentionConfig(beta=1.2, gamma=3.0)
        res = attention_scores(win, cfg)

        x = win.x_vfm.astype(np.float64)
        x = x / np.sqrt((x * x).sum(axis=1, keepdims=True))
        s = x @ x.T
        a = cfg.gamma * (s - cfg.beta * s.mean())
        logits = a.copy()
        for i in range(6):
            for j in range(6):
                if a[i, j] < 0 and i != j:
                    logits[i, j] = -np.inf
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        e[~np.isfinite(e)] = 0.0
        expected = e / e.sum(axis=1, keepdims=True)
        assert np.abs(res.attn - expected).max() < 1e-5

    def test_hard_mode_uses_raw_cosines(self, backend, rng):
        win = make_window(rng, seq_x=6, x_grid=(2, 3), dx=4)
        res = attention_scores(win, AttentionConfig(mask_mode="hard", alpha=0.3))
        s = similarity(win.x_vfm)
        m = build_mask(s, "hard", alpha=0.3)
        logits = s + m
        e = np.exp(logits - np.nanmax(np.where(np.isneginf(logits), np.nan, logits), axis=1, keepdims=True))
        e[np.isneginf(logits)] = 0.0
        expected = e / e.sum(axis=1, keepdims=True)
        assert np.abs(res.attn - expected).max() < 1e-6

    def test_self_source_equals_proxy_on_fused_heads(self, backend, rng):
        # qq on (n, L, dh) must match proxy run on the (L, n*dh) fused matrix
        win = make_window(rng)
        cfg = AttentionConfig(attn_source="qq")
        res_qq = attention_scores(win, cfg)
        fused = np.transpose(win.q_clip, (1, 0, 2)).reshape(4, -1)
        twin = WindowFeatures(
            rect=win.rect,
            x_vfm=np.ascontiguousarray(fused),
            x_grid=win.v_grid,
            v_clip=win.v_clip,
            v_grid=win.v_grid,
        )
        res_proxy = attention_scores(twin, AttentionConfig(attn_source="proxy"))
        assert np.array_equal(res_qq.attn, res_proxy.attn)
        assert res_qq.grid == win.v_grid

    def test_kk_differs_from_qq_on_random_input(self, backend, rng):
        win = make_window(rng)
        res_q = attention_scores(win, AttentionConfig(attn_source="qq"))
        res_k = attention_scores(win, AttentionConfig(attn_source="kk"))
        assert not np.allclose(res_q.attn, res_k.attn)

    def test_missing_q_raises(self, rng):
        win = make_window(rng, with_qk=False)
        with pytest.raises(ProxysegError):
            attention_scores(win, AttentionConfig(attn_source="qq"))
        with pytest.raises(ProxysegError):
            attention_scores(win, AttentionConfig(attn_source="qk"))

    def test_qk_per_head_oracle(self, backend, rng):
        win = make_window(rng)
        res = attention_scores(win, AttentionConfig(attn_source="qk"))
        assert res.attn.shape == (2, 4, 4)
        assert res.mask_fraction == 0.0
        for h in range(2):
            logits = win.q_clip[h].astype(np.float64) @ win.k_clip[h].astype(np.float64).T
            logits /= np.sqrt(3.0)
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            expected = e / e.sum(axis=1, keepdims=True)
            assert np.abs(res.attn[h] - expected).max() < 1e-6

    def test_vanilla_is_qk(self, backend, rng):
        win = make_window(rng)
        a = attention_scores(win, AttentionConfig(attn_source="qk"))
        b = attention_scores(win, AttentionConfig(attn_source="vanilla"))
        assert np.array_equal(a.attn, b.attn)

    def test_qk_scale_flag_changes_result(self, backend, rng):
        win = make_window(rng)
        scaled = attention_scores(win, AttentionConfig(attn_source="qk", scale_qk=True))
        raw = attention_scores(win, AttentionConfig(attn_source="qk", scale_qk=False))
        assert not np.allclose(scaled.attn, raw.attn)


class TestCorrespondenceScores:
    def test_proxy_is_feature_similarity(self, backend, rng):
        from proxyseg.attention import correspondence_scores

        win = make_window(rng)
        scores, grid = correspondence_scores(win, "proxy")
        assert grid == win.x_grid
        assert np.array_equal(scores, similarity(win.x_vfm))

    def test_qq_uses_fused_heads(self, backend, rng):
        from proxyseg.attention import correspondence_scores

        win = make_window(rng)
        scores, grid = correspondence_scores(win, "qq")
        fused = np.transpose(win.q_clip, (1, 0, 2)).reshape(4, -1)
        assert grid == win.v_grid
        assert np.array_equal(scores, similarity(np.ascontiguousarray(fused)))

    def test_qk_is_head_averaged_scaled_logits(self, backend, rng):
        from proxyseg.attention import correspondence_scores

        win = make_window(rng)
        scores, grid = correspondence_scores(win, "qk")
        want = np.zeros((4, 4))
        for h in range(2):
            want += win.q_clip[h].astype(np.float64) @ win.k_clip[h].astype(np.float64).T
        want /= 2 * np.sqrt(3.0)
        assert grid == win.v_grid
        assert np.abs(scores - want).max() < 1e-9

    def test_vanilla_matches_qk(self, backend, rng):
        from proxyseg.attention import correspondence_scores

        win = make_window(rng)
        a, _ = correspondence_scores(win, "qk")
        b, _ = correspondence_scores(win, "vanilla")
        assert np.array_equal(a, b)

    def test_missing_arrays_rejected(self, rng):
        from proxyseg.attention import correspondence_scores

        win = make_window(rng, with_qk=False)
        with pytest.raises(ProxysegError):
            correspondence_scores(win, "kk")
        with pytest.raises(ProxysegError):
            correspondence_scores(win, "vanilla")


class TestApplyAttention:
    def test_pass_through_configuration(self, backend, rng):
        # identity attention + identity projections: output is just the
        # row-normalized fused values (layer norm's per-row scalar cancels
        # in the final normalization when rows are standardized)
        seq, n, dv = 6, 2, 3
        d = n * dv
        fused = rng.randn(seq, d)
        fused = (fused - fused.mean(axis=1, keepdims=True)) / fused.std(axis=1, keepdims=True)
        fused = fused.astype(np.float32)
        v = np.stack([fused[:, h * dv : (h + 1) * dv] for h in range(n)])
        w = make_weights(rng, d, d, identity=True)
        z = apply_attention(np.eye(seq, dtype=np.float32), v, (2, 3), w, (2, 3))
        expected = fused / np.linalg.norm(fused, axis=1, keepdims=True)
        assert np.abs(z - expected).max() < 1e-5
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)

    def test_uniform_attention_collapses_rows(self, backend, rng):
        seq, n, dv = 4, 2, 3
        v = rng.randn(n, seq, dv).astype(np.float32)
        w = make_weights(rng, n * dv, 5)
        attn = np.full((seq, seq), 1.0 / seq, dtype=np.float32)
        z = apply_attention(attn, v, (2, 2), w, (2, 2))
        assert np.abs(z - z[0]).max() < 1e-6

    def test_naive_step_by_step_oracle(self, backend, rng):
        # independent recomputation of resize, attend, fuse, project stack
        n, dv, d_joint = 2, 3, 4
        d = n * dv
        hv, wv, ht, wt = 2, 2, 2, 4
        v = rng.randn(n, hv * wv, dv).astype(np.float32)
        w = make_weights(rng, d, d_joint)
        attn = rng.rand(ht * wt, ht * wt).astype(np.float32)
        attn /= attn.sum(axis=1, keepdims=True)

        z = apply_attention(attn, v, (hv, wv), w, (ht, wt))

        def resize(grid, oh, ow):
            ih, iw, c = grid.shape
            out = np.zeros((oh, ow, c))
            for oy in range(oh):
                for ox in range(ow):
                    sy = min(max((oy + 0.5) * ih / oh - 0.5, 0.0), ih - 1)
                    sx = min(max((ox + 0.5) * iw / ow - 0.5, 0.0), iw - 1)
                    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                    y1, x1 = min(y0 + 1, ih - 1), min(x0 + 1, iw - 1)
                    fy, fx = sy - y0, sx - x0
                    out[oy, ox] = (
                        grid[y0, x0] * (1 - fy) * (1 - fx)
                        + grid[y0, x1] * (1 - fy) * fx
                        + grid[y1, x0] * fy * (1 - fx)
                        + grid[y1, x1] * fy * fx
                    )
            return out

        heads = []
        for h in range(n):
            vh = resize(v[h].astype(np.float64).reshape(hv, wv, dv), ht, wt).reshape(ht * wt, dv)
            heads.append(attn.astype(np.float64) @ vh)
        fused = np.concatenate(heads, axis=1)
        x = fused @ w.out_proj_weight.astype(np.float64) + w.out_proj_bias
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        x = (x - mu) / np.sqrt(var + w.ln_eps) * w.ln_post_weight + w.ln_post_bias
        x = x @ w.visual_proj.astype(np.float64)
        expected = x / np.linalg.norm(x, axis=1, keepdims=True)
        assert np.abs(z - expected).max() < 1e-5

    def test_per_head_attention(self, backend, rng):
        # 3-d attention applies head h's matrix to head h's values
        n, seq, dv = 2, 4, 3
        v = rng.randn(n, seq, dv).astype(np.float32)
        w = make_weights(rng, n * dv, 4)
        attn = rng.rand(n, seq, seq).astype(np.float32)
        attn /= attn.sum(axis=2, keepdims=True)
        z = apply_attention(attn, v, (2, 2), w, (2, 2))

        shared = [apply_attention(attn[h], v, (2, 2), w, (2, 2)) for h in range(n)]
        assert not np.allclose(z, shared[0])
        fused = np.concatenate([attn[h].astype(np.float64) @ v[h] for h in range(n)], axis=1)
        x = fused @ w.out_proj_weight.astype(np.float64) + w.out_proj_bias
        mu, var = x.mean(axis=1, keepdims=True), x.var(axis=1, keepdims=True)
        x = (x - mu) / np.sqrt(var + w.ln_eps) * w.ln_post_weight + w.ln_post_bias
        x = x @ w.visual_proj.astype(np.float64)
        expected = x / np.linalg.norm(x, axis=1, keepdims=True)
        assert np.abs(z - expected).max() < 1e-5

    def test_head_count_mismatch(self, rng):
        v = rng.randn(2, 4, 3).astype(np.float32)
        w = make_weights(rng, 6, 4)
        attn = np.eye(4, dtype=np.float32)
        with pytest.raises(ShapeError):
            apply_attention(np.stack([attn] * 3), v, (2, 2), w, (2, 2))

    def test_projection_shape_mismatch(self, rng):
        v = rng.randn(2, 4, 3).astype(np.float32)
        w = make_weights(rng, 8, 4)
        with pytest.raises(ShapeError):
            apply_attention(np.eye(4, dtype=np.float32), v, (2, 2), w, (2, 2))

    def test_grid_mismatch(self, rng):
        v = rng.randn(2, 4, 3).astype(np.float32)
        w = make_weights(rng, 6, 4)
        with pytest.raises(ShapeError):
            apply_attention(np.eye(4, dtype=np.float32), v, (3, 2), w, (2, 2))
