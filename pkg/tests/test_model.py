import numpy as np
import pytest

from txv.errors import ConfigError, DimensionError, FormatError, MissingItemError
from txv.model import (
    CKPT_MAGIC,
    ModelConfig,
    TextEncoderSpec,
    bank_features,
    embed_pair,
    encode_text,
    init_model,
    load_checkpoint,
    save_checkpoint,
    similarity,
    similarity_matrix,
)
from txv.numerics import affine_relu_forward, cosine_similarity

from txv_testlib import random_model, tiny_bank


def small_config(k=2, l=3, d=8):
    dims = {f"t{i}": 4 + i for i in range(k)} | {f"v{i}": 5 + i for i in range(l)}
    encoders = [TextEncoderSpec("identity", (f"t{i}",)) for i in range(k)]
    return ModelConfig(encoders, [f"v{i}" for i in range(l)], d, dims)


def random_feats(rng, config, text=True):
    names = (
        {f for e in config.text_encoders for f in e.features}
        if text
        else set(config.video_features)
    )
    return {n: rng.normal(0, 1, config.feature_dims[n]) for n in names}


class TestInit:
    def test_deterministic(self):
        cfg = small_config()
        m1 = init_model(cfg, seed=9)
        m2 = init_model(cfg, seed=9)
        for (n1, a1), (n2, a2) in zip(m1.param_items(), m2.param_items()):
            assert n1 == n2
            assert np.array_equal(a1, a2)

    def test_grid_counting(self):
        model = init_model(small_config(k=2, l=3, d=64), seed=0)
        assert model.k == 2 and model.l == 3
        assert sum(len(row) for row in model.spaces) == 6
        # 12 affine maps = 6 spaces x 2 sides
        assert len(model.param_items()) == 6 * 4

    def test_zero_joint_dim_rejected(self):
        with pytest.raises(ConfigError):
            init_model(small_config(d=0), seed=0)

    def test_unknown_feature_rejected(self):
        cfg = small_config()
        cfg.video_features.append("nope")
        with pytest.raises(ConfigError):
            init_model(cfg, seed=0)

    def test_xavier_bounds_and_zero_bias(self):
        model = init_model(small_config(), seed=1)
        for k in range(model.k):
            for l in range(model.l):
                sp = model.spaces[k][l]
                bound = np.sqrt(6.0 / sum(sp.text_w.shape))
                assert np.abs(sp.text_w).max() <= bound
                assert not sp.text_b.any()


class TestEncodeText:
    def test_identity_passthrough(self, rng):
        model = init_model(small_config(k=1, l=1), seed=0)
        feats = random_feats(rng, model.config)
        outs = encode_text(model, feats)
        assert np.array_equal(outs[0], feats["t0"])

    def test_concat_dims(self, rng):
        dims = {"w2v": 500, "bert": 768, "v0": 4}
        cfg = ModelConfig(
            [TextEncoderSpec("concat", ("w2v", "bert"))], ["v0"], 8, dims
        )
        model = init_model(cfg, seed=0)
        feats = {"w2v": rng.normal(0, 1, 500), "bert": rng.normal(0, 1, 768)}
        out = encode_text(model, feats)[0]
        assert out.shape == (1268,)
        assert np.array_equal(out, np.concatenate([feats["w2v"], feats["bert"]]))

    def test_trainable_is_relu_affine(self, rng):
        dims = {"t0": 4, "v0": 4}
        cfg = ModelConfig(
            [TextEncoderSpec("trainable", ("t0",), hidden_dim=4)], ["v0"], 8, dims
        )
        model = init_model(cfg, seed=0)
        model.encoder_params[0].w = np.eye(4)
        model.encoder_params[0].b = np.zeros(4)
        x = rng.normal(0, 1, 4)
        out = encode_text(model, {"t0": x})[0]
        assert np.allclose(out, np.maximum(x, 0.0))

    def test_missing_feature(self):
        model = init_model(small_config(k=1, l=1), seed=0)
        with pytest.raises(MissingItemError):
            encode_text(model, {})


class TestEmbedPair:
    def test_zero_weights_zero_bias(self, rng):
        model = init_model(small_config(k=1, l=1), seed=0)
        sp = model.spaces[0][0]
        sp.text_w[...] = 0.0
        s, v = embed_pair(model, 0, 0, rng.normal(0, 1, 4), rng.normal(0, 1, 5))
        assert not s.any()

    def test_identity_like_passthrough(self):
        dims = {"t0": 4, "v0": 4}
        cfg = ModelConfig([TextEncoderSpec("identity", ("t0",))], ["v0"], 4, dims)
        model = init_model(cfg, seed=0)
        sp = model.spaces[0][0]
        sp.text_w[...] = np.eye(4)
        sp.text_b[...] = 0.0
        x = np.array([0.5, 1.0, 0.0, 2.0])
        s, _ = embed_pair(model, 0, 0, x, np.ones(4))
        assert np.array_equal(s, x)

    def test_matches_numerics_composition(self, rng):
        model = random_model(rng, trainable_ok=False)
        for k in range(model.k):
            for l in range(model.l):
                sp = model.spaces[k][l]
                t = rng.normal(0, 1, sp.text_w.shape[1])
                v = rng.normal(0, 1, sp.video_w.shape[1])
                s_emb, v_emb = embed_pair(model, k, l, t, v)
                s_ref, _ = affine_relu_forward(sp.text_w, sp.text_b, t)
                v_ref, _ = affine_relu_forward(sp.video_w, sp.video_b, v)
                assert np.allclose(s_emb, s_ref, atol=1e-12)
                assert np.allclose(v_emb, v_ref, atol=1e-12)

    def test_dim_mismatch(self, rng):
        model = init_model(small_config(k=1, l=1), seed=0)
        with pytest.raises(DimensionError):
            embed_pair(model, 0, 0, rng.normal(0, 1, 3), rng.normal(0, 1, 5))


class TestSimilarity:
    def test_bounded_by_grid_size(self, rng):
        for _ in range(20):
            model = random_model(rng)
            cfg = model.config
            caption = random_feats(rng, cfg)
            video = random_feats(rng, cfg, text=False)
            s = similarity(model, caption, video)
            assert abs(s) <= model.k * model.l + 1e-12

    def test_upper_bound_when_all_cosines_one(self):
        dims = {"t0": 2, "t1": 2, "v0": 2, "v1": 2, "v2": 2}
        cfg = ModelConfig(
            [TextEncoderSpec("identity", ("t0",)), TextEncoderSpec("identity", ("t1",))],
            ["v0", "v1", "v2"],
            2,
            dims,
        )
        model = init_model(cfg, seed=0)
        for k in range(2):
            for l in range(3):
                sp = model.spaces[k][l]
                sp.text_w[...] = np.eye(2)
                sp.video_w[...] = np.eye(2)
        feats = {n: np.array([1.0, 1.0]) for n in dims}
        assert similarity(model, feats, feats) == pytest.approx(6.0, abs=1e-12)

    def test_single_space_cosine(self, rng):
        model = random_model(rng, k=1, l=1, trainable_ok=False)
        caption = random_feats(rng, model.config)
        video = random_feats(rng, model.config, text=False)
        s_emb, v_emb = embed_pair(
            model, 0, 0, caption["t0"], video[model.config.video_features[0]]
        )
        assert similarity(model, caption, video) == cosine_similarity(s_emb, v_emb)

    def test_matrix_equals_entrywise_loop_exactly(self, rng):
        model = random_model(rng)
        cfg = model.config
        q, d = 4, 5
        cap_rows = [random_feats(rng, cfg) for _ in range(q)]
        vid_rows = [random_feats(rng, cfg, text=False) for _ in range(d)]
        caption_feats = {
            n: np.stack([r[n] for r in cap_rows]) for n in cap_rows[0]
        }
        video_feats = {n: np.stack([r[n] for r in vid_rows]) for n in vid_rows[0]}
        mat = similarity_matrix(model, caption_feats, video_feats)
        for i in range(q):
            for j in range(d):
                assert mat[i, j] == similarity(model, cap_rows[i], vid_rows[j])

    def test_duplicate_video_column_identical(self, rng):
        model = random_model(rng, k=1, l=1, trainable_ok=False)
        cfg = model.config
        vid = random_feats(rng, cfg, text=False)
        name = cfg.video_features[0]
        video_feats = {name: np.stack([vid[name], vid[name]])}
        cap = random_feats(rng, cfg)
        caption_feats = {"t0": cap["t0"][None, :]}
        mat = similarity_matrix(model, caption_feats, video_feats)
        assert mat[0, 0] == mat[0, 1]

    def test_cosine_scale_invariance_of_embeddings(self, rng):
        model = random_model(rng, k=1, l=1, trainable_ok=False)
        cfg = model.config
        cap = random_feats(rng, cfg)
        vid = random_feats(rng, cfg, text=False)
        s_emb, v_emb = embed_pair(model, 0, 0, cap["t0"], vid[cfg.video_features[0]])
        base = cosine_similarity(s_emb, v_emb)
        assert cosine_similarity(3.7 * s_emb, v_emb) == pytest.approx(base, abs=1e-12)


class TestCheckpoint:
    def test_round_trip_preserves_similarities(self, tmp_path, rng):
        model = random_model(rng)
        cfg = model.config
        path = tmp_path / "m.txvm"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        cap = random_feats(rng, cfg)
        vid = random_feats(rng, cfg, text=False)
        assert similarity(loaded, cap, vid) == pytest.approx(
            similarity(model, cap, vid), abs=1e-6
        )

    def test_round_trip_preserves_rankings(self, tmp_path, rng):
        model = random_model(rng)
        cfg = model.config
        path = tmp_path / "m.txvm"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        caption_feats = {
            n: rng.normal(0, 1, (3, cfg.feature_dims[n]))
            for e in cfg.text_encoders
            for n in e.features
        }
        video_feats = {
            n: rng.normal(0, 1, (8, cfg.feature_dims[n])) for n in cfg.video_features
        }
        before = similarity_matrix(model, caption_feats, video_feats)
        after = similarity_matrix(loaded, caption_feats, video_feats)
        assert np.array_equal(np.argsort(before, axis=1), np.argsort(after, axis=1))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.txvm"
        path.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path, rng):
        model = random_model(rng)
        path = tmp_path / "m.txvm"
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_truncated_blobs(self, tmp_path, rng):
        model = random_model(rng, k=2, l=2)
        path = tmp_path / "m.txvm"
        save_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError, match="truncated parameter"):
            load_checkpoint(path)

    def test_magic_constant(self):
        assert CKPT_MAGIC == b"TXVM"


def test_bank_features_stacks_in_order(rng):
    bank = tiny_bank("f", {"a": [1.0, 2.0], "b": [3.0, 4.0]})
    feats = bank_features([bank], ["b", "a"])
    assert np.array_equal(feats["f"], [[3, 4], [1, 2]])
