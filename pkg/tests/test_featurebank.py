import struct

import numpy as np
import pytest

from txv.errors import EmptyInputError, FormatError, MissingItemError
from txv.featurebank import (
    SYNTH_PRESETS,
    FeatureBank,
    FrameFeatureSet,
    SynthSpec,
    concat_features,
    gen_synthetic,
    load_bank,
    load_bank_tsv,
    load_pairs_tsv,
    mean_pool,
    save_bank,
    save_bank_tsv,
    save_pairs_tsv,
    validate_pairs,
)
from txv.numerics import cosine_similarity

from txv_testlib import tiny_bank


class TestMeanPool:
    def test_single_frame_identity(self):
        fs = FrameFeatureSet("v1", [np.array([1.0, 2.0])], dim=2)
        assert np.array_equal(mean_pool(fs), [1, 2])

    def test_arithmetic_mean(self):
        fs = FrameFeatureSet("v1", [np.array([1.0, 2.0]), np.array([3.0, 4.0])], dim=2)
        assert np.array_equal(mean_pool(fs), [2, 3])

    def test_symmetry(self):
        fs = FrameFeatureSet(
            "v1",
            [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 0.0])],
            dim=2,
        )
        assert np.array_equal(mean_pool(fs), [0, 0])

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            mean_pool(FrameFeatureSet("v1", [], dim=2))

    def test_permutation_invariant_after_canonical_order(self, rng):
        frames = [rng.normal(0, 1, 4) for _ in range(6)]
        canon = sorted(frames, key=lambda f: tuple(f))
        fs1 = FrameFeatureSet("v", list(canon), dim=4)
        shuffled = list(frames)
        rng.shuffle(shuffled)
        canon2 = sorted(shuffled, key=lambda f: tuple(f))
        fs2 = FrameFeatureSet("v", canon2, dim=4)
        assert np.array_equal(mean_pool(fs1), mean_pool(fs2))


class TestConcat:
    def test_definition(self):
        a = tiny_bank("a", {"x": [1, 2]})
        b = tiny_bank("b", {"x": [3]})
        assert np.array_equal(concat_features([a, b], "x"), [1, 2, 3])

    def test_single_bank_identity(self):
        a = tiny_bank("a", {"x": [1, 2]})
        assert np.array_equal(concat_features([a], "x"), [1, 2])

    def test_order_sensitivity(self):
        a = tiny_bank("a", {"x": [1, 2]})
        b = tiny_bank("b", {"x": [3]})
        assert np.array_equal(concat_features([b, a], "x"), [3, 1, 2])

    def test_missing_id(self):
        a = tiny_bank("a", {"x": [1, 2]})
        with pytest.raises(MissingItemError):
            concat_features([a], "y")


class TestBinaryFormat:
    def test_round_trip(self, tmp_path, rng):
        bank = FeatureBank("feat", dim=4)
        for i in range(3):
            bank.add(f"id{i}", rng.normal(0, 1, 4))
        path = tmp_path / "bank.txvf"
        save_bank(bank, path)
        loaded = load_bank(path, name="feat")
        assert loaded.ids() == bank.ids()
        assert loaded.dim == 4
        for item_id in bank.ids():
            expect = bank.get(item_id).astype(np.float32).astype(np.float64)
            assert np.array_equal(loaded.get(item_id), expect)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.txvf"
        path.write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(FormatError) as exc:
            load_bank(path)
        assert exc.value.offset == 0

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.txvf"
        path.write_bytes(b"TXVF" + struct.pack("<IIQ", 99, 4, 0))
        with pytest.raises(FormatError, match="version"):
            load_bank(path)

    def test_truncated_rows(self, tmp_path, rng):
        bank = FeatureBank("feat", dim=2)
        for i in range(10):
            bank.add(f"id{i}", rng.normal(0, 1, 2))
        path = tmp_path / "trunc.txvf"
        save_bank(bank, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 5 * 2 * 4])  # drop 5 rows
        with pytest.raises(FormatError, match="truncated.*5 rows"):
            load_bank(path)

    def test_unicode_ids_survive(self, tmp_path):
        bank = FeatureBank("feat", dim=1)
        bank.add("café/видео#1", np.array([1.0]))
        path = tmp_path / "uni.txvf"
        save_bank(bank, path)
        assert load_bank(path).ids() == ["café/видео#1"]


class TestTsvFormats:
    def test_bank_round_trip(self, tmp_path, rng):
        bank = FeatureBank("feat", dim=3)
        bank.add("a", rng.normal(0, 1, 3))
        bank.add("b", rng.normal(0, 1, 3))
        path = tmp_path / "bank.tsv"
        save_bank_tsv(bank, path)
        loaded = load_bank_tsv(path)
        assert loaded.ids() == ["a", "b"]
        for item_id in ("a", "b"):
            assert np.array_equal(loaded.get(item_id), bank.get(item_id))

    def test_pairs_round_trip(self, tmp_path):
        from txv_testlib import pair_list

        pairs = pair_list(("c1", "v1"), ("c2", "v2"))
        pairs.pairs[0].text = "a dog by the fireplace"
        path = tmp_path / "pairs.tsv"
        save_pairs_tsv(pairs, path)
        loaded = load_pairs_tsv(path)
        assert [(p.caption_id, p.video_id) for p in loaded.pairs] == [
            ("c1", "v1"),
            ("c2", "v2"),
        ]
        assert loaded.pairs[0].text == "a dog by the fireplace"

    def test_validate_pairs(self):
        from txv_testlib import pair_list

        text = tiny_bank("t", {"c1": [1.0]})
        video = tiny_bank("v", {"v1": [1.0]})
        validate_pairs(pair_list(("c1", "v1")), [text], [video])
        with pytest.raises(MissingItemError):
            validate_pairs(pair_list(("c2", "v1")), [text], [video])


class TestSynthetic:
    def test_deterministic(self):
        spec = SynthSpec(seed=42)
        d1 = gen_synthetic(spec)
        d2 = gen_synthetic(spec)
        for split in ("train", "val", "test"):
            for b1, b2 in zip(d1.text_banks[split], d2.text_banks[split]):
                assert b1.ids() == b2.ids()
                assert np.array_equal(b1.matrix(), b2.matrix())

    def test_shapes(self):
        spec = SynthSpec(n_test=50, latent_dim=16, noise_sigma=0.05, distractor_count=0)
        data = gen_synthetic(spec)
        assert all(len(b) == 50 for b in data.text_banks["test"])
        assert all(len(b) == 50 for b in data.video_banks["test"])
        assert len(data.pairs["test"]) == 50

    def test_zero_noise_pairs_maximize_latent_cosine(self):
        spec = SynthSpec(
            n_train=12, n_val=4, n_test=4, noise_sigma=0.0, distractor_count=0, seed=3
        )
        data = gen_synthetic(spec)
        for split in ("train", "val", "test"):
            vids = list(data.video_latents[split])
            for p in data.pairs[split].pairs:
                z = data.caption_latents[split][p.caption_id]
                sims = {
                    v: cosine_similarity(z, data.video_latents[split][v])
                    for v in vids
                }
                assert max(sims, key=sims.get) == p.video_id
                assert sims[p.video_id] == pytest.approx(1.0, abs=1e-12)

    def test_ids_follow_convention(self):
        data = gen_synthetic(SynthSpec(seed=1))
        for p in data.pairs["train"].pairs:
            assert p.caption_id.startswith("c")
            assert p.video_id.startswith("v")

    def test_presets_exist(self):
        assert {"small", "retrieval", "ablate"} <= set(SYNTH_PRESETS)
