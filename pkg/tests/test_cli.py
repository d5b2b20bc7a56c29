import json

import pytest

from txv.cli import main
from txv.evalmetrics import evaluate
from txv.retrieval import load_rankings


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """One small synthetic dataset shared by the CLI tests."""
    out = tmp_path_factory.mktemp("synth")
    code = main(
        [
            "--out",
            str(out),
            "--set",
            "data.synth_preset=small",
            "gen-synth",
        ]
    )
    assert code == 0
    return out


def base_flags(synth_dir, out):
    return [
        "--out",
        str(out),
        "--set",
        f"data.dir={synth_dir}",
        "--set",
        'data.text_features=["text0","text1"]',
        "--set",
        'data.video_features=["vid0","vid1","vid2"]',
    ]


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(
        base_flags(synth_dir, out)
        + [
            "--seed",
            "0",
            "--set",
            "train.lr=0.001",
            "--set",
            "train.max_epochs=8",
            "--set",
            "train.batch_size=16",
            "--set",
            "model.joint_dim=16",
            "train",
        ]
    )
    assert code == 0
    ckpt = out / "model.txvm"
    assert ckpt.exists()
    return out, ckpt


class TestConfigHandling:
    def test_unknown_key_exits_1(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"bogus": 1}')
        code, _, err = run(["--config", str(cfg), "gen-synth"], capsys)
        assert code == 1
        assert "category=config" in err

    def test_missing_config_file_exits_1(self, capsys):
        code, _, err = run(["--config", "/nonexistent.json", "gen-synth"], capsys)
        assert code == 1

    def test_bad_set_syntax_exits_1(self, capsys):
        code, _, err = run(["--set", "nonsense", "gen-synth"], capsys)
        assert code == 1

    def test_wrong_type_exits_1(self, capsys):
        code, _, err = run(
            ["--set", 'train.lr="fast"', "--set", "data.synth_preset=small", "train"],
            capsys,
        )
        assert code == 1

    def test_set_overrides_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"data": {"synth_preset": "nope"}}')
        code, out, _ = run(
            [
                "--config",
                str(cfg),
                "--out",
                str(tmp_path / "o"),
                "--set",
                "data.synth_preset=small",
                "gen-synth",
            ],
            capsys,
        )
        assert code == 0


class TestGenSynth:
    def test_writes_all_banks_and_pairs(self, synth_dir):
        for split in ("train", "val", "test"):
            for feat in ("text0", "text1", "vid0", "vid1", "vid2"):
                assert (synth_dir / f"{split}_{feat}.txvf").exists()
            assert (synth_dir / f"{split}_pairs.tsv").exists()

    def test_missing_spec_exits_1(self, capsys, tmp_path):
        code, _, err = run(["--out", str(tmp_path / "x"), "gen-synth"], capsys)
        assert code == 1

    def test_unknown_preset_exits_1(self, capsys, tmp_path):
        code, _, err = run(
            [
                "--out",
                str(tmp_path / "x"),
                "--set",
                "data.synth_preset=zzz",
                "gen-synth",
            ],
            capsys,
        )
        assert code == 1

    def test_byte_identical_reruns(self, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code, _, _ = run(
                [
                    "--out",
                    str(out),
                    "--set",
                    "data.synth_preset=small",
                    "gen-synth",
                ],
                capsys,
            )
            assert code == 0
            outs.append(out)
        for f in sorted(p.name for p in outs[0].iterdir()):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


class TestTrainAndRetrieve:
    def test_train_outputs(self, trained):
        out, ckpt = trained
        assert (out / "history.tsv").exists()
        header = (out / "history.tsv").read_text().splitlines()[0]
        assert header == "epoch\tloss\tval_map\tlr"

    def test_missing_data_dir_exits_2(self, capsys, tmp_path):
        code, _, err = run(
            [
                "--set",
                f"data.dir={tmp_path}/void",
                "--set",
                'data.text_features=["text0"]',
                "--set",
                'data.video_features=["vid0"]',
                "--out",
                str(tmp_path / "o"),
                "train",
            ],
            capsys,
        )
        assert code == 2
        assert "category=data" in err

    def test_retrieve_and_eval(self, synth_dir, trained, tmp_path, capsys):
        _, ckpt = trained
        ranks = tmp_path / "test.ranks.tsv"
        code, _, err = run(
            base_flags(synth_dir, tmp_path / "r")
            + [
                "retrieve",
                "--checkpoint",
                str(ckpt),
                "--split",
                "test",
                "--out-file",
                str(ranks),
            ],
            capsys,
        )
        assert code == 0
        lists = load_rankings(str(ranks))
        assert len(lists) == 12  # "small" preset test split

        eval_out = tmp_path / "eval"
        code, out, _ = run(
            [
                "--out",
                str(eval_out),
                "eval",
                "--rankings",
                str(ranks),
                "--ground-truth",
                str(synth_dir / "test_pairs.tsv"),
            ],
            capsys,
        )
        assert code == 0
        assert "map=" in out
        data = json.loads((eval_out / "metrics.json").read_text())
        assert data["query_count"] == 12
        # CLI metrics must agree with the library on the same inputs
        from txv.featurebank import load_pairs_tsv

        gt = {
            p.caption_id: {p.video_id}
            for p in load_pairs_tsv(synth_dir / "test_pairs.tsv").pairs
        }
        report = evaluate(load_rankings(str(ranks)), gt)
        assert data["aggregate"]["map"] == pytest.approx(
            report.aggregate["map"], abs=1e-12
        )

    def test_retrieve_dim_mismatch_exits_2(self, synth_dir, trained, tmp_path, capsys):
        _, ckpt = trained
        # swap a feature for one with a different dim
        code, _, err = run(
            [
                "--set",
                f"data.dir={synth_dir}",
                "--set",
                'data.text_features=["vid0","text1"]',
                "--set",
                'data.video_features=["text0","vid1","vid2"]',
                "retrieve",
                "--checkpoint",
                str(ckpt),
                "--out-file",
                str(tmp_path / "x.tsv"),
            ],
            capsys,
        )
        assert code == 2

    def test_deterministic_retrieval_reruns(self, synth_dir, trained, tmp_path, capsys):
        _, ckpt = trained
        outs = []
        for name in ("r1.tsv", "r2.tsv"):
            path = tmp_path / name
            code, _, _ = run(
                base_flags(synth_dir, tmp_path)
                + [
                    "retrieve",
                    "--checkpoint",
                    str(ckpt),
                    "--out-file",
                    str(path),
                ],
                capsys,
            )
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestRescoreAndFuse:
    @pytest.fixture()
    def rankings(self, synth_dir, trained, tmp_path, capsys):
        _, ckpt = trained
        path = tmp_path / "base.tsv"
        code, _, _ = run(
            base_flags(synth_dir, tmp_path)
            + ["retrieve", "--checkpoint", str(ckpt), "--out-file", str(path)],
            capsys,
        )
        assert code == 0
        return path

    def test_rescore_none_copies(self, rankings, tmp_path, capsys):
        out = tmp_path / "none.tsv"
        code, _, err = run(
            ["rescore", "--rankings", str(rankings), "--out-file", str(out)],
            capsys,
        )
        assert code == 0
        assert out.read_bytes() == rankings.read_bytes()

    def test_rescore_random_captions(
        self, synth_dir, trained, rankings, tmp_path, capsys
    ):
        _, ckpt = trained
        out = tmp_path / "ds.tsv"
        code, _, err = run(
            base_flags(synth_dir, tmp_path)
            + [
                "--seed",
                "0",
                "--set",
                "dsinf.strategy=random-captions",
                "--set",
                "dsinf.n_background=20",
                "rescore",
                "--rankings",
                str(rankings),
                "--checkpoint",
                str(ckpt),
                "--out-file",
                str(out),
            ],
            capsys,
        )
        assert code == 0
        revised = load_rankings(str(out))
        assert len(revised) == len(load_rankings(str(rankings)))
        assert "rescored" in err

    def test_rescore_requires_checkpoint(self, rankings, tmp_path, capsys):
        code, _, _ = run(
            [
                "--set",
                "dsinf.strategy=random-captions",
                "rescore",
                "--rankings",
                str(rankings),
                "--out-file",
                str(tmp_path / "x.tsv"),
            ],
            capsys,
        )
        assert code == 1

    def test_fuse_self_preserves_order(self, rankings, tmp_path, capsys):
        out = tmp_path / "fused.tsv"
        code, _, _ = run(
            ["fuse", str(rankings), str(rankings), "--out-file", str(out)],
            capsys,
        )
        assert code == 0
        orig = {l.query_id: l.item_ids() for l in load_rankings(str(rankings))}
        fused = {l.query_id: l.item_ids() for l in load_rankings(str(out))}
        assert orig == fused

    def test_fuse_query_set_mismatch_exits_2(self, rankings, tmp_path, capsys):
        partial = tmp_path / "partial.tsv"
        lines = rankings.read_text().splitlines(keepends=True)
        first_query = lines[0].split("\t")[0]
        partial.write_text(
            "".join(l for l in lines if l.split("\t")[0] == first_query)
        )
        code, _, _ = run(
            [
                "fuse",
                str(rankings),
                str(partial),
                "--out-file",
                str(tmp_path / "x.tsv"),
            ],
            capsys,
        )
        assert code == 2


class TestAblate:
    def test_writes_three_variant_rows(self, tmp_path, capsys):
        out = tmp_path / "abl"
        code, stdout, err = run(
            [
                "--out",
                str(out),
                "--seed",
                "0",
                "--set",
                'data.synth={"n_train": 40, "n_val": 12, "n_test": 12, '
                '"latent_dim": 8, "text_dims": [12, 10], "video_dims": [12, 10], '
                '"noise_sigma": 0.3, "distractor_count": 0, "seed": 1}',
                "--set",
                "train.max_epochs=2",
                "--set",
                "train.batch_size=8",
                "--set",
                "model.joint_dim=8",
                "ablate",
            ],
            capsys,
        )
        assert code == 0
        lines = (out / "ablation.tsv").read_text().splitlines()
        assert lines[0].split("\t")[0] == "variant"
        variants = [l.split("\t")[0] for l in lines[1:]]
        assert variants == ["concat-single", "concat-video", "txv-full"]
        spaces = [int(l.split("\t")[1]) for l in lines[1:]]
        assert spaces == [1, 2, 4]
