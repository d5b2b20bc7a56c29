"""Command-line entry point binding all modules into reproducible experiments.

Every command is a pure function of (config, input files, seed): reruns
produce byte-identical outputs. Logs go to stderr; data goes to files or
stdout. Exit codes: 0 ok, 1 config error, 2 data error, 3 numerical error.
"""

import argparse
import copy
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EvalError,
    FormatError,
    FusionError,
    MissingItemError,
    NumericalError,
    TxvError,
)
from .evalmetrics import evaluate
from .featurebank import (
    SYNTH_PRESETS,
    FeatureBank,
    SynthSpec,
    gen_synthetic,
    load_bank,
    load_pairs_tsv,
    save_bank,
    save_pairs_tsv,
)
from .model import (
    ModelConfig,
    TextEncoderSpec,
    bank_features,
    init_model,
    load_checkpoint,
    save_checkpoint,
    similarity_matrix,
)
from .retrieval import (
    build_background,
    fuse_ranks,
    load_background,
    load_rankings,
    rank,
    rescore_list,
    save_background,
    save_rankings,
)
from .training import (
    EnsembleConfig,
    TrainConfig,
    TrainData,
    train,
    validation_map,
)

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SPLITS = ("train", "val", "test")

# config schema: key -> (default, type) or a nested dict; unknown keys rejected
CONFIG_SCHEMA = {
    "seed": (0, int),
    "data": {
        "dir": (None, str),
        "synth_preset": (None, str),
        "synth": (None, dict),
        "text_features": (None, list),
        "video_features": (None, list),
    },
    "model": {
        "text_encoders": (None, list),
        "video_features": (None, list),
        "joint_dim": (64, int),
    },
    "train": {
        "optimizer": ("adam", str),
        "lr": (1e-3, float),
        "margin": (0.2, float),
        "dropout": (0.2, float),
        "batch_size": (32, int),
        "max_epochs": (30, int),
        "lr_decay_per_epoch": (0.01, float),
        "plateau_patience": (3, int),
        "plateau_factor": (0.5, float),
    },
    "ensemble": {
        "enabled": (False, bool),
    },
    "dsinf": {
        "strategy": ("none", str),
        "n_background": (60, int),
        "background_file": (None, str),
        "temperature": (1.0, float),
    },
    "eval": {
        "ks": ([1, 5, 10], list),
    },
}


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _validate_config(obj, schema, path=""):
    if not isinstance(obj, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = {}
    for key, value in obj.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            out[key] = _validate_config(value, sub, path + key + ".")
        else:
            default, typ = sub
            if value is None:
                out[key] = None
            elif typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                out[key] = float(value)
            elif typ is int and isinstance(value, bool):
                raise ConfigError(f"config key {path + key!r} must be {typ.__name__}")
            elif isinstance(value, typ):
                out[key] = value
            else:
                raise ConfigError(
                    f"config key {path + key!r} must be {typ.__name__}, "
                    f"got {type(value).__name__}"
                )
    for key, sub in schema.items():
        if key in out:
            continue
        if isinstance(sub, dict):
            out[key] = _validate_config({}, sub, path + key + ".")
        else:
            out[key] = copy.deepcopy(sub[0])
    return out


def _apply_override(cfg: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise ConfigError(f"--set expects key=value, got {dotted!r}")
    key, raw = dotted.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {key!r} crosses a non-object value")
    node[parts[-1]] = value


def load_config(args) -> dict:
    raw = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    for override in args.set or []:
        _apply_override(raw, override)
    cfg = _validate_config(raw, CONFIG_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------------------
# Data plumbing
# ---------------------------------------------------------------------------


def _synth_spec(cfg: dict) -> SynthSpec:
    data = cfg["data"]
    if data["synth"] is not None:
        try:
            spec = SynthSpec(**{
                k: tuple(v) if isinstance(v, list) else v
                for k, v in data["synth"].items()
            })
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth spec: {exc}") from None
    elif data["synth_preset"] is not None:
        try:
            spec = SYNTH_PRESETS[data["synth_preset"]]
        except KeyError:
            raise ConfigError(
                f"unknown synth preset {data['synth_preset']!r}; "
                f"available: {sorted(SYNTH_PRESETS)}"
            ) from None
    else:
        raise ConfigError("data.synth or data.synth_preset is required")
    return spec


def _feature_names(cfg: dict):
    data = cfg["data"]
    if data["text_features"] is None or data["video_features"] is None:
        raise ConfigError("data.text_features and data.video_features are required")
    return list(data["text_features"]), list(data["video_features"])


def _bank_path(data_dir: Path, split: str, feature: str) -> Path:
    return data_dir / f"{split}_{feature}.txvf"


def _load_split(cfg: dict, split: str):
    data = cfg["data"]
    if data["dir"] is None:
        raise ConfigError("data.dir is required for this command")
    data_dir = Path(data["dir"])
    text_names, video_names = _feature_names(cfg)
    text_banks, video_banks = [], []
    for name in text_names:
        path = _bank_path(data_dir, split, name)
        if not path.exists():
            raise MissingItemError(f"missing bank file {path}")
        text_banks.append(load_bank(path, name=name))
    for name in video_names:
        path = _bank_path(data_dir, split, name)
        if not path.exists():
            raise MissingItemError(f"missing bank file {path}")
        video_banks.append(load_bank(path, name=name))
    pairs_path = data_dir / f"{split}_pairs.tsv"
    if not pairs_path.exists():
        raise MissingItemError(f"missing pair list {pairs_path}")
    pairs = load_pairs_tsv(pairs_path)
    return text_banks, video_banks, pairs


def _model_config(cfg: dict, text_banks, video_banks) -> ModelConfig:
    dims = {b.name: b.dim for b in list(text_banks) + list(video_banks)}
    mc = cfg["model"]
    if mc["text_encoders"] is None:
        encoders = [TextEncoderSpec("identity", (b.name,)) for b in text_banks]
    else:
        encoders = []
        for spec in mc["text_encoders"]:
            kind = spec.get("kind")
            if kind == "identity":
                encoders.append(TextEncoderSpec("identity", (spec["feature"],)))
            elif kind == "concat":
                encoders.append(TextEncoderSpec("concat", tuple(spec["features"])))
            elif kind == "trainable":
                encoders.append(
                    TextEncoderSpec(
                        "trainable",
                        tuple(spec["features"]),
                        hidden_dim=int(spec["hidden_dim"]),
                    )
                )
            else:
                raise ConfigError(f"unknown text encoder kind {kind!r}")
    video_features = mc["video_features"] or [b.name for b in video_banks]
    return ModelConfig(encoders, list(video_features), mc["joint_dim"], dims)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        optimizer=t["optimizer"],
        lr=t["lr"],
        margin=t["margin"],
        dropout=t["dropout"],
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        seed=seed,
        lr_decay_per_epoch=t["lr_decay_per_epoch"],
        plateau_patience=t["plateau_patience"],
        plateau_factor=t["plateau_factor"],
    )


def _rank_all(model, text_banks, video_banks, caption_ids):
    video_ids = video_banks[0].ids()
    sims = similarity_matrix(
        model,
        bank_features(text_banks, caption_ids),
        bank_features(video_banks, video_ids),
    )
    return [
        rank(cid, dict(zip(video_ids, sims[i])))
        for i, cid in enumerate(caption_ids)
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_synth(cfg: dict, args) -> int:
    spec = _synth_spec(cfg)
    data = gen_synthetic(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for split in SPLITS:
        for bank in data.text_banks[split] + data.video_banks[split]:
            path = _bank_path(out_dir, split, bank.name)
            save_bank(bank, path)
            manifest.append(str(path))
        pairs_path = out_dir / f"{split}_pairs.tsv"
        save_pairs_tsv(data.pairs[split], pairs_path)
        manifest.append(str(pairs_path))
    print("\n".join(manifest))
    return 0


def cmd_train(cfg: dict, args) -> int:
    train_text, train_video, train_pairs = _load_split(cfg, "train")
    val_text, val_video, val_pairs = _load_split(cfg, "val")
    data = TrainData(train_text, train_video, train_pairs, val_text, val_video, val_pairs)
    mc = _model_config(cfg, train_text, train_video)
    tc = _train_config(cfg, cfg["seed"])
    model = init_model(mc, seed=cfg["seed"])
    best, history = train(model, data, tc)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.txvm"
    save_checkpoint(best, ckpt)
    history.to_tsv(out_dir / "history.tsv")
    log(
        f"trained {tc.optimizer} lr={tc.lr:g}: best val mAP "
        f"{history.best_val_map:.4f} at epoch {history.best_epoch}"
    )
    print(str(ckpt))
    return 0


def cmd_train_ensemble(cfg: dict, args) -> int:
    train_text, train_video, train_pairs = _load_split(cfg, "train")
    val_text, val_video, val_pairs = _load_split(cfg, "val")
    data = TrainData(train_text, train_video, train_pairs, val_text, val_video, val_pairs)
    mc = _model_config(cfg, train_text, train_video)
    ensemble = EnsembleConfig(
        base=_train_config(cfg, cfg["seed"]), master_seed=cfg["seed"]
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_member(member_cfg):
        model = init_model(mc, seed=member_cfg.seed)
        return train(model, data, member_cfg)

    members = ensemble.members()
    results = []
    workers = max(1, min(args.threads, len(members)))
    if workers == 1:
        for mcfg in members:
            results.append(run_member(mcfg))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_member, members))

    failures = 0
    for mcfg, result in zip(members, results):
        tag = f"{mcfg.optimizer}_{mcfg.lr:.0e}"
        best, history = result
        ckpt = out_dir / f"{tag}.txvm"
        save_checkpoint(best, ckpt)
        history.to_tsv(out_dir / f"{tag}_history.tsv")
        log(f"member {tag}: best val mAP {history.best_val_map:.4f}")
        print(str(ckpt))
    return 0 if failures == 0 else EXIT_NUMERICAL


def cmd_retrieve(cfg: dict, args) -> int:
    model = load_checkpoint(args.checkpoint)
    text_banks, video_banks, pairs = _load_split(cfg, args.split)
    for bank in text_banks + video_banks:
        if bank.name in model.config.feature_dims:
            want = model.config.feature_dims[bank.name]
            if bank.dim != want:
                raise DimensionError(
                    f"bank {bank.name!r} has dim {bank.dim} but the checkpoint "
                    f"expects {want}"
                )
    caption_ids = pairs.caption_ids()
    lists = _rank_all(model, text_banks, video_banks, caption_ids)
    save_rankings(lists, args.out_file)
    log(f"wrote {len(lists)} ranked lists to {args.out_file}")
    return 0


def _background_from_config(cfg: dict, model, video_ids):
    ds = cfg["dsinf"]
    strategy = ds["strategy"]
    if strategy == "none":
        return None
    if strategy == "provided-file":
        if not ds["background_file"]:
            raise ConfigError("dsinf.background_file is required for provided-file")
        bank_path = Path(ds["background_file"])
        return load_background(bank_path, bank_path.with_suffix(".videos.tsv"))
    if strategy == "random-captions":
        text_banks, video_banks, pairs = _load_split(cfg, "train")
        _, test_video_banks, _ = _load_split(cfg, "test")
        rng = np.random.default_rng(cfg["seed"])
        pool = pairs.caption_ids()
        n = min(ds["n_background"], len(pool))
        chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]
        return build_background(model, text_banks, chosen, test_video_banks, video_ids)
    raise ConfigError(f"unknown dsinf strategy {strategy!r}")


def cmd_rescore(cfg: dict, args) -> int:
    lists = load_rankings(args.rankings)
    if not lists:
        raise FormatError(f"no rankings found in {args.rankings}")
    ds = cfg["dsinf"]
    if ds["strategy"] == "none":
        save_rankings(lists, args.out_file)
        log("strategy none: rankings copied unchanged")
        return 0
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    video_ids = lists[0].item_ids()
    if ds["strategy"] == "random-captions" and model is None:
        raise ConfigError("--checkpoint is required for strategy random-captions")
    bg = _background_from_config(cfg, model, sorted(video_ids))
    revised = []
    moved = 0
    for lst in lists:
        if set(lst.item_ids()) != set(bg.video_ids):
            raise DimensionError(
                f"query {lst.query_id!r}: ranking universe does not match the "
                "background video universe"
            )
        new = rescore_list(lst, bg, ds["temperature"])
        moved += sum(
            1
            for e in new.entries
            if lst.rank_of(e.item_id) != e.rank
        )
        revised.append(new)
    save_rankings(revised, args.out_file)
    log(
        f"rescored {len(revised)} queries with {len(bg.query_ids)} background "
        f"queries; {moved} rank assignments changed"
    )
    return 0


def cmd_fuse(cfg: dict, args) -> int:
    per_file = [load_rankings(p) for p in args.rankings]
    for path, lists in zip(args.rankings, per_file):
        if not lists:
            raise FormatError(f"no rankings found in {path}")
    by_query = [{lst.query_id: lst for lst in lists} for lists in per_file]
    queries = list(by_query[0].keys())
    for path, mapping in zip(args.rankings[1:], by_query[1:]):
        if set(mapping.keys()) != set(queries):
            raise FusionError(f"{path} covers a different query set")
    fused = [fuse_ranks([m[q] for m in by_query]) for q in queries]
    save_rankings(fused, args.out_file)
    log(f"fused {len(args.rankings)} lists over {len(fused)} queries")
    return 0


def _load_ground_truth(path):
    pairs = load_pairs_tsv(path)
    gt = {}
    for p in pairs.pairs:
        gt.setdefault(p.caption_id, set()).add(p.video_id)
    return gt


def cmd_eval(cfg: dict, args) -> int:
    lists = load_rankings(args.rankings)
    gt = _load_ground_truth(args.ground_truth)
    report = evaluate(lists, gt, ks=tuple(cfg["eval"]["ks"]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_tsv(out_dir / "metrics.tsv")
    report.to_json(out_dir / "metrics.json")
    agg = " ".join(f"{k}={v:.4f}" for k, v in sorted(report.aggregate.items()))
    print(agg)
    return 0


ABLATE_VARIANTS = ("concat-single", "concat-video", "txv-full")


def _concat_video_banks(video_banks):
    ids = video_banks[0].ids()
    bank = FeatureBank(name="vidcat", dim=sum(b.dim for b in video_banks))
    for item_id in ids:
        bank.add(item_id, np.concatenate([b.get(item_id) for b in video_banks]))
    return bank


def cmd_ablate(cfg: dict, args) -> int:
    splits = {}
    if cfg["data"]["dir"] is not None:
        for split in SPLITS:
            splits[split] = _load_split(cfg, split)
    else:
        synth = gen_synthetic(_synth_spec(cfg))
        for split in SPLITS:
            splits[split] = (
                synth.text_banks[split],
                synth.video_banks[split],
                synth.pairs[split],
            )

    rows = []
    for variant in ABLATE_VARIANTS:
        variant_splits = {}
        for split, (tb, vb, pairs) in splits.items():
            if variant in ("concat-single", "concat-video"):
                vb = [_concat_video_banks(vb)]
            variant_splits[split] = (tb, vb, pairs)
        tb, vb, _ = variant_splits["train"]
        dims = {b.name: b.dim for b in tb + vb}
        if variant == "concat-single":
            encoders = [TextEncoderSpec("concat", tuple(b.name for b in tb))]
        else:
            encoders = [TextEncoderSpec("identity", (b.name,)) for b in tb]
        mc = ModelConfig(encoders, [b.name for b in vb], cfg["model"]["joint_dim"], dims)
        tc = _train_config(cfg, cfg["seed"])
        model = init_model(mc, seed=cfg["seed"])
        data = TrainData(*variant_splits["train"], *variant_splits["val"])
        best, history = train(model, data, tc)
        test_tb, test_vb, test_pairs = variant_splits["test"]
        lists = _rank_all(best, test_tb, test_vb, test_pairs.caption_ids())
        gt = {p.caption_id: {p.video_id} for p in test_pairs.pairs}
        report = evaluate(lists, gt)
        rows.append(
            {
                "variant": variant,
                "spaces": len(mc.text_encoders) * len(mc.video_features),
                **{k: report.aggregate[k] for k in ("r@1", "r@5", "r@10", "medr", "map", "mrr")},
            }
        )
        log(f"{variant}: spaces={rows[-1]['spaces']} mAP={rows[-1]['map']:.4f}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "ablation.tsv"
    cols = ["variant", "spaces", "r@1", "r@5", "r@10", "medr", "map", "mrr"]
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write(
                "\t".join(
                    str(row[c]) if c in ("variant", "spaces") else f"{row[c]:.9g}"
                    for c in cols
                )
                + "\n"
            )
    print(str(table))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="txv", description="Multi-space text-to-video retrieval engine"
    )
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="ensemble worker cap")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config leaf via a dotted path (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-synth", help="write synthetic banks and pair lists")
    sub.add_parser("train", help="train one configuration")
    sub.add_parser("train-ensemble", help="train the six-member ensemble")

    p = sub.add_parser("retrieve", help="rank videos for every caption of a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--out-file", required=True)

    p = sub.add_parser("rescore", help="dual-softmax rescoring of a ranking file")
    p.add_argument("--rankings", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-file", required=True)

    p = sub.add_parser("fuse", help="rank-average fusion of ranking files")
    p.add_argument("rankings", nargs="+")
    p.add_argument("--out-file", required=True)

    p = sub.add_parser("eval", help="score a ranking file against ground truth")
    p.add_argument("--rankings", required=True)
    p.add_argument("--ground-truth", required=True, help="pair list TSV")

    sub.add_parser("ablate", help="train and compare the three grid variants")
    return parser


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "train-ensemble": cmd_train_ensemble,
    "retrieve": cmd_retrieve,
    "rescore": cmd_rescore,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log(f"error category=config: {exc}")
        return EXIT_CONFIG
    except (FileNotFoundError, FormatError, MissingItemError, DimensionError,
            FusionError, EvalError) as exc:
        log(f"error category=data: {exc}")
        return EXIT_DATA
    except NumericalError as exc:
        log(f"error category=numerical: {exc}")
        return EXIT_NUMERICAL
    except TxvError as exc:
        log(f"error category=data: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
