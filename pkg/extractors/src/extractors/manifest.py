"""Extraction manifest: what to extract, with which models, to where."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

TEXT_KINDS = ("bow", "w2v", "bert-mean", "clip-text")
VIDEO_KINDS = ("resnet152", "resnext101", "clip-image")

# output dimensionality per feature kind; bow depends on the vocabulary
FIXED_DIMS = {
    "w2v": 500,
    "bert-mean": 768,
    "clip-text": 512,
    "resnet152": 2048,
    "resnext101": 2048,
    "clip-image": 512,
}

# default pretrained checkpoint identifiers; override in the manifest
DEFAULT_CHECKPOINTS = {
    "w2v": "word2vec-google-news-300",
    "bert-mean": "bert-base-uncased",
    "clip-text": "openai/clip-vit-base-patch32",
    "resnet152": "torchvision:resnet152/IMAGENET1K_V1",
    "resnext101": "facebookresearch/WSL-Images:resnext101_32x8d_wsl",
    "clip-image": "openai/clip-vit-base-patch32",
}


class ManifestError(ValueError):
    """The manifest file is missing, malformed, or inconsistent."""


@dataclass
class ExtractionManifest:
    captions: Optional[str] = None  # TSV: caption_id TAB text
    videos: List[str] = field(default_factory=list)  # video file paths
    text_features: List[str] = field(default_factory=list)
    video_features: List[str] = field(default_factory=list)
    fps: float = 2.0
    out_dir: str = "banks"
    backend: str = "pretrained"  # or "stub" for offline testing
    checkpoints: Dict[str, str] = field(default_factory=dict)
    bow_min_count: int = 1  # vocabulary frequency threshold
    seed: int = 0  # stub backend determinism

    def __post_init__(self):
        for kind in self.text_features:
            if kind not in TEXT_KINDS:
                raise ManifestError(f"unknown text feature kind {kind!r}")
        for kind in self.video_features:
            if kind not in VIDEO_KINDS:
                raise ManifestError(f"unknown video feature kind {kind!r}")
        if self.backend not in ("pretrained", "stub"):
            raise ManifestError(f"unknown backend {self.backend!r}")
        if self.fps <= 0:
            raise ManifestError("fps must be positive")
        if self.text_features and not self.captions:
            raise ManifestError("text_features requested but no captions file")
        if self.video_features and not self.videos:
            raise ManifestError("video_features requested but no video files")

    def checkpoint(self, kind: str) -> str:
        return self.checkpoints.get(kind, DEFAULT_CHECKPOINTS.get(kind, ""))

    def bank_path(self, kind: str) -> Path:
        return Path(self.out_dir) / f"{kind.replace('-', '_')}.txvf"


def load_manifest(path) -> ExtractionManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a JSON object")
    known = set(ExtractionManifest.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    try:
        return ExtractionManifest(**raw)
    except TypeError as exc:
        raise ManifestError(str(exc)) from None


def load_captions(path) -> Dict[str, str]:
    """caption_id TAB text per line; blank lines skipped; text may be empty."""
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ManifestError(f"{path}: line {line_no}: expected id TAB text")
            cid, text = line.split("\t", 1)
            if cid in out:
                raise ManifestError(f"{path}: line {line_no}: duplicate id {cid!r}")
            out[cid] = text
    return out
