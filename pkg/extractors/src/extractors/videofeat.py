"""Video feature extraction: frame sampling, backbone features, mean pooling.

Frames are sampled at wall-clock timestamps t = 0, 1/fps, 2/fps, ... that
fall strictly inside the clip's duration, so a 1-second clip sampled at
2 fps yields the frames at t=0 and t=0.5. Per-frame features come from a
pretrained backbone (penultimate layer for the CNNs) or from the
deterministic stub, and are mean-pooled into one vector per video.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .manifest import FIXED_DIMS, ExtractionManifest
from .txvf import write_bank

log = logging.getLogger("extractors")


@dataclass
class ReportRow:
    video_id: str
    status: str  # "ok" or "error: ..."
    n_frames: int


def sample_timestamps(duration: float, fps: float) -> List[float]:
    """Wall-clock sampling grid; always at least one timestamp (t=0)."""
    if duration <= 0:
        return [0.0]
    step = 1.0 / fps
    times = []
    t = 0.0
    while t < duration - 1e-9:
        times.append(round(t, 9))
        t += step
    return times or [0.0]


def read_frames(path, fps: float) -> List[np.ndarray]:
    """Decode the clip and return the BGR frames nearest each timestamp."""
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IOError(f"cannot open video file {path}")
    try:
        native_fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        frame_count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT) or 0)
        if native_fps <= 0 or frame_count <= 0:
            raise IOError(f"video {path} reports no frames")
        duration = frame_count / native_fps
        wanted = sample_timestamps(duration, fps)
        indices = [min(frame_count - 1, int(round(t * native_fps))) for t in wanted]
        frames = []
        pos = 0
        ok, frame = cap.read()
        for idx in indices:
            while pos < idx and ok:
                ok, frame = cap.read()
                pos += 1
            if not ok or frame is None:
                break
            frames.append(frame.copy())
        if not frames:
            raise IOError(f"no decodable frames in {path}")
        return frames
    finally:
        cap.release()


def _stub_frame_vector(frame: np.ndarray, dim: int, salt: str) -> np.ndarray:
    """Deterministic frame feature: content digest seeds a Gaussian draw."""
    digest = hashlib.blake2b(
        salt.encode() + frame.tobytes(), digest_size=8
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


class _PretrainedBackbone:
    def __init__(self, kind: str, checkpoint: str):
        self.kind = kind
        try:
            import torch
            import torchvision

            if kind == "resnet152":
                m = torchvision.models.resnet152(weights="IMAGENET1K_V1")
                self.model = torch.nn.Sequential(*list(m.children())[:-1]).eval()
            elif kind == "resnext101":
                self.model = torch.hub.load(
                    "facebookresearch/WSL-Images", "resnext101_32x8d_wsl"
                )
                self.model.fc = torch.nn.Identity()
                self.model.eval()
            elif kind == "clip-image":
                from transformers import CLIPModel, CLIPProcessor

                self.processor = CLIPProcessor.from_pretrained(checkpoint)
                self.model = CLIPModel.from_pretrained(checkpoint).eval()
            else:
                raise ValueError(f"no pretrained path for {kind!r}")
        except Exception as exc:
            raise RuntimeError(
                f"could not load {kind} checkpoint {checkpoint!r}: {exc}. "
                "Pin a locally available checkpoint in the manifest or use "
                'backend "stub" for pipeline testing.'
            ) from exc

    def frame_vector(self, frame: np.ndarray) -> np.ndarray:
        import cv2
        import torch

        rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
        if self.kind == "clip-image":
            with torch.no_grad():
                inputs = self.processor(images=rgb, return_tensors="pt")
                out = self.model.get_image_features(**inputs)[0]
            return out.numpy().astype(np.float64)
        resized = cv2.resize(rgb, (224, 224)).astype(np.float32) / 255.0
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
        tensor = torch.from_numpy(
            ((resized - mean) / std).transpose(2, 0, 1)
        ).unsqueeze(0)
        with torch.no_grad():
            out = self.model(tensor).flatten()
        return out.numpy().astype(np.float64)


def extract_video(
    manifest: ExtractionManifest,
) -> Tuple[Dict[str, str], List[ReportRow]]:
    """Write one bank per requested visual feature plus an extraction report.

    Undecodable files are skipped with an error row; they do not abort the
    run or appear in the banks.
    """
    written: Dict[str, str] = {}
    report: List[ReportRow] = []
    decoded: Dict[str, List[np.ndarray]] = {}
    for path in manifest.videos:
        vid = Path(path).stem
        try:
            frames = read_frames(path, manifest.fps)
        except Exception as exc:
            log.error("skipping %s: %s", path, exc)
            report.append(ReportRow(vid, f"error: {exc}", 0))
            continue
        decoded[vid] = frames
        report.append(ReportRow(vid, "ok", len(frames)))

    for kind in manifest.video_features:
        dim = FIXED_DIMS[kind]
        backbone: Optional[_PretrainedBackbone] = None
        if manifest.backend != "stub":
            backbone = _PretrainedBackbone(kind, manifest.checkpoint(kind))
        vectors = {}
        for vid, frames in decoded.items():
            if backbone is None:
                salt = f"{kind}:{manifest.seed}:"
                per_frame = [_stub_frame_vector(f, dim, salt) for f in frames]
            else:
                per_frame = [backbone.frame_vector(f) for f in frames]
            vectors[vid] = np.mean(per_frame, axis=0)
        path = manifest.bank_path(kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_bank(vectors, dim, path)
        written[kind] = str(path)
    return written, report


def write_report(rows: List[ReportRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tstatus\tn_frames\n")
        for row in rows:
            fh.write(f"{row.video_id}\t{row.status}\t{row.n_frames}\n")
