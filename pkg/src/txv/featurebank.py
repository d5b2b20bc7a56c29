"""Id-indexed feature banks: binary/TSV persistence, pooling, synthesis.

On-disk layout of a binary bank (.txvf), all integers little-endian:

    magic "TXVF" | u32 version=1 | u32 dim | u64 count
    | count x (u32 id-byte-length, UTF-8 id bytes)
    | count*dim x f32 row-major values

Ids and value rows appear in the same order. Values are stored as 32-bit
floats and widened to 64-bit on load.
"""

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EmptyInputError,
    FormatError,
    MissingItemError,
    MissingItemError as _MissingItemError,
)
from .numerics import as_vec

MAGIC = b"TXVF"
VERSION = 1
MAX_ID_BYTES = 4096


@dataclass
class FeatureBank:
    """One feature type for one modality: an ordered map id -> vector."""

    name: str
    dim: int
    items: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, item_id: str, vec) -> None:
        v = as_vec(vec, f"feature vector for {item_id!r}")
        if v.shape[0] != self.dim:
            raise ValueError(
                f"bank {self.name!r} has dim {self.dim}, vector for "
                f"{item_id!r} has dim {v.shape[0]}"
            )
        if item_id in self.items:
            raise ValueError(f"duplicate id {item_id!r} in bank {self.name!r}")
        if len(item_id.encode("utf-8")) > MAX_ID_BYTES:
            raise ValueError(f"id longer than {MAX_ID_BYTES} bytes")
        self.items[item_id] = v

    def get(self, item_id: str) -> np.ndarray:
        try:
            return self.items[item_id]
        except KeyError:
            raise MissingItemError(
                f"id {item_id!r} not found in bank {self.name!r}"
            ) from None

    def ids(self) -> List[str]:
        return list(self.items.keys())

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.items

    def matrix(self, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        """Rows stacked in the given (or insertion) id order."""
        if ids is None:
            ids = self.ids()
        if not ids:
            return np.empty((0, self.dim))
        return np.stack([self.get(i) for i in ids])


@dataclass
class FrameFeatureSet:
    """Per-keyframe vectors for one video, in temporal order."""

    video_id: str
    frames: List[np.ndarray]
    dim: int


@dataclass
class PairEntry:
    caption_id: str
    video_id: str
    text: Optional[str] = None


@dataclass
class PairList:
    pairs: List[PairEntry] = field(default_factory=list)

    def caption_ids(self) -> List[str]:
        return [p.caption_id for p in self.pairs]

    def video_ids(self) -> List[str]:
        return [p.video_id for p in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)


def mean_pool(frames: FrameFeatureSet) -> np.ndarray:
    """Coordinate-wise mean over the frame vectors."""
    if not frames.frames:
        raise EmptyInputError(f"video {frames.video_id!r} has no frames to pool")
    stack = np.stack([as_vec(f) for f in frames.frames])
    if stack.shape[1] != frames.dim:
        raise ValueError("frame dim does not match the declared dim")
    return stack.mean(axis=0)


def concat_features(banks: Sequence[FeatureBank], item_id: str) -> np.ndarray:
    """Concatenate the item's vectors in the given bank order."""
    if not banks:
        raise EmptyInputError("no banks to concatenate")
    return np.concatenate([b.get(item_id) for b in banks])


def save_bank(bank: FeatureBank, path) -> None:
    ids = bank.ids()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, bank.dim, len(ids)))
        for item_id in ids:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        values = bank.matrix(ids).astype("<f4")
        fh.write(values.tobytes())


def load_bank(path, name: Optional[str] = None) -> FeatureBank:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(data) < 20:
        raise FormatError("truncated header", offset=len(data))
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dim == 0:
        raise FormatError("dim must be positive", offset=8)
    pos = 20
    ids = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise FormatError(f"truncated: expected {count} ids", offset=pos)
        (id_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if id_len > MAX_ID_BYTES:
            raise FormatError(f"id length {id_len} exceeds {MAX_ID_BYTES}", offset=pos - 4)
        if pos + id_len > len(data):
            raise FormatError("truncated id", offset=pos)
        try:
            ids.append(data[pos : pos + id_len].decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("id is not valid UTF-8", offset=pos) from None
        pos += id_len
    need = count * dim * 4
    if len(data) - pos < need:
        rows = (len(data) - pos) // (dim * 4)
        raise FormatError(
            f"truncated: declared count {count} but only {rows} rows present",
            offset=pos,
        )
    values = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos)
    values = values.astype(np.float64).reshape(count, dim)
    bank = FeatureBank(name=name or str(path), dim=dim)
    for i, item_id in enumerate(ids):
        bank.add(item_id, values[i])
    return bank


def save_bank_tsv(bank: FeatureBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, vec in bank.items.items():
            fh.write(item_id)
            fh.write("\t")
            fh.write(" ".join(repr(float(v)) for v in vec))
            fh.write("\n")


def load_bank_tsv(path, name: Optional[str] = None) -> FeatureBank:
    bank = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                item_id, raw = line.split("\t", 1)
            except ValueError:
                raise FormatError(f"line {line_no}: missing TAB") from None
            vec = np.array([float(t) for t in raw.split()], dtype=np.float64)
            if bank is None:
                bank = FeatureBank(name=name or str(path), dim=vec.shape[0])
            bank.add(item_id, vec)
    if bank is None:
        raise FormatError("empty TSV bank")
    return bank


def save_pairs_tsv(pairs: PairList, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs.pairs:
            if p.text is not None:
                fh.write(f"{p.caption_id}\t{p.video_id}\t{p.text}\n")
            else:
                fh.write(f"{p.caption_id}\t{p.video_id}\n")


def load_pairs_tsv(path) -> PairList:
    out = PairList()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"line {line_no}: expected caption_id TAB video_id")
            out.pairs.append(
                PairEntry(parts[0], parts[1], parts[2] if len(parts) > 2 else None)
            )
    return out


def validate_pairs(
    pairs: PairList,
    text_banks: Sequence[FeatureBank],
    video_banks: Sequence[FeatureBank],
) -> None:
    """Every referenced id must exist in every corresponding bank."""
    for p in pairs.pairs:
        for bank in text_banks:
            if p.caption_id not in bank:
                raise _MissingItemError(
                    f"caption {p.caption_id!r} missing from bank {bank.name!r}"
                )
        for bank in video_banks:
            if p.video_id not in bank:
                raise _MissingItemError(
                    f"video {p.video_id!r} missing from bank {bank.name!r}"
                )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class SynthSpec:
    """Desk-scale synthetic retrieval problem.

    Every caption/video pair shares one latent vector; each feature bank is
    a fixed random linear map of the latent plus independent Gaussian noise,
    so the feature views are genuinely complementary. Distractor videos are
    drawn from fresh latents and have no paired caption.
    """

    n_train: int = 40
    n_val: int = 12
    n_test: int = 12
    latent_dim: int = 8
    text_dims: Tuple[int, ...] = (12, 16)
    video_dims: Tuple[int, ...] = (12, 16, 10)
    noise_sigma: float = 0.05
    distractor_count: int = 5
    seed: int = 0

    def __post_init__(self):
        for n in (self.n_train, self.n_val, self.n_test, self.latent_dim):
            if n < 1:
                raise ValueError("counts and latent_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.text_dims or not self.video_dims:
            raise ValueError("need at least one text and one video feature")


@dataclass
class SyntheticData:
    text_banks: Dict[str, List[FeatureBank]]  # split -> M banks
    video_banks: Dict[str, List[FeatureBank]]  # split -> L banks
    pairs: Dict[str, PairList]  # split -> pair list
    # ground-truth latents per split, keyed by item id (debug/verification)
    caption_latents: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    video_latents: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def text_feature_names(self) -> List[str]:
        return [b.name for b in self.text_banks["train"]]

    def video_feature_names(self) -> List[str]:
        return [b.name for b in self.video_banks["train"]]


def gen_synthetic(spec: SynthSpec) -> SyntheticData:
    """Deterministic per seed; ids follow "c{n}" / "v{n}"."""
    rng = np.random.default_rng(spec.seed)
    text_maps = [rng.standard_normal((d, spec.latent_dim)) for d in spec.text_dims]
    video_maps = [rng.standard_normal((d, spec.latent_dim)) for d in spec.video_dims]

    counts = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    text_banks: Dict[str, List[FeatureBank]] = {}
    video_banks: Dict[str, List[FeatureBank]] = {}
    pairs: Dict[str, PairList] = {}
    cap_latents: Dict[str, Dict[str, np.ndarray]] = {}
    vid_latents: Dict[str, Dict[str, np.ndarray]] = {}
    next_id = 0
    for split in SPLITS:
        n = counts[split]
        latents = rng.standard_normal((n, spec.latent_dim))
        distractors = rng.standard_normal((spec.distractor_count, spec.latent_dim))
        cap_ids = [f"c{next_id + i}" for i in range(n)]
        vid_ids = [f"v{next_id + i}" for i in range(n)]
        dis_ids = [f"v{next_id + n + i}" for i in range(spec.distractor_count)]
        next_id += n + spec.distractor_count

        t_banks = []
        for m, (dim, amap) in enumerate(zip(spec.text_dims, text_maps)):
            bank = FeatureBank(name=f"text{m}", dim=dim)
            noise = rng.standard_normal((n, dim)) * spec.noise_sigma
            feats = latents @ amap.T + noise
            for i, cid in enumerate(cap_ids):
                bank.add(cid, feats[i])
            t_banks.append(bank)

        v_banks = []
        all_latents = np.concatenate([latents, distractors])
        all_vids = vid_ids + dis_ids
        for l, (dim, bmap) in enumerate(zip(spec.video_dims, video_maps)):
            bank = FeatureBank(name=f"vid{l}", dim=dim)
            noise = rng.standard_normal((len(all_vids), dim)) * spec.noise_sigma
            feats = all_latents @ bmap.T + noise
            for i, vid in enumerate(all_vids):
                bank.add(vid, feats[i])
            v_banks.append(bank)

        text_banks[split] = t_banks
        video_banks[split] = v_banks
        pairs[split] = PairList(
            [PairEntry(c, v) for c, v in zip(cap_ids, vid_ids)]
        )
        cap_latents[split] = {c: latents[i] for i, c in enumerate(cap_ids)}
        vid_latents[split] = {v: all_latents[i] for i, v in enumerate(all_vids)}
    return SyntheticData(
        text_banks, video_banks, pairs, cap_latents, vid_latents
    )


#: named presets used by the CLI and the test suite
SYNTH_PRESETS: Dict[str, SynthSpec] = {
    "small": SynthSpec(),
    "retrieval": SynthSpec(
        n_train=200,
        n_val=50,
        n_test=50,
        latent_dim=16,
        text_dims=(32, 48),
        video_dims=(32, 48, 24),
        noise_sigma=0.05,
        distractor_count=20,
        seed=7,
    ),
    "ablate": SynthSpec(
        n_train=120,
        n_val=40,
        n_test=40,
        latent_dim=12,
        text_dims=(24, 32),
        video_dims=(24, 32, 16),
        noise_sigma=1.6,
        distractor_count=20,
        seed=11,
    ),
}
