"""The TxV network: encoder bank, K x L grid of joint spaces, similarity.

Every joint space holds one affine projection per side; an embedding is
ReLU(W @ x + b) and the overall caption-video similarity is the sum of the
per-space cosine similarities, accumulated in k-major order. The batched
and the single-pair paths share the same kernels, so similarity_matrix is
bitwise equal to the entrywise loop over similarity().
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import backend
from .errors import ConfigError, DimensionError, FormatError, MissingItemError
from .featurebank import FeatureBank
from .numerics import NORM_GUARD, cosine_similarity

CKPT_MAGIC = b"TXVM"
CKPT_VERSION = 1


@dataclass
class TextEncoderSpec:
    """identity(feature) | concat(features) | trainable(features, hidden_dim)."""

    kind: str
    features: Tuple[str, ...]
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "concat", "trainable"):
            raise ConfigError(f"unknown text encoder kind {self.kind!r}")
        if self.kind == "identity" and len(self.features) != 1:
            raise ConfigError("identity encoder takes exactly one feature")
        if not self.features:
            raise ConfigError("encoder references no features")
        if self.kind == "trainable" and self.hidden_dim < 1:
            raise ConfigError("trainable encoder needs hidden_dim >= 1")

    def output_dim(self, feature_dims: Dict[str, int]) -> int:
        if self.kind == "trainable":
            return self.hidden_dim
        return sum(feature_dims[f] for f in self.features)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "features": list(self.features)}
        if self.kind == "trainable":
            out["hidden_dim"] = self.hidden_dim
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TextEncoderSpec":
        return cls(
            kind=obj["kind"],
            features=tuple(obj["features"]),
            hidden_dim=int(obj.get("hidden_dim", 0)),
        )


@dataclass
class ModelConfig:
    text_encoders: List[TextEncoderSpec]
    video_features: List[str]
    joint_dim: int
    feature_dims: Dict[str, int]


@dataclass
class JointSpace:
    text_w: np.ndarray  # (d, dim_k)
    text_b: np.ndarray  # (d,)
    video_w: np.ndarray  # (d, dim_l)
    video_b: np.ndarray  # (d,)


@dataclass
class TrainableEncoderParams:
    w: np.ndarray  # (hidden, in_dim)
    b: np.ndarray  # (hidden,)


@dataclass
class TxVModel:
    config: ModelConfig
    spaces: List[List[JointSpace]]  # [k][l]
    encoder_params: Dict[int, TrainableEncoderParams] = field(default_factory=dict)
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.config.text_encoders)

    @property
    def l(self) -> int:
        return len(self.config.video_features)

    @property
    def d(self) -> int:
        return self.config.joint_dim

    def param_items(self) -> List[Tuple[str, np.ndarray]]:
        """All trainable arrays, in a stable documented order."""
        out = []
        for k in range(self.k):
            for l in range(self.l):
                sp = self.spaces[k][l]
                out.append((f"space.{k}.{l}.text_w", sp.text_w))
                out.append((f"space.{k}.{l}.text_b", sp.text_b))
                out.append((f"space.{k}.{l}.video_w", sp.video_w))
                out.append((f"space.{k}.{l}.video_b", sp.video_b))
        for k in sorted(self.encoder_params):
            out.append((f"enc.{k}.w", self.encoder_params[k].w))
            out.append((f"enc.{k}.b", self.encoder_params[k].b))
        return out


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_model(config: ModelConfig, seed: int) -> TxVModel:
    """Xavier-uniform weights, zero biases; deterministic per seed."""
    if config.joint_dim < 1:
        raise ConfigError(f"joint_dim must be >= 1, got {config.joint_dim}")
    if not config.text_encoders or not config.video_features:
        raise ConfigError("need at least one text encoder and one video feature")
    for enc in config.text_encoders:
        for f in enc.features:
            if f not in config.feature_dims:
                raise ConfigError(f"unknown text feature {f!r}")
    for f in config.video_features:
        if f not in config.feature_dims:
            raise ConfigError(f"unknown video feature {f!r}")

    rng = np.random.default_rng(seed)
    d = config.joint_dim
    spaces = []
    for enc in config.text_encoders:
        dim_k = enc.output_dim(config.feature_dims)
        row = []
        for vf in config.video_features:
            dim_l = config.feature_dims[vf]
            row.append(
                JointSpace(
                    text_w=_xavier(rng, d, dim_k),
                    text_b=np.zeros(d),
                    video_w=_xavier(rng, d, dim_l),
                    video_b=np.zeros(d),
                )
            )
        spaces.append(row)
    model = TxVModel(config=config, spaces=spaces, seed=seed)
    for k, enc in enumerate(config.text_encoders):
        if enc.kind == "trainable":
            in_dim = sum(config.feature_dims[f] for f in enc.features)
            model.encoder_params[k] = TrainableEncoderParams(
                w=_xavier(rng, enc.hidden_dim, in_dim),
                b=np.zeros(enc.hidden_dim),
            )
    return model


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _gather(feats: Dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    cols = []
    for name in names:
        if name not in feats:
            raise MissingItemError(f"feature {name!r} not supplied")
        cols.append(np.atleast_2d(np.asarray(feats[name], dtype=np.float64)))
    return np.concatenate(cols, axis=1)


def encoder_output_batch(model: TxVModel, k: int, feats: Dict[str, np.ndarray]):
    """Output matrix of text encoder k for a batch of feature rows."""
    enc = model.config.text_encoders[k]
    x = _gather(feats, enc.features)
    if enc.kind == "trainable":
        p = model.encoder_params[k]
        return backend.linear_relu(x, p.w, p.b)
    return x


def encode_text(model: TxVModel, feats: Dict[str, np.ndarray]) -> List[np.ndarray]:
    """Per-encoder outputs for one caption's raw feature vectors."""
    single = {name: np.atleast_2d(v) for name, v in feats.items()}
    return [encoder_output_batch(model, k, single)[0] for k in range(model.k)]


def embed_pair(
    model: TxVModel,
    k: int,
    l: int,
    text_out: np.ndarray,
    video_feat: np.ndarray,
    text_mask: Optional[np.ndarray] = None,
    video_mask: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Project an encoder output and a video feature into joint space (k, l)."""
    sp = model.spaces[k][l]
    t = np.asarray(text_out, dtype=np.float64)
    v = np.asarray(video_feat, dtype=np.float64)
    if t.shape[-1] != sp.text_w.shape[1]:
        raise DimensionError(
            f"space ({k},{l}) expects text dim {sp.text_w.shape[1]}, got {t.shape[-1]}"
        )
    if v.shape[-1] != sp.video_w.shape[1]:
        raise DimensionError(
            f"space ({k},{l}) expects video dim {sp.video_w.shape[1]}, got {v.shape[-1]}"
        )
    if text_mask is not None:
        t = t * text_mask
    if video_mask is not None:
        v = v * video_mask
    s_k = backend.linear_relu(np.atleast_2d(t), sp.text_w, sp.text_b)[0]
    v_l = backend.linear_relu(np.atleast_2d(v), sp.video_w, sp.video_b)[0]
    return s_k, v_l


def similarity(
    model: TxVModel,
    caption_feats: Dict[str, np.ndarray],
    video_feats: Dict[str, np.ndarray],
) -> float:
    """Sum over the K x L grid of per-space cosine similarities."""
    enc_outs = encode_text(model, caption_feats)
    total = 0.0
    for k in range(model.k):
        for l in range(model.l):
            vf = video_feats.get(model.config.video_features[l])
            if vf is None:
                raise MissingItemError(
                    f"video feature {model.config.video_features[l]!r} not supplied"
                )
            s_k, v_l = embed_pair(model, k, l, enc_outs[k], vf)
            total = total + cosine_similarity(s_k, v_l)
    return float(total)


def similarity_matrix(
    model: TxVModel,
    caption_feats: Dict[str, np.ndarray],
    video_feats: Dict[str, np.ndarray],
) -> np.ndarray:
    """Q x D matrix of similarities; feature dicts hold stacked rows.

    Row i / column j corresponds to caption i / video j of the stacked
    inputs. Per-space embeddings are computed batched; each entry is then
    accumulated with the same per-entry cosine and k-major space order as
    similarity(), so the two agree bitwise.
    """
    q = next(iter(caption_feats.values())).shape[0]
    d_count = next(iter(video_feats.values())).shape[0]
    if q == 0 or d_count == 0:
        raise DimensionError("similarity_matrix needs non-empty caption/video sets")
    out = np.zeros((q, d_count))
    for k in range(model.k):
        t_out = encoder_output_batch(model, k, caption_feats)
        for l in range(model.l):
            sp = model.spaces[k][l]
            name = model.config.video_features[l]
            if name not in video_feats:
                raise MissingItemError(f"video feature {name!r} not supplied")
            s = backend.linear_relu(t_out, sp.text_w, sp.text_b)
            v = backend.linear_relu(video_feats[name], sp.video_w, sp.video_b)
            # inlined cosine_similarity with precomputed norms; the float
            # operations are identical, so entries stay bitwise equal to
            # the per-pair call
            ns = [float(np.linalg.norm(s[i])) for i in range(q)]
            nv = [float(np.linalg.norm(v[j])) for j in range(d_count)]
            for i in range(q):
                si = s[i]
                for j in range(d_count):
                    prod = ns[i] * nv[j]
                    if prod >= NORM_GUARD:
                        out[i, j] += float(np.dot(si, v[j]) / prod)
    return out


def bank_features(
    banks: Sequence[FeatureBank], ids: Sequence[str]
) -> Dict[str, np.ndarray]:
    """Stack each bank's vectors for the given ids into a name -> matrix dict."""
    return {b.name: b.matrix(ids) for b in banks}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: TxVModel, path, created_by: str = "txv") -> None:
    header = {
        "k": model.k,
        "l": model.l,
        "d": model.d,
        "text_encoders": [e.to_json() for e in model.config.text_encoders],
        "video_features": list(model.config.video_features),
        "dims": model.config.feature_dims,
        "seed": model.seed,
        "created_by": created_by,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(raw)))
        fh.write(raw)
        for _, arr in model.param_items():
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> TxVModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    if len(data) < 16:
        raise FormatError("truncated header", offset=len(data))
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if 16 + header_len > len(data):
        raise FormatError("truncated JSON header", offset=16)
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad JSON header: {exc}", offset=16) from None
    for key in ("k", "l", "d", "text_encoders", "video_features", "dims", "seed"):
        if key not in header:
            raise FormatError(f"header missing key {key!r}", offset=16)
    config = ModelConfig(
        text_encoders=[TextEncoderSpec.from_json(e) for e in header["text_encoders"]],
        video_features=list(header["video_features"]),
        joint_dim=int(header["d"]),
        feature_dims={str(k): int(v) for k, v in header["dims"].items()},
    )
    if len(config.text_encoders) != header["k"] or len(config.video_features) != header["l"]:
        raise FormatError("header k/l do not match the encoder/feature lists", offset=16)
    model = init_model(config, seed=int(header["seed"]))
    pos = 16 + header_len
    for name, arr in model.param_items():
        need = arr.size * 4
        if pos + need > len(data):
            raise FormatError(f"truncated parameter blob {name!r}", offset=pos)
        vals = np.frombuffer(data, dtype="<f4", count=arr.size, offset=pos)
        arr[...] = vals.astype(np.float64).reshape(arr.shape)
        pos += need
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after parameters", offset=pos)
    return model
