"""Multi-space ranking loss, manual backprop, optimizers, training loop.

The loss for one joint space is the improved marginal ranking loss: for
every positive pair in the batch, a hinge with margin alpha against the
hardest in-batch negative on each side. The total loss sums this over the
K x L grid. Gradients are hand-derived reverse-mode through cosine, row
normalization, ReLU, the affine projections, dropout masks and trainable
encoders.
"""

import copy
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import backend
from .errors import (
    BatchTooSmallError,
    ConfigError,
    InvalidBatchError,
    NumericalError,
)
from .evalmetrics import GroundTruth, evaluate
from .featurebank import FeatureBank, PairList
from .model import TxVModel, bank_features, similarity_matrix
from .numerics import NORM_GUARD
from .retrieval import rank

ENSEMBLE_OPTIMIZERS = ("adam", "rmsprop")
ENSEMBLE_LRS = (1e-4, 5e-5, 1e-5)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    margin: float = 0.2
    dropout: float = 0.2
    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 0
    lr_decay_per_epoch: float = 0.01
    plateau_patience: int = 3
    plateau_factor: float = 0.5

    def __post_init__(self):
        if self.optimizer not in ("adam", "rmsprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (negatives must exist)")


@dataclass
class EnsembleConfig:
    """The six-member grid of {adam, rmsprop} x three learning rates."""

    base: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0

    def members(self) -> List[TrainConfig]:
        out = []
        for i, opt in enumerate(ENSEMBLE_OPTIMIZERS):
            for j, lr in enumerate(ENSEMBLE_LRS):
                out.append(
                    replace(
                        self.base,
                        optimizer=opt,
                        lr=lr,
                        seed=self.master_seed + i * len(ENSEMBLE_LRS) + j,
                    )
                )
        return out


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_map: float
    lr: float


@dataclass
class TrainHistory:
    epochs: List[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_map: float = float("-inf")

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tloss\tval_map\tlr\n")
            for e in self.epochs:
                fh.write(f"{e.epoch}\t{e.loss!r}\t{e.val_map!r}\t{e.lr!r}\n")


@dataclass
class TrainData:
    train_text: List[FeatureBank]
    train_video: List[FeatureBank]
    train_pairs: PairList
    val_text: List[FeatureBank]
    val_video: List[FeatureBank]
    val_pairs: PairList


@dataclass
class Batch:
    caption_ids: List[str]
    video_ids: List[str]
    text_feats: Dict[str, np.ndarray]  # feature name -> (Q, dim)
    video_feats: Dict[str, np.ndarray]
    text_masks: Optional[Dict[int, np.ndarray]] = None  # encoder index -> (Q, dim_k)
    video_masks: Optional[Dict[int, np.ndarray]] = None  # feature index -> (Q, dim_l)

    def __len__(self) -> int:
        return len(self.caption_ids)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def hardest_negatives(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row and per-column hardest negative indices of a Q x Q batch matrix.

    Diagonal entries are the positives. Ties resolve to the lowest index.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    q = s.shape[0]
    if q < 2:
        raise BatchTooSmallError("hard-negative mining needs a batch of >= 2 pairs")
    masked = s.copy()
    np.fill_diagonal(masked, -np.inf)
    neg_video = masked.argmax(axis=1)  # for caption i: hardest non-matching video
    neg_text = masked.argmax(axis=0)  # for video j: hardest non-matching caption
    return neg_video, neg_text


def space_loss(s_kl: np.ndarray, alpha: float) -> Tuple[float, np.ndarray]:
    """Mean-over-pairs hinge loss of one joint space and its subgradient."""
    s = np.asarray(s_kl, dtype=np.float64)
    neg_video, neg_text = hardest_negatives(s)
    q = s.shape[0]
    ds = np.zeros_like(s)
    total = 0.0
    inv_q = 1.0 / q
    for i in range(q):
        jn = neg_video[i]
        term1 = alpha + s[i, jn] - s[i, i]
        if term1 > 0.0:
            total += term1
            ds[i, jn] += inv_q
            ds[i, i] -= inv_q
        im = neg_text[i]
        term2 = alpha + s[im, i] - s[i, i]
        if term2 > 0.0:
            total += term2
            ds[im, i] += inv_q
            ds[i, i] -= inv_q
    return total * inv_q, ds


def _normalize_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit rows; rows with norm below the guard become zero rows."""
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms < NORM_GUARD, 1.0, norms)
    unit = x / safe[:, None]
    unit[norms < NORM_GUARD] = 0.0
    return unit, norms


def _normalize_backward(unit, norms, dunit):
    """Gradient through row normalization; guarded rows get zero gradient."""
    dot = np.sum(unit * dunit, axis=1, keepdims=True)
    dx = (dunit - unit * dot) / np.where(norms < NORM_GUARD, 1.0, norms)[:, None]
    dx[norms < NORM_GUARD] = 0.0
    return dx


def total_loss(
    model: TxVModel, batch: Batch, alpha: float = 0.2
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Summed per-space loss and exact gradients for every parameter."""
    if len(set(batch.video_ids)) != len(batch.video_ids):
        raise InvalidBatchError("batch contains a duplicate video id")
    if len(batch) < 2:
        raise BatchTooSmallError("training batch must hold >= 2 pairs")

    cfg = model.config
    grads = {name: np.zeros_like(arr) for name, arr in model.param_items()}

    # text encoder forward (with caches for the trainable kind)
    enc_out: List[np.ndarray] = []
    enc_cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for k, enc in enumerate(cfg.text_encoders):
        x = np.concatenate([batch.text_feats[f] for f in enc.features], axis=1)
        if enc.kind == "trainable":
            p = model.encoder_params[k]
            pre = backend.matmul(x, p.w.T) + p.b
            enc_cache[k] = (x, pre)
            enc_out.append(np.maximum(pre, 0.0))
        else:
            enc_out.append(x)

    loss = 0.0
    d_enc_out = [np.zeros_like(t) for t in enc_out]
    for k in range(model.k):
        t_mask = batch.text_masks.get(k) if batch.text_masks else None
        xt = enc_out[k] * t_mask if t_mask is not None else enc_out[k]
        for l in range(model.l):
            sp = model.spaces[k][l]
            v_mask = batch.video_masks.get(l) if batch.video_masks else None
            vx = batch.video_feats[cfg.video_features[l]]
            xv = vx * v_mask if v_mask is not None else vx

            pre_s = backend.matmul(xt, sp.text_w.T) + sp.text_b
            s_emb = np.maximum(pre_s, 0.0)
            pre_v = backend.matmul(xv, sp.video_w.T) + sp.video_b
            v_emb = np.maximum(pre_v, 0.0)

            s_unit, s_norms = _normalize_rows(s_emb)
            v_unit, v_norms = _normalize_rows(v_emb)
            c = backend.matmul(s_unit, v_unit.T)

            sl, dc = space_loss(c, alpha)
            loss += sl

            ds_unit = backend.matmul(dc, v_unit)
            dv_unit = backend.matmul(dc.T, s_unit)
            ds_emb = _normalize_backward(s_unit, s_norms, ds_unit)
            dv_emb = _normalize_backward(v_unit, v_norms, dv_unit)

            dpre_s = ds_emb * (pre_s > 0.0)
            dpre_v = dv_emb * (pre_v > 0.0)
            grads[f"space.{k}.{l}.text_w"] += backend.matmul(dpre_s.T, xt)
            grads[f"space.{k}.{l}.text_b"] += dpre_s.sum(axis=0)
            grads[f"space.{k}.{l}.video_w"] += backend.matmul(dpre_v.T, xv)
            grads[f"space.{k}.{l}.video_b"] += dpre_v.sum(axis=0)

            dxt = backend.matmul(dpre_s, sp.text_w)
            if t_mask is not None:
                dxt = dxt * t_mask
            d_enc_out[k] += dxt
            # video features are leaves: no trainable video encoder

    for k, enc in enumerate(cfg.text_encoders):
        if enc.kind == "trainable":
            x, pre = enc_cache[k]
            dpre = d_enc_out[k] * (pre > 0.0)
            grads[f"enc.{k}.w"] += backend.matmul(dpre.T, x)
            grads[f"enc.{k}.b"] += dpre.sum(axis=0)

    return float(loss), grads


def flatten_params(model: TxVModel) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in model.param_items()])


def set_params(model: TxVModel, vec: np.ndarray) -> None:
    pos = 0
    for _, arr in model.param_items():
        arr[...] = vec[pos : pos + arr.size].reshape(arr.shape)
        pos += arr.size
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")


def loss_fn_for_grad_check(model: TxVModel, batch: Batch, alpha: float = 0.2):
    """Adapter: flat parameter vector -> (loss, flat analytic gradient)."""

    def fn(vec):
        set_params(model, vec)
        loss, grads = total_loss(model, batch, alpha)
        flat = np.concatenate(
            [grads[name].ravel() for name, _ in model.param_items()]
        )
        return loss, flat

    return fn


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class Optimizer:
    """Adam / RMSprop with per-parameter state, constants fixed.

    Adam: beta1=0.9, beta2=0.999, eps=1e-8, bias correction.
    RMSprop: square-average decay 0.9, eps=1e-8, no momentum.
    """

    def __init__(self, kind: str):
        if kind not in ("adam", "rmsprop"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(
        self,
        params: Sequence[Tuple[str, np.ndarray]],
        grads: Dict[str, np.ndarray],
        lr: float,
    ) -> None:
        for name, _ in params:
            if not np.all(np.isfinite(grads[name])):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        if self.kind == "adam":
            b1, b2, eps = 0.9, 0.999, 1e-8
            for name, arr in params:
                g = grads[name]
                m = self.m.setdefault(name, np.zeros_like(arr))
                v = self.v.setdefault(name, np.zeros_like(arr))
                m[...] = b1 * m + (1 - b1) * g
                v[...] = b2 * v + (1 - b2) * g * g
                m_hat = m / (1 - b1**self.t)
                v_hat = v / (1 - b2**self.t)
                arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
        else:
            decay, eps = 0.9, 1e-8
            for name, arr in params:
                g = grads[name]
                v = self.v.setdefault(name, np.zeros_like(arr))
                v[...] = decay * v + (1 - decay) * g * g
                arr -= lr * g / (np.sqrt(v) + eps)


def optimizer_step(state: Optimizer, model: TxVModel, grads, lr: float) -> None:
    state.step(model.param_items(), grads, lr)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def make_batches(pairs: PairList, q: int, rng: np.random.Generator) -> List[List[int]]:
    """Seeded shuffle into batches of unique video ids; partial (<2) dropped."""
    remaining = list(rng.permutation(len(pairs)))
    batches: List[List[int]] = []
    while remaining:
        batch: List[int] = []
        vids = set()
        skipped: List[int] = []
        for i in remaining:
            vid = pairs.pairs[i].video_id
            if len(batch) < q and vid not in vids:
                batch.append(i)
                vids.add(vid)
            else:
                skipped.append(i)
        if len(batch) < 2:
            break
        batches.append(batch)
        remaining = skipped
    return batches


def _build_batch(
    model: TxVModel,
    data: TrainData,
    pair_idx: List[int],
    dropout: float,
    rng: np.random.Generator,
) -> Batch:
    cids = [data.train_pairs.pairs[i].caption_id for i in pair_idx]
    vids = [data.train_pairs.pairs[i].video_id for i in pair_idx]
    text_feats = bank_features(data.train_text, cids)
    video_feats = bank_features(data.train_video, vids)
    text_masks = None
    video_masks = None
    if dropout > 0.0:
        keep = 1.0 - dropout
        text_masks = {}
        for k, enc in enumerate(model.config.text_encoders):
            dim = enc.output_dim(model.config.feature_dims)
            text_masks[k] = (rng.random((len(cids), dim)) >= dropout) / keep
        video_masks = {}
        for l, vf in enumerate(model.config.video_features):
            dim = model.config.feature_dims[vf]
            video_masks[l] = (rng.random((len(vids), dim)) >= dropout) / keep
    return Batch(cids, vids, text_feats, video_feats, text_masks, video_masks)


def validation_map(
    model: TxVModel,
    text_banks: List[FeatureBank],
    video_banks: List[FeatureBank],
    pairs: PairList,
) -> float:
    """mAP of ranking every caption against the full video bank."""
    cids = pairs.caption_ids()
    vids = video_banks[0].ids()
    sims = similarity_matrix(
        model, bank_features(text_banks, cids), bank_features(video_banks, vids)
    )
    lists = [
        rank(cid, dict(zip(vids, sims[i]))) for i, cid in enumerate(cids)
    ]
    gt: GroundTruth = {p.caption_id: {p.video_id} for p in pairs.pairs}
    return evaluate(lists, gt).aggregate["map"]


def train(
    model: TxVModel, data: TrainData, config: TrainConfig
) -> Tuple[TxVModel, TrainHistory]:
    """Train in place; returns (best-validation model copy, history)."""
    if len(data.train_pairs) == 0 or len(data.val_pairs) == 0:
        raise ConfigError("train and validation splits must be non-empty")

    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config.optimizer)
    lr = config.lr
    history = TrainHistory()
    best_model = copy.deepcopy(model)
    since_improve = 0
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(data.train_pairs, config.batch_size, rng)
        losses = []
        for pair_idx in batches:
            batch = _build_batch(model, data, pair_idx, config.dropout, rng)
            loss, grads = total_loss(model, batch, config.margin)
            opt.step(model.param_items(), grads, lr)
            losses.append(loss)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        val_map = validation_map(model, data.val_text, data.val_video, data.val_pairs)
        history.epochs.append(EpochStats(epoch, epoch_loss, val_map, lr))

        if val_map > history.best_val_map:
            history.best_val_map = val_map
            history.best_epoch = epoch
            best_model = copy.deepcopy(model)
            since_improve = 0
        else:
            since_improve += 1

        # both schedule rules compose multiplicatively within an epoch
        lr *= 1.0 - config.lr_decay_per_epoch
        if since_improve >= config.plateau_patience:
            lr *= config.plateau_factor
            since_improve = 0
    return best_model, history


@dataclass
class EnsembleMember:
    config: TrainConfig
    model: Optional[TxVModel] = None
    history: Optional[TrainHistory] = None
    error: Optional[str] = None

    @property
    def tag(self) -> str:
        return f"{self.config.optimizer}_{self.config.lr:.0e}"


def train_ensemble(
    make_model, data: TrainData, ensemble: EnsembleConfig
) -> List[EnsembleMember]:
    """Six independent runs; failures are reported per member, not raised.

    ``make_model`` maps a member seed to a freshly initialized model.
    """
    out = []
    for cfg in ensemble.members():
        member = EnsembleMember(config=cfg)
        try:
            model = make_model(cfg.seed)
            member.model, member.history = train(model, data, cfg)
        except Exception as exc:  # noqa: BLE001 - error contract of the op
            member.error = f"{type(exc).__name__}: {exc}"
        out.append(member)
    return out
