"""Training of per-location grading specialists."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import diffcore as dc
from ..errors import ConfigurationError, SchedulingError, ShapeError
from ..volgrid import class_sign
from .unet import UNetConfig, check_patch_shape, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    patience: int = 20
    max_epochs: int = 200
    jitter: int = 1
    mixup_alpha: float = 0.2
    val_fraction: float = 0.2
    batch_size: int = 4
    seed: int = 0
    unet: UNetConfig = field(default_factory=UNetConfig)

    def __post_init__(self):
        if isinstance(self.unet, dict):
            object.__setattr__(self, "unet", UNetConfig(**self.unet))
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class GradingDataset:
    """Working-resolution, intensity-standardized images of one cohort."""

    images: np.ndarray      # (n, X, Y, Z) float32
    masks: np.ndarray       # (n, X, Y, Z) bool, ICC
    signs: np.ndarray       # (n,) +1 disease / -1 healthy
    subject_ids: list = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.masks = np.asarray(self.masks, dtype=bool)
        self.signs = np.array([class_sign(s) for s in self.signs], dtype=np.int8)
        if self.images.shape != self.masks.shape or len(self.signs) != len(self.images):
            raise ShapeError("images, masks and labels disagree in shape")

    def __len__(self):
        return len(self.signs)

    def patches(self, grid, j, idx=None):
        """(images, masks, targets) at location ``j``; images get a channel axis."""
        sl = (slice(None),) + grid.slices(j)
        sel = slice(None) if idx is None else idx
        x = self.images[sel][sl][:, None]
        m = self.masks[sel][sl]
        y = np.where(m, self.signs[sel][:, None, None, None].astype(np.float32), 0.0)[:, None]
        return x, m, y.astype(np.float32)


@dataclass
class GraderModel:
    location: int | None
    params: dict
    unet: UNetConfig
    alpha: float | None = None
    parent: int | None = None
    seed: tuple = ()
    init_params: dict | None = field(default=None, repr=False)
    init_digest: str = ""
    final_digest: str = ""
    epochs: int = 0
    best_epoch: int = 0
    val_history: list = field(default_factory=list, repr=False)

    @property
    def best_val_loss(self):
        return min(self.val_history) if self.val_history else float("nan")


def stratified_split(signs, val_fraction, seed):
    """Disjoint, class-stratified (train, val) index arrays."""
    signs = np.asarray(signs)
    rng = np.random.default_rng([seed, 0x5EED])
    train, val = [], []
    for cls in (-1, 1):
        idx = np.flatnonzero(signs == cls)
        if len(idx) < 2:
            raise ConfigurationError("each class needs at least two subjects to split")
        idx = rng.permutation(idx)
        nv = min(max(1, int(round(val_fraction * len(idx)))), len(idx) - 1)
        val.extend(idx[:nv])
        train.extend(idx[nv:])
    return np.sort(np.array(train)), np.sort(np.array(val))


def translate_jitter(vol, t):
    """Shift by ``t`` voxels per axis (|t| <= 1); vacated slices become 0.

    Content at index i moves to i + t. Works on arrays with any number of
    leading axes; the shift applies to the last three.
    """
    arr = np.asarray(vol)
    t = tuple(int(v) for v in t)
    if any(abs(v) > 1 for v in t):
        raise ConfigurationError(f"translation must be in {{-1, 0, 1}} per axis, got {t}")
    if t == (0, 0, 0):
        return arr.copy()
    out = np.zeros_like(arr)
    lead = (slice(None),) * (arr.ndim - 3)
    dst, src = [], []
    for s in t:
        dst.append(slice(s, None) if s >= 0 else slice(None, s))
        src.append(slice(None, -s if s > 0 else None) if s >= 0 else slice(-s, None))
    out[lead + tuple(dst)] = arr[lead + tuple(src)]
    return out


def mixup_pair(x1, y1, x2, y2, lam):
    """Convex combination of two (input, target) pairs with weight ``lam``."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"mixup weight must lie in [0, 1], got {lam}")
    return lam * x1 + (1 - lam) * x2, lam * y1 + (1 - lam) * y2


def _augment(x, y, rng, cfg):
    if cfg.jitter:
        x = x.copy()
        y = y.copy()
        for b in range(len(x)):
            t = rng.integers(-cfg.jitter, cfg.jitter + 1, size=3)
            x[b] = translate_jitter(x[b], t)
            y[b] = translate_jitter(y[b], t)
    if cfg.mixup_alpha > 0 and len(x) > 1:
        lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        perm = rng.permutation(len(x))
        x, y = mixup_pair(x, y, x[perm], y[perm], lam)
    return x.astype(np.float32), y.astype(np.float32)


def predict(unet, params, x, batch_size=16):
    """Forward pass without graph bookkeeping, batched."""
    outs = [forward(unet, params, x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def grade_patch(model, patch):
    """Grading of one patch (or a batch of patches) in [-1, 1]."""
    p = np.asarray(patch, dtype=np.float32)
    single = p.ndim == 3
    x = p[None, None] if single else p[:, None]
    check_patch_shape(model.unet, x.shape[2:])
    out = predict(model.unet, model.params, x)[:, 0]
    return out[0] if single else out


def alpha_from_gradings(gradings, masks, signs):
    """Balanced accuracy of sign(mean ICC grading); a mean of exactly 0 (or an
    empty ICC) predicts the healthy class."""
    from ..metrics import confusion

    signs = np.array([class_sign(s) for s in signs])
    if len(signs) == 0:
        raise ConfigurationError("empty validation set")
    if (signs > 0).all() or (signs < 0).all():
        raise ConfigurationError("validation set needs both classes")
    g = np.asarray(gradings, dtype=np.float64).reshape(len(signs), -1)
    m = np.asarray(masks, dtype=bool).reshape(len(signs), -1)
    cnt = m.sum(axis=1)
    means = np.where(cnt > 0, (g * m).sum(axis=1) / np.maximum(cnt, 1), 0.0)
    return confusion(signs > 0, means > 0).bacc


def compute_alpha(model, patches, masks, signs):
    """Validation weight of a specialist at its patch location."""
    if len(patches) == 0:
        raise ConfigurationError("empty validation set")
    return alpha_from_gradings(grade_patch(model, patches), masks, signs)


def _to_tensors(params):
    return {k: dc.Tensor(v, requires_grad=True) for k, v in params.items()}


def _copy(params):
    return {k: np.array(v, copy=True) for k, v in params.items()}


def _val_loss(unet, params, x, y):
    out = predict(unet, params, x)
    return float(np.abs(out.astype(np.float64) - y).mean())


def fit(unet, params, train_xy, val_xy, cfg, rng, tag=""):
    """Adam/MAE training with early stopping on validation loss.

    Returns (best params, history, best epoch, epochs run).
    """
    xt, yt = train_xy
    xv, yv = val_xy
    tensors = _to_tensors(params)
    opt = dc.Adam(tensors, lr=cfg.lr)
    best, best_loss, best_epoch, wait = _copy(params), np.inf, 0, 0
    history = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xt))
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            xb, yb = _augment(xt[idx], yt[idx], rng, cfg)
            opt.zero_grad()
            loss = dc.mae_loss(forward(unet, tensors, dc.Tensor(xb)), yb)
            dc.backward(loss)
            opt.step()
        current = {k: t.data for k, t in tensors.items()}
        vl = _val_loss(unet, current, xv, yv)
        history.append(vl)
        if vl < best_loss:
            best, best_loss, best_epoch, wait = _copy(current), vl, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    log.debug("%s stopped after %d epochs (best %d, val %.4f)", tag, epoch, best_epoch, best_loss)
    return best, history, best_epoch, epoch


def train_location(j, dataset, grid, cfg, trained=None, split=None):
    """Train the specialist for grid location ``j``.

    The root of the transfer schedule starts from a seeded random init; every
    other location starts from a bit-exact copy of its parent's final weights,
    which must already be in ``trained``.
    """
    trained = trained or {}
    check_patch_shape(cfg.unet, grid.patch_dims)
    train_idx, val_idx = split if split is not None else stratified_split(
        dataset.signs, cfg.val_fraction, cfg.seed)
    seed = (int(cfg.seed), int(j))
    rng = np.random.default_rng(seed)
    parent = grid.parents[j]
    if parent is None:
        start = init_params(cfg.unet, rng)
    else:
        if parent not in trained:
            raise SchedulingError(f"location {j} needs its parent {parent} trained first")
        start = _copy(trained[parent].params)
    init = _copy(start)
    xt, _, yt = dataset.patches(grid, j, train_idx)
    xv, mv, yv = dataset.patches(grid, j, val_idx)
    best, history, best_epoch, epochs = fit(cfg.unet, start, (xt, yt), (xv, yv), cfg, rng, tag=f"loc {j}")
    model = GraderModel(
        location=j, params=best, unet=cfg.unet, parent=parent, seed=seed,
        init_params=init, init_digest=dc.digest(init), final_digest=dc.digest(best),
        epochs=epochs, best_epoch=best_epoch, val_history=history,
    )
    model.alpha = compute_alpha(model, xv[:, 0], mv, dataset.signs[val_idx])
    log.info("location %d (%s): alpha=%.3f epochs=%d parent=%s",
             j, grid.location_name(j), model.alpha, epochs, parent)
    return model


def train_individual(dataset, grid, cfg, split=None):
    """Single network trained on the patches of every location pooled."""
    check_patch_shape(cfg.unet, grid.patch_dims)
    train_idx, val_idx = split if split is not None else stratified_split(
        dataset.signs, cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng((int(cfg.seed), 0xA11))
    start = init_params(cfg.unet, rng)
    init = _copy(start)
    parts_t = [dataset.patches(grid, j, train_idx) for j in range(grid.m)]
    parts_v = [dataset.patches(grid, j, val_idx) for j in range(grid.m)]
    xt = np.concatenate([p[0] for p in parts_t])
    yt = np.concatenate([p[2] for p in parts_t])
    xv = np.concatenate([p[0] for p in parts_v])
    yv = np.concatenate([p[2] for p in parts_v])
    best, history, best_epoch, epochs = fit(cfg.unet, start, (xt, yt), (xv, yv), cfg, rng, tag="individual")
    model = GraderModel(
        location=None, params=best, unet=cfg.unet, seed=(int(cfg.seed), 0xA11),
        init_params=init, init_digest=dc.digest(init), final_digest=dc.digest(best),
        epochs=epochs, best_epoch=best_epoch, val_history=history,
    )
    mv = np.concatenate([p[1] for p in parts_v])
    sv = np.tile(dataset.signs[val_idx], grid.m)
    model.alpha = compute_alpha(model, xv[:, 0], mv, sv)
    return model


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
