"""Structure graphs with (DG, V, A) node features, the GCN classifier and a
linear baseline."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .ensemble import DGVector
from .errors import ConfigurationError, ContractError, DataError, ShapeError
from .grader.train import stratified_split
from .metrics import confusion
from .volgrid import POSITIVE_CLASSES

log = logging.getLogger(__name__)


def complete_adjacency(s):
    """Adjacency of the complete graph on ``s`` nodes (zero diagonal)."""
    if s < 1:
        raise ShapeError("a graph needs at least one node")
    return np.ones((s, s)) - np.eye(s)


def normalized_adjacency(adj):
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    a = a + np.eye(len(a))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def edge_count(adj):
    a = np.asarray(adj)
    return int(np.count_nonzero(np.triu(a, k=1)))


@dataclass(frozen=True)
class StructureGraph:
    node_features: np.ndarray   # (s, f), normalized
    adjacency: np.ndarray       # (s, s), zero diagonal
    imputed: np.ndarray         # (s,) bool, DG filled from the training mean
    subject_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        a = np.asarray(self.adjacency, dtype=np.float64)
        if x.ndim != 2 or a.shape != (len(x), len(x)):
            raise ShapeError(f"features {x.shape} do not match adjacency {a.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("node features must be finite")
        if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0):
            raise ShapeError("adjacency must be symmetric with a zero diagonal")
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "adjacency", a)

    @property
    def s(self):
        return len(self.node_features)

    @property
    def n_edges(self):
        return edge_count(self.adjacency)


def _as_dg(dg):
    if isinstance(dg, DGVector):
        return np.where(dg.missing, np.nan, dg.values).astype(np.float64)
    return np.asarray(dg, dtype=np.float64)


def _safe_std(x, axis=0):
    sd = np.nanstd(x, axis=axis)
    return np.where(np.isfinite(sd) & (sd > 1e-12), sd, 1.0)


@dataclass
class FeatureNormalizer:
    """Per-structure z-scoring of DG and V, scalar z-scoring of age.

    All statistics come from the training split. Missing DG values are
    replaced by the training mean of that structure (z-score 0).
    """

    dg_mean: np.ndarray
    dg_std: np.ndarray
    vol_mean: np.ndarray
    vol_std: np.ndarray
    age_mean: float
    age_std: float

    @classmethod
    def fit(cls, dg, volumes, ages):
        dg = np.asarray([_as_dg(d) for d in dg])
        vol = np.asarray(volumes, dtype=np.float64)
        ages = np.asarray(ages, dtype=np.float64)
        if dg.ndim != 2 or dg.shape != vol.shape or len(ages) != len(dg):
            raise ShapeError("DG, volume and age arrays are not aligned")
        with np.errstate(invalid="ignore"):
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = np.nanmean(dg, axis=0)
        return cls(
            dg_mean=np.where(np.isfinite(mean), mean, 0.0),
            dg_std=_safe_std(dg),
            vol_mean=vol.mean(axis=0),
            vol_std=_safe_std(vol),
            age_mean=float(ages.mean()),
            age_std=float(_safe_std(ages)),
        )

    @property
    def s(self):
        return len(self.dg_mean)

    def transform(self, dg, volumes, age, missing_flag=False):
        """Node feature matrix (s, 3) or (s, 4) with the flag column, plus the
        imputation mask."""
        d = _as_dg(dg)
        v = np.asarray(volumes, dtype=np.float64)
        if d.shape != (self.s,) or v.shape != (self.s,):
            raise ShapeError(f"expected {self.s} structures, got DG {d.shape} and V {v.shape}")
        imputed = ~np.isfinite(d)
        d = np.where(imputed, self.dg_mean, d)
        cols = [
            (d - self.dg_mean) / self.dg_std,
            (v - self.vol_mean) / self.vol_std,
            np.full(self.s, (float(age) - self.age_mean) / self.age_std),
        ]
        if missing_flag:
            cols.append(imputed.astype(np.float64))
        return np.stack(cols, axis=1), imputed

    def to_tensors(self):
        return {
            "norm.dg_mean": self.dg_mean, "norm.dg_std": self.dg_std,
            "norm.vol_mean": self.vol_mean, "norm.vol_std": self.vol_std,
            "norm.age": np.array([self.age_mean, self.age_std]),
        }

    @classmethod
    def from_tensors(cls, t):
        try:
            return cls(t["norm.dg_mean"], t["norm.dg_std"], t["norm.vol_mean"], t["norm.vol_std"],
                       float(t["norm.age"][0]), float(t["norm.age"][1]))
        except KeyError as exc:
            raise DataError(f"classifier file lacks normalization statistic {exc}") from exc


def build_graph(dg, volumes, age, normalizer, missing_flag=False, subject_id=""):
    """Complete structure graph with normalized (DG, V, A) node features."""
    if normalizer is None:
        raise ContractError("feature normalization has not been fitted")
    x, imputed = normalizer.transform(dg, volumes, age, missing_flag)
    return StructureGraph(x, complete_adjacency(len(x)), imputed, subject_id)


def gcn_layer(h, w, adj_hat):
    """ReLU(Â H W). Accepts numpy arrays or diffcore tensors; H may carry a
    leading batch axis."""
    if isinstance(h, dc.Tensor) or isinstance(w, dc.Tensor):
        a = dc.Tensor(np.asarray(adj_hat), dtype=(h.dtype if isinstance(h, dc.Tensor) else None))
        return dc.relu(dc.matmul(a, dc.matmul(h, w)))
    h = np.asarray(h)
    w = np.asarray(w)
    if h.shape[-1] != w.shape[0] or np.shape(adj_hat)[-1] != h.shape[-2]:
        raise ShapeError(f"gcn_layer: H {h.shape}, W {w.shape}, Â {np.shape(adj_hat)}")
    return np.maximum(np.asarray(adj_hat) @ (h @ w), 0.0)


@dataclass(frozen=True)
class GCNConfig:
    hidden: int = 32
    layers: int = 3
    lr: float = 3e-4
    patience: int = 20
    max_epochs: int = 500
    batch_size: int = 16
    val_fraction: float = 0.2
    noise_variance: float = 0.01
    noise_repeats: int = 3
    missing_flag: bool = False
    linear_lr: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1:
            raise ConfigurationError("hidden and layers must be >= 1")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("patience, max_epochs and batch_size must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie strictly between 0 and 1")
        if self.noise_variance < 0 or self.noise_repeats < 1:
            raise ConfigurationError("noise_variance must be >= 0 and noise_repeats >= 1")

    @property
    def in_features(self):
        return 4 if self.missing_flag else 3

    def to_dict(self):
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_gcn_params(cfg, rng, dtype=np.float32):
    p = {}
    c = cfg.in_features
    for i in range(cfg.layers):
        p[f"gcn{i}.weight"] = _glorot(rng, c, cfg.hidden).astype(dtype)
        c = cfg.hidden
    p["fc.weight"] = _glorot(rng, cfg.hidden, 1).T.astype(dtype)
    p["fc.bias"] = np.zeros(1, dtype=dtype)
    return p


def gcn_forward(cfg, params, x, adj_hat):
    """Logits (n,) for node features ``x`` (n, s, f); works on tensors."""
    h = x if isinstance(x, dc.Tensor) else dc.Tensor(x)
    for i in range(cfg.layers):
        h = gcn_layer(h, params[f"gcn{i}.weight"], adj_hat)
    pooled = dc.mean(h, axis=1)
    out = dc.linear(pooled, params["fc.weight"], params["fc.bias"])
    return dc.reshape(out, (out.shape[0],))


def _is_positive(label):
    return label in POSITIVE_CLASSES if isinstance(label, str) else bool(label)


@dataclass
class GCNClassifier:
    cfg: GCNConfig
    params: dict
    normalizer: FeatureNormalizer | None = None
    history: list = field(default_factory=list, repr=False)
    best_epoch: int = 0

    kind = "gcn"

    def graph(self, dg, volumes, age, subject_id=""):
        return build_graph(dg, volumes, age, self.normalizer, self.cfg.missing_flag, subject_id)

    def graphs(self, samples):
        return [self.graph(s.dg, s.volumes, s.age, getattr(s, "subject_id", "")) for s in samples]

    def logits(self, x):
        """Logits for a stacked feature array (n, s, f)."""
        x = np.asarray(x, dtype=np.float32)
        adj = normalized_adjacency(complete_adjacency(x.shape[1]))
        return gcn_forward(self.cfg, self.params, x, adj).data.astype(np.float64)


def _features(graphs):
    if isinstance(graphs, StructureGraph):
        graphs = [graphs]
    return np.stack([g.node_features for g in graphs])


def _check_ready(model):
    if model.normalizer is None:
        raise ContractError("classifier normalization statistics have not been fitted")


def classify(model, graph):
    """Probability of the positive (AD / pMCI) class; deterministic."""
    _check_ready(model)
    return float(dc.ops._sigmoid(model.logits(_features(graph)))[0])


def classify_batch(model, graphs):
    _check_ready(model)
    return dc.ops._sigmoid(model.logits(_features(graphs)))


def classify_with_noise(model, graphs, variance=None, repeats=None, seed=0):
    """Mean probability over ``repeats`` passes with N(0, variance) added to
    the node features. Accepts one graph (returns a float) or a list."""
    _check_ready(model)
    variance = model.cfg.noise_variance if variance is None else variance
    repeats = model.cfg.noise_repeats if repeats is None else repeats
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    if variance < 0:
        raise ConfigurationError("noise variance must be >= 0")
    single = isinstance(graphs, StructureGraph)
    x = _features(graphs)
    if variance == 0:
        probs = dc.ops._sigmoid(model.logits(x))
    else:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, np.sqrt(variance), size=(repeats,) + x.shape)
        probs = np.mean([dc.ops._sigmoid(model.logits(x + e)) for e in noise], axis=0)
    return float(probs[0]) if single else probs


def predict_labels(probs):
    """Threshold 0.5: probability >= 0.5 means the positive class."""
    return np.asarray(probs) >= 0.5


def _labels(samples):
    return np.array([_is_positive(s.label) for s in samples])


def _fit_loop(params, x_train, y_train, x_val, y_val, lr, cfg, rng, loss_fn, forward_fn):
    tensors = {k: dc.Tensor(v, requires_grad=True) for k, v in params.items()}
    opt = dc.Adam(tensors, lr=lr)
    best = {k: v.copy() for k, v in params.items()}
    best_loss, best_epoch, wait = np.inf, 0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = loss_fn(forward_fn(tensors, dc.Tensor(x_train[idx])), y_train[idx].astype(np.float32))
            dc.backward(loss)
            opt.step()
        current = {k: t.data for k, t in tensors.items()}
        vl = float(loss_fn(forward_fn(current, dc.Tensor(x_val)), y_val.astype(np.float32)).data)
        history.append(vl)
        if vl < best_loss:
            best = {k: v.copy() for k, v in current.items()}
            best_loss, best_epoch, wait = vl, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return best, history, best_epoch


def _split_and_normalize(samples, cfg):
    y = _labels(samples)
    tr, va = stratified_split(np.where(y, 1, -1), cfg.val_fraction, cfg.seed)
    norm = FeatureNormalizer.fit([samples[i].dg for i in tr],
                                 [samples[i].volumes for i in tr],
                                 [samples[i].age for i in tr])
    return y, tr, va, norm


def train_gcn(samples, cfg=None):
    """Train the GCN on subjects carrying ``dg``, ``volumes``, ``age`` and
    ``label``. Normalization statistics use the training split only."""
    cfg = cfg or GCNConfig()
    y, tr, va, norm = _split_and_normalize(samples, cfg)
    x = np.stack([norm.transform(s.dg, s.volumes, s.age, cfg.missing_flag)[0] for s in samples])
    x = x.astype(np.float32)
    adj = normalized_adjacency(complete_adjacency(x.shape[1]))
    rng = np.random.default_rng([cfg.seed, 0x6C])
    params = init_gcn_params(cfg, rng)
    best, history, best_epoch = _fit_loop(
        params, x[tr], y[tr], x[va], y[va], cfg.lr, cfg, rng, dc.bce_with_logits,
        lambda p, xb: gcn_forward(cfg, p, xb, adj))
    log.info("gcn: best epoch %d of %d, val loss %.4f", best_epoch, len(history), min(history))
    return GCNClassifier(cfg, best, norm, history, best_epoch)


@dataclass
class LinearClassifier:
    """Hinge-loss linear model on flattened [DG, V, A] features.

    ``logits`` returns the raw decision score; probabilities pass it through
    the sigmoid so both classifiers share the 0.5 threshold (a score of 0,
    e.g. from all-zero weights, falls on the positive side).
    """

    cfg: GCNConfig
    params: dict
    normalizer: FeatureNormalizer | None = None
    history: list = field(default_factory=list, repr=False)
    best_epoch: int = 0

    kind = "linear"

    graph = GCNClassifier.graph
    graphs = GCNClassifier.graphs

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _linear_forward(self.params, _flatten(x)).data.astype(np.float64)


def _flatten(x):
    """(n, s, f) node features → (n, 2s + 1): DG and V per structure, then age."""
    x = np.asarray(x)
    return np.concatenate([x[:, :, 0], x[:, :, 1], x[:, :1, 2]], axis=1)


def _linear_forward(params, feats):
    f = feats if isinstance(feats, dc.Tensor) else dc.Tensor(np.asarray(feats, dtype=np.float32))
    out = dc.linear(f, params["linear.weight"], params["linear.bias"])
    return dc.reshape(out, (out.shape[0],))


def train_linear_baseline(samples, cfg=None):
    cfg = cfg or GCNConfig()
    y, tr, va, norm = _split_and_normalize(samples, cfg)
    x = np.stack([norm.transform(s.dg, s.volumes, s.age)[0] for s in samples])
    feats = _flatten(x).astype(np.float32)
    params = {"linear.weight": np.zeros((1, feats.shape[1]), np.float32),
              "linear.bias": np.zeros(1, np.float32)}
    rng = np.random.default_rng([cfg.seed, 0x11])
    best, history, best_epoch = _fit_loop(
        params, feats[tr], y[tr], feats[va], y[va], cfg.linear_lr, cfg, rng, dc.hinge_loss,
        _linear_forward)
    return LinearClassifier(cfg, best, norm, history, best_epoch)


def evaluate(model, samples, noisy=True, seed=0):
    """(MetricsReport, probabilities) on labelled subjects."""
    graphs = model.graphs(samples)
    probs = classify_with_noise(model, graphs, seed=seed) if noisy else classify_batch(model, graphs)
    return confusion(_labels(samples), predict_labels(probs)), probs


def save_classifier(path, model):
    """Parameters and normalization statistics as named tensors; the
    configuration goes to a JSON file next to it."""
    path = Path(path)
    tensors = {f"param.{k}": v for k, v in model.params.items()}
    tensors.update(model.normalizer.to_tensors())
    dc.save_tensors(path, tensors)
    meta = {"kind": model.kind, "config": model.cfg.to_dict(), "best_epoch": model.best_epoch}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_classifier(path):
    path = Path(path)
    meta_path = path.with_suffix(".json")
    if not path.exists() or not meta_path.exists():
        raise DataError(f"classifier {path} or its {meta_path.name} is missing")
    meta = json.loads(meta_path.read_text())
    tensors = dc.load_tensors(path)
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    cls = {"gcn": GCNClassifier, "linear": LinearClassifier}.get(meta.get("kind"))
    if cls is None:
        raise DataError(f"{meta_path}: unknown classifier kind {meta.get('kind')!r}")
    return cls(GCNConfig(**meta["config"]), params, FeatureNormalizer.from_tensors(tensors),
               best_epoch=meta.get("best_epoch", 0))


PREDICTION_COLUMNS = ("subject_id", "probability", "predicted_class")


def write_predictions(path, subject_ids, probs, class_names=("CN", "AD")):
    """``class_names`` is (negative, positive)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for sid, p in zip(subject_ids, probs):
            w.writerow([sid, repr(float(p)), class_names[int(p >= 0.5)]])


def read_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
        return [(r["subject_id"], float(r["probability"]), r["predicted_class"]) for r in reader]
