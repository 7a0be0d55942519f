"""Small NumPy CNN for cough / non-cough classification of 45x100 spectrograms.

Activations are NHWC. All convolutions are 2x2 and valid, pooling is 2x2
with floor cropping, dropout is inverted. Class order is
(non_cough, cough).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

INPUT_SHAPE = (45, 100)
CLASSES = ("non_cough", "cough")

# (name, kind, size): conv -> filters, dropout -> rate, dense -> units
ARCHITECTURE = (
    ("conv1", "conv", 32),
    ("pool1", "pool", None),
    ("drop1", "dropout", 0.10),
    ("conv2", "conv", 64),
    ("pool2", "pool", None),
    ("drop2", "dropout", 0.10),
    ("conv3", "conv", 128),
    ("drop3", "dropout", 0.10),
    ("conv4", "conv", 256),
    ("pool3", "pool", None),
    ("flatten", "flatten", None),
    ("dense1", "dense", 512),
    ("dense2", "dense", 2),
)
OUTPUT_LAYER = "dense2"

MODEL_MAGIC = b"COUGHCNN"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    batch_size: int = 128
    epochs: int = 50
    val_fraction: float = 0.2
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


# ---------------------------------------------------------------- layers

def conv_forward(x, w, b, cache=None):
    """2x2 valid convolution + ReLU via a single im2col GEMM."""
    n, h, wd, c = x.shape
    f = w.shape[-1]
    cols = np.concatenate(
        (x[:, :-1, :-1], x[:, :-1, 1:], x[:, 1:, :-1], x[:, 1:, 1:]), axis=-1
    ).reshape(-1, 4 * c)
    z = cols @ w.reshape(4 * c, f)
    z += b
    np.maximum(z, 0, out=z)
    out = z.reshape(n, h - 1, wd - 1, f)
    if cache is not None:
        cache.update(cols=cols, out=out, in_shape=x.shape)
    return out


def conv_backward(dout, w, cache, need_dx=True):
    """Gradients of ``conv_forward``. ``dout`` is overwritten."""
    n, h, wd, c = cache["in_shape"]
    f = w.shape[-1]
    dz = np.multiply(dout, cache["out"] > 0, out=dout).reshape(-1, f)
    dw = (cache["cols"].T @ dz).reshape(w.shape)
    db = np.ones(len(dz), dtype=dz.dtype) @ dz
    if not need_dx:
        return None, dw, db
    dcols = (dz @ w.reshape(4 * c, f).T).reshape(n, h - 1, wd - 1, 4 * c)
    dx = np.zeros((n, h, wd, c), dtype=dout.dtype)
    dx[:, :-1, :-1] += dcols[..., 0:c]
    dx[:, :-1, 1:] += dcols[..., c:2 * c]
    dx[:, 1:, :-1] += dcols[..., 2 * c:3 * c]
    dx[:, 1:, 1:] += dcols[..., 3 * c:]
    return dx, dw, db


def _pool_views(x):
    ho, wo = x.shape[1] // 2, x.shape[2] // 2
    return [x[:, i:2 * ho:2, j:2 * wo:2] for i in (0, 1) for j in (0, 1)]


def pool_forward(x, cache=None):
    """2x2 max-pool, floor cropping. Gradient goes to the first maximum."""
    v = _pool_views(x)
    out = np.maximum(np.maximum(v[0], v[1]), np.maximum(v[2], v[3]))
    if cache is not None:
        taken = v[0] == out
        masks = [taken]
        for u in v[1:3]:
            m = (u == out) & ~taken
            taken = taken | m
            masks.append(m)
        masks.append(~taken)
        cache.update(masks=masks, in_shape=x.shape)
    return out


def pool_backward(dout, cache):
    dx = np.zeros(cache["in_shape"], dtype=dout.dtype)
    for view, m in zip(_pool_views(dx), cache["masks"]):
        np.multiply(dout, m, out=view)
    return dx


def dropout_mask(shape, rate, rng, dtype):
    keep = 1.0 - rate
    return ((rng.random(shape, dtype=np.float32) < keep) / keep).astype(dtype)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean categorical cross-entropy for integer labels."""
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


# ---------------------------------------------------------------- model

def shape_trace(input_shape=INPUT_SHAPE):
    """Activation shape (H, W, C) after every layer, or (D,) once flattened."""
    h, w = input_shape
    c = 1
    trace = []
    flat = None
    for name, kind, size in ARCHITECTURE:
        if kind == "conv":
            h, w, c = h - 1, w - 1, size
        elif kind == "pool":
            h, w = h // 2, w // 2
        elif kind == "flatten":
            flat = h * w * c
        elif kind == "dense":
            flat = size
        trace.append((name, (flat,) if flat is not None else (h, w, c)))
    return trace


def param_shapes(input_shape=INPUT_SHAPE):
    shapes = {}
    c = 1
    prev = None
    for (name, kind, size), (_, out) in zip(ARCHITECTURE, shape_trace(input_shape)):
        if kind == "conv":
            shapes[f"{name}.W"] = (2, 2, c, size)
            shapes[f"{name}.b"] = (size,)
        elif kind == "dense":
            shapes[f"{name}.W"] = (prev[0], size)
            shapes[f"{name}.b"] = (size,)
        if len(out) == 3:
            c = out[2]
        prev = out
    return shapes


@dataclass
class CnnModel:
    params: dict
    seed: int = 0
    input_shape: tuple = INPUT_SHAPE
    history: list = field(default_factory=list)

    @classmethod
    def initialize(cls, seed=0, input_shape=INPUT_SHAPE, dtype=np.float32):
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(input_shape).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[:-1]))
                limit = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        return cls(params, seed, tuple(input_shape))

    @property
    def dtype(self):
        return self.params["conv1.W"].dtype

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != tuple(self.input_shape):
            raise ValueError(f"expected input {self.input_shape}, got {x.shape[1:]}")
        return x[..., None]

    def forward(self, x, train=False, rng=None, caches=None):
        """Logits for a batch. Dropout runs only when ``train`` is set.

        ``rng`` supplies the dropout masks; passing ``caches`` (a dict)
        records what ``backward`` needs.
        """
        a = self._prepare(x)
        if train and rng is None:
            raise ValueError("train-mode forward needs an explicit rng for dropout")
        p = self.params
        for name, kind, size in ARCHITECTURE:
            cache = {} if caches is not None else None
            if kind == "conv":
                a = conv_forward(a, p[f"{name}.W"], p[f"{name}.b"], cache)
            elif kind == "pool":
                a = pool_forward(a, cache)
            elif kind == "dropout":
                if train:
                    mask = dropout_mask(a.shape, size, rng, a.dtype)
                    a = a * mask
                    if cache is not None:
                        cache["mask"] = mask
            elif kind == "flatten":
                if cache is not None:
                    cache["in_shape"] = a.shape
                a = a.reshape(len(a), -1)
            elif kind == "dense":
                if cache is not None:
                    cache["x"] = a
                z = a @ p[f"{name}.W"] + p[f"{name}.b"]
                if name != OUTPUT_LAYER:
                    if cache is not None:
                        cache["active"] = z > 0
                    z = np.maximum(z, 0)
                a = z
            if caches is not None:
                caches[name] = cache
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite activations in forward pass")
        return a

    def backward(self, dlogits, caches):
        grads = {}
        p = self.params
        d = dlogits
        for name, kind, size in reversed(ARCHITECTURE):
            cache = caches[name]
            if kind == "dense":
                if name != OUTPUT_LAYER:
                    d = d * cache["active"]
                grads[f"{name}.W"] = cache["x"].T @ d
                grads[f"{name}.b"] = d.sum(axis=0)
                d = d @ p[f"{name}.W"].T
            elif kind == "flatten":
                d = d.reshape(cache["in_shape"])
            elif kind == "dropout":
                if "mask" in cache:
                    d = d * cache["mask"]
            elif kind == "pool":
                d = pool_backward(d, cache)
            elif kind == "conv":
                need_dx = name != ARCHITECTURE[0][0]
                d, grads[f"{name}.W"], grads[f"{name}.b"] = conv_backward(
                    d, p[f"{name}.W"], cache, need_dx
                )
        return grads

    def loss_and_grads(self, x, labels, rng=None, train=True):
        labels = np.asarray(labels, dtype=np.int64)
        caches = {}
        logits = self.forward(x, train=train, rng=rng, caches=caches)
        probs = softmax(logits)
        loss = cross_entropy(probs, labels)
        dlogits = probs.copy()
        dlogits[np.arange(len(labels)), labels] -= 1
        dlogits /= len(labels)
        return loss, self.backward(dlogits, caches)

    def predict_proba(self, x, batch_size=256):
        """(p_non_cough, p_cough) per input, eval mode."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        out = np.empty((len(x), 2), dtype=np.float64)
        for i in range(0, len(x), batch_size):
            out[i:i + batch_size] = softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
        return out

    def p_cough(self, x, batch_size=256):
        return self.predict_proba(x, batch_size)[:, 1]


def forward(model: CnnModel, spec, train_mode=False, seed=None):
    """Probability pair for a single spectrogram."""
    rng = np.random.default_rng(seed) if train_mode else None
    logits = model.forward(spec, train=train_mode, rng=rng).astype(np.float64)
    p = softmax(logits)[0]
    return float(p[0]), float(p[1])


# ---------------------------------------------------------------- optimizer

def adamax_step(params, grads, state, t, config: TrainConfig):
    """In-place AdaMax update; returns (params, state)."""
    if t < 1:
        raise ValueError("step index starts at 1")
    lr = config.alpha / (1.0 - config.beta1 ** t)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        theta = params[name]
        if theta.shape != np.shape(g):
            raise ValueError(f"gradient shape mismatch for {name}")
        if name not in state:
            state[name] = (np.zeros_like(theta), np.zeros_like(theta))
        m, u = state[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        np.maximum(config.beta2 * u, np.abs(g), out=u)
        theta -= (lr * m / (u + config.delta)).astype(theta.dtype)
    return params, state


# ---------------------------------------------------------------- training

def stratified_split(labels, fraction, rng):
    """Indices (train, val) with ``fraction`` of each class held out."""
    labels = np.asarray(labels)
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_val = int(round(fraction * len(idx)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def _eval_loss(model, x, y, batch_size):
    probs = model.predict_proba(x, batch_size)
    return cross_entropy(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def train(specs, labels, config: TrainConfig = None, val_specs=None, val_labels=None,
          model: CnnModel = None) -> CnnModel:
    """Fit the classifier with AdaMax on mini-batch cross-entropy.

    Without an explicit validation set, ``config.val_fraction`` of each class
    is held out. The validation loss is only monitored. Results depend only
    on ``config.seed`` and the data.
    """
    config = config or TrainConfig()
    x = np.asarray(specs)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) != len(y):
        raise ValueError("specs and labels differ in length")
    if len(np.unique(y)) < 2:
        raise TrainingError("training data holds a single class")
    if len(x) < 2 * config.batch_size:
        raise TrainingError(
            f"need at least {2 * config.batch_size} spectrograms, got {len(x)}"
        )

    if val_specs is None:
        tr, va = stratified_split(y, config.val_fraction, np.random.default_rng([config.seed, 3]))
        x, val_x, y, val_y = x[tr], x[va], y[tr], y[va]
    else:
        val_x, val_y = np.asarray(val_specs), np.asarray(val_labels, dtype=np.int64)

    model = model or CnnModel.initialize(config.seed)
    x = x.astype(model.dtype)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    state: dict = {}
    t = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(x))
        losses, weights = [], []
        for b, start in enumerate(range(0, len(x), config.batch_size)):
            idx = order[start:start + config.batch_size]
            drop_rng = np.random.default_rng([config.seed, 2, epoch, b])
            loss, grads = model.loss_and_grads(x[idx], y[idx], rng=drop_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became NaN at epoch {epoch + 1}")
            t += 1
            adamax_step(model.params, grads, state, t, config)
            losses.append(loss)
            weights.append(len(idx))
        record = {"epoch": epoch + 1, "train_loss": float(np.average(losses, weights=weights))}
        if len(val_x):
            record["val_loss"], record["val_acc"] = _eval_loss(model, val_x, val_y, 256)
        model.history.append(record)
        logger.debug("epoch %d %s", epoch + 1, record)
    return model


def accuracy(model: CnnModel, specs, labels):
    return float(np.mean(model.predict_proba(specs).argmax(axis=1) == np.asarray(labels)))


# ---------------------------------------------------------------- folds

@dataclass
class Fold:
    index: int
    train_patients: list
    test_patients: list
    train_clips: list = field(default_factory=list)
    val_clips: list = field(default_factory=list)


@dataclass
class FoldPlan:
    folds: list
    seed: int = 0

    def fold_of(self, patient_id):
        for f in self.folds:
            if patient_id in f.test_patients:
                return f.index
        raise KeyError(patient_id)


def make_folds(patients, folds=5, seed=0, clips=None, val_fraction=0.2) -> FoldPlan:
    """Patient-grouped k-fold plan.

    ``patients`` is a manifest or a list of patient ids. ``clips`` is an
    optional iterable of (clip_id, patient_id, label); labelled clips of the
    training patients are split train/validation, stratified by label.
    """
    ids = list(getattr(patients, "patients", patients))
    if len(ids) < folds:
        raise ValueError(f"{len(ids)} patients cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    groups = np.array_split(np.arange(len(order)), folds)
    clips = [c for c in (clips or []) if c[2] in CLASSES]

    plan = []
    for i, g in enumerate(groups):
        test = [order[j] for j in g]
        train_p = [p for p in order if p not in test]
        fold = Fold(i, sorted(train_p), sorted(test))
        pool = [c for c in clips if c[1] in set(train_p)]
        if pool:
            labels = [CLASSES.index(c[2]) for c in pool]
            tr, va = stratified_split(labels, val_fraction, np.random.default_rng([seed, i]))
            fold.train_clips = [pool[j][0] for j in tr]
            fold.val_clips = [pool[j][0] for j in va]
        plan.append(fold)
    return FoldPlan(plan, seed)


# ---------------------------------------------------------------- model file

def save_model(model: CnnModel, path) -> None:
    """Binary model file: magic, version, JSON header, then float32 tensors."""
    names = list(param_shapes(model.input_shape))
    header = {
        "layers": [{"name": n, "kind": k, "size": s} for n, k, s in ARCHITECTURE],
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "history": model.history,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())


def load_model(path) -> CnnModel:
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ValueError(f"{path} is not a model file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    header = json.loads(data[16:16 + hlen])
    layers = [(l["name"], l["kind"], l["size"]) for l in header["layers"]]
    if tuple(layers) != ARCHITECTURE:
        raise ValueError("model file describes a different architecture")
    offset = 16 + hlen
    params = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"]))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
        offset += 4 * n
    return CnnModel(params, header["seed"], tuple(header["input_shape"]), header.get("history", []))


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
