"""Residual-orientation regressor: a small conv net with hand-derived
gradients, trained with Adam on the squared-L2 residual loss.

The network maps a (6(N-1), H, W) patch volume to a 3(N-1) residual
orientation vector: conv/ReLU blocks, global average pooling, then fully
connected layers with a linear output (residuals are signed and unbounded).
All math is float64; parameters live in one flat vector whose layout is a
pure function of the config.
"""

from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import DataError, NumericalError

DEFAULT_CONV_SPECS = ((16, 3, 2), (32, 3, 2))
DEFAULT_FC_WIDTHS = (64,)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RegressorConfig:
    """Architecture of the patch-volume regressor."""

    input_channels: int
    patch_res: int
    output_dim: int
    conv_specs: tuple = DEFAULT_CONV_SPECS   # (out_channels, kernel, stride)
    fc_widths: tuple = DEFAULT_FC_WIDTHS     # hidden widths, output appended
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_specs",
                           tuple(tuple(int(v) for v in s) for s in self.conv_specs))
        object.__setattr__(self, "fc_widths",
                           tuple(int(v) for v in self.fc_widths))
        if self.output_dim < 1 or self.input_channels < 1 or self.patch_res < 1:
            raise DataError("RegressorConfig: dimensions must be >= 1")
        if any(w < 1 for w in self.fc_widths):
            raise DataError("RegressorConfig: fc widths must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(input_channels=int(d["input_channels"]),
                   patch_res=int(d["patch_res"]),
                   output_dim=int(d["output_dim"]),
                   conv_specs=tuple(tuple(s) for s in d["conv_specs"]),
                   fc_widths=tuple(d["fc_widths"]),
                   seed=int(d["seed"]))


def layer_table(cfg):
    """Per-layer shapes implied by the config.

    Returns a list of dicts with keys kind ("conv"|"fc"), w_shape, b_shape,
    stride (convs only). Raises if a conv would not fit its input.
    """
    table = []
    c, res = cfg.input_channels, cfg.patch_res
    for out_c, k, s in cfg.conv_specs:
        if res < k:
            raise DataError(f"conv kernel {k} larger than feature map {res}")
        table.append({"kind": "conv", "w_shape": (out_c, c, k, k),
                      "b_shape": (out_c,), "stride": s})
        res = (res - k) // s + 1
        c = out_c
    widths = list(cfg.fc_widths) + [cfg.output_dim]
    fan = c  # global average pool output
    for w in widths:
        table.append({"kind": "fc", "w_shape": (w, fan), "b_shape": (w,)})
        fan = w
    return table


def param_count(cfg):
    return sum(int(np.prod(l["w_shape"])) + int(np.prod(l["b_shape"]))
               for l in layer_table(cfg))


@dataclass(frozen=True)
class RegressorParams:
    """Flat float64 parameter vector plus its shape table."""

    values: np.ndarray
    shape_table: tuple
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise DataError("RegressorParams: non-finite values")
        object.__setattr__(self, "values", vals)


def init_params(cfg):
    """Deterministic init: weights uniform in +-sqrt(1/fan_in) (variance
    1/(3 fan_in)), biases exactly zero."""
    rng = np.random.default_rng(cfg.seed)
    table = layer_table(cfg)
    chunks = []
    for layer in table:
        w_shape = layer["w_shape"]
        fan_in = int(np.prod(w_shape[1:]))
        bound = np.sqrt(1.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=w_shape).ravel())
        chunks.append(np.zeros(int(np.prod(layer["b_shape"]))))
    return RegressorParams(values=np.concatenate(chunks),
                           shape_table=tuple(
                               (l["kind"], l["w_shape"], l["b_shape"],
                                l.get("stride")) for l in table))


def zero_params(cfg):
    """All-zero parameters; the network then outputs exact zeros."""
    init = init_params(cfg)
    return RegressorParams(values=np.zeros_like(init.values),
                           shape_table=init.shape_table)


def _unpack(params, cfg):
    """Split the flat vector into (W, b) views per layer."""
    table = layer_table(cfg)
    if len(params.values) != param_count(cfg):
        raise DataError(
            f"params length {len(params.values)} does not match config "
            f"({param_count(cfg)} expected)")
    out = []
    off = 0
    for layer in table:
        wn = int(np.prod(layer["w_shape"]))
        bn = int(np.prod(layer["b_shape"]))
        w = params.values[off:off + wn].reshape(layer["w_shape"])
        b = params.values[off + wn:off + wn + bn]
        off += wn + bn
        out.append((layer, w, b))
    return out


def _im2col(x, k, s):
    """(B,C,H,W) -> (B, P, C*k*k) patch matrix for a k-kernel, stride s."""
    b, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, ho, wo, k, k),
        strides=(sb, sc, sh * s, sw * s, sh, sw))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(dcols, x_shape, k, s, ho, wo):
    """Scatter-add column gradients back to the (B,C,H,W) input."""
    b, c, h, w = x_shape
    dx = np.zeros(x_shape)
    d = dcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + ho * s:s, j:j + wo * s:s] += d[:, :, :, :, i, j]
    return dx


def _forward_batch(params, cfg, x, want_cache=False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_channels, cfg.patch_res,
                                      cfg.patch_res):
        raise DataError(
            f"volume batch shape {x.shape} does not match config "
            f"({cfg.input_channels}x{cfg.patch_res}x{cfg.patch_res})")
    cache = []
    cur = x
    layers = _unpack(params, cfg)
    n_conv = sum(1 for l, _, _ in layers if l["kind"] == "conv")
    for li, (layer, w, b) in enumerate(layers):
        if layer["kind"] == "conv":
            o, c, k, _ = layer["w_shape"]
            s = layer["stride"]
            cols, ho, wo = _im2col(cur, k, s)
            pre = cols @ w.reshape(o, -1).T + b          # (B, P, O)
            act = np.maximum(pre, 0.0)
            if want_cache:
                cache.append(("conv", cur.shape, cols, pre, (k, s, ho, wo)))
            cur = act.transpose(0, 2, 1).reshape(-1, o, ho, wo)
            if li == n_conv - 1:
                pooled_from = cur.shape
                cur = cur.mean(axis=(2, 3))               # global average pool
                if want_cache:
                    cache.append(("gap", pooled_from))
        else:
            pre = cur @ w.T + b
            last = li == len(layers) - 1
            act = pre if last else np.maximum(pre, 0.0)
            if want_cache:
                cache.append(("fc", cur, pre, last))
            cur = act
    return (cur, cache) if want_cache else cur


def forward(params, cfg, volume):
    """Single-volume forward pass -> flat residual of length output_dim."""
    return _forward_batch(params, cfg, np.asarray(volume)[None])[0]


predict = forward  # inference-time entry point


def loss(pred, target):
    """Squared-L2 residual loss: sum over limbs of the squared per-limb
    3-vector difference (= squared norm of the flat difference)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"loss: shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.sum(d * d))


def _backward_batch(params, cfg, x, targets):
    """Mean-over-batch loss and its gradient w.r.t. the flat parameters."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    out, cache = _forward_batch(params, cfg, x, want_cache=True)
    if targets.shape != out.shape:
        raise DataError(
            f"targets shape {targets.shape} does not match output {out.shape}")
    bsz = x.shape[0]
    diff = out - targets
    batch_loss = float(np.sum(diff * diff) / bsz)

    layers = _unpack(params, cfg)
    grads = np.zeros_like(params.values)
    gviews = _unpack(RegressorParams(values=grads,
                                     shape_table=params.shape_table), cfg)

    dcur = 2.0 * diff / bsz
    for li in range(len(layers) - 1, -1, -1):
        layer, w, b = layers[li]
        _, gw, gb = gviews[li]
        entry = cache.pop()
        if entry[0] == "fc":
            _, inp, pre, last = entry
            dpre = dcur if last else dcur * (pre > 0.0)
            gw += dpre.T @ inp
            gb += dpre.sum(axis=0)
            dcur = dpre @ w
        else:
            if entry[0] == "gap":
                _, pooled_from = entry
                _, c, ho, wo = pooled_from
                dcur = np.broadcast_to(
                    dcur[:, :, None, None] / (ho * wo),
                    (dcur.shape[0], c, ho, wo))
                entry = cache.pop()
                layer, w, b = layers[li]
            _, x_shape, cols, pre, (k, s, ho, wo) = entry
            o = layer["w_shape"][0]
            dact = dcur.reshape(-1, o, ho * wo).transpose(0, 2, 1)  # (B,P,O)
            dpre = dact * (pre > 0.0)
            gw += (np.einsum("bpo,bpc->oc", dpre, cols)
                   .reshape(layer["w_shape"]))
            gb += dpre.sum(axis=(0, 1))
            dcols = dpre @ w.reshape(o, -1)
            dcur = _col2im(dcols, x_shape, k, s, ho, wo)
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient")
    return batch_loss, grads


def backward(params, cfg, volume, target):
    """Exact gradient of loss(forward(volume), target) w.r.t. every
    parameter, in the same flat layout as the parameter vector."""
    _, grads = _backward_batch(params, cfg, np.asarray(volume)[None],
                               np.asarray(target)[None])
    return grads


def numerical_gradient(params, cfg, volume, target, step=1e-5):
    """Central finite differences of the loss; the independent check for
    backward()."""
    vals = params.values.copy()
    grad = np.zeros_like(vals)
    x = np.asarray(volume)[None]
    t = np.asarray(target, dtype=np.float64)
    p = RegressorParams(values=vals, shape_table=params.shape_table)
    for i in range(len(vals)):
        orig = vals[i]
        vals[i] = orig + step
        hi = loss(_forward_batch(p, cfg, x)[0], t)
        vals[i] = orig - step
        lo = loss(_forward_batch(p, cfg, x)[0], t)
        vals[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


@dataclass
class AdamState:
    """First/second moment accumulators."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(values, grads, state, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns the new parameter vector and
    mutates the moment state. `t` is the 1-based step index."""
    if values.shape != grads.shape or state.m.shape != values.shape:
        raise DataError("adam_step: length mismatch")
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** t)
    v_hat = state.v / (1.0 - beta2 ** t)
    return values - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization hyperparameters.

    base_lr defaults to the desk-scale 1e-3; the documented full-scale value
    (pretrained backbone) is 1e-5. After `plateau_patience` consecutive
    epochs with relative validation improvement below plateau_rel_threshold
    the learning rate is divided by lr_decay_factor, once.
    """

    batch_size: int = 32
    base_lr: float = 1e-3
    lr_decay_factor: float = 10.0
    plateau_patience: int = 3
    plateau_rel_threshold: float = 1e-4
    max_epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise DataError("base_lr must be positive")


def train(train_x, train_y, val_x, val_y, reg_cfg, train_cfg):
    """Mini-batch Adam on the residual loss.

    Returns (best-validation RegressorParams, history dict with per-epoch
    train/val mean losses and the learning rate in effect).
    """
    # volumes may arrive float32 to bound memory; batches are promoted to
    # float64 at use so all optimization math stays double precision
    train_x = np.asarray(train_x)
    train_y = np.asarray(train_y, dtype=np.float64)
    val_x = np.asarray(val_x)
    val_y = np.asarray(val_y, dtype=np.float64)
    if len(train_x) == 0 or len(val_x) == 0:
        raise DataError("train: empty split")

    params = init_params(reg_cfg)
    values = params.values.copy()
    state = AdamState.zeros(len(values))
    rng = np.random.default_rng(train_cfg.seed)
    lr = train_cfg.base_lr
    decayed = False
    plateau_run = 0
    best_val = np.inf
    best_values = values.copy()
    history = {"train_loss": [], "val_loss": [], "lr": []}
    t = 0
    for _ in range(train_cfg.max_epochs):
        order = np.arange(len(train_x))
        if train_cfg.shuffle:
            rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            p = RegressorParams(values=values, shape_table=params.shape_table)
            batch_loss, grads = _backward_batch(
                p, reg_cfg, train_x[idx].astype(np.float64), train_y[idx])
            if not np.isfinite(batch_loss):
                raise NumericalError("training loss diverged (non-finite)")
            t += 1
            values = adam_step(values, grads, state, t, lr,
                               train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
            epoch_loss += batch_loss * len(idx)
        epoch_loss /= len(order)

        p = RegressorParams(values=values, shape_table=params.shape_table)
        val_loss = 0.0
        for start in range(0, len(val_x), train_cfg.batch_size):
            chunk = val_x[start:start + train_cfg.batch_size]
            preds = _forward_batch(p, reg_cfg, chunk.astype(np.float64))
            val_loss += float(np.sum(
                (preds - val_y[start:start + len(chunk)]) ** 2))
        val_loss /= len(val_x)
        if not np.isfinite(val_loss):
            raise NumericalError("validation loss diverged (non-finite)")
        history["train_loss"].append(epoch_loss)
        history["val_loss"].append(val_loss)
        history["lr"].append(lr)

        if val_loss < best_val:
            improvement = ((best_val - val_loss) / best_val
                           if np.isfinite(best_val) else np.inf)
            best_val = val_loss
            best_values = values.copy()
        else:
            improvement = 0.0
        if improvement < train_cfg.plateau_rel_threshold:
            plateau_run += 1
        else:
            plateau_run = 0
        if not decayed and plateau_run >= train_cfg.plateau_patience:
            lr /= train_cfg.lr_decay_factor
            decayed = True
            plateau_run = 0
    return (RegressorParams(values=best_values,
                            shape_table=params.shape_table), history)


class ResidualOrientationRegressor(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper: fit() patch volumes X (n, C, H, W) against
    flat residual targets y (n, output_dim), predict() new volumes.

    Architecture and optimizer settings are constructor hyperparameters so
    the estimator composes with get_params/set_params/clone.
    """

    def __init__(self, conv_specs=DEFAULT_CONV_SPECS,
                 fc_widths=DEFAULT_FC_WIDTHS, batch_size=32,
                 learning_rate=1e-3, lr_decay_factor=10.0, plateau_patience=3,
                 max_epochs=20, beta1=0.9, beta2=0.999, eps=1e-8,
                 shuffle=True, validation_fraction=0.15, seed=0):
        self.conv_specs = conv_specs
        self.fc_widths = fc_widths
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay_factor = lr_decay_factor
        self.plateau_patience = plateau_patience
        self.max_epochs = max_epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.shuffle = shuffle
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _training_config(self):
        return TrainingConfig(
            batch_size=self.batch_size, base_lr=self.learning_rate,
            lr_decay_factor=self.lr_decay_factor,
            plateau_patience=self.plateau_patience,
            max_epochs=self.max_epochs, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, shuffle=self.shuffle, seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 4 or y.ndim != 2 or len(X) != len(y):
            raise DataError("fit: X must be (n, C, H, W) and y (n, d)")
        if X_val is None:
            # deterministic tail split when no explicit validation set
            n_val = max(1, int(len(X) * self.validation_fraction))
            if n_val >= len(X):
                raise DataError("fit: too few samples to hold out validation")
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        self.config_ = RegressorConfig(
            input_channels=X.shape[1], patch_res=X.shape[2],
            output_dim=y.shape[1], conv_specs=tuple(self.conv_specs),
            fc_widths=tuple(self.fc_widths), seed=self.seed)
        self.params_, self.history_ = train(
            X, y, X_val, y_val, self.config_, self._training_config())
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise DataError("predict called before fit")
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 3
        if squeeze:
            X = X[None]
        out = _forward_batch(self.params_, self.config_, X)
        return out[0] if squeeze else out
