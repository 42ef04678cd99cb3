"""From-scratch MLP and 1D CNN: manual backprop, Adam, early stopping, gradient checks.

Arrays are channel-last: sequences are ``(batch, length, channels)``. All
arithmetic is float64. The network emits a single logit; the loss is binary
cross-entropy on ``sigmoid(logit)`` computed in the numerically stable form.
"""

from __future__ import annotations

import hashlib
import io
import json
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DivergedLoss, EmptySet, SingleClassLabels

CNN_LENGTH = 150
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------- layers


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params, self.grads = {}, {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable buffers that belong in a checkpoint."""
        return {}


def _he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.params = {"W": _he_uniform(rng, n_in, (n_in, n_out)), "b": np.zeros(n_out)}

    def forward(self, x, train):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        self.grads = {"W": self._x.T @ g, "b": g.sum(axis=0)}
        return g @ self.params["W"].T

    def out_shape(self, shape):
        return shape[:-1] + (self.params["W"].shape[1],)


class ReLU(Layer):
    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class Conv1D(Layer):
    """Valid convolution, stride 1. Weights ``(kernel, in_channels, filters)``.

    Computed as one matrix product per kernel tap over shifted views of the input.
    The first layer of a network skips the input gradient it never needs.
    """

    def __init__(self, c_in: int, filters: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.kernel = kernel
        self.input_grad = True
        self.params = {"W": _he_uniform(rng, kernel * c_in, (kernel, c_in, filters)),
                       "b": np.zeros(filters)}

    def forward(self, x, train):
        W = self.params["W"]
        lo = x.shape[1] - self.kernel + 1
        self._x = x
        out = x[:, :lo, :] @ W[0]
        for j in range(1, self.kernel):
            out += x[:, j:j + lo, :] @ W[j]
        return out + self.params["b"]

    def backward(self, g):
        W = self.params["W"]
        x = self._x
        n, length, c = x.shape
        lo = length - self.kernel + 1
        g2 = g.reshape(n * lo, -1)
        dW = np.empty_like(W)
        for j in range(self.kernel):
            dW[j] = x[:, j:j + lo, :].reshape(n * lo, c).T @ g2
        self.grads = {"W": dW, "b": g2.sum(axis=0)}
        if not self.input_grad:
            return None
        dx = np.zeros(x.shape)
        for j in range(self.kernel):
            dx[:, j:j + lo, :] += g @ W[j].T
        return dx

    def out_shape(self, shape):
        return (shape[0] - self.kernel + 1, self.params["W"].shape[2])


class MaxPool1D(Layer):
    """Window 2, stride 2; an odd trailing sample is dropped. Ties pick the first element."""

    def forward(self, x, train):
        lo = x.shape[1] // 2
        a, b = x[:, 0:2 * lo:2, :], x[:, 1:2 * lo:2, :]
        self._first = a >= b
        self._xshape = x.shape
        return np.where(self._first, a, b)

    def backward(self, g):
        lo = self._xshape[1] // 2
        dx = np.zeros(self._xshape)
        dx[:, 0:2 * lo:2, :] = g * self._first
        dx[:, 1:2 * lo:2, :] = g * ~self._first
        return dx

    def out_shape(self, shape):
        return (shape[0] // 2, shape[1])


class BatchNorm(Layer):
    """Normalizes the last axis over every other axis.

    Training uses batch moments; inference uses running averages updated as
    ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x, train):
        axes = tuple(range(x.ndim - 1))
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        self._train = train
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, g):
        axes = tuple(range(g.ndim - 1))
        xhat, inv, gamma = self._xhat, self._inv, self.params["gamma"]
        self.grads = {"gamma": (g * xhat).sum(axis=axes), "beta": g.sum(axis=axes)}
        dxhat = g * gamma
        if not self._train:
            return dxhat * inv
        m = g.size // g.shape[-1]
        return inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Flatten(Layer):
    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)

    def out_shape(self, shape):
        return (int(np.prod(shape)),)


# --------------------------------------------------------------------------- configs


@dataclass
class MLPConfig:
    input_dim: int
    hidden: list[int] = field(default_factory=lambda: [12, 12])
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    seed: int = 0

    kind = "mlp"

    def validate(self) -> None:
        if len(self.hidden) != 2 or not all(6 <= h <= 18 for h in self.hidden):
            raise DataError("MLP needs two hidden layers of 6..18 units")
        if self.input_dim < 1:
            raise DataError("input_dim must be positive")


@dataclass
class CNNConfig:
    length: int = CNN_LENGTH
    channels: int = 3
    filters: list[int] = field(default_factory=lambda: [128, 64, 32])
    kernel: int = 3
    dense: list[int] = field(default_factory=lambda: [20, 20])
    lr: float = 1e-5
    max_epochs: int = 99
    patience: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    kind = "cnn"

    def validate(self) -> None:
        if self.kernel < 1 or any(f < 1 for f in self.filters) or any(d < 1 for d in self.dense):
            raise DataError("layer sizes must be positive")


def config_to_dict(config) -> dict:
    return {"kind": config.kind, **asdict(config)}


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    return {"mlp": MLPConfig, "cnn": CNNConfig}[kind](**d)


# --------------------------------------------------------------------------- network


class Network:
    def __init__(self, layers: list[Layer], config):
        self.layers = layers
        self.config = config

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x[:, 0]

    def backward(self, g: np.ndarray) -> None:
        g = g[:, None]
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def predict_proba(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = [_sigmoid(self.forward(x[i:i + batch])) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        # p = 0.5 resolves to class 1
        return (self.predict_proba(x) >= 0.5).astype(int)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every trainable array."""
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield i, name, p

    @property
    def n_params(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def get_state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in {**layer.params, **layer.state()}.items():
                out[f"{i}.{name}"] = p.copy()
        return out

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                layer.params[name] = np.array(state[f"{i}.{name}"], dtype=float)
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.array(state[f"{i}.running_mean"], dtype=float)
                layer.running_var = np.array(state[f"{i}.running_var"], dtype=float)

    def digest(self) -> str:
        h = hashlib.sha256()
        for key, arr in sorted(self.get_state().items()):
            h.update(key.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-sample output shape after each layer."""
        cfg = self.config
        shape = (cfg.length, cfg.channels) if isinstance(cfg, CNNConfig) else (cfg.input_dim,)
        out = []
        for layer in self.layers:
            shape = layer.out_shape(shape)
            out.append((type(layer).__name__, shape))
        return out


def build_mlp(config: MLPConfig) -> Network:
    config.validate()
    rng = np.random.default_rng(config.seed)
    sizes = [config.input_dim] + list(config.hidden)
    layers: list[Layer] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [Dense(a, b, rng), ReLU()]
    layers.append(Dense(sizes[-1], 1, rng))
    return Network(layers, config)


def build_cnn(config: CNNConfig | None = None) -> Network:
    """conv -> ReLU -> max-pool -> batch-norm, three times; then flatten and dense."""
    config = config or CNNConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    layers: list[Layer] = []
    length, c = config.length, config.channels
    for f in config.filters:
        layers += [Conv1D(c, f, config.kernel, rng), ReLU(), MaxPool1D(), BatchNorm(f, config.momentum)]
        length = (length - config.kernel + 1) // 2
        c = f
    if length < 1:
        raise DataError("input too short for the convolution stack")
    layers[0].input_grad = False
    layers.append(Flatten())
    n = length * c
    for d in config.dense:
        layers += [Dense(n, d, rng), ReLU()]
        n = d
    layers.append(Dense(n, 1, rng))
    return Network(layers, config)


def build_network(config) -> Network:
    return build_cnn(config) if isinstance(config, CNNConfig) else build_mlp(config)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to the logits."""
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (_sigmoid(z) - y) / len(z)


# --------------------------------------------------------------------------- training


class Adam:
    def __init__(self, net: Network, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {(i, n): np.zeros_like(p) for i, n, p in net.parameters()}
        self.v = {(i, n): np.zeros_like(p) for i, n, p in net.parameters()}

    def step(self, net: Network) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for i, name, p in net.parameters():
            g = net.layers[i].grads[name]
            m = self.m[i, name] = self.b1 * self.m[i, name] + (1 - self.b1) * g
            v = self.v[i, name] = self.b2 * self.v[i, name] + (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainReport:
    epochs_run: int
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    final_accuracy: float
    initial_digest: str

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for e, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines.append(f"{e},{a!r},{b!r}")
        return "\n".join(lines) + "\n"


def stratified_split(labels: np.ndarray, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; returns ``(train_idx, val_idx)`` with about ``frac`` in validation."""
    tr, va = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_val = int(round(frac * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        va.append(idx[:n_val])
        tr.append(idx[n_val:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(va))


def _check_labels(y: np.ndarray, what: str) -> None:
    if len(np.unique(y)) < 2:
        raise SingleClassLabels(f"{what} contains a single class")


def train(net: Network, x: np.ndarray, y: np.ndarray,
          val: tuple[np.ndarray, np.ndarray] | None = None) -> TrainReport:
    """Mini-batch Adam with early stopping on validation loss.

    Without ``val`` an 80/20 stratified split of ``(x, y)`` is drawn from the
    config seed. The best-validation weights are restored at the end.
    """
    cfg = net.config
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise EmptySet("no training rows")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite training inputs")
    rng = np.random.default_rng([cfg.seed, 1])
    if val is None:
        _check_labels(y, "training labels")
        tr, va = stratified_split(y, 0.2, rng)
        x, y, xv, yv = x[tr], y[tr], x[va], y[va]
    else:
        xv, yv = np.asarray(val[0], dtype=float), np.asarray(val[1], dtype=float)
    _check_labels(y, "training split")
    _check_labels(yv, "validation split")

    initial = net.digest()
    opt = Adam(net, cfg.lr)
    best, best_state, best_epoch, waited = np.inf, net.get_state(), 0, 0
    tl, vl = [], []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            if len(b) < 2 and isinstance(cfg, CNNConfig):
                continue  # batch moments of one sample are degenerate
            z = net.forward(x[b], train=True)
            loss, g = bce_with_logits(z, y[b])
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            net.backward(g)
            opt.step(net)
            total += loss * len(b)
        tl.append(total / len(x))
        v = bce_with_logits(_logits(net, xv), yv)[0]
        if not np.isfinite(v):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        vl.append(v)
        if v < best:
            best, best_state, best_epoch, waited = v, net.get_state(), epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    if tl:
        net.set_state(best_state)
    acc = model_accuracy(net, xv, yv) if len(xv) else float("nan")
    return TrainReport(len(tl), tl, vl, best_epoch, acc, initial)


def _logits(net: Network, x: np.ndarray, batch: int = 256) -> np.ndarray:
    return np.concatenate([net.forward(x[i:i + batch]) for i in range(0, len(x), batch)])


def mlp_train(x, y, config: MLPConfig, val=None) -> tuple[Network, TrainReport]:
    net = build_mlp(config)
    return net, train(net, x, y, val)


def cnn_train(x, y, config: CNNConfig | None = None, val=None) -> tuple[Network, TrainReport]:
    net = build_cnn(config)
    return net, train(net, x, y, val)


def model_accuracy(net: Network, x, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptySet("empty evaluation set")
    return float(np.mean(net.predict(x) == y) * 100.0)


# --------------------------------------------------------------------------- inputs


def cnn_prepare_stroke(stroke, length: int = CNN_LENGTH) -> np.ndarray:
    """Stroke to a ``(length, 3)`` array of x, y, t re-referenced to the stroke start.

    Shorter strokes are zero-padded with ``pad // 2`` rows in front; longer ones
    are center-cropped with a warning.
    """
    data = np.column_stack([stroke.x - stroke.x[0], stroke.y - stroke.y[0], stroke.t - stroke.t[0]])
    n = len(data)
    if n > length:
        warnings.warn(f"stroke of {n} samples center-cropped to {length}", stacklevel=2)
        a = (n - length) // 2
        return data[a:a + length].copy()
    out = np.zeros((length, 3))
    lead = (length - n) // 2
    out[lead:lead + n] = data
    return out


def stroke_tensor(segmented, length: int = CNN_LENGTH):
    """Stack every stroke of ``[(trial, strokes), ...]`` into inputs plus row metadata."""
    xs, labels, subjects, tasks = [], [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for trial, strokes in segmented:
            for s in strokes:
                xs.append(cnn_prepare_stroke(s, length))
                labels.append(trial.hand.label)
                subjects.append(trial.subject_id)
                tasks.append(trial.task_id)
    if not xs:
        raise EmptySet("no strokes")
    return np.stack(xs), np.array(labels), np.array(subjects), np.array(tasks)


# --------------------------------------------------------------------------- checks


def _pattern(net: Network) -> bytes:
    """Fingerprint of the piecewise-linear regions selected by the last forward pass."""
    h = hashlib.sha256()
    for layer in net.layers:
        if isinstance(layer, ReLU):
            h.update(np.packbits(layer._mask).tobytes())
        elif isinstance(layer, MaxPool1D):
            h.update(np.packbits(layer._first).tobytes())
    return h.digest()


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped_kinks: int


def gradient_check(net: Network, x: np.ndarray, y: np.ndarray, n_params: int = 60,
                   eps: float = 1e-5, seed: int = 0) -> GradCheck:
    """Max relative error between backprop and central differences on sampled parameters.

    Batch norm runs in inference mode so the loss is a fixed function of the weights.
    A probe whose +/- eps evaluations land in a different ReLU or max-pool region
    than the base point straddles a kink; it is skipped and another parameter drawn.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def loss() -> tuple[float, bytes]:
        return bce_with_logits(net.forward(x, train=False), y)[0], _pattern(net)

    _, g = bce_with_logits(net.forward(x, train=False), y)
    base = _pattern(net)
    net.backward(g)
    entries = [(i, n, p) for i, n, p in net.parameters()]
    sizes = np.array([p.size for _, _, p in entries])
    bounds = np.cumsum(sizes)
    order = np.random.default_rng(seed).permutation(int(sizes.sum()))
    worst, checked, skipped = 0.0, 0, 0
    for f in order:
        if checked >= n_params:
            break
        k = int(np.searchsorted(bounds, f, side="right"))
        i, name, p = entries[k]
        j = np.unravel_index(int(f - (bounds[k] - sizes[k])), p.shape)
        analytic = net.layers[i].grads[name][j]
        old = p[j]
        p[j] = old + eps
        lp, pp = loss()
        p[j] = old - eps
        lm, pm = loss()
        p[j] = old
        if pp != base or pm != base:
            skipped += 1
            continue
        numeric = (lp - lm) / (2 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, abs(analytic - numeric) / denom)
        checked += 1
    return GradCheck(float(worst), checked, skipped)


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(net: Network, path: str | Path) -> None:
    """``.npz`` with every parameter and buffer plus a JSON header (config, seed, version)."""
    header = json.dumps({"version": CHECKPOINT_VERSION, "config": config_to_dict(net.config)},
                        sort_keys=True)
    buf = io.BytesIO()
    arrays = {"__header__": np.array(header), **net.get_state()}
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            # fixed timestamp keeps repeated saves byte-identical
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            arr = io.BytesIO()
            np.lib.format.write_array(arr, np.asarray(arrays[key]), allow_pickle=False)
            zf.writestr(info, arr.getvalue())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Network:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('version')}")
        net = build_network(config_from_dict(header["config"]))
        net.set_state({k: z[k] for k in z.files if k != "__header__"})
    return net
