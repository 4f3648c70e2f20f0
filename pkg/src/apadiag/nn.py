"""Feedforward classifier written directly in numpy.

Dense -> batch norm -> ReLU blocks followed by a dense output layer, softmax
cross-entropy loss, hand-written backpropagation, plain SGD and a
reduce-on-plateau learning-rate rule.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    FileFormatError,
    LabelError,
    ShapeError,
    StateError,
    TruncatedFileError,
    VersionMismatchError,
)

ACTIVATIONS = ("relu", "leakyrelu")
CHECKPOINT_MAGIC = b"APAM"
CHECKPOINT_VERSION = 1


# -- elementary operations ----------------------------------------------------

def dense_forward(W, B, x):
    """``y = W x + B`` for a vector `x` or a batch of row vectors."""
    W = np.asarray(W)
    x = np.asarray(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or np.shape(B) != (W.shape[0],):
        raise ShapeError(f"dense layer W{W.shape} B{np.shape(B)} cannot take input {x.shape}")
    return x @ W.T + B


def relu(x):
    return np.maximum(x, 0)


def leaky_relu(x, slope=0.01):
    return np.where(x < 0, slope * x, x)


def batchnorm_forward(gamma, beta, eps, X, running_mean=None, running_var=None, momentum=0.1, train=True):
    """Batch normalization ``gamma * (x - mean) / sqrt(var + eps) + beta``.

    In train mode the batch statistics are used and, when given, the running
    arrays are updated in place by an exponential moving average (the running
    variance uses the unbiased estimate). Eval mode uses the running arrays.
    Returns ``(out, cache)``; `cache` is None in eval mode.
    """
    if train:
        if X.shape[0] < 2:
            raise ShapeError("batch normalization needs a batch of at least 2 in train mode")
        mean = X.mean(axis=0)
        xc = X - mean
        var = np.mean(xc * xc, axis=0)
        if running_mean is not None:
            n = X.shape[0]
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * var * n / (n - 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        return gamma * xhat + beta, (xhat, inv_std)
    xhat = (X - running_mean) / np.sqrt(running_var + eps)
    return gamma * xhat + beta, None


def batchnorm_backward(dout, gamma, cache):
    """Gradients ``(dX, dgamma, dbeta)`` of train-mode batch normalization."""
    xhat, inv_std = cache
    dgamma = np.sum(dout * xhat, axis=0)
    dbeta = np.sum(dout, axis=0)
    dxhat = dout * gamma
    dX = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * np.mean(dxhat * xhat, axis=0))
    return dX, dgamma, dbeta


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(`logits`) against integer `labels`.

    Returns ``(loss, dlogits)`` where `dlogits` is the gradient of the mean
    loss. A single logit vector with a scalar label is accepted too.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1
    grad /= n
    return loss, (grad[0] if single else grad)


def sgd_step(params, grads, lr):
    """In-place ``w <- w - lr * grad`` over matching lists of arrays."""
    for w, g in zip(params, grads):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {w.shape}")
        w -= lr * g
    return params


def plateau_lr(history, lr, patience=3, factor=0.1, min_lr=1e-6):
    """Learning rate after the latest epoch of `history` (accuracies).

    The rate is multiplied by `factor` whenever the best accuracy has gone
    `patience` consecutive epochs without strictly improving; the counter
    restarts after each reduction. Never returns less than `min_lr`.
    """
    if not len(history):
        raise ValueError("empty accuracy history")
    best = int(np.argmax(history))
    stale = len(history) - 1 - best
    if stale and stale % patience == 0:
        return max(lr * factor, min_lr)
    return lr


PLATEAU_MODES = {"step10": (0.1, 3), "exp": (math.exp(-1.0), 2)}


@dataclass
class OptimizerConfig:
    """SGD with reduce-on-plateau.

    ``plateau_mode`` picks a preset (factor, patience): "step10" divides by
    ten after three stale epochs, "exp" multiplies by 1/e after two.
    """

    learning_rate: float = 0.01
    plateau_patience: int = 3
    plateau_factor: float = 0.1
    min_lr: float = 1e-5
    max_epochs: int = 60
    seed: int = 0

    @classmethod
    def plateau_mode(cls, mode, **kw):
        if mode not in PLATEAU_MODES:
            raise ConfigError("plateau_mode", f"must be one of {sorted(PLATEAU_MODES)}")
        factor, patience = PLATEAU_MODES[mode]
        return cls(plateau_factor=factor, plateau_patience=patience, **kw)

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be positive")
        if int(self.plateau_patience) != self.plateau_patience or self.plateau_patience < 1:
            raise ConfigError("plateau_patience", "must be a positive integer")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor", "must lie in (0, 1)")
        if not 0 < self.min_lr <= self.learning_rate:
            raise ConfigError("min_lr", "must be positive and at most learning_rate")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise ConfigError("max_epochs", "must be a positive integer")
        return self

    def next_lr(self, history, lr):
        return plateau_lr(history, lr, self.plateau_patience, self.plateau_factor, self.min_lr)

    def to_dict(self):
        return asdict(self)


# -- model --------------------------------------------------------------------

@dataclass
class ArchSpec:
    """Layer sizes, activation and batch-norm placement of the classifier.

    Batch norm always follows each hidden dense layer (before the
    activation). `bn_input` and `bn_output` add batch norm on the raw input
    and on the logits as well.
    """

    input_dim: int = 10000
    hidden: tuple = (500, 500, 500)
    n_classes: int = 49
    activation: str = "relu"
    leaky_slope: float = 0.01
    bn_eps: float = 1e-3
    bn_momentum: float = 0.1
    bn_input: bool = False
    bn_output: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self):
        sizes = self.layer_sizes
        if any(int(s) != s or s < 1 for s in sizes):
            raise ConfigError("hidden", f"every layer size must be a positive integer, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError("activation", f"must be one of {ACTIVATIONS}")
        if not self.bn_eps > 0:
            raise ConfigError("bn_eps", "must be positive")
        return self

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden, self.n_classes)

    def bn_sizes(self):
        """Feature count of every batch-norm layer, in forward order."""
        sizes = list(self.hidden)
        if self.bn_input:
            sizes.insert(0, self.input_dim)
        if self.bn_output:
            sizes.append(self.n_classes)
        return sizes

    def n_trainable(self):
        sizes = self.layer_sizes
        dense = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        return dense + 2 * sum(self.bn_sizes())

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ModelParams:
    """Trainable tensors, batch-norm running statistics and the architecture.

    `input_mean` / `input_scale` hold a fixed per-feature standardization
    fitted on training data (None when unused); they are not trainable.
    """

    spec: ArchSpec
    weights: list
    biases: list
    gammas: list
    betas: list
    running_means: list
    running_vars: list
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    training: bool = True
    metadata: dict = field(default_factory=dict)

    def trainable(self):
        """Trainable arrays: W, B per dense layer, then gamma, beta per BN layer."""
        out = []
        for W, B in zip(self.weights, self.biases):
            out += [W, B]
        for g, b in zip(self.gammas, self.betas):
            out += [g, b]
        return out

    def trainable_names(self):
        names = []
        for i in range(len(self.weights)):
            names += [f"W{i + 1}", f"B{i + 1}"]
        for j in range(len(self.gammas)):
            names += [f"bn{j + 1}.gamma", f"bn{j + 1}.beta"]
        return names

    def tensors(self):
        """Every stored tensor, in checkpoint declaration order."""
        out = []
        if self.input_mean is not None:
            out += [("input_mean", self.input_mean), ("input_scale", self.input_scale)]
        for i, (W, B) in enumerate(zip(self.weights, self.biases)):
            out += [(f"W{i + 1}", W), (f"B{i + 1}", B)]
        for j in range(len(self.gammas)):
            out += [
                (f"bn{j + 1}.gamma", self.gammas[j]),
                (f"bn{j + 1}.beta", self.betas[j]),
                (f"bn{j + 1}.running_mean", self.running_means[j]),
                (f"bn{j + 1}.running_var", self.running_vars[j]),
            ]
        return out

    def n_trainable(self):
        return sum(a.size for a in self.trainable())

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self):
        def cp(xs):
            return [x.copy() for x in xs]

        return ModelParams(
            self.spec, cp(self.weights), cp(self.biases), cp(self.gammas), cp(self.betas),
            cp(self.running_means), cp(self.running_vars),
            None if self.input_mean is None else self.input_mean.copy(),
            None if self.input_scale is None else self.input_scale.copy(),
            self.training, dict(self.metadata),
        )

    def astype(self, dtype):
        out = self.copy()
        for name in ("weights", "biases", "gammas", "betas", "running_means", "running_vars"):
            setattr(out, name, [a.astype(dtype) for a in getattr(out, name)])
        if out.input_mean is not None:
            out.input_mean = out.input_mean.astype(dtype)
            out.input_scale = out.input_scale.astype(dtype)
        return out

    def set_standardization(self, mean, scale):
        self.input_mean = np.asarray(mean, dtype=self.dtype)
        self.input_scale = np.asarray(scale, dtype=self.dtype)

    def eval(self):
        self.training = False
        return self

    def train(self):
        self.training = True
        return self


def init_params(spec, seed=0, dtype=np.float32):
    """Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases, unit gamma, zero beta."""
    spec.validate()
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    bn = spec.bn_sizes()
    return ModelParams(
        spec,
        weights,
        biases,
        [np.ones(n, dtype=dtype) for n in bn],
        [np.zeros(n, dtype=dtype) for n in bn],
        [np.zeros(n, dtype=dtype) for n in bn],
        [np.ones(n, dtype=dtype) for n in bn],
    )


class Network:
    """Forward/backward driver around a `ModelParams`.

    A train-mode forward pass keeps the activations needed by `backward`.
    """

    def __init__(self, params):
        self.params = params
        self._cache = None

    @property
    def spec(self):
        return self.params.spec

    def _activate(self, x):
        if self.spec.activation == "relu":
            return relu(x)
        return leaky_relu(x, self.spec.leaky_slope)

    def _activation_grad(self, pre, dout):
        if self.spec.activation == "relu":
            return dout * (pre > 0)
        return np.where(pre > 0, dout, self.spec.leaky_slope * dout)

    def _bn(self, j, z, train, update_stats):
        p = self.params
        if train:
            rm, rv = (p.running_means[j], p.running_vars[j]) if update_stats else (None, None)
            return batchnorm_forward(p.gammas[j], p.betas[j], self.spec.bn_eps, z, rm, rv,
                                     self.spec.bn_momentum, train=True)
        return batchnorm_forward(p.gammas[j], p.betas[j], self.spec.bn_eps, z,
                                 p.running_means[j], p.running_vars[j], train=False)

    def prepare(self, X):
        """Cast to the model dtype and apply the stored input standardization."""
        p = self.params
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.spec.input_dim:
            raise ShapeError(f"input has {X.shape[1]} features, model expects {self.spec.input_dim}")
        X = X.astype(p.dtype, copy=False)
        if p.input_mean is not None:
            X = (X - p.input_mean) / p.input_scale
        return X

    def forward(self, X, train=None, update_stats=True, return_hidden=False):
        """Logits for a batch `X` (one sample per row).

        `train` defaults to the params' mode flag. With ``update_stats=False``
        a train-mode pass leaves the running statistics untouched.
        """
        p = self.params
        spec = self.spec
        train = p.training if train is None else train
        h = self.prepare(X)
        j = 0
        caches = {"bn": [], "dense_in": [], "pre": []}
        if spec.bn_input:
            h, c = self._bn(j, h, train, update_stats)
            caches["bn"].append(c)
            j += 1
        hidden_out = []
        for i in range(len(spec.hidden)):
            caches["dense_in"].append(h)
            z = dense_forward(p.weights[i], p.biases[i], h)
            z, c = self._bn(j, z, train, update_stats)
            caches["bn"].append(c)
            caches["pre"].append(z)
            j += 1
            h = self._activate(z)
            hidden_out.append(h)
        caches["dense_in"].append(h)
        logits = dense_forward(p.weights[-1], p.biases[-1], h)
        if spec.bn_output:
            logits, c = self._bn(j, logits, train, update_stats)
            caches["bn"].append(c)
        self._cache = caches if train else None
        if return_hidden:
            return logits, hidden_out
        return logits

    def backward(self, dlogits):
        """Gradients of all trainable tensors, ordered like `ModelParams.trainable`."""
        if self._cache is None:
            raise StateError("backward() needs a preceding train-mode forward()")
        p = self.params
        spec = self.spec
        cache = self._cache
        n_dense = len(p.weights)
        n_bn = len(p.gammas)
        dW, dB = [None] * n_dense, [None] * n_dense
        dgam, dbet = [None] * n_bn, [None] * n_bn
        j = n_bn - 1
        d = dlogits
        if spec.bn_output:
            d, dgam[j], dbet[j] = batchnorm_backward(d, p.gammas[j], cache["bn"][j])
            j -= 1
        for i in reversed(range(n_dense)):
            h_in = cache["dense_in"][i]
            dW[i] = d.T @ h_in
            dB[i] = d.sum(axis=0)
            if i == 0 and not spec.bn_input:
                break
            d = d @ p.weights[i]
            if i == 0:
                break
            d = self._activation_grad(cache["pre"][i - 1], d)
            d, dgam[j], dbet[j] = batchnorm_backward(d, p.gammas[j], cache["bn"][j])
            j -= 1
        if spec.bn_input:
            _, dgam[0], dbet[0] = batchnorm_backward(d, p.gammas[0], cache["bn"][0])
        self._cache = None
        grads = []
        for w, b in zip(dW, dB):
            grads += [w, b]
        for g, b in zip(dgam, dbet):
            grads += [g, b]
        return grads

    def loss_and_grads(self, X, labels):
        logits = self.forward(X, train=True)
        loss, dlogits = softmax_xent(logits, labels)
        return loss, self.backward(dlogits), logits

    def predict_logits(self, X, batch_size=2048):
        X = np.asarray(X)
        out = np.empty((X.shape[0], self.spec.n_classes), dtype=self.params.dtype)
        for s in range(0, X.shape[0], batch_size):
            out[s:s + batch_size] = self.forward(X[s:s + batch_size], train=False)
        return out

    def predict(self, X, batch_size=2048):
        """Argmax class in eval mode; ties go to the lowest class index."""
        return np.argmax(self.predict_logits(X, batch_size), axis=1)

    def recalibrate(self, X, batch_size=4096):
        """Replace running statistics by population statistics over `X`.

        Layers are processed in order so each layer sees its input normalized
        with the already-recalibrated statistics upstream.
        """
        p = self.params
        spec = self.spec
        h = self.prepare(X)
        j = 0

        def set_stats(j, z):
            z64 = z.astype(np.float64)
            p.running_means[j][:] = z64.mean(axis=0)
            p.running_vars[j][:] = z64.var(axis=0)

        if spec.bn_input:
            set_stats(j, h)
            h, _ = self._bn(j, h, False, False)
            j += 1
        for i in range(len(spec.hidden)):
            z = np.concatenate([dense_forward(p.weights[i], p.biases[i], h[s:s + batch_size])
                                for s in range(0, h.shape[0], batch_size)])
            set_stats(j, z)
            z, _ = self._bn(j, z, False, False)
            j += 1
            h = self._activate(z)
        if spec.bn_output:
            set_stats(j, dense_forward(p.weights[-1], p.biases[-1], h))


def backward(params, X, labels):
    """Loss and gradients on one batch with train-mode statistics; running stats are left alone."""
    net = Network(params)
    logits = net.forward(X, train=True, update_stats=False)
    loss, dlogits = softmax_xent(logits, labels)
    return loss, net.backward(dlogits)


def gradient_check(params, X, labels, entries=None, step=1e-5, seed=0, floor=1e-6):
    """Compare `backward` against central finite differences.

    `params` should be float64. Checks every entry of each trainable tensor,
    or `entries` randomly chosen entries per tensor when given. Returns
    ``{tensor name: max relative error}`` where the relative error of one
    entry is ``|a - n| / max(|a|, |n|, floor)``. The floor keeps entries whose
    true gradient is zero (dense biases feeding batch norm) from comparing
    rounding noise with rounding noise.
    """
    analytic = backward(params, X, labels)[1]
    rng = np.random.default_rng(seed)

    def loss():
        logits = Network(params).forward(X, train=True, update_stats=False)
        return softmax_xent(logits, labels)[0]

    report = {}
    for name, w, g in zip(params.trainable_names(), params.trainable(), analytic):
        flat = w.reshape(-1)
        idx = np.arange(flat.size) if entries is None or entries >= flat.size else rng.choice(
            flat.size, size=entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            num = (up - down) / (2 * step)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        report[name] = worst
    return report


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, params):
    """Write `params` as an APAM checkpoint.

    Layout: ``b"APAM"``, u32 version, u32 header length, JSON header
    (architecture, activation, class count, metadata, tensor table), then
    little-endian float32 tensors in declaration order.
    """
    tensors = params.tensors()
    header = {
        "arch": params.spec.to_dict(),
        "activation": params.spec.activation,
        "n_classes": params.spec.n_classes,
        "metadata": params.metadata,
        "tensors": [[name, list(a.shape)] for name, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 4 and data[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"bad checkpoint magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError(12, len(data))
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(data) < 12 + hlen:
        raise TruncatedFileError(12 + hlen, len(data))
    try:
        header = json.loads(data[12:12 + hlen])
        spec = ArchSpec(**header["arch"])
        table = [(name, tuple(shape)) for name, shape in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FileFormatError(f"unreadable checkpoint header: {exc}") from None
    expected = 12 + hlen + 4 * sum(int(np.prod(s)) for _, s in table)
    if len(data) < expected:
        raise TruncatedFileError(expected, len(data))
    if len(data) > expected:
        raise FileFormatError(f"checkpoint has {len(data) - expected} trailing bytes")
    offset = 12 + hlen
    t = {}
    for name, shape in table:
        n = int(np.prod(shape))
        t[name] = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * n
    n_dense = len(spec.hidden) + 1
    n_bn = len(spec.bn_sizes())
    try:
        return ModelParams(
            spec,
            [t[f"W{i}"] for i in range(1, n_dense + 1)],
            [t[f"B{i}"] for i in range(1, n_dense + 1)],
            [t[f"bn{j}.gamma"] for j in range(1, n_bn + 1)],
            [t[f"bn{j}.beta"] for j in range(1, n_bn + 1)],
            [t[f"bn{j}.running_mean"] for j in range(1, n_bn + 1)],
            [t[f"bn{j}.running_var"] for j in range(1, n_bn + 1)],
            t.get("input_mean"),
            t.get("input_scale"),
            training=False,
            metadata=header.get("metadata", {}),
        )
    except KeyError as exc:
        raise FileFormatError(f"checkpoint lacks tensor {exc}") from None
