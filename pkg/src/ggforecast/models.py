"""The four sequence architectures, training loop, and weight persistence.

Every network maps a (N, 5, B) batch of distribution windows to an (N, B)
batch of next-step distributions.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .nncore import (
    LSTM,
    Adam,
    BatchNorm,
    CausalConv1D,
    Dense,
    Dropout,
    EncoderBlock,
    GlobalAveragePool1D,
    Layer,
    LeakyReLU,
    PositionalEncoding,
    ReLU,
    SimpleRNN,
    mse_loss,
)

log = logging.getLogger(__name__)

ARCHS = ("rnn", "lstm", "tcn", "transformer")
FORMAT_MAGIC = b"GGFW"
FORMAT_VERSION = 1

_ARCH_DEFAULTS = {
    "rnn": dict(output_activation="relu", batch_size=128, dropout=0.20),
    "lstm": dict(output_activation="leaky_relu", batch_size=64, dropout=0.20),
    "tcn": dict(output_activation="relu", batch_size=64, dropout=0.0),
    "transformer": dict(output_activation="leaky_relu", batch_size=32, dropout=0.0),
}


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "lstm"
    bins: int = 30
    window: int = 5
    hidden: int = 128
    filters: int = 64
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    d_model: int = 40
    heads: int = 20
    d_ff: int = 128
    blocks: int = 3
    dropout: float = 0.20
    output_activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    batch_size: int = 64
    epochs: int = 300
    lr: float = 1e-4
    dtype: str = "float32"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.window != 5:
            raise ValueError("window must be 5")
        if not 10 <= self.bins <= 50:
            raise ValueError(f"bins must be in [10, 50], got {self.bins}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        object.__setattr__(self, "dilations", tuple(self.dilations))

    @classmethod
    def for_arch(cls, arch: str, **overrides) -> "ModelConfig":
        if arch not in _ARCH_DEFAULTS:
            raise ValueError(f"unknown arch {arch!r}; expected one of {ARCHS}")
        return cls(arch=arch, **{**_ARCH_DEFAULTS[arch], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _head_activation(cfg: ModelConfig) -> Layer:
    if cfg.output_activation == "relu":
        return ReLU()
    if cfg.output_activation == "leaky_relu":
        return LeakyReLU(cfg.leaky_slope)
    raise ValueError(f"unknown output activation {cfg.output_activation!r}")


class Network(Layer):
    """Common plumbing: input validation and named parameter access."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

    def _check(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.cfg.window, self.cfg.bins):
            raise ValueError(
                f"{self.cfg.arch}: expected input of shape (N, {self.cfg.window}, {self.cfg.bins}), got {x.shape}"
            )

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}


class RNNNet(Network):
    def __init__(self, cfg, rng, dtype):
        super().__init__(cfg)
        H, B = cfg.hidden, cfg.bins
        self.rnn1 = SimpleRNN(B, H, True, rng, "rnn1", dtype)
        self.rnn2 = SimpleRNN(H, H, False, rng, "rnn2", dtype)
        self.drop = Dropout(cfg.dropout, np.random.default_rng(rng.integers(2**63)))
        self.head = Dense(H, B, rng, "head", dtype)
        self.act = _head_activation(cfg)
        self._children = [self.rnn1, self.rnn2, self.drop, self.head, self.act]

    def forward(self, x, training=False):
        self._check(x)
        h = self.rnn2.forward(self.rnn1.forward(x, training), training)
        return self.act.forward(self.head.forward(self.drop.forward(h, training)))

    def backward(self, grad):
        g = self.drop.backward(self.head.backward(self.act.backward(grad)))
        return self.rnn1.backward(self.rnn2.backward(g))


class LSTMNet(Network):
    def __init__(self, cfg, rng, dtype):
        super().__init__(cfg)
        H, B = cfg.hidden, cfg.bins
        self.lstm1 = LSTM(B, H, True, rng, "lstm1", dtype)
        self.lstm2 = LSTM(H, H, False, rng, "lstm2", dtype)
        self.drop = Dropout(cfg.dropout, np.random.default_rng(rng.integers(2**63)))
        self.head = Dense(H, B, rng, "head", dtype)
        self.act = _head_activation(cfg)
        self._children = [self.lstm1, self.lstm2, self.drop, self.head, self.act]

    def forward(self, x, training=False):
        self._check(x)
        h = self.lstm2.forward(self.lstm1.forward(x, training), training)
        return self.act.forward(self.head.forward(self.drop.forward(h, training)))

    def backward(self, grad):
        g = self.drop.backward(self.head.backward(self.act.backward(grad)))
        return self.lstm1.backward(self.lstm2.backward(g))


class TCNNet(Network):
    """Dilated causal convs, each followed by ReLU then batch norm."""

    def __init__(self, cfg, rng, dtype):
        super().__init__(cfg)
        self.stages = []
        c_in = cfg.bins
        for k, d in enumerate(cfg.dilations):
            conv = CausalConv1D(c_in, cfg.filters, cfg.kernel_size, d, rng, f"conv{k + 1}", dtype)
            self.stages.append((conv, ReLU(), BatchNorm(cfg.filters, name=f"bn{k + 1}", dtype=dtype)))
            c_in = cfg.filters
        self.pool = GlobalAveragePool1D()
        self.head = Dense(cfg.filters, cfg.bins, rng, "head", dtype)
        self.act = _head_activation(cfg)
        self._children = [layer for stage in self.stages for layer in stage] + [self.pool, self.head, self.act]

    def forward(self, x, training=False):
        self._check(x)
        for conv, relu, bn in self.stages:
            x = bn.forward(relu.forward(conv.forward(x)), training)
        return self.act.forward(self.head.forward(self.pool.forward(x)))

    def backward(self, grad):
        g = self.pool.backward(self.head.backward(self.act.backward(grad)))
        for conv, relu, bn in reversed(self.stages):
            g = conv.backward(relu.backward(bn.backward(g)))
        return g

    def conv_outputs(self, x):
        """Per-layer post-norm activations, for causality inspection."""
        outs = []
        for conv, relu, bn in self.stages:
            x = bn.forward(relu.forward(conv.forward(x)), False)
            outs.append(x)
        return outs


class TransformerNet(Network):
    def __init__(self, cfg, rng, dtype):
        super().__init__(cfg)
        self.proj = Dense(cfg.bins, cfg.d_model, rng, "proj", dtype)
        self.pe = PositionalEncoding(cfg.d_model)
        self.blocks = [
            EncoderBlock(cfg.d_model, cfg.heads, cfg.d_ff, rng, f"block{k + 1}", dtype)
            for k in range(cfg.blocks)
        ]
        self.head = Dense(cfg.d_model, cfg.bins, rng, "head", dtype)
        self.act = _head_activation(cfg)
        self._children = [self.proj, self.pe, *self.blocks, self.head, self.act]

    def forward(self, x, training=False):
        self._check(x)
        h = self.pe.forward(self.proj.forward(x))
        for block in self.blocks:
            h = block.forward(h, training)
        self._shape = h.shape
        return self.act.forward(self.head.forward(h[:, -1]))

    def backward(self, grad):
        g_last = self.head.backward(self.act.backward(grad))
        g = np.zeros(self._shape, dtype=g_last.dtype)
        g[:, -1] = g_last
        for block in reversed(self.blocks):
            g = block.backward(g)
        return self.proj.backward(self.pe.backward(g))


_NETWORKS = {"rnn": RNNNet, "lstm": LSTMNet, "tcn": TCNNet, "transformer": TransformerNet}


def build_network(cfg: ModelConfig, seed: int = 0, dtype=None) -> Network:
    dtype = np.dtype(dtype or cfg.dtype)
    return _NETWORKS[cfg.arch](cfg, np.random.default_rng(seed), dtype)


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of each architecture."""
    B, H = cfg.bins, cfg.hidden
    if cfg.arch in ("rnn", "lstm"):
        gates = 1 if cfg.arch == "rnn" else 4
        layer1 = gates * (H * (B + H) + H)
        layer2 = gates * (H * (2 * H) + H)
        return layer1 + layer2 + B * H + B
    if cfg.arch == "tcn":
        F, k = cfg.filters, cfg.kernel_size
        convs = k * B * F + F + (len(cfg.dilations) - 1) * (k * F * F + F)
        return convs + 2 * F * len(cfg.dilations) + F * B + B
    D, ff = cfg.d_model, cfg.d_ff
    block = 4 * (D * D + D) + (D * ff + ff) + (ff * D + D) + 4 * D
    return (B * D + D) + cfg.blocks * block + (D * B + B)


def parameter_count(net: Network) -> int:
    return sum(p.value.size for p in net.parameters())


# -- bundle & persistence ----------------------------------------------------

@dataclass
class ModelBundle:
    config: ModelConfig
    network: Network
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def arch(self) -> str:
        return self.config.arch

    def predict(self, windows) -> np.ndarray:
        """Inference-mode forward pass on a (N, 5, B) or (5, B) input."""
        x = np.asarray(windows, dtype=self.network.parameters()[0].value.dtype)
        single = x.ndim == 2
        out = self.network.forward(x[None] if single else x, training=False)
        return out[0] if single else out

    def save(self, path) -> None:
        save_bundle(self, path)


def save_bundle(bundle: ModelBundle, path) -> None:
    """Little-endian container: magic, version, JSON header, named float32 records.

    Record kinds: 0 = trainable parameter, 1 = batch-norm running statistic.
    """
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "arch": bundle.config.arch,
            "config": bundle.config.to_dict(),
            "seed": bundle.seed,
            "metadata": bundle.metadata,
        },
        sort_keys=True,
    ).encode()
    records = [(0, p.name, p.value) for p in bundle.network.parameters()]
    records += [(1, name, arr) for name, arr in bundle.network.buffers().items()]
    chunks = [FORMAT_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(header)), header]
    chunks.append(struct.pack("<I", len(records)))
    for kind, name, arr in records:
        raw = name.encode()
        chunks.append(struct.pack("<BHB", kind, len(raw), arr.ndim) + raw)
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != FORMAT_MAGIC:
        raise ValueError(f"{path}: not a weight file")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    return json.loads(data[10 : 10 + hlen])


def load_bundle(path, expect_arch: str | None = None) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weight file not found: {path}")
    data = path.read_bytes()
    header = read_header(path)
    if expect_arch is not None and header["arch"] != expect_arch:
        raise ValueError(f"{path}: weight file holds arch {header['arch']!r}, expected {expect_arch!r}")
    cfg = ModelConfig.from_dict(header["config"])
    net = build_network(cfg, seed=0, dtype=np.float32)
    params = net.named_parameters()
    buffers = net.buffers()
    offset = 10 + struct.unpack_from("<HI", data, 4)[1]
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    for _ in range(count):
        kind, nlen, ndim = struct.unpack_from("<BHB", data, offset)
        offset += 4
        name = data[offset : offset + nlen].decode()
        offset += nlen
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
        target = params[name].value if kind == 0 else buffers[name]
        if target.shape != arr.shape:
            raise ValueError(f"{path}: record {name!r} has shape {arr.shape}, expected {target.shape}")
        target[...] = arr
    return ModelBundle(cfg, net, header["seed"], header["metadata"])


# -- training ---------------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation loss."""
        return int(np.argmin(self.val_loss)) + 1 if self.val_loss else 0

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for k, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            rows.append(f"{k},{tr:.9g},{va:.9g}")
        return "\n".join(rows) + "\n"


def evaluate_loss(net: Network, X, y, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, len(X), batch_size):
        pred = net.forward(X[start : start + batch_size], training=False)
        diff = pred - y[start : start + batch_size]
        total += float(np.sum(diff.astype(np.float64) ** 2))
    return total / y.size


def train(
    cfg: ModelConfig,
    X_train,
    y_train,
    X_val,
    y_val,
    seed: int = 0,
    network: Network | None = None,
    epoch_callback=None,
) -> tuple[ModelBundle, TrainHistory]:
    """Mini-batch MSE training with Adam; returns final-epoch weights.

    ``network`` lets a caller continue from loaded weights. Validation loss
    is computed in inference mode after every epoch.
    """
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("train and validation sets must be non-empty")
    dtype = np.dtype(cfg.dtype)
    X_train = np.asarray(X_train, dtype=dtype)
    y_train = np.asarray(y_train, dtype=dtype)
    X_val = np.asarray(X_val, dtype=dtype)
    y_val = np.asarray(y_val, dtype=dtype)
    init_seed, shuffle_seed = np.random.SeedSequence(seed).generate_state(2)
    net = network if network is not None else build_network(cfg, int(init_seed), dtype)
    opt = Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(int(shuffle_seed))
    history = TrainHistory()
    n = len(X_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if cfg.arch == "tcn" and len(idx) < 2:
                continue
            pred = net.forward(X_train[idx], training=True)
            loss, grad = mse_loss(pred, y_train[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            net.backward(grad)
            opt.step()
            running += loss * len(idx)
        history.train_loss.append(running / n)
        history.val_loss.append(evaluate_loss(net, X_val, y_val))
        if not np.isfinite(history.val_loss[-1]):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        if epoch_callback is not None:
            epoch_callback(epoch, history)
        log.debug("%s epoch %d train %.3e val %.3e", cfg.arch, epoch, history.train_loss[-1], history.val_loss[-1])
    metadata = {
        "epochs_run": cfg.epochs,
        "final_train_loss": history.train_loss[-1],
        "final_val_loss": history.val_loss[-1],
        "best_val_epoch": history.best_epoch,
        "seed": seed,
    }
    return ModelBundle(cfg, net, seed, metadata), history


# -- estimator facade ---------------------------------------------------------

def _check_windows(X, bins=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[1] != 5:
        raise ValueError(f"expected windows of shape (n_samples, 5, n_bins), got {X.shape}")
    if bins is not None and X.shape[2] != bins:
        raise ValueError(f"expected {bins} bins, got {X.shape[2]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input windows contain NaN or infinity")
    return X


class DistributionForecaster(RegressorMixin, BaseEstimator):
    """One-step-ahead distribution model with a scikit-learn interface.

    ``fit`` takes windows ``X`` of shape (n_samples, 5, n_bins) and targets
    ``y`` of shape (n_samples, n_bins). Hyperparameters left as ``None``
    take the per-architecture defaults.
    """

    def __init__(
        self,
        arch="lstm",
        epochs=300,
        batch_size=None,
        lr=1e-4,
        dropout=None,
        blocks=3,
        validation_fraction=0.15,
        random_state=0,
    ):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.blocks = blocks
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self, bins) -> ModelConfig:
        overrides = {"bins": bins, "epochs": self.epochs, "lr": self.lr, "blocks": self.blocks}
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        if self.dropout is not None:
            overrides["dropout"] = self.dropout
        return ModelConfig.for_arch(self.arch, **overrides)

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_windows(X)
        y = np.asarray(y, dtype=float)
        if y.shape != (X.shape[0], X.shape[2]):
            raise ValueError(f"y must have shape {(X.shape[0], X.shape[2])}, got {y.shape}")
        if X_val is None:
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            perm = np.random.default_rng(self.random_state).permutation(len(X))
            X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
            X, y = X[perm[n_val:]], y[perm[n_val:]]
        cfg = self._config(X.shape[2])
        self.bundle_, self.history_ = train(cfg, X, y, X_val, y_val, seed=self.random_state)
        self.n_bins_ = X.shape[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "bundle_")
        X = _check_windows(X, self.n_bins_)
        return self.bundle_.predict(X).astype(float)

    def forecast(self, seed_window, horizon):
        from .forecast import forecast

        check_is_fitted(self, "bundle_")
        return forecast(self.bundle_, seed_window, horizon)

    def score(self, X, y, sample_weight=None):
        """Negative MSE over all bins (higher is better)."""
        diff = self.predict(X) - np.asarray(y, dtype=float)
        return -float(np.mean(diff**2))


def with_epochs(cfg: ModelConfig, epochs: int | None) -> ModelConfig:
    return cfg if epochs is None else replace(cfg, epochs=epochs)
