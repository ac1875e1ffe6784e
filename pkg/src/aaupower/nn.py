"""Two-hidden-layer MLP with a Gaussian (mean, std) head.

Both outputs go through a sigmoid: the mean lives in normalized power units
``[0, 1]`` and the standard deviation is mapped into ``(sigma_min, sigma_max)``.
Training minimizes ``log(sigma) + (y - mu)^2 / (2 sigma^2)`` with Adam and
early stopping on the validation loss.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .features import EncoderSpec, encode_batch, fit_encoder

MODEL_FORMAT = "aaupower-model"
MODEL_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

SIGMA_MIN = 1e-4
SIGMA_MAX = 0.25


class ModelFileError(ValueError):
    pass


class ModelVersionError(ModelFileError):
    pass


class TrainingError(RuntimeError):
    pass


# ── activations ────────────────────────────────────────────────────────


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, a):
    return 1.0 - a * a


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (sigmoid, _sigmoid_grad),
}


# ── model containers ───────────────────────────────────────────────────


@dataclass(frozen=True)
class LayerDims:
    n_inputs: int
    hidden1: int = 40
    hidden2: int = 15

    def __post_init__(self):
        if min(self.n_inputs, self.hidden1, self.hidden2) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {self}")

    n_outputs = 2

    @classmethod
    def default(cls, n_inputs: int) -> "LayerDims":
        return cls(n_inputs, 40, 15)

    @classmethod
    def scaled(cls, n_inputs: int, c: float) -> "LayerDims":
        if c <= 0:
            raise ValueError("scaling factor must be positive")
        return cls(n_inputs, max(1, round(12 * c)), max(1, round(4 * c)))


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    encoder: EncoderSpec | None = None
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    power_min_w: float = 0.0
    power_max_w: float = 1.0
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")
        n_i, l1 = self.W1.shape
        if self.b1.shape != (l1,) or self.W2.shape[0] != l1:
            raise ValueError("inconsistent first layer shapes")
        l2 = self.W2.shape[1]
        if self.b2.shape != (l2,) or self.W3.shape != (l2, 2) or self.b3.shape != (2,):
            raise ValueError("inconsistent output layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> LayerDims:
        return LayerDims(self.W1.shape[0], self.W1.shape[1], self.W2.shape[1])

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        kw = {name: getattr(self, name).copy() for name in PARAM_NAMES}
        return ModelParams(**kw, encoder=self.encoder, sigma_min=self.sigma_min,
                           sigma_max=self.sigma_max, power_min_w=self.power_min_w,
                           power_max_w=self.power_max_w, activation=self.activation,
                           seed=self.seed)

    @property
    def power_span_w(self) -> float:
        return self.power_max_w - self.power_min_w


@dataclass
class GaussianPrediction:
    mu_norm: np.ndarray
    sigma_norm: np.ndarray
    mu_w: np.ndarray
    sigma_w: np.ndarray

    def ci(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        return self.mu_w - z * self.sigma_w, self.mu_w + z * self.sigma_w

    def __len__(self) -> int:
        return np.size(self.mu_w)


def init_params(dims: LayerDims, seed: int, activation: str = "relu", **scaling) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = [(dims.n_inputs, dims.hidden1), (dims.hidden1, dims.hidden2), (dims.hidden2, 2)]
    ws = []
    for fan_in, fan_out in shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return ModelParams(W1=ws[0], b1=np.zeros(dims.hidden1), W2=ws[1], b2=np.zeros(dims.hidden2),
                       W3=ws[2], b3=np.zeros(2), activation=activation, seed=seed, **scaling)


# ── forward / loss / backward ──────────────────────────────────────────


def _forward_cache(params: ModelParams, X: np.ndarray):
    act, _ = ACTIVATIONS[params.activation]
    h1 = X @ params.W1 + params.b1
    a1 = act(h1)
    h2 = a1 @ params.W2 + params.b2
    a2 = act(h2)
    z = a2 @ params.W3 + params.b3
    s = sigmoid(z)
    mu = s[:, 0]
    sigma = params.sigma_min + s[:, 1] * (params.sigma_max - params.sigma_min)
    return (h1, a1, h2, a2, s), mu, sigma


def _as_matrix(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.W1.shape[0]:
        raise ValueError(f"expected input width {params.W1.shape[0]}, got shape {x.shape}")
    return X, single


def forward(params: ModelParams, x) -> GaussianPrediction:
    """Prediction for one feature vector (scalars) or a matrix of them (arrays)."""
    X, single = _as_matrix(params, x)
    _, mu, sigma = _forward_cache(params, X)
    span = params.power_span_w
    pred = GaussianPrediction(mu, sigma, params.power_min_w + mu * span, sigma * span)
    if single:
        pred = GaussianPrediction(*(float(v[0]) for v in
                                    (pred.mu_norm, pred.sigma_norm, pred.mu_w, pred.sigma_w)))
    return pred


def nll(y, mu, sigma):
    """Per-sample Gaussian negative log-likelihood without the log(sqrt(2 pi)) constant."""
    y, mu, sigma = (np.asarray(v, dtype=np.float64) for v in (y, mu, sigma))
    return np.log(sigma) + (y - mu) ** 2 / (2.0 * sigma ** 2)


def nll_loss(y_bar_norm, pred: GaussianPrediction):
    out = nll(y_bar_norm, pred.mu_norm, pred.sigma_norm)
    return float(out) if out.ndim == 0 else out


def nll_grad_mu_sigma(y, mu, sigma):
    """Partial derivatives of :func:`nll` with respect to mu and sigma."""
    r = np.asarray(y, dtype=np.float64) - mu
    return -r / sigma ** 2, 1.0 / sigma - r ** 2 / sigma ** 3


def backward(params: ModelParams, x, y, freeze_sigma: bool = False):
    """Mean loss over the batch and its exact gradient, as ``(loss, {name: grad})``.

    With ``freeze_sigma`` the std output is pinned at the middle of its range and
    receives no gradient (used for the optional warm-up phase).
    """
    X, _ = _as_matrix(params, x)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    _, act_grad = ACTIVATIONS[params.activation]
    (h1, a1, h2, a2, s), mu, sigma = _forward_cache(params, X)
    if freeze_sigma:
        sigma = np.full_like(mu, 0.5 * (params.sigma_min + params.sigma_max))
    n = len(y)
    loss = float(np.mean(nll(y, mu, sigma)))

    g_mu, g_sigma = nll_grad_mu_sigma(y, mu, sigma)
    dz = np.empty((n, 2))
    dz[:, 0] = g_mu * s[:, 0] * (1.0 - s[:, 0])
    if freeze_sigma:
        dz[:, 1] = 0.0
    else:
        dz[:, 1] = g_sigma * (params.sigma_max - params.sigma_min) * s[:, 1] * (1.0 - s[:, 1])
    dz /= n

    grads = {"W3": a2.T @ dz, "b3": dz.sum(axis=0)}
    dh2 = (dz @ params.W3.T) * act_grad(h2, a2)
    grads["W2"] = a1.T @ dh2
    grads["b2"] = dh2.sum(axis=0)
    dh1 = (dh2 @ params.W2.T) * act_grad(h1, a1)
    grads["W1"] = X.T @ dh1
    grads["b1"] = dh1.sum(axis=0)
    return loss, grads


def batch_loss(params: ModelParams, X, y) -> float:
    _, mu, sigma = _forward_cache(params, np.asarray(X, dtype=np.float64))
    return float(np.mean(nll(y, mu, sigma)))


# ── optimizer ──────────────────────────────────────────────────────────


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    max_epochs: int = 5000
    patience: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    activation: str = "relu"
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    warmup_fraction: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES},
                   {k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES})


def adam_step(params: ModelParams, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k in PARAM_NAMES:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        getattr(params, k)[...] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


# ── training ───────────────────────────────────────────────────────────


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    stopped_epoch: int
    best_epoch: int
    best_val_loss: float
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "stopped_epoch": self.stopped_epoch, "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss}


def fit_arrays(X_train, y_train, X_val, y_val, dims: LayerDims, config: TrainConfig,
               **scaling) -> tuple[ModelParams, TrainReport]:
    """Train on already-encoded inputs and normalized targets."""
    X_train, X_val = np.asarray(X_train, float), np.asarray(X_val, float)
    y_train, y_val = np.asarray(y_train, float), np.asarray(y_val, float)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("train and validation sets must be non-empty")
    t0 = time.perf_counter()
    params = init_params(dims, config.seed, activation=config.activation,
                         sigma_min=config.sigma_min, sigma_max=config.sigma_max, **scaling)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([config.seed, 1])
    n, bs = len(X_train), config.batch_size

    def run_epoch(epoch, freeze_sigma):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            loss, grads = backward(params, X_train[idx], y_train[idx], freeze_sigma=freeze_sigma)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_step(params, grads, state, config)
            total += loss * len(idx)
        return total / n

    for w in range(int(config.warmup_fraction * config.max_epochs)):
        run_epoch(-(w + 1), freeze_sigma=True)

    train_curve, val_curve = [], []
    best, best_epoch, bad = math.inf, 0, 0
    snapshot = params.copy()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        train_curve.append(run_epoch(epoch, freeze_sigma=False))
        val = batch_loss(params, X_val, y_val)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        val_curve.append(val)
        if val < best:
            best, best_epoch, bad = val, epoch, 0
            snapshot = params.copy()
        else:
            bad += 1
            if bad >= config.patience:
                break
    report = TrainReport(train_curve, val_curve, epoch, best_epoch, best,
                         seconds=time.perf_counter() - t0)
    return snapshot, report


def targets(ds: Dataset, encoder: EncoderSpec) -> np.ndarray:
    return (ds.power_w - encoder.norm.power_min_w) / (encoder.norm.power_max_w
                                                      - encoder.norm.power_min_w)


def train(train_ds: Dataset, val_ds: Dataset, dims: LayerDims | None = None,
          config: TrainConfig | None = None, encoder: EncoderSpec | None = None,
          c_max: int | None = None) -> tuple[ModelParams, TrainReport]:
    """Fit an encoder on ``train_ds`` (unless given) and train the network.

    ``dims`` defaults to the 40/15 hidden layout for the encoder's input width.
    """
    config = config or TrainConfig()
    if encoder is None:
        encoder = fit_encoder(train_ds, c_max if c_max is not None else train_ds.c_max)
    dims = dims or LayerDims.default(encoder.n_inputs)
    if dims.n_inputs != encoder.n_inputs:
        raise ValueError(f"dims expect {dims.n_inputs} inputs, encoder yields {encoder.n_inputs}")
    Xtr, Xva = encode_batch(train_ds, encoder), encode_batch(val_ds, encoder)
    return fit_arrays(Xtr, targets(train_ds, encoder), Xva, targets(val_ds, encoder), dims,
                      config, encoder=encoder, power_min_w=encoder.norm.power_min_w,
                      power_max_w=encoder.norm.power_max_w)


def predict(params: ModelParams, ds: Dataset) -> GaussianPrediction:
    if params.encoder is None:
        raise ValueError("model has no encoder attached")
    return forward(params, encode_batch(ds, params.encoder))


# ── persistence ────────────────────────────────────────────────────────


def _weights_payload(params: ModelParams) -> dict:
    return {k: getattr(params, k).tolist() for k in PARAM_NAMES}


def _checksum(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def model_to_dict(params: ModelParams) -> dict:
    weights = _weights_payload(params)
    return {
        "format": MODEL_FORMAT, "version": MODEL_VERSION,
        "dims": {"n_inputs": params.dims.n_inputs, "hidden1": params.dims.hidden1,
                 "hidden2": params.dims.hidden2, "n_outputs": 2},
        "activation": params.activation, "seed": params.seed,
        "scaling": {"sigma_min": params.sigma_min, "sigma_max": params.sigma_max,
                    "power_min_w": params.power_min_w, "power_max_w": params.power_max_w},
        "encoder": params.encoder.to_dict() if params.encoder is not None else None,
        "weights": weights, "checksum": _checksum(weights),
    }


def save_model(params: ModelParams, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(params), indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model(path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{path} is not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelVersionError(f"model file version {doc.get('version')!r}, "
                                f"expected {MODEL_VERSION}")
    try:
        weights = doc["weights"]
        if _checksum(weights) != doc["checksum"]:
            raise ModelFileError(f"{path}: weight checksum mismatch")
        scaling = doc["scaling"]
        enc = EncoderSpec.from_dict(doc["encoder"]) if doc["encoder"] is not None else None
        params = ModelParams(**{k: np.array(weights[k], dtype=np.float64) for k in PARAM_NAMES},
                             encoder=enc, activation=doc["activation"], seed=doc["seed"],
                             **{k: float(v) for k, v in scaling.items()})
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: malformed model file ({exc})") from exc
    if tuple(doc["dims"][k] for k in ("n_inputs", "hidden1", "hidden2")) != (
            params.dims.n_inputs, params.dims.hidden1, params.dims.hidden2):
        raise ModelFileError(f"{path}: dims do not match weight shapes")
    return params
