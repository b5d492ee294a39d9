"""
Forward pass, losses, gradients and Hessian-vector products.

All losses here are weighted means over a batch plus l2/2 * |theta|^2 unless
`include_penalty` is False. Gradients are analytic; the Hessian-vector
product is exact for the linear model and a central difference of the
gradient for the hidden-layer model.
"""

import numpy as np
from attrs import frozen
from scipy.special import expit, log_softmax, softmax

from augforest.errors import ModelError
from augforest.model.spec import Batch, LossKind, ModelSpec
from augforest.seeding import make_rng

FD_STEP = 1e-5


@frozen
class Layers:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray | None = None
    b2: np.ndarray | None = None


def unpack(spec: ModelSpec, theta: np.ndarray) -> Layers:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.param_count,):
        raise ModelError(f"Expected {spec.param_count} parameters, got shape {theta.shape}")
    d, h, c = spec.input_dim, spec.hidden_dim, spec.num_outputs
    if h == 0:
        return Layers(theta[: c * d].reshape(c, d), theta[c * d :])
    at = 0
    w1 = theta[at : at + h * d].reshape(h, d)
    at += h * d
    b1 = theta[at : at + h]
    at += h
    w2 = theta[at : at + c * h].reshape(c, h)
    at += c * h
    return Layers(w1, b1, w2, theta[at:])


def pack(spec: ModelSpec, layers: Layers) -> np.ndarray:
    parts = [layers.w1.ravel(), layers.b1.ravel()]
    if spec.hidden_dim:
        assert layers.w2 is not None and layers.b2 is not None
        parts += [layers.w2.ravel(), layers.b2.ravel()]
    return np.concatenate(parts)


def init_params(spec: ModelSpec, rng_seed: int) -> np.ndarray:
    """Zeros for the linear model; scaled Gaussian first layer otherwise."""
    if spec.hidden_dim == 0:
        return np.zeros(spec.param_count)
    rng = make_rng(rng_seed)
    d, h, c = spec.input_dim, spec.hidden_dim, spec.num_outputs
    return pack(
        spec,
        Layers(
            rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d)),
            np.zeros(h),
            rng.normal(0.0, 1.0 / np.sqrt(h), size=(c, h)),
            np.zeros(c),
        ),
    )


def _check_features(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ModelError(f"Expected inputs of width {spec.input_dim}, got shape {x.shape}")
    return x


def hidden_features(spec: ModelSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Activations feeding the output layer (the inputs themselves when linear)."""
    layers = unpack(spec, theta)
    x = _check_features(spec, x)
    if spec.hidden_dim == 0:
        return x
    return np.tanh(x @ layers.w1.T + layers.b1)


def forward(spec: ModelSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Logits; a single sample gives a length-C vector, a matrix gives n x C."""
    single = np.ndim(x) == 1
    layers = unpack(spec, theta)
    inputs = _check_features(spec, x)
    if spec.hidden_dim == 0:
        logits = inputs @ layers.w1.T + layers.b1
    else:
        assert layers.w2 is not None and layers.b2 is not None
        logits = np.tanh(inputs @ layers.w1.T + layers.b1) @ layers.w2.T + layers.b2
    return logits[0] if single else logits


def _check_labels(spec: ModelSpec, labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if spec.loss is LossKind.SOFTMAX:
        labels = labels.reshape(-1).astype(np.int64)
        if len(labels) != n:
            raise ModelError(f"Expected {n} labels, got {len(labels)}")
        if n and (labels.min() < 0 or labels.max() >= spec.num_outputs):
            raise ModelError(f"Label out of range [0, {spec.num_outputs})")
        return labels
    labels = labels.reshape(n, -1).astype(np.float64)
    if labels.shape[1] != spec.num_outputs:
        raise ModelError(f"Expected {spec.num_outputs} label bits, got {labels.shape[1]}")
    return labels


def _losses_from_logits(spec: ModelSpec, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if spec.loss is LossKind.SOFTMAX:
        return -log_softmax(logits, axis=1)[np.arange(len(labels)), labels]
    return (np.logaddexp(0.0, logits) - labels * logits).mean(axis=1)


def _dlogits(spec: ModelSpec, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if spec.loss is LossKind.SOFTMAX:
        out = softmax(logits, axis=1)
        out[np.arange(len(labels)), labels] -= 1.0
        return out
    return (expit(logits) - labels) / spec.num_outputs


def example_losses(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row data loss, without the penalty."""
    inputs = _check_features(spec, x)
    labels = _check_labels(spec, labels, inputs.shape[0])
    logits = np.atleast_2d(forward(spec, theta, inputs))
    return _losses_from_logits(spec, logits, labels)


def loss(spec: ModelSpec, theta: np.ndarray, sample: np.ndarray, label: int | np.ndarray) -> float:
    """Loss of a single featurized sample, penalty included."""
    theta = np.asarray(theta, dtype=np.float64)
    if spec.loss is LossKind.MULTILABEL:
        labels = np.reshape(label, (1, -1))
    else:
        labels = np.asarray([label])
    data = example_losses(spec, theta, np.reshape(sample, (1, -1)), labels)
    return float(data[0] + 0.5 * spec.l2 * theta @ theta)


def _require_rows(batch: Batch) -> None:
    if len(batch) == 0:
        raise ModelError("Empty batch")


def batch_loss(spec: ModelSpec, theta: np.ndarray, batch: Batch, include_penalty: bool = True) -> float:
    _require_rows(batch)
    theta = np.asarray(theta, dtype=np.float64)
    value = float(batch.normalized_weights() @ example_losses(spec, theta, batch.features, batch.labels))
    if include_penalty:
        value += 0.5 * spec.l2 * float(theta @ theta)
    return value


def grad(spec: ModelSpec, theta: np.ndarray, batch: Batch, include_penalty: bool = True) -> np.ndarray:
    """Analytic gradient of batch_loss."""
    _require_rows(batch)
    theta = np.asarray(theta, dtype=np.float64)
    layers = unpack(spec, theta)
    x = _check_features(spec, batch.features)
    labels = _check_labels(spec, batch.labels, x.shape[0])
    weights = batch.normalized_weights()[:, None]
    if spec.hidden_dim == 0:
        dz = _dlogits(spec, x @ layers.w1.T + layers.b1, labels) * weights
        out = pack(spec, Layers(dz.T @ x, dz.sum(axis=0)))
    else:
        assert layers.w2 is not None and layers.b2 is not None
        a = np.tanh(x @ layers.w1.T + layers.b1)
        dz = _dlogits(spec, a @ layers.w2.T + layers.b2, labels) * weights
        dh = (dz @ layers.w2) * (1.0 - a * a)
        out = pack(spec, Layers(dh.T @ x, dh.sum(axis=0), dz.T @ a, dz.sum(axis=0)))
    if include_penalty:
        out = out + spec.l2 * theta
    return out


def _linear_hvp(spec: ModelSpec, theta: np.ndarray, batch: Batch, v: np.ndarray) -> np.ndarray:
    layers = unpack(spec, theta)
    direction = unpack(spec, v)
    x = _check_features(spec, batch.features)
    weights = batch.normalized_weights()[:, None]
    logits = x @ layers.w1.T + layers.b1
    dz = x @ direction.w1.T + direction.b1
    if spec.loss is LossKind.SOFTMAX:
        p = softmax(logits, axis=1)
        u = p * dz - p * np.sum(p * dz, axis=1, keepdims=True)
    else:
        s = expit(logits)
        u = s * (1.0 - s) * dz / spec.num_outputs
    u = u * weights
    return pack(spec, Layers(u.T @ x, u.sum(axis=0)))


def hvp(
    spec: ModelSpec,
    theta: np.ndarray,
    batch: Batch,
    v: np.ndarray,
    include_penalty: bool = True,
) -> np.ndarray:
    """Hessian of batch_loss at theta applied to v."""
    _require_rows(batch)
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != theta.shape:
        raise ModelError(f"Direction has shape {v.shape}, parameters {theta.shape}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(theta)
    if spec.hidden_dim == 0:
        out = _linear_hvp(spec, theta, batch, v)
    else:
        out = fd_hvp(spec, theta, batch, v)
    if include_penalty:
        out = out + spec.l2 * v
    return out


def fd_hvp(spec: ModelSpec, theta: np.ndarray, batch: Batch, v: np.ndarray) -> np.ndarray:
    """Central difference of the data-loss gradient along v."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(theta)
    unit = v / norm
    h = FD_STEP * (1.0 + float(np.linalg.norm(theta)))
    plus = grad(spec, theta + h * unit, batch, include_penalty=False)
    minus = grad(spec, theta - h * unit, batch, include_penalty=False)
    return (plus - minus) / (2.0 * h) * norm
