import numpy as np
import pytest

from augforest.errors import ModelError
from augforest.model.network import batch_loss, forward, grad, hvp, init_params, loss, pack, unpack
from augforest.model.spec import Batch, LossKind, ModelSpec, concat_batches

SPECS = [
    ModelSpec(3, 3, 0, LossKind.SOFTMAX, 0.01),
    ModelSpec(3, 3, 4, LossKind.SOFTMAX, 0.01),
    ModelSpec(3, 3, 0, LossKind.MULTILABEL, 0.01),
    ModelSpec(3, 3, 4, LossKind.MULTILABEL, 0.0),
]


def _batch(spec: ModelSpec, seed: int = 0, weighted: bool = False) -> Batch:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, spec.input_dim))
    if spec.loss is LossKind.SOFTMAX:
        labels = rng.integers(0, spec.num_outputs, size=20)
    else:
        labels = rng.integers(0, 2, size=(20, spec.num_outputs))
    weights = rng.uniform(0.5, 2.0, size=20) if weighted else None
    return Batch(x, labels, weights)


def _theta(spec: ModelSpec, seed: int = 1) -> np.ndarray:
    return np.random.default_rng(seed).normal(scale=0.5, size=spec.param_count)


def _central_grad(spec: ModelSpec, theta: np.ndarray, batch: Batch, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = eps
        out[i] = (batch_loss(spec, theta + step, batch) - batch_loss(spec, theta - step, batch)) / (2 * eps)
    return out


@pytest.mark.parametrize("spec", SPECS)
@pytest.mark.parametrize("weighted", [False, True])
def test_grad_matches_finite_differences(spec: ModelSpec, weighted: bool) -> None:
    batch = _batch(spec, weighted=weighted)
    theta = _theta(spec)
    np.testing.assert_allclose(grad(spec, theta, batch), _central_grad(spec, theta, batch), rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("spec", SPECS)
def test_hvp_matches_gradient_differences(spec: ModelSpec) -> None:
    batch = _batch(spec)
    theta = _theta(spec)
    v = np.random.default_rng(3).normal(size=spec.param_count)
    eps = 1e-5
    expected = (grad(spec, theta + eps * v, batch) - grad(spec, theta - eps * v, batch)) / (2 * eps)
    np.testing.assert_allclose(hvp(spec, theta, batch, v), expected, rtol=1e-4, atol=1e-6)


def test_hvp_is_linear_and_symmetric() -> None:
    spec = SPECS[0]
    batch = _batch(spec)
    theta = _theta(spec)
    rng = np.random.default_rng(4)
    u, v = rng.normal(size=(2, spec.param_count))
    np.testing.assert_allclose(hvp(spec, theta, batch, 2 * u + v), 2 * hvp(spec, theta, batch, u) + hvp(spec, theta, batch, v))
    assert u @ hvp(spec, theta, batch, v) == pytest.approx(v @ hvp(spec, theta, batch, u))
    np.testing.assert_array_equal(hvp(spec, theta, batch, np.zeros(spec.param_count)), 0.0)


def test_penalty_is_optional() -> None:
    spec = SPECS[0]
    batch = _batch(spec)
    theta = _theta(spec)
    gap = batch_loss(spec, theta, batch) - batch_loss(spec, theta, batch, include_penalty=False)
    assert gap == pytest.approx(0.5 * spec.l2 * theta @ theta)
    np.testing.assert_allclose(grad(spec, theta, batch) - grad(spec, theta, batch, include_penalty=False), spec.l2 * theta)


def test_zero_parameters_give_log_c_loss() -> None:
    spec = ModelSpec(2, 4)
    assert loss(spec, np.zeros(spec.param_count), np.array([1.0, -1.0]), 2) == pytest.approx(np.log(4))


def test_forward_shapes() -> None:
    spec = SPECS[1]
    theta = _theta(spec)
    assert forward(spec, theta, np.zeros(3)).shape == (3,)
    assert forward(spec, theta, np.zeros((5, 3))).shape == (5, 3)
    with pytest.raises(ModelError, match="width"):
        forward(spec, theta, np.zeros((5, 2)))
    with pytest.raises(ModelError, match="parameters"):
        forward(spec, theta[:-1], np.zeros(3))


def test_pack_unpack_round_trip() -> None:
    spec = SPECS[1]
    theta = _theta(spec)
    np.testing.assert_array_equal(pack(spec, unpack(spec, theta)), theta)


def test_init_params() -> None:
    assert not init_params(SPECS[0], 0).any()
    hidden = init_params(SPECS[1], 0)
    assert hidden.shape == (SPECS[1].param_count,)
    np.testing.assert_array_equal(hidden, init_params(SPECS[1], 0))


def test_labels_are_checked() -> None:
    spec = SPECS[0]
    with pytest.raises(ModelError, match="range"):
        batch_loss(spec, _theta(spec), Batch(np.zeros((1, 3)), [3]))
    with pytest.raises(ModelError, match="Empty"):
        batch_loss(spec, _theta(spec), Batch(np.zeros((0, 3)), np.zeros(0, dtype=int)))


def test_weighted_batch_equals_repeated_rows() -> None:
    spec = SPECS[0]
    theta = _theta(spec)
    x = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    weighted = Batch(x, [0, 1], [2.0, 1.0])
    repeated = Batch(x[[0, 0, 1]], [0, 0, 1])
    assert batch_loss(spec, theta, weighted) == pytest.approx(batch_loss(spec, theta, repeated))


def test_concat_batches_fills_missing_weights() -> None:
    a = Batch(np.zeros((2, 3)), [0, 1])
    b = Batch(np.ones((1, 3)), [2], [4.0])
    merged = concat_batches([a, b])
    assert len(merged) == 3
    np.testing.assert_array_equal(merged.weights, [1.0, 1.0, 4.0])


def test_spec_validation() -> None:
    with pytest.raises(ModelError):
        ModelSpec(0, 2)
    with pytest.raises(ModelError):
        ModelSpec(2, 2, l2=-1.0)
    assert ModelSpec(3, 2).param_count == 8
    assert ModelSpec(3, 2, hidden_dim=4).param_count == 4 * 3 + 4 + 2 * 4 + 2
