import numpy as np

from stepcast.autodiff import tensor as T
from stepcast.autodiff.tensor import ShapeError, Tensor

PROB_EPS = 1e-12


def _check(pred: Tensor, target: np.ndarray) -> None:
    if pred.value.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")


def mse_loss(predictions, targets) -> Tensor:
    """Mean squared error."""
    pred = T.as_tensor(predictions)
    target = np.asarray(targets, dtype=np.float64)
    _check(pred, target)
    return T.mean(T.square(pred - target))


def bce_loss(probabilities, labels) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-12, 1 - 1e-12]."""
    prob = T.as_tensor(probabilities)
    y = np.asarray(labels, dtype=np.float64)
    _check(prob, y)
    p = T.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    ll = T.log(p) * y + T.log(1.0 - p) * (1.0 - y)
    return -T.mean(ll)
