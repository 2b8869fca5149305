"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f, arrays: list[np.ndarray], index: int, h: float = 1e-4) -> np.ndarray:
    """d f(*arrays) / d arrays[index] by central differences (f returns a float)."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(*arrays)
        x[i] = orig - h
        fm = f(*arrays)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def analytic_grads(build, arrays: list[np.ndarray]) -> list[np.ndarray]:
    """Gradients of the scalar tensor ``build(*tensors)`` w.r.t. each array."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # entries far below the array's gradient scale are dominated by difference round-off,
    # so the denominator never drops under a millionth of that scale
    floor = 1e-6 * float(np.max(np.abs(numeric), initial=0.0)) + 1e-8
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor), initial=0.0))


def check_gradients(build, arrays: list[np.ndarray], h: float = 1e-4) -> float:
    """Worst relative error over all inputs of a scalar-valued graph ``build``."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    analytic = analytic_grads(build, arrays)

    def f(*xs):
        return float(build(*(Tensor(x) for x in xs)).data)

    worst = 0.0
    for k in range(len(arrays)):
        worst = max(worst, max_relative_error(analytic[k], numeric_grad(f, arrays, k, h)))
    return worst
