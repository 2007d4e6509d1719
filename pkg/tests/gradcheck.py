"""Central finite-difference gradient checking used across the test suite."""

import numpy as np

from fewshot_sei.ndgrad import Tensor, zero_grads

EPS = 1e-5
TOL = 1e-4


def rel_err(a, b):
    scale = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / scale))


def finite_diff_grad(fn, tensors, which, eps=EPS):
    """Numerical d fn() / d tensors[which] by central differences.

    fn must return a plain float computed from the current tensor values.
    """
    t = tensors[which]
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def check_gradients(build_loss, tensors, tol=TOL, eps=EPS):
    """Compare analytic grads of build_loss() against central differences.

    build_loss constructs the loss Tensor from `tensors` (leaf Tensors with
    requires_grad set). Returns the worst relative error over all tensors.
    """
    zero_grads(tensors)
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for k in range(len(tensors)):
        fd = finite_diff_grad(lambda: build_loss().item(), tensors, k, eps=eps)
        worst = max(worst, rel_err(analytic[k], fd))
    return worst
