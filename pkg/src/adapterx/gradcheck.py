"""Central finite-difference checks of analytic gradients."""

import numpy as np

from .rng import Rng
from .smoa import expert_fractions

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-6


def rel_error(analytic, numeric, floor=FLOOR):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, t, step=STEP):
    """Central differences of scalar ``f()`` with respect to every entry of tensor ``t``."""
    t.data = np.array(t.data, dtype=np.float64, copy=True)
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_function(f_tensor, inputs, step=STEP):
    """Max relative error per input of ``f_tensor(*inputs)`` (a scalar Tensor)."""
    for t in inputs:
        t.grad = None
    f_tensor(*inputs).backward()
    errs = []
    for t in inputs:
        num = numeric_grad(lambda: f_tensor(*inputs).item(), t, step)
        errs.append(float(rel_error(t.grad, num).max()))
    return errs


def perturb(model, seed=0, std=0.05):
    """Add noise to every trainable tensor so that no gradient is trivially zero."""
    rng = Rng(seed).child("perturb")
    for _, t in model.trainable():
        t.data = t.data + rng.normal(t.shape, std=std)


def gradcheck_model(model, x, y, step=STEP, params=None):
    """``{name: max relative error}`` over the model's total loss.

    The expert-load fractions of the balance loss are piecewise constant in
    the parameters; they are computed once at the unperturbed point and
    held fixed for every evaluation, matching the analytic gradient.
    """
    _, _, _, records = model.loss(x, y)
    fixed = [expert_fractions(r, model.config.n_experts, model.config.soft_balance_counts) for r in records]
    fixed = fixed or None
    model.zero_grad()
    total, *_ = model.loss(x, y, fixed)
    total.backward()
    named = dict(model.trainable())
    names = params if params is not None else list(named)
    report = {}
    for name in names:
        t = named[name]
        num = numeric_grad(lambda: model.loss(x, y, fixed)[0].item(), t, step)
        report[name] = float(rel_error(t.grad, num).max())
    return report
