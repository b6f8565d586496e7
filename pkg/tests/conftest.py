"""Shared test helpers: finite differences and the gradient case table."""

import numpy as np

from blurvit import autodiff as ad


def finite_diff_grad(f, x, eps=1e-5):
    """Central finite differences of the scalar f() w.r.t. array x.

    x is perturbed in place and restored; f must read the current
    contents of x on every call.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f()
        flat[i] = orig - eps
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_rel_err(a, b, floor=1e-6):
    """Largest elementwise relative error, with tiny entries compared
    against `floor` instead of each other."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def fd_check(make_loss, params, tol=1e-4, eps=1e-5):
    """Backprop make_loss() and compare each param grad against central
    differences; returns the worst relative error seen."""
    loss = make_loss()
    ad.backward(loss)
    grads = [p.grad.copy() for p in params]

    def value():
        with ad.no_grad():
            return make_loss().item()

    worst = 0.0
    for p, g in zip(params, grads):
        fd = finite_diff_grad(value, p.data, eps)
        err = max_rel_err(g, fd)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} on shape {p.shape}"
        worst = max(worst, err)
    return worst


def _t(rng, shape):
    return ad.Tensor(rng.normal(size=shape), requires_grad=True)


def _weighted_sum(t, w):
    return ad.tensor_sum(ad.mul(t, ad.Tensor(w)))


# One entry per differentiable op: name -> (make_loss, params).  The
# losses contract each output with fixed random weights so every output
# element influences the scalar.

def _case_add():
    rng = np.random.default_rng(11)
    a, b = _t(rng, (3, 4)), _t(rng, (4,))
    w = rng.normal(size=(3, 4))
    return lambda: _weighted_sum(ad.add(a, b), w), [a, b]


def _case_mul():
    rng = np.random.default_rng(12)
    a, b = _t(rng, (2, 3, 4)), _t(rng, (3, 1))
    w = rng.normal(size=(2, 3, 4))
    return lambda: _weighted_sum(ad.mul(a, b), w), [a, b]


def _case_scale():
    rng = np.random.default_rng(13)
    a = _t(rng, (5,))
    w = rng.normal(size=(5,))
    return lambda: _weighted_sum(ad.scale(a, -1.7), w), [a]


def _case_matmul():
    rng = np.random.default_rng(14)
    a, b = _t(rng, (3, 4)), _t(rng, (4, 2))
    w = rng.normal(size=(3, 2))
    return lambda: _weighted_sum(ad.matmul(a, b), w), [a, b]


def _case_matmul_batched():
    rng = np.random.default_rng(15)
    a, b = _t(rng, (2, 3, 4)), _t(rng, (4, 5))
    w = rng.normal(size=(2, 3, 5))
    return lambda: _weighted_sum(ad.matmul(a, b), w), [a, b]


def _case_reshape():
    rng = np.random.default_rng(16)
    a = _t(rng, (2, 6))
    w = rng.normal(size=(3, 4))
    return lambda: _weighted_sum(ad.reshape(a, (3, 4)), w), [a]


def _case_transpose():
    rng = np.random.default_rng(17)
    a = _t(rng, (2, 3, 4))
    w = rng.normal(size=(4, 2, 3))
    return lambda: _weighted_sum(ad.transpose(a, (2, 0, 1)), w), [a]


def _case_concat():
    rng = np.random.default_rng(18)
    a, b = _t(rng, (2, 3)), _t(rng, (2, 2))
    w = rng.normal(size=(2, 5))
    return lambda: _weighted_sum(ad.concat([a, b], axis=1), w), [a, b]


def _case_take_slice():
    rng = np.random.default_rng(19)
    a = _t(rng, (4, 5))
    w = rng.normal(size=(2, 5))
    return lambda: _weighted_sum(ad.take_slice(a, (slice(1, 3),)), w), [a]


def _case_broadcast_to():
    rng = np.random.default_rng(20)
    a = _t(rng, (1, 4))
    w = rng.normal(size=(3, 4))
    return lambda: _weighted_sum(ad.broadcast_to(a, (3, 4)), w), [a]


def _case_tensor_sum():
    rng = np.random.default_rng(21)
    a = _t(rng, (3, 4, 2))
    w = rng.normal(size=(3, 1, 2))
    return lambda: _weighted_sum(ad.tensor_sum(a, axis=1, keepdims=True), w), [a]


def _case_mean():
    rng = np.random.default_rng(22)
    a = _t(rng, (3, 4))
    w = rng.normal(size=(3,))
    return lambda: _weighted_sum(ad.mean(a, axis=1), w), [a]


def _case_softmax():
    rng = np.random.default_rng(23)
    a = _t(rng, (3, 5))
    w = rng.normal(size=(3, 5))
    return lambda: _weighted_sum(ad.softmax(a, axis=-1), w), [a]


def _case_layer_norm():
    rng = np.random.default_rng(24)
    x, gain, bias = _t(rng, (4, 6)), _t(rng, (6,)), _t(rng, (6,))
    w = rng.normal(size=(4, 6))
    return lambda: _weighted_sum(ad.layer_norm(x, gain, bias), w), [x, gain, bias]


def _case_gelu():
    rng = np.random.default_rng(25)
    a = _t(rng, (4, 4))
    w = rng.normal(size=(4, 4))
    return lambda: _weighted_sum(ad.gelu(a), w), [a]


def _case_cross_entropy():
    rng = np.random.default_rng(26)
    logits = _t(rng, (5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    return lambda: ad.cross_entropy(logits, labels), [logits]


OP_CASES = {
    "add": _case_add,
    "mul": _case_mul,
    "scale": _case_scale,
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "concat": _case_concat,
    "take_slice": _case_take_slice,
    "broadcast_to": _case_broadcast_to,
    "tensor_sum": _case_tensor_sum,
    "mean": _case_mean,
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "gelu": _case_gelu,
    "cross_entropy": _case_cross_entropy,
}
