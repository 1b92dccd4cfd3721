"""Loss/gradient kernels for the classification models.

Every kernel exists twice: a numpy version (``*_np``) and a version that
numba compiles when available (``*_jit`` for the MLP, which keeps the matrix
products in BLAS but fuses everything else; ``*_loops`` for logistic
regression, which is cheapest as one scalar pass). The
public names bind to one of the two according to ``_jit.USE_NUMBA``. Both are
float64 throughout; they agree to rounding but are not bitwise identical, so a
single process never mixes them.

MLP parameter layout: for each layer in order, the weight matrix
``(n_out, n_in)`` row-major, then (if ``bias``) the ``n_out`` bias vector.
Hidden layers use tanh; the output layer feeds a softmax cross-entropy.
"""
import numpy as np

from ._jit import USE_NUMBA, njit


def mlp_param_count(widths, bias=True):
    n = 0
    for i in range(len(widths) - 1):
        n += widths[i + 1] * widths[i]
        if bias:
            n += widths[i + 1]
    return n


# --------------------------------------------------------------------------
# numpy path


def _unpack_np(params, widths, bias):
    layers = []
    off = 0
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        W = params[off:off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        if bias:
            b = params[off:off + n_out]
            off += n_out
        else:
            b = None
        layers.append((W, b))
    return layers


def mlp_logits_np(params, X, widths, bias=True):
    a = X
    layers = _unpack_np(params, widths, bias)
    for j, (W, b) in enumerate(layers):
        z = a @ W.T
        if b is not None:
            z = z + b
        a = np.tanh(z) if j < len(layers) - 1 else z
    return a


def _xent_np(logits, y):
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    return float(np.mean(lse - shift[np.arange(len(y)), y]))


def mlp_loss_np(params, X, y, widths, bias=True):
    return _xent_np(mlp_logits_np(params, X, widths, bias), y)


def mlp_loss_grad_np(params, X, y, widths, bias=True):
    n = X.shape[0]
    layers = _unpack_np(params, widths, bias)
    acts = [X]
    a = X
    for j, (W, b) in enumerate(layers):
        z = a @ W.T
        if b is not None:
            z = z + b
        a = np.tanh(z) if j < len(layers) - 1 else z
        acts.append(a)
    logits = acts[-1]
    shift = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    s = e.sum(axis=1)
    loss = float(np.mean(np.log(s) - shift[np.arange(n), y]))

    dz = e / s[:, None]
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = []
    for j in range(len(layers) - 1, -1, -1):
        W, b = layers[j]
        a_prev = acts[j]
        gW = dz.T @ a_prev
        grads.append(dz.sum(axis=0) if b is not None else None)
        grads.append(gW)
        if j > 0:
            dz = (dz @ W) * (1.0 - a_prev * a_prev)
    grads.reverse()
    flat = [g.ravel() for g in grads if g is not None]
    return loss, np.concatenate(flat)


def _log1pexp_np(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_np(w, X, y):
    z = X @ w
    return float(np.mean(_log1pexp_np(z) - y * z))


def logistic_loss_grad_np(w, X, y):
    z = X @ w
    loss = float(np.mean(_log1pexp_np(z) - y * z))
    r = (_sigmoid_np(z) - y) / X.shape[0]
    return loss, X.T @ r


# --------------------------------------------------------------------------
# loop path (numba-compiled when available)


@njit
def _log1pexp(z):
    if z > 0.0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@njit
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@njit
def logistic_loss_loops(w, X, y):
    n, d = X.shape
    total = 0.0
    for s in range(n):
        z = 0.0
        for j in range(d):
            z += X[s, j] * w[j]
        total += _log1pexp(z) - y[s] * z
    return total / n


@njit
def logistic_loss_grad_loops(w, X, y):
    n, d = X.shape
    g = np.zeros(d)
    total = 0.0
    for s in range(n):
        z = 0.0
        for j in range(d):
            z += X[s, j] * w[j]
        total += _log1pexp(z) - y[s] * z
        r = _sigmoid(z) - y[s]
        for j in range(d):
            g[j] += r * X[s, j]
    for j in range(d):
        g[j] /= n
    return total / n, g


@njit
def _mlp_forward_jit(params, X, widths, bias):
    """Activations of every layer (input first, logits last) and weight views."""
    n = X.shape[0]
    L = widths.shape[0] - 1
    acts = [np.ascontiguousarray(X)]
    Ws = []
    off = 0
    for i in range(L):
        n_in = widths[i]
        n_out = widths[i + 1]
        W = params[off:off + n_out * n_in].reshape((n_out, n_in))
        off += n_out * n_in
        z = acts[i] @ W.T
        if bias:
            for s in range(n):
                for o in range(n_out):
                    z[s, o] += params[off + o]
            off += n_out
        if i < L - 1:
            z = np.tanh(z)
        acts.append(z)
        Ws.append(W)
    return acts, Ws


@njit
def mlp_logits_jit(params, X, widths, bias=True):
    acts, _ = _mlp_forward_jit(params, X, widths, bias)
    return acts[-1]


@njit
def _softmax_xent_jit(logits, y, dz):
    """Mean cross-entropy; writes d(loss)/d(logits) into ``dz``."""
    n, C = logits.shape
    loss = 0.0
    for s in range(n):
        m = logits[s, 0]
        for c in range(1, C):
            if logits[s, c] > m:
                m = logits[s, c]
        acc = 0.0
        for c in range(C):
            e = np.exp(logits[s, c] - m)
            dz[s, c] = e
            acc += e
        loss += np.log(acc) - (logits[s, y[s]] - m)
        for c in range(C):
            dz[s, c] = dz[s, c] / acc / n
        dz[s, y[s]] -= 1.0 / n
    return loss / n


@njit
def mlp_loss_jit(params, X, y, widths, bias=True):
    acts, _ = _mlp_forward_jit(params, X, widths, bias)
    logits = acts[-1]
    return _softmax_xent_jit(logits, y, np.empty_like(logits))


@njit
def mlp_loss_grad_jit(params, X, y, widths, bias=True):
    L = widths.shape[0] - 1
    acts, Ws = _mlp_forward_jit(params, X, widths, bias)
    logits = acts[L]
    dz = np.empty_like(logits)
    loss = _softmax_xent_jit(logits, y, dz)
    grad = np.empty(params.shape[0])
    end = params.shape[0]
    for i in range(L - 1, -1, -1):
        n_in = widths[i]
        n_out = widths[i + 1]
        if bias:
            grad[end - n_out:end] = dz.sum(axis=0)
            end -= n_out
        grad[end - n_out * n_in:end] = (dz.T @ acts[i]).ravel()
        end -= n_out * n_in
        if i > 0:
            a = acts[i]
            dz = (dz @ Ws[i]) * (1.0 - a * a)
    return loss, grad


# --------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    logistic_loss = logistic_loss_loops
    logistic_loss_grad = logistic_loss_grad_loops
    mlp_logits = mlp_logits_jit
    mlp_loss = mlp_loss_jit
    mlp_loss_grad = mlp_loss_grad_jit
else:
    logistic_loss = logistic_loss_np
    logistic_loss_grad = logistic_loss_grad_np
    mlp_logits = mlp_logits_np
    mlp_loss = mlp_loss_np
    mlp_loss_grad = mlp_loss_grad_np

BACKEND = "numba" if USE_NUMBA else "numpy"
