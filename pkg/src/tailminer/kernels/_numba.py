"""Loop-form dense-network kernels compiled with numba.

Parameters live in one flat float64 vector. Layer ``l`` occupies
``dims[l+1] * dims[l]`` row-major weights followed by ``dims[l+1]`` biases.
Activation codes: 0 identity, 1 ReLU. Loss codes: 0 cross-entropy,
1 focal, 2 sum-of-squares.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from numba.typed import List

# Reassociation lets LLVM vectorize the dot-product loops; NaN and inf
# semantics stay strict so divergence checks still fire.
FASTMATH = {"reassoc", "contract"}


@njit(cache=True)
def _offsets(dims):
    n_layers = dims.shape[0] - 1
    poff = np.zeros(n_layers + 1, np.int64)
    for l in range(n_layers):
        poff[l + 1] = poff[l] + dims[l] * dims[l + 1] + dims[l + 1]
    return poff


@njit(cache=True)
def _buffers(dims, B):
    """Per-layer activations and pre-activations, plus two delta scratch arrays."""
    A = List()
    Z = List()
    dmax = 0
    for j in range(dims.shape[0]):
        A.append(np.zeros((B, dims[j])))
        Z.append(np.zeros((B, dims[j])))
        if dims[j] > dmax:
            dmax = dims[j]
    return A, Z, np.zeros((B, dmax)), np.zeros((B, dmax))


@njit(cache=True, fastmath=FASTMATH)
def _forward_rows(params, dims, acts, X, rows, A, Z, poff):
    B = rows.shape[0]
    A0 = A[0]
    for n in range(B):
        r = rows[n]
        for i in range(dims[0]):
            A0[n, i] = X[r, i]
    for l in range(dims.shape[0] - 1):
        din = dims[l]
        dout = dims[l + 1]
        p = poff[l]
        W = params[p:p + din * dout].reshape((dout, din))
        b = params[p + din * dout:p + din * dout + dout]
        Ain = A[l]
        Aout = A[l + 1]
        Zl = Z[l + 1]
        relu = acts[l] == 1
        for n in range(B):
            for o in range(dout):
                s = 0.0
                for i in range(din):
                    s += W[o, i] * Ain[n, i]
                s += b[o]
                Zl[n, o] = s
                if relu and not s > 0.0:
                    Aout[n, o] = 0.0
                else:
                    Aout[n, o] = s


@njit(cache=True)
def _output_delta(Y, C, n, r, kind, ti, tr, gamma, alphas, floor, D, inv):
    """Write dL/d(output) for sample ``n`` into D[n, :C]; return its loss."""
    if kind == 2:
        s = 0.0
        for k in range(C):
            e = Y[n, k] - tr[r, k]
            s += e * e
            D[n, k] = 2.0 * e * inv
        return s
    m = Y[n, 0]
    for k in range(1, C):
        if Y[n, k] > m:
            m = Y[n, k]
    tot = 0.0
    for k in range(C):
        e = math.exp(Y[n, k] - m)
        D[n, k] = e
        tot += e
    for k in range(C):
        D[n, k] = D[n, k] / tot
    t = ti[r]
    pt = D[n, t]
    if kind == 0:
        a = 1.0
        gam = 0.0
    else:
        a = alphas[t]
        gam = gamma
    if pt < floor:
        for k in range(C):
            D[n, k] = 0.0
        return -a * (1.0 - floor) ** gam * math.log(floor)
    q = 1.0 - pt
    lp = math.log(pt)
    qg = q ** gam
    loss = -a * qg * lp
    g = -a * qg
    if gam > 0.0 and q > 0.0:
        g += a * gam * q ** (gam - 1.0) * pt * lp
    for k in range(C):
        hot = 1.0 if k == t else 0.0
        D[n, k] = g * (hot - D[n, k]) * inv
    return loss


@njit(cache=True, fastmath=FASTMATH)
def _loss_grad_rows(params, dims, acts, X, ti, tr, rows, kind, gamma, alphas,
                    floor, grad, poff, A, Z, D, Dp):
    B = rows.shape[0]
    _forward_rows(params, dims, acts, X, rows, A, Z, poff)
    n_layers = dims.shape[0] - 1
    C = dims[n_layers]
    Y = A[n_layers]
    inv = 1.0 / B
    total = 0.0
    for n in range(B):
        total += _output_delta(Y, C, n, rows[n], kind, ti, tr, gamma, alphas,
                               floor, D, inv)
    for j in range(grad.shape[0]):
        grad[j] = 0.0
    for l in range(n_layers - 1, -1, -1):
        din = dims[l]
        dout = dims[l + 1]
        p = poff[l]
        W = params[p:p + din * dout].reshape((dout, din))
        gW = grad[p:p + din * dout].reshape((dout, din))
        gb = grad[p + din * dout:p + din * dout + dout]
        Ain = A[l]
        if acts[l] == 1:
            Zl = Z[l + 1]
            for n in range(B):
                for o in range(dout):
                    if not Zl[n, o] > 0.0:
                        D[n, o] = 0.0
        for n in range(B):
            for o in range(dout):
                d = D[n, o]
                gb[o] += d
                for i in range(din):
                    gW[o, i] += d * Ain[n, i]
        if l > 0:
            for n in range(B):
                for i in range(din):
                    Dp[n, i] = 0.0
                for o in range(dout):
                    d = D[n, o]
                    for i in range(din):
                        Dp[n, i] += d * W[o, i]
            D, Dp = Dp, D
    return total * inv


@njit(cache=True)
def _bad_layer(grad, poff, loss):
    n_layers = poff.shape[0] - 1
    for l in range(n_layers - 1, -1, -1):
        for j in range(poff[l], poff[l + 1]):
            if not np.isfinite(grad[j]):
                return l
    if not np.isfinite(loss):
        return n_layers - 1
    return -1


@njit(cache=True)
def predict(params, dims, acts, X):
    poff = _offsets(dims)
    n = X.shape[0]
    A, Z, _, _ = _buffers(dims, n)
    _forward_rows(params, dims, acts, X, np.arange(n), A, Z, poff)
    return A[dims.shape[0] - 1].copy()


@njit(cache=True)
def loss_and_grad(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor):
    poff = _offsets(dims)
    n = X.shape[0]
    A, Z, D, Dp = _buffers(dims, n)
    grad = np.zeros(params.shape[0])
    loss = _loss_grad_rows(params, dims, acts, X, ti, tr, np.arange(n), kind,
                           gamma, alphas, floor, grad, poff, A, Z, D, Dp)
    return loss, grad, _bad_layer(grad, poff, loss)


@njit(cache=True)
def mean_loss(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor):
    loss, _, _ = loss_and_grad(params, dims, acts, X, ti, tr, kind, gamma,
                               alphas, floor)
    return loss


@njit(cache=True)
def sgd_epoch(params, dims, acts, X, ti, tr, order, batch_size, lr, kind,
              gamma, alphas, floor):
    """One pass of minibatch SGD over ``order``; updates ``params`` in place.

    Returns (sample-weighted mean of pre-update batch losses, bad layer or -1).
    """
    poff = _offsets(dims)
    n = order.shape[0]
    B = min(batch_size, n)
    A, Z, D, Dp = _buffers(dims, B)
    grad = np.zeros(params.shape[0])
    total = 0.0
    start = 0
    while start < n:
        stop = min(start + batch_size, n)
        rows = order[start:stop]
        loss = _loss_grad_rows(params, dims, acts, X, ti, tr, rows, kind,
                               gamma, alphas, floor, grad, poff, A, Z, D, Dp)
        bad = _bad_layer(grad, poff, loss)
        if bad >= 0:
            return math.nan, bad
        for j in range(params.shape[0]):
            params[j] -= lr * grad[j]
        total += loss * (stop - start)
        start = stop
    return total / n, -1
