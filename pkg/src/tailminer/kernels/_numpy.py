"""Vectorized numpy kernels; same contract as the numba ones."""

from __future__ import annotations

import math

import numpy as np


def _unpack(params, dims):
    Ws, bs = [], []
    p = 0
    for din, dout in zip(dims[:-1], dims[1:]):
        din, dout = int(din), int(dout)
        Ws.append(params[p:p + din * dout].reshape(dout, din))
        p += din * dout
        bs.append(params[p:p + dout])
        p += dout
    return Ws, bs


def _forward(Ws, bs, acts, X):
    As, Zs = [X], []
    for W, b, act in zip(Ws, bs, acts):
        z = As[-1] @ W.T + b
        Zs.append(z)
        As.append(np.where(z > 0.0, z, 0.0) if act == 1 else z)
    return As, Zs


def _output_delta(out, ti, tr, kind, gamma, alphas, floor):
    B = out.shape[0]
    if kind == 2:
        e = out - tr
        return (e * e).sum(axis=1), 2.0 * e / B
    shifted = out - out.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    P = ex / ex.sum(axis=1, keepdims=True)
    idx = np.arange(B)
    pt = P[idx, ti]
    clamped = pt < floor
    p = np.where(clamped, floor, pt)
    if kind == 0:
        a = np.ones(B)
        gam = 0.0
    else:
        a = alphas[ti]
        gam = float(gamma)
    q = 1.0 - p
    lp = np.log(p)
    qg = q ** gam
    losses = -a * qg * lp
    g = -a * qg
    if gam > 0.0:
        live = q > 0.0
        qs = np.where(live, q, 1.0)
        g = g + np.where(live, a * gam * qs ** (gam - 1.0) * p * lp, 0.0)
    hot = np.zeros_like(P)
    hot[idx, ti] = 1.0
    D = g[:, None] * (hot - P)
    D[clamped] = 0.0
    return losses, D / B


def _loss_grad(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor):
    Ws, bs = _unpack(params, dims)
    As, Zs = _forward(Ws, bs, acts, X)
    losses, D = _output_delta(As[-1], ti, tr, kind, gamma, alphas, floor)
    gW = [None] * len(Ws)
    gb = [None] * len(Ws)
    for l in range(len(Ws) - 1, -1, -1):
        if acts[l] == 1:
            D = D * (Zs[l] > 0.0)
        gW[l] = D.T @ As[l]
        gb[l] = D.sum(axis=0)
        if l > 0:
            D = D @ Ws[l]
    parts = []
    for w, b in zip(gW, gb):
        parts.append(w.ravel())
        parts.append(b)
    grad = np.concatenate(parts) if parts else np.zeros(0)
    loss = float(losses.mean())
    return loss, grad, _bad_layer(gW, gb, loss)


def _bad_layer(gW, gb, loss):
    for l in range(len(gW) - 1, -1, -1):
        if not (np.isfinite(gW[l]).all() and np.isfinite(gb[l]).all()):
            return l
    if not math.isfinite(loss):
        return len(gW) - 1
    return -1


def predict(params, dims, acts, X):
    Ws, bs = _unpack(params, dims)
    As, _ = _forward(Ws, bs, acts, X)
    return np.ascontiguousarray(As[-1])


def loss_and_grad(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor):
    return _loss_grad(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor)


def mean_loss(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor):
    return _loss_grad(params, dims, acts, X, ti, tr, kind, gamma, alphas, floor)[0]


def sgd_epoch(params, dims, acts, X, ti, tr, order, batch_size, lr, kind,
              gamma, alphas, floor):
    n = order.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        rows = order[start:start + batch_size]
        Xb = X[rows]
        tib = ti[rows] if kind != 2 else ti
        trb = tr[rows] if kind == 2 else tr
        loss, grad, bad = _loss_grad(params, dims, acts, Xb, tib, trb, kind,
                                     gamma, alphas, floor)
        if bad >= 0:
            return math.nan, bad
        params -= lr * grad
        total += loss * rows.shape[0]
    return total / n, -1
