"""Compiled inner loop for network training.

Semantics mirror neural._run_epochs_numpy exactly: per-batch summed
gradients, one Adam update per batch, full-dataset loss after every
epoch. Everything operates on the flat parameter vector with the layout
produced by neural._flat_layout. A 50k-epoch run touches the parameter
vector a million times, which is why this lives behind numba.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _forward(theta, dims, woff, boff, aoff, acts):
    """Fill the activation buffer; acts[:dims[0]] must hold the input."""
    L = dims.size - 1
    for l in range(L):
        rows = dims[l + 1]
        cols = dims[l]
        wo = woff[l]
        bo = boff[l]
        ain = aoff[l]
        aout = aoff[l + 1]
        for i in range(rows):
            s = theta[bo + i]
            base = wo + i * cols
            for j in range(cols):
                s += theta[base + j] * acts[ain + j]
            if l < L - 1 and s < 0.0:
                s = 0.0
            acts[aout + i] = s


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _law_jacobian(theta, dims, woff, boff, aoff, acts, qoff, qbuf, jac):
    """Masked weight product: network Jacobian at the current activations."""
    L = dims.size - 1
    n = dims[0]
    m = dims[L]
    # Q_1 = D_0 W_0
    q1 = qoff[1]
    for i in range(dims[1]):
        base = woff[0] + i * n
        if acts[aoff[1] + i] > 0.0:
            for col in range(n):
                qbuf[q1 + i, col] = theta[base + col]
        else:
            for col in range(n):
                qbuf[q1 + i, col] = 0.0
    # Q_{l+1} = D_l W_l Q_l
    for l in range(1, L - 1):
        rows = dims[l + 1]
        cols = dims[l]
        src = qoff[l]
        dst = qoff[l + 1]
        for i in range(rows):
            if acts[aoff[l + 1] + i] > 0.0:
                base = woff[l] + i * cols
                for col in range(n):
                    s = 0.0
                    for j in range(cols):
                        s += theta[base + j] * qbuf[src + j, col]
                    qbuf[dst + i, col] = s
            else:
                for col in range(n):
                    qbuf[dst + i, col] = 0.0
    # J = W_{L-1} Q_{L-1}
    top = dims[L - 1]
    src = qoff[L - 1]
    for a in range(m):
        base = woff[L - 1] + a * top
        for col in range(n):
            s = 0.0
            for j in range(top):
                s += theta[base + j] * qbuf[src + j, col]
            jac[a, col] = s


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _law_jacobian_left(theta, dims, woff, boff, aoff, acts, ra, rb, jac):
    """Jacobian by left-to-right masked products; cheaper than the Q-chain
    whenever the output is narrower than the input, and skips dead rows."""
    L = dims.size - 1
    n = dims[0]
    m = dims[L]
    top = dims[L - 1]
    for a in range(m):
        base = woff[L - 1] + a * top
        for j in range(top):
            ra[a, j] = theta[base + j]
    for l in range(L - 2, -1, -1):
        rows = dims[l + 1]
        cols = dims[l]
        for a in range(m):
            for j in range(cols):
                rb[a, j] = 0.0
            for i in range(rows):
                if acts[aoff[l + 1] + i] > 0.0:
                    r = ra[a, i]
                    if r != 0.0:
                        base = woff[l] + i * cols
                        for j in range(cols):
                            rb[a, j] += r * theta[base + j]
        for a in range(m):
            for j in range(cols):
                ra[a, j] = rb[a, j]
    for a in range(m):
        for col in range(n):
            jac[a, col] = ra[a, col]


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _dataset_loss(theta, dims, woff, boff, aoff, X, U, UG, gamma, acts, ra, rb, jac):
    L = dims.size - 1
    n = dims[0]
    m = dims[L]
    out_off = aoff[L]
    total = 0.0
    for idx in range(X.shape[0]):
        for j in range(n):
            acts[j] = X[idx, j]
        _forward(theta, dims, woff, boff, aoff, acts)
        for a in range(m):
            r = acts[out_off + a] - U[idx, a]
            total += r * r
        if gamma > 0.0:
            _law_jacobian_left(theta, dims, woff, boff, aoff, acts, ra, rb, jac)
            for a in range(m):
                for col in range(n):
                    r = jac[a, col] - UG[idx, a, col]
                    total += gamma * r * r
    return total


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _accum_sample_grad(theta, dims, woff, boff, aoff, qoff, x, u, ug, gamma,
                       gflat, acts, qbuf, jac, err, tbuf, delta, delta2, ra, rb):
    L = dims.size - 1
    n = dims[0]
    m = dims[L]
    for j in range(n):
        acts[j] = x[j]
    _forward(theta, dims, woff, boff, aoff, acts)

    if gamma > 0.0:
        _law_jacobian(theta, dims, woff, boff, aoff, acts, qoff, qbuf, jac)
        for a in range(m):
            for col in range(n):
                err[a, col] = jac[a, col] - ug[a, col]
        for a in range(m):
            for i in range(m):
                ra[a, i] = 1.0 if a == i else 0.0

    out_off = aoff[L]
    for a in range(m):
        delta[a] = 2.0 * (acts[out_off + a] - u[a])

    for l in range(L - 1, -1, -1):
        rows = dims[l + 1]
        cols = dims[l]
        wo = woff[l]
        bo = boff[l]
        ain = aoff[l]
        for i in range(rows):
            di = delta[i]
            gflat[bo + i] += di
            base = wo + i * cols
            for j in range(cols):
                gflat[base + j] += di * acts[ain + j]
        if gamma > 0.0:
            # gW_l += 2 gamma R_l' E Q_l'
            for i in range(rows):
                for col in range(n):
                    s = 0.0
                    for a in range(m):
                        s += ra[a, i] * err[a, col]
                    tbuf[i, col] = s
            if l == 0:
                for i in range(rows):
                    base = wo + i * cols
                    for j in range(cols):
                        gflat[base + j] += 2.0 * gamma * tbuf[i, j]
            else:
                src = qoff[l]
                for i in range(rows):
                    base = wo + i * cols
                    for j in range(cols):
                        s = 0.0
                        for col in range(n):
                            s += tbuf[i, col] * qbuf[src + j, col]
                        gflat[base + j] += 2.0 * gamma * s
        if l > 0:
            for j in range(cols):
                if acts[ain + j] > 0.0:
                    s = 0.0
                    for i in range(rows):
                        s += theta[wo + i * cols + j] * delta[i]
                    delta2[j] = s
                else:
                    delta2[j] = 0.0
            for j in range(cols):
                delta[j] = delta2[j]
            if gamma > 0.0:
                # R_{l-1} = R_l W_l D_{l-1}
                for a in range(m):
                    for j in range(cols):
                        if acts[ain + j] > 0.0:
                            s = 0.0
                            for i in range(rows):
                                s += ra[a, i] * theta[wo + i * cols + j]
                            rb[a, j] = s
                        else:
                            rb[a, j] = 0.0
                for a in range(m):
                    for j in range(cols):
                        ra[a, j] = rb[a, j]


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def _run(theta, mom, vel, t_adam, dims, woff, boff, X, U, UG, perms,
         batch_size, gamma, lr, beta1, beta2, eps, target, losses):
    L = dims.size - 1
    n = dims[0]
    m = dims[L]
    ntr = X.shape[0]
    npar = theta.size
    maxw = 0
    for l in range(dims.size):
        if dims[l] > maxw:
            maxw = dims[l]

    aoff = np.zeros(L + 1, dtype=np.int64)
    for l in range(1, L + 1):
        aoff[l] = aoff[l - 1] + dims[l - 1]
    acts = np.zeros(aoff[L] + dims[L])

    qoff = np.zeros(L, dtype=np.int64)
    qrows = 0
    for l in range(1, L):
        qoff[l] = qrows
        qrows += dims[l]
    qbuf = np.zeros((max(qrows, 1), n))
    jac = np.zeros((m, n))
    err = np.zeros((m, n))
    tbuf = np.zeros((maxw, n))
    delta = np.zeros(maxw)
    delta2 = np.zeros(maxw)
    ra = np.zeros((m, maxw))
    rb = np.zeros((m, maxw))
    gflat = np.zeros(npar)

    status = 0
    done = 0
    for ep in range(perms.shape[0]):
        perm = perms[ep]
        lo = 0
        while lo < ntr:
            hi = lo + batch_size
            if hi > ntr:
                hi = ntr
            for i in range(npar):
                gflat[i] = 0.0
            for si in range(lo, hi):
                idx = perm[si]
                _accum_sample_grad(
                    theta, dims, woff, boff, aoff, qoff,
                    X[idx], U[idx], UG[idx], gamma,
                    gflat, acts, qbuf, jac, err, tbuf, delta, delta2, ra, rb,
                )
            t_adam += 1
            bc1 = 1.0 - beta1 ** t_adam
            bc2 = 1.0 - beta2 ** t_adam
            for i in range(npar):
                g = gflat[i]
                mom[i] = beta1 * mom[i] + (1.0 - beta1) * g
                vel[i] = beta2 * vel[i] + (1.0 - beta2) * g * g
                theta[i] -= lr * (mom[i] / bc1) / (np.sqrt(vel[i] / bc2) + eps)
            lo = hi
        total = _dataset_loss(theta, dims, woff, boff, aoff, X, U, UG, gamma, acts, ra, rb, jac)
        losses[ep] = total
        done = ep + 1
        if not np.isfinite(total):
            status = 2
            break
        if total <= target:
            status = 1
            break
    return done, t_adam, status


def run_epochs(theta, mom, vel, t_adam, arch_meta, X, U, UG, perms,
               batch_size, gamma, lr, beta1, beta2, eps, target, losses):
    """Adapter matching the signature of neural._run_epochs_numpy."""
    dims, woff, boff = arch_meta
    done, t_new, status = _run(
        theta, mom, vel, np.int64(t_adam), dims, woff, boff,
        np.ascontiguousarray(X), np.ascontiguousarray(U), np.ascontiguousarray(UG),
        np.ascontiguousarray(perms, dtype=np.int64),
        np.int64(batch_size), float(gamma), float(lr),
        float(beta1), float(beta2), float(eps), float(target), losses,
    )
    return int(done), int(t_new), int(status)
