"""Hot numeric kernels: numba-compiled loops with pure-numpy fallbacks.

Two inner loops dominate runtime and get dual implementations:

* ``train_epoch``: one epoch of Adam over minibatches (sequential steps on
  small matrices, where per-step numpy dispatch overhead dominates; numba
  wins 3-7x there).
* ``mahalanobis_quadforms``: per-row, per-class quadratic forms through
  the covariance factor. BLAS trsm wins here, so the dispatcher always
  uses the numpy path and keeps the compiled variant for benchmarking.

The numba train path is used when numba imports and the environment
variable ``OE_FORGE_NO_NUMBA`` is unset (or "0"); otherwise the numpy
fallback runs. ``benchmarks/benchmark_kernels.py`` compares the pairs.
The paths agree to floating-point roundoff, not bit-for-bit; the active
path is fixed for the life of the process.

``OE_FORGE_THREADS`` caps numba's thread pool. Current kernels are
single-threaded regardless, so this is a safety cap only.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import solve_triangular

NUMBA_ENV = "OE_FORGE_NO_NUMBA"
THREADS_ENV = "OE_FORGE_THREADS"


def _resolve_numba() -> bool:
    if os.environ.get(NUMBA_ENV, "").strip() not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ACTIVE = _resolve_numba()


# ---------------------------------------------------------------- training

def _train_epoch_vec(W, b, mW, vW, mb, vb, step0, X_id, y_id, order, X_oe,
                     lam, lr, beta1, beta2, eps, batch_id, batch_oe):
    """Vectorized-numpy epoch: cross-entropy + uniformity penalty, Adam.

    Mutates W/b and the moment buffers in place. ``X_oe`` holds
    ``steps * batch_oe`` pre-noised outlier rows (empty to disable the
    penalty term). Returns (ce_sum, oe_sum, steps_done, bad_step) where
    ce_sum/oe_sum are summed per-sample losses and bad_step is the step
    index of the first non-finite loss, or -1.
    """
    n_id = order.shape[0]
    steps = (n_id + batch_id - 1) // batch_id
    has_oe = X_oe.shape[0] > 0
    C = W.shape[0]
    ce_sum = 0.0
    oe_sum = 0.0
    for s in range(steps):
        ids = order[s * batch_id : min((s + 1) * batch_id, n_id)]
        Xb = X_id[ids]
        yb = y_id[ids]
        B = Xb.shape[0]
        Z = Xb @ W.T + b
        m = Z.max(axis=1, keepdims=True)
        E = np.exp(Z - m)
        S = E.sum(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(S[:, 0])
        rows = np.arange(B)
        ce_b = float(np.sum(lse - Z[rows, yb]))
        G = E / S
        G[rows, yb] -= 1.0
        G /= B
        gW = G.T @ Xb
        gb = G.sum(axis=0)
        loss = ce_b / B
        oe_b = 0.0
        if has_oe:
            Xo = X_oe[s * batch_oe : (s + 1) * batch_oe]
            Zo = Xo @ W.T + b
            mo = Zo.max(axis=1, keepdims=True)
            Eo = np.exp(Zo - mo)
            So = Eo.sum(axis=1, keepdims=True)
            lseo = mo[:, 0] + np.log(So[:, 0])
            oe_b = float(np.sum(lseo - Zo.mean(axis=1)))
            Go = (Eo / So - 1.0 / C) * (lam / batch_oe)
            gW += Go.T @ Xo
            gb += Go.sum(axis=0)
            loss += lam * oe_b / batch_oe
        if not np.isfinite(loss):
            return ce_sum, oe_sum, s, s
        ce_sum += ce_b
        oe_sum += oe_b
        t = step0 + s + 1
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        mW *= beta1
        mW += (1.0 - beta1) * gW
        vW *= beta2
        vW += (1.0 - beta2) * (gW * gW)
        mb *= beta1
        mb += (1.0 - beta1) * gb
        vb *= beta2
        vb += (1.0 - beta2) * (gb * gb)
        W -= lr * (mW / bc1) / (np.sqrt(vW / bc2) + eps)
        b -= lr * (mb / bc1) / (np.sqrt(vb / bc2) + eps)
    return ce_sum, oe_sum, steps, -1


def _train_epoch_loops(W, b, mW, vW, mb, vb, step0, X_id, y_id, order, X_oe,
                       lam, lr, beta1, beta2, eps, batch_id, batch_oe):
    # Loop form of _train_epoch_vec; same contract. Kept branch-light so
    # numba compiles it to tight machine code.
    n_id = order.shape[0]
    steps = (n_id + batch_id - 1) // batch_id
    has_oe = X_oe.shape[0] > 0
    C = W.shape[0]
    dim = W.shape[1]
    ce_sum = 0.0
    oe_sum = 0.0
    gW = np.empty((C, dim))
    gb = np.empty(C)
    prow = np.empty(C)
    for s in range(steps):
        lo = s * batch_id
        hi = min(lo + batch_id, n_id)
        ids = order[lo:hi]
        Xb = X_id[ids]
        B = hi - lo
        Z = np.dot(Xb, W.T)
        gW[:, :] = 0.0
        gb[:] = 0.0
        ce_b = 0.0
        for i in range(B):
            mx = -np.inf
            for j in range(C):
                Z[i, j] += b[j]
                if Z[i, j] > mx:
                    mx = Z[i, j]
            ssum = 0.0
            for j in range(C):
                prow[j] = np.exp(Z[i, j] - mx)
                ssum += prow[j]
            lse = mx + np.log(ssum)
            y = y_id[ids[i]]
            ce_b += lse - Z[i, y]
            for j in range(C):
                g = prow[j] / ssum
                if j == y:
                    g -= 1.0
                g /= B
                gb[j] += g
                for k in range(dim):
                    gW[j, k] += g * Xb[i, k]
        loss = ce_b / B
        oe_b = 0.0
        if has_oe:
            Xo = X_oe[s * batch_oe : (s + 1) * batch_oe]
            Zo = np.dot(Xo, W.T)
            coef = lam / batch_oe
            for i in range(batch_oe):
                mx = -np.inf
                zmean = 0.0
                for j in range(C):
                    Zo[i, j] += b[j]
                    zmean += Zo[i, j]
                    if Zo[i, j] > mx:
                        mx = Zo[i, j]
                zmean /= C
                ssum = 0.0
                for j in range(C):
                    prow[j] = np.exp(Zo[i, j] - mx)
                    ssum += prow[j]
                oe_b += mx + np.log(ssum) - zmean
                for j in range(C):
                    g = (prow[j] / ssum - 1.0 / C) * coef
                    gb[j] += g
                    for k in range(dim):
                        gW[j, k] += g * Xo[i, k]
            loss += lam * oe_b / batch_oe
        if not np.isfinite(loss):
            return ce_sum, oe_sum, s, s
        ce_sum += ce_b
        oe_sum += oe_b
        t = step0 + s + 1
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for j in range(C):
            for k in range(dim):
                mW[j, k] = beta1 * mW[j, k] + (1.0 - beta1) * gW[j, k]
                vW[j, k] = beta2 * vW[j, k] + (1.0 - beta2) * gW[j, k] * gW[j, k]
                W[j, k] -= lr * (mW[j, k] / bc1) / (np.sqrt(vW[j, k] / bc2) + eps)
            mb[j] = beta1 * mb[j] + (1.0 - beta1) * gb[j]
            vb[j] = beta2 * vb[j] + (1.0 - beta2) * gb[j] * gb[j]
            b[j] -= lr * (mb[j] / bc1) / (np.sqrt(vb[j] / bc2) + eps)
    return ce_sum, oe_sum, steps, -1


# ------------------------------------------------------------- mahalanobis

def _quadforms_solve(X, means, L):
    """(n, C) matrix of (x - mu_c)' (L L')^{-1} (x - mu_c) via BLAS trsm."""
    n = X.shape[0]
    C = means.shape[0]
    out = np.empty((n, C))
    for c in range(C):
        Z = solve_triangular(L, (X - means[c]).T, lower=True, check_finite=False)
        out[:, c] = np.einsum("ij,ij->j", Z, Z)
    return out


def _quadforms_loops(X, means, L):
    # Forward substitution per (row, class); contract of _quadforms_solve.
    n, dim = X.shape
    C = means.shape[0]
    out = np.empty((n, C))
    z = np.empty(dim)
    for i in range(n):
        for c in range(C):
            q = 0.0
            for j in range(dim):
                acc = X[i, j] - means[c, j]
                for k in range(j):
                    acc -= L[j, k] * z[k]
                zj = acc / L[j, j]
                z[j] = zj
                q += zj * zj
            out[i, c] = q
    return out


train_epoch_numpy = _train_epoch_vec
mahalanobis_quadforms_numpy = _quadforms_solve

if NUMBA_ACTIVE:
    from numba import njit

    train_epoch_numba = njit(cache=True)(_train_epoch_loops)
    mahalanobis_quadforms_numba = njit(cache=True)(_quadforms_loops)
    train_epoch = train_epoch_numba

    threads = os.environ.get(THREADS_ENV, "").strip()
    if threads.isdigit() and int(threads) >= 1:
        import numba

        try:
            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        except ValueError:
            pass
else:
    train_epoch_numba = None
    mahalanobis_quadforms_numba = None
    train_epoch = train_epoch_numpy

# BLAS trsm beats the compiled forward substitution on every tested shape
# (see benchmarks/benchmark_kernels.py), so quadforms always take the
# numpy path; the numba variant stays available for comparison.
mahalanobis_quadforms = mahalanobis_quadforms_numpy


def active_backend() -> str:
    """Which implementation pair is live: "numba" or "numpy"."""
    return "numba" if NUMBA_ACTIVE else "numpy"
