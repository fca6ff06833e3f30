"""Hot numeric kernels: numba-jitted defaults with a pure-numpy fallback.

The backend is selected per call from the ``OTALIGN_BACKEND`` environment
variable: ``numba`` (default whenever numba imports), ``numpy``, or ``auto``.
Both paths run the same log-domain Sinkhorn iteration; the eigensolver
differs (cyclic Jacobi under numba, LAPACK ``eigh`` under numpy) but both
return the same subspace up to floating-point noise. ``otalign bench-kernels``
times the two paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but stay usable
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


_VALID_BACKENDS = ("auto", "numba", "numpy")


def backend() -> str:
    """Resolve the active kernel backend from OTALIGN_BACKEND."""
    want = os.environ.get("OTALIGN_BACKEND", "auto").strip().lower() or "auto"
    if want not in _VALID_BACKENDS:
        raise ValueError(
            f"OTALIGN_BACKEND must be one of {_VALID_BACKENDS}, got {want!r}"
        )
    if want == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("OTALIGN_BACKEND=numba but numba is not importable")
    if want == "auto":
        return "numba" if NUMBA_AVAILABLE else "numpy"
    return want


# ---------------------------------------------------------------------------
# Log-domain Sinkhorn potentials
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _sinkhorn_potentials_nb(cost, log_a, log_b, eps, max_iters, tol, check_every):
    n, m = cost.shape
    f = np.zeros(n)
    g = np.zeros(m)
    it = 0
    viol = np.inf
    while it < max_iters:
        it += 1
        for i in range(n):
            hi = -np.inf
            for j in range(m):
                v = (g[j] - cost[i, j]) / eps
                if v > hi:
                    hi = v
            s = 0.0
            for j in range(m):
                s += np.exp((g[j] - cost[i, j]) / eps - hi)
            f[i] = eps * (log_a[i] - (hi + np.log(s)))
        for j in range(m):
            hj = -np.inf
            for i in range(n):
                v = (f[i] - cost[i, j]) / eps
                if v > hj:
                    hj = v
            s = 0.0
            for i in range(n):
                s += np.exp((f[i] - cost[i, j]) / eps - hj)
            g[j] = eps * (log_b[j] - (hj + np.log(s)))
        if it % check_every == 0 or it == max_iters:
            viol = 0.0
            for i in range(n):
                row = 0.0
                for j in range(m):
                    row += np.exp((f[i] + g[j] - cost[i, j]) / eps)
                r = abs(row - np.exp(log_a[i]))
                if r > viol:
                    viol = r
            for j in range(m):
                col = 0.0
                for i in range(n):
                    col += np.exp((f[i] + g[j] - cost[i, j]) / eps)
                c = abs(col - np.exp(log_b[j]))
                if c > viol:
                    viol = c
            if viol < tol:
                break
    return f, g, it, viol


def _logsumexp(a, axis):
    hi = np.max(a, axis=axis, keepdims=True)
    out = hi + np.log(np.sum(np.exp(a - hi), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _sinkhorn_potentials_np(cost, log_a, log_b, eps, max_iters, tol, check_every):
    n, m = cost.shape
    f = np.zeros(n)
    g = np.zeros(m)
    a = np.exp(log_a)
    b = np.exp(log_b)
    it = 0
    viol = np.inf
    while it < max_iters:
        it += 1
        f = eps * (log_a - _logsumexp((g[None, :] - cost) / eps, axis=1))
        g = eps * (log_b - _logsumexp((f[:, None] - cost) / eps, axis=0))
        if it % check_every == 0 or it == max_iters:
            plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
            viol = max(
                np.abs(plan.sum(axis=1) - a).max(),
                np.abs(plan.sum(axis=0) - b).max(),
            )
            if viol < tol:
                break
    return f, g, it, viol


@njit(cache=True, nogil=True)
def _sinkhorn_batch_nb(costs, log_a, log_b, eps, max_iters, tol, check_every):
    k = costs.shape[0]
    n = costs.shape[1]
    m = costs.shape[2]
    fs = np.zeros((k, n))
    gs = np.zeros((k, m))
    iters = np.zeros(k, dtype=np.int64)
    viols = np.zeros(k)
    for idx in range(k):
        f, g, it, viol = _sinkhorn_potentials_nb(
            costs[idx], log_a, log_b[idx], eps, max_iters, tol, check_every
        )
        fs[idx] = f
        gs[idx] = g
        iters[idx] = it
        viols[idx] = viol
    return fs, gs, iters, viols


def _sinkhorn_batch_np(costs, log_a, log_b, eps, max_iters, tol, check_every):
    k, n, m = costs.shape
    fs = np.zeros((k, n))
    gs = np.zeros((k, m))
    a = np.exp(log_a)
    b = np.exp(log_b)
    iters = np.zeros(k, dtype=np.int64)
    viols = np.full(k, np.inf)
    active = np.ones(k, dtype=bool)
    it = 0
    while it < max_iters and active.any():
        it += 1
        ca = costs[active]
        upd = (gs[active][:, None, :] - ca) / eps
        fs[active] = eps * (log_a[None, :] - _logsumexp(upd, axis=2))
        upd = (fs[active][:, :, None] - ca) / eps
        gs[active] = eps * (log_b[active] - _logsumexp(upd, axis=1))
        iters[active] = it
        if it % check_every == 0 or it == max_iters:
            plan = np.exp((fs[active][:, :, None] + gs[active][:, None, :] - ca) / eps)
            v = np.maximum(
                np.abs(plan.sum(axis=2) - a[None, :]).max(axis=1),
                np.abs(plan.sum(axis=1) - b[active]).max(axis=1),
            )
            viols[active] = v
            done = np.zeros(k, dtype=bool)
            done[np.flatnonzero(active)[v < tol]] = True
            active &= ~done
    return fs, gs, iters, viols


def sinkhorn_potentials(cost, log_a, log_b, eps, max_iters, tol, check_every=10):
    """Dual potentials of entropy-regularized OT for one problem."""
    if backend() == "numba":
        return _sinkhorn_potentials_nb(
            np.ascontiguousarray(cost, dtype=np.float64),
            np.ascontiguousarray(log_a, dtype=np.float64),
            np.ascontiguousarray(log_b, dtype=np.float64),
            float(eps),
            int(max_iters),
            float(tol),
            int(check_every),
        )
    return _sinkhorn_potentials_np(
        np.asarray(cost, dtype=np.float64),
        np.asarray(log_a, dtype=np.float64),
        np.asarray(log_b, dtype=np.float64),
        float(eps),
        int(max_iters),
        float(tol),
        int(check_every),
    )


def sinkhorn_potentials_batch(costs, log_a, log_b, eps, max_iters, tol, check_every=10):
    """Potentials for a stack of problems sharing the row marginal.

    costs: (k, n, m), log_a: (n,), log_b: (k, m).
    """
    if backend() == "numba":
        return _sinkhorn_batch_nb(
            np.ascontiguousarray(costs, dtype=np.float64),
            np.ascontiguousarray(log_a, dtype=np.float64),
            np.ascontiguousarray(log_b, dtype=np.float64),
            float(eps),
            int(max_iters),
            float(tol),
            int(check_every),
        )
    return _sinkhorn_batch_np(
        np.asarray(costs, dtype=np.float64),
        np.asarray(log_a, dtype=np.float64),
        np.asarray(log_b, dtype=np.float64),
        float(eps),
        int(max_iters),
        float(tol),
        int(check_every),
    )


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition (cyclic Jacobi under numba, eigh under numpy)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _jacobi_eigh_nb(mat, max_sweeps, rel_tol):
    n = mat.shape[0]
    a = mat.copy()
    v = np.eye(n)
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = np.sqrt(norm)
    if norm == 0.0:
        return np.zeros(n), v, 0
    sweeps = 0
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        off = np.sqrt(off)
        if off <= rel_tol * norm:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[p, k] = a[k, p]
                        a[k, q] = s * akp + c * akq
                        a[q, k] = a[k, q]
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def symmetric_eigh_desc(mat):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    mat = np.asarray(mat, dtype=np.float64)
    if backend() == "numba":
        w, v, _ = _jacobi_eigh_nb(np.ascontiguousarray(mat), 60, 1e-14)
    else:
        w, v = np.linalg.eigh(mat)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def warmup():
    """Force-compile the numba kernels (no-op on the numpy backend)."""
    if backend() != "numba":
        return
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    la = np.log(np.array([0.5, 0.5]))
    _sinkhorn_potentials_nb(cost, la, la, 0.1, 5, 1e-9, 10)
    _sinkhorn_batch_nb(cost[None, :, :], la, la[None, :], 0.1, 5, 1e-9, 10)
    _jacobi_eigh_nb(np.eye(2), 5, 1e-14)
