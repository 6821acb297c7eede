"""Compiled rollout drivers for the timing comparison.

One explicit and one implicit Störmer-Verlet loop are shared by every method;
only the gradient kernel and its argument tuple change.  Gradient kernels are
numba-compiled functions passed to the drivers as first-class arguments.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "sv_explicit_loop",
    "sv_implicit_loop",
    "wave_grad_q",
    "identity_grad",
    "psd_grad_q",
    "psd_grad_p",
    "hnn_grad",
    "hnn_args",
    "Timing",
    "time_rollout",
    "benchmark_methods",
]

_ACT = {"tanh": 0, "elu": 1, "swish": 2, "none": 3}


@numba.njit(cache=True)
def sv_explicit_loop(q, p, dt, n_steps, grad_q, grad_p, args):
    """Separable Störmer-Verlet; returns the final (q, p)."""
    q = q.copy()
    p = p.copy()
    h = q.dtype.type(0.5 * dt)
    d = q.dtype.type(dt)
    g = grad_q(q, args)
    for _ in range(n_steps):
        p -= h * g
        q += d * grad_p(p, args)
        g = grad_q(q, args)
        p -= h * g
    return q, p


@numba.njit(cache=True)
def sv_implicit_loop(q, p, dt, n_steps, grad, args, tol, max_iter):
    """General Störmer-Verlet with Picard iteration; returns (q, p, total iterations).

    ``grad(q, p, args)`` returns the pair of partial gradients.  Each stage
    accepts the last iterate at which the gradient was evaluated once the next
    Picard image is within ``tol`` of it, so the gradients needed afterwards are
    already at hand.  A negative iteration count signals non-convergence.
    """
    q = q.copy()
    p = p.copy()
    h = q.dtype.type(0.5 * dt)
    d = q.dtype.type(dt)
    iters = 0
    for _ in range(n_steps):
        ph = p
        ok = False
        for _k in range(max_iter):
            gq, v0 = grad(q, ph, args)
            nxt = p - h * gq
            iters += 1
            if np.max(np.abs(nxt - ph)) <= tol:
                ok = True
                break
            ph = nxt
        if not ok:
            return q, p, -1
        qn = q + d * v0
        ok = False
        for _k in range(max_iter):
            gq, gp = grad(qn, ph, args)
            nxt = q + h * (v0 + gp)
            iters += 1
            if np.max(np.abs(nxt - qn)) <= tol:
                ok = True
                break
            qn = nxt
        if not ok:
            return q, p, -1
        p = ph - h * gq
        q = qn
    return q, p, iters


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def wave_grad_q(u, args):
    """Full-order wave gradient; ``args = (mu_a, mu_b, mu_c, dx)`` (mu_b = mu_c = 0: linear)."""
    mu_a, mu_b, mu_c, dx = args
    n = u.shape[0]
    out = np.empty_like(u)
    inv = 1.0 / dx
    prev = 0.0
    # flux on the edge (n-1, 0) first
    x = (u[0] - u[n - 1]) * inv
    prev = x + mu_b * np.cos(mu_b * x) if mu_b != 0.0 else x
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        x = (u[j] - u[i]) * inv
        f = x + mu_b * np.cos(mu_b * x) if mu_b != 0.0 else x
        out[i] = mu_a * inv * (prev - f) + 30.0 * mu_c * u[i] * u[i]
        prev = f
    return out


@numba.njit(cache=True)
def identity_grad(p, args):
    return p


@numba.njit(cache=True)
def psd_grad_q(qbar, args):
    """Reduced gradient through the full dimension: ``Phi^T grad H(Phi qbar)``."""
    phi, phit, mu_a, mu_b, mu_c, dx = args
    u = phi @ qbar
    return phit @ wave_grad_q(u, (mu_a, mu_b, mu_c, dx))


@numba.njit(cache=True)
def psd_grad_p(pbar, args):
    phi, phit, mu_a, mu_b, mu_c, dx = args
    return phit @ (phi @ pbar)


@numba.njit(cache=True, inline="always")
def _act(x, code):
    if code == 0:
        return math.tanh(x)
    if code == 1:
        return x if x > 0 else math.expm1(x)
    if code == 2:
        return x / (1.0 + math.exp(-x))
    return x


@numba.njit(cache=True, inline="always")
def _act_d1(x, code):
    if code == 0:
        t = math.tanh(x)
        return 1.0 - t * t
    if code == 1:
        return 1.0 if x > 0 else math.exp(x)
    if code == 2:
        s = 1.0 / (1.0 + math.exp(-x))
        return s + x * s * (1.0 - s)
    return 1.0


@numba.njit(cache=True)
def hnn_grad(q, p, args):
    """Input gradient of the HNN at ``concat(q, p, mu)``.

    ``args = (ws, bs, mu, act_code, work)`` where ``work`` is a
    ``(2 * n_layers, max_width)`` scratch array; plain loops avoid the
    allocation and BLAS-call overhead that dominates at these widths.
    """
    ws, bs, mu, code, work = args
    k = q.shape[0]
    n_layers = len(ws)
    h = work[0]
    for i in range(k):
        h[i] = q[i]
        h[k + i] = p[i]
    for i in range(mu.shape[0]):
        h[2 * k + i] = mu[i]
    # forward: row l+1 of ``work`` holds activations, row n_layers + l the derivatives
    for l in range(n_layers - 1):
        w = ws[l]
        b = bs[l]
        src = work[l]
        dst = work[l + 1]
        der = work[n_layers + l]
        m = w.shape[1]
        for j in range(m):
            dst[j] = b[j]
        for i in range(w.shape[0]):
            hi = src[i]
            for j in range(m):
                dst[j] += hi * w[i, j]
        for j in range(m):
            a = dst[j]
            if code == 0:
                t = math.tanh(a)
                dst[j] = t
                der[j] = 1.0 - t * t
            else:
                dst[j] = _act(a, code)
                der[j] = _act_d1(a, code)
    # backward chain, reusing the activation rows as buffers
    w_last = ws[n_layers - 1]
    delta = work[n_layers - 1]
    der = work[2 * n_layers - 2]
    for i in range(w_last.shape[0]):
        delta[i] = w_last[i, 0] * der[i]
    for l in range(n_layers - 2, -1, -1):
        w = ws[l]
        out = work[l]
        for i in range(w.shape[0]):
            acc = 0.0
            for j in range(w.shape[1]):
                acc += w[i, j] * delta[j]
            out[i] = acc
        if l > 0:
            der = work[n_layers + l - 1]
            for i in range(w.shape[0]):
                out[i] *= der[i]
        delta = out
    gq = np.empty_like(q)
    gp = np.empty_like(p)
    for i in range(k):
        gq[i] = delta[i]
        gp[i] = delta[k + i]
    return gq, gp


# ---------------------------------------------------------------- timing


@dataclass
class Timing:
    name: str
    mean: float
    std: float
    repetitions: int
    times: list[float]

    def as_row(self) -> dict:
        return {"method": self.name, "mean_s": self.mean, "std_s": self.std, "repetitions": self.repetitions}


def time_rollout(name: str, fn, repetitions: int = 5, warmup: int = 1) -> Timing:
    """Run ``fn()`` ``warmup`` times untimed (compilation), then ``repetitions`` timed runs."""
    if repetitions < 1:
        raise ValueError("at least one repetition is required")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    arr = np.array(times)
    return Timing(name, float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0, repetitions, times)


def _wave_args(params, dx, dtype):
    nl = params.family == "nonlinear"
    vals = (params.mu_a, params.mu_b if nl else 0.0, params.mu_c if nl else 0.0, dx)
    return tuple(dtype(v) for v in vals)


def benchmark_methods(fom, y0, dt: float, n_steps: int, basis=None, net=None, mu_std=None,
                      precision: str = "f64", repetitions: int = 5, fp_tol: float | None = None) -> list[Timing]:
    """Time FOM, PSD and AE-HNN latent rollouts with the shared drivers.

    ``precision`` switches the rollout arrays (not the stored data) to float32.
    The Picard tolerance defaults to 1e-10 in f64 and 1e-5 in f32.
    """
    if precision not in ("f32", "f64"):
        raise ValueError("precision must be 'f32' or 'f64'")
    dtype = np.float32 if precision == "f32" else np.float64
    tol = fp_tol if fp_tol is not None else (1e-5 if precision == "f32" else 1e-10)
    n = fom.n
    wargs = _wave_args(fom.mu, fom.dx, dtype)
    q0, p0 = y0[:n].astype(dtype), y0[n:].astype(dtype)
    out = [time_rollout("fom", lambda: sv_explicit_loop(q0, p0, dt, n_steps, wave_grad_q, identity_grad, wargs), repetitions)]
    if basis is not None:
        phi = np.ascontiguousarray(basis.phi.astype(dtype))
        phit = np.ascontiguousarray(phi.T)
        pargs = (phi, phit) + wargs
        qb, pb = phit @ q0, phit @ p0
        out.append(time_rollout("psd", lambda: sv_explicit_loop(qb, pb, dt, n_steps, psd_grad_q, psd_grad_p, pargs), repetitions))
    if net is not None:
        hargs = hnn_args(net, mu_std, dtype)
        z0 = net.encode(y0).astype(dtype)
        k = z0.size // 2
        zq, zp = z0[:k].copy(), z0[k:].copy()

        def run():
            res = sv_implicit_loop(zq, zp, dt, n_steps, hnn_grad, hargs, tol, 100)
            if res[2] < 0:
                raise FloatingPointError("latent fixed-point iteration did not converge")
            return res

        out.append(time_rollout("ae_hnn", run, repetitions))
    return out


def hnn_args(net, mu_std, dtype=np.float64):
    n_layers = len(net.dyn.hidden_sizes) + 1
    p = net.params.arrays
    ws = tuple(np.ascontiguousarray(p[f"hnn.dense{i}.w"].astype(dtype)) for i in range(n_layers))
    bs = tuple(np.ascontiguousarray(p[f"hnn.dense{i}.b"].astype(dtype)) for i in range(n_layers))
    width = max(net.dyn.input_dim, *net.dyn.hidden_sizes)
    work = np.zeros((2 * n_layers, width), dtype=dtype)
    return (ws, bs, np.asarray(mu_std, dtype=dtype).ravel(), _ACT[net.dyn.activation], work)
