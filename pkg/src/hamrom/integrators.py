"""Störmer-Verlet (explicit and fixed-point implicit), explicit midpoint RK2.

The step functions only use ``+``, ``-`` and scalar ``*`` on their state
arguments, so they run unchanged on numpy arrays and on autodiff tensors
(in which case every sub-step is recorded on the active tape).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .autodiff import Tensor

__all__ = [
    "IntegrationError",
    "IntegratorConfig",
    "Trajectory",
    "sv_explicit_step",
    "sv_implicit_step",
    "rk2_step",
    "step",
    "predict_s",
    "integrate",
    "SCHEMES",
]

SCHEMES = ("sv_explicit", "sv_implicit", "rk2")


class IntegrationError(RuntimeError):
    """Fixed-point iteration failed to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: str = "sv_explicit"
    fp_tol: float = 1e-10
    fp_max_iter: int = 100

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.fp_tol <= 0:
            raise ValueError("fp_tol must be positive")
        if self.fp_max_iter < 1:
            raise ValueError("fp_max_iter must be at least 1")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, 2N)
    mu: object = None

    @property
    def q(self) -> np.ndarray:
        return self.states[:, : self.states.shape[1] // 2]

    @property
    def p(self) -> np.ndarray:
        return self.states[:, self.states.shape[1] // 2 :]

    def __len__(self):
        return len(self.times)


class HamiltonianModel(Protocol):
    separable: bool

    def grad(self, q, p): ...


def _val(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _maxdiff(a, b) -> float:
    return float(np.max(np.abs(_val(a) - _val(b)))) if np.size(_val(a)) else 0.0


def sv_explicit_step(q, p, dt: float, grad_h1: Callable, grad_h2: Callable):
    """One Störmer-Verlet step for a separable Hamiltonian H1(q) + H2(p)."""
    p_half = p - (0.5 * dt) * grad_h1(q)
    q_new = q + dt * grad_h2(p_half)
    p_new = p_half - (0.5 * dt) * grad_h1(q_new)
    return q_new, p_new


def sv_implicit_step(q, p, dt: float, grad_q: Callable, grad_p: Callable, cfg: IntegratorConfig | None = None, stats: dict | None = None):
    """One Störmer-Verlet step for a general Hamiltonian.

    ``grad_q(q, p)`` and ``grad_p(q, p)`` return the partial gradients.  The
    two implicit stages are solved by Picard iteration, stopping when two
    successive iterates differ by at most ``cfg.fp_tol`` in max-norm.
    ``stats``, if given, accumulates iteration counts per stage.
    """
    cfg = cfg or IntegratorConfig(dt=abs(dt) or 1.0, scheme="sv_implicit")
    h = 0.5 * dt

    p_half = p
    for it in range(1, cfg.fp_max_iter + 1):
        nxt = p - h * grad_q(q, p_half)
        res = _maxdiff(nxt, p_half)
        p_half = nxt
        if res <= cfg.fp_tol:
            break
    else:
        raise IntegrationError("momentum half-step did not converge", res)
    if stats is not None:
        stats["stage1"] = stats.get("stage1", 0) + it

    v0 = grad_p(q, p_half)
    q_new = q + dt * v0
    for it in range(1, cfg.fp_max_iter + 1):
        nxt = q + h * (v0 + grad_p(q_new, p_half))
        res = _maxdiff(nxt, q_new)
        q_new = nxt
        if res <= cfg.fp_tol:
            break
    else:
        raise IntegrationError("position step did not converge", res)
    if stats is not None:
        stats["stage2"] = stats.get("stage2", 0) + it
        stats["steps"] = stats.get("steps", 0) + 1

    p_new = p_half - h * grad_q(q_new, p_half)
    return q_new, p_new


def rk2_step(y, dt: float, field: Callable):
    """Explicit midpoint rule."""
    k1 = field(y)
    return y + dt * field(y + (0.5 * dt) * k1)


def step(y, cfg: IntegratorConfig, model, dt: float | None = None, stats: dict | None = None):
    """Advance a flat state ``y = (q, p)`` by one step of ``cfg.scheme``.

    ``model`` exposes ``grad_q``/``grad_p`` (explicit scheme), ``grad(q, p)``
    (implicit scheme) or is a vector field ``y -> dy/dt`` (RK2).  For tensors
    with a leading batch axis the split happens along the last axis.
    """
    dt = cfg.dt if dt is None else dt
    if cfg.scheme == "rk2":
        return rk2_step(y, dt, model)
    n = _val(y).shape[-1] // 2
    q, p = y[..., :n], y[..., n:]
    if cfg.scheme == "sv_explicit":
        qn, pn = sv_explicit_step(q, p, dt, model.grad_q, model.grad_p)
    else:
        qn, pn = sv_implicit_step(
            q, p, dt, lambda a, b: model.grad(a, b)[0], lambda a, b: model.grad(a, b)[1], cfg, stats
        )
    return _join(qn, pn)


def _join(q, p):
    if isinstance(q, Tensor) or isinstance(p, Tensor):
        from .autodiff import concat

        return concat([q, p], axis=-1)
    return np.concatenate([q, p], axis=-1)


def predict_s(y0, s: int, cfg: IntegratorConfig, model, stats: dict | None = None):
    """Compose ``s`` steps of the configured scheme."""
    if s < 0:
        raise ValueError("s must be non-negative")
    y = y0
    for _ in range(s):
        y = step(y, cfg, model, stats=stats)
    return y


def integrate(y0, n_steps: int, cfg: IntegratorConfig, model, mu=None, stats: dict | None = None) -> Trajectory:
    """Run ``n_steps`` steps from ``y0`` and keep every state."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    y = np.asarray(y0, dtype=np.float64)
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    for k in range(1, n_steps + 1):
        y = step(y, cfg, model, stats=stats)
        states[k] = y
    times = np.arange(n_steps + 1) * cfg.dt
    return Trajectory(times, states, mu)
