"""Small Hamiltonian systems shared by the integrator tests and the acceptance suite."""

import numpy as np

from hamrom.integrators import IntegratorConfig, integrate, step


class Separable:
    """H = T(p) + V(q) given the two gradients and the energy."""

    separable = True

    def __init__(self, grad_q, grad_p, energy):
        self.grad_q, self.grad_p, self._energy = grad_q, grad_p, energy

    def grad(self, q, p):
        return self.grad_q(q), self.grad_p(p)

    def hamiltonian(self, q, p):
        return self._energy(q, p)


def oscillator():
    return Separable(lambda q: q, lambda p: p, lambda q, p: 0.5 * float(np.sum(q * q + p * p)))


def pendulum():
    return Separable(np.sin, lambda p: p, lambda q, p: float(0.5 * np.sum(p * p) - np.sum(np.cos(q))))


def one_step_jacobian(model, y, dt, scheme="sv_explicit", eps=1e-6):
    cfg = IntegratorConfig(dt, scheme)
    m = np.empty((y.size, y.size))
    for j in range(y.size):
        e = np.zeros_like(y)
        e[j] = eps
        m[:, j] = (step(y + e, cfg, model) - step(y - e, cfg, model)) / (2 * eps)
    return m


def symplecticity_defect(model, y, dt, scheme="sv_explicit"):
    m = one_step_jacobian(model, y, dt, scheme)
    k = y.size // 2
    j = np.block([[np.zeros((k, k)), np.eye(k)], [-np.eye(k), np.zeros((k, k))]])
    return float(np.max(np.abs(m.T @ j @ m - j)))


def convergence_ratio(model, y0, t_final=1.0, dt=0.01, scheme="sv_explicit"):
    """Error ratio between steps dt and dt/2 against a dt/100 reference."""

    def end(h):
        n = int(round(t_final / h))
        return integrate(y0, n, IntegratorConfig(h, scheme), model).states[-1]

    ref = end(dt / 100)
    e1 = np.max(np.abs(end(dt) - ref))
    e2 = np.max(np.abs(end(dt / 2) - ref))
    return float(e1 / e2)


def oscillator_energy_drift(n_steps=100_000, dt=0.01):
    """Max of |H(y_n) - H(y_0)| over the first and the second half of the run."""
    model = oscillator()
    states = integrate(np.array([1.0, 0.0]), n_steps, IntegratorConfig(dt), model).states
    dev = np.abs(0.5 * np.sum(states**2, axis=1) - 0.5)
    half = n_steps // 2
    return float(dev[1 : half + 1].max()), float(dev[half + 1 :].max())
