"""Full-order Hamiltonian models from 1D periodic finite-difference discretizations.

Two families are provided:

* wave equations ``u_tt = mu_a d/dx w'(u_x, mu_b) - g'(u, mu_c)`` with
  ``w(x) = x^2/2 (+ sin(mu_b x))`` and ``g(u) = 10 mu_c u^3`` (nonlinear family);
* the shallow-water system in (perturbation, velocity potential) variables.

Hamiltonians here are the *computational* ones: their exact canonical
dynamics ``dq/dt = dH/dp, dp/dt = -dH/dq`` reproduce the discrete ODE systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FamilyError",
    "WaveParams",
    "SWParams",
    "Grid1D",
    "State",
    "wave_grid",
    "sw_grid",
    "bump",
    "initial_state",
    "wave_hamiltonian",
    "wave_grad",
    "dx_apply",
    "sw_hamiltonian",
    "sw_grad",
    "WaveFOM",
    "ShallowWaterFOM",
    "make_fom",
    "params_vector",
    "params_from_vector",
    "FAMILIES",
]

FAMILIES = ("linear", "nonlinear", "shallow_water")


class FamilyError(ValueError):
    """A function was applied to a state of the wrong model family."""


@dataclass(frozen=True)
class WaveParams:
    mu_a: float
    mu_b: float = 0.0
    mu_c: float = 0.0
    family: str = "linear"

    def __post_init__(self):
        if self.family not in ("linear", "nonlinear"):
            raise FamilyError(f"unknown wave family {self.family!r}")
        if self.family == "linear":
            object.__setattr__(self, "mu_b", 0.0)
            object.__setattr__(self, "mu_c", 0.0)
            if self.mu_a <= 0:
                raise ValueError("mu_a must be positive")
        elif min(self.mu_a, self.mu_b, self.mu_c) <= 0:
            raise ValueError("nonlinear wave parameters must be strictly positive")


@dataclass(frozen=True)
class SWParams:
    c: float
    sigma: float
    family: str = field(default="shallow_water", init=False)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class Grid1D:
    n: int
    lo: float
    hi: float

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.dx * np.arange(self.n)

    @property
    def domain(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    periodic = True


def wave_grid(n: int) -> Grid1D:
    """N nodes ``x_i = i / (N - 1)`` on [0, 1]."""
    return Grid1D(n, 0.0, 1.0)


def sw_grid(n: int) -> Grid1D:
    """N uniform nodes on [-1, 1], same spacing convention as the wave grid."""
    return Grid1D(n, -1.0, 1.0)


@dataclass
class State:
    q: np.ndarray
    p: np.ndarray
    mu: WaveParams | SWParams
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise ValueError(f"q and p must be equal-length vectors, got {self.q.shape} {self.p.shape}")

    @property
    def family(self) -> str:
        return self.mu.family

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])


def bump(r):
    """Compactly supported cubic bump: h(0) = 1, support [0, 2]."""
    r = np.asarray(r, dtype=np.float64)
    inner = (1.0 - 1.5 * r**2 + 0.75 * r**3) * ((r >= 0) & (r <= 1))
    outer = 0.25 * (2.0 - r) ** 3 * ((r > 1) & (r <= 2))
    out = inner + outer
    return float(out) if out.ndim == 0 else out


def initial_state(family: str, params, grid: Grid1D) -> State:
    x = grid.x
    if family in ("linear", "nonlinear"):
        if not isinstance(params, WaveParams):
            raise FamilyError("wave initial state needs WaveParams")
        q = bump(10.0 * np.abs(x - 0.5))
    elif family == "shallow_water":
        if not isinstance(params, SWParams):
            raise FamilyError("shallow-water initial state needs SWParams")
        s = params.sigma
        q = 0.02 / (s * np.sqrt(2.0 * np.pi)) * np.exp(-0.5 * ((x - params.c) / s) ** 2)
    else:
        raise FamilyError(f"unknown family {family!r}")
    return State(q, np.zeros_like(q), params, 0.0)


# ---------------------------------------------------------------- wave


def _w(x, mu_b, nonlinear):
    out = 0.5 * x * x
    if nonlinear:
        out = out + np.sin(mu_b * x)
    return out


def _wp(x, mu_b, nonlinear):
    return x + mu_b * np.cos(mu_b * x) if nonlinear else x


def _wave_hamiltonian(u, v, mu: WaveParams, dx: float) -> float:
    nonlinear = mu.family == "nonlinear"
    d = (np.roll(u, -1) - u) / dx
    pot = mu.mu_a * np.sum(_w(d, mu.mu_b, nonlinear))
    if nonlinear:
        pot += 10.0 * mu.mu_c * np.sum(u**3)
    return float(pot + 0.5 * np.dot(v, v))


def _wave_grad_u(u, mu: WaveParams, dx: float) -> np.ndarray:
    nonlinear = mu.family == "nonlinear"
    # flux on the edge (i, i+1); dH/du_i = mu_a/dx (flux_{i-1} - flux_i) + g'(u_i)
    flux = _wp((np.roll(u, -1) - u) / dx, mu.mu_b, nonlinear)
    g = (mu.mu_a / dx) * (np.roll(flux, 1) - flux)
    if nonlinear:
        g += 30.0 * mu.mu_c * u * u
    return g


def _require(s: State, families):
    if s.family not in families:
        raise FamilyError(f"expected a {'/'.join(families)} state, got {s.family!r}")


def wave_hamiltonian(s: State, grid: Grid1D | None = None) -> float:
    _require(s, ("linear", "nonlinear"))
    grid = grid or wave_grid(s.q.size)
    return _wave_hamiltonian(s.q, s.p, s.mu, grid.dx)


def wave_grad(s: State, grid: Grid1D | None = None) -> tuple[np.ndarray, np.ndarray]:
    _require(s, ("linear", "nonlinear"))
    grid = grid or wave_grid(s.q.size)
    return _wave_grad_u(s.q, s.mu, grid.dx), s.p.copy()


# ---------------------------------------------------------------- shallow water


def dx_apply(phi, dx: float):
    """Centred periodic first difference ``(phi_{i+1} - phi_{i-1}) / (2 dx)`` along the last axis."""
    phi = np.asarray(phi)
    return (np.roll(phi, -1, axis=-1) - np.roll(phi, 1, axis=-1)) / (2.0 * dx)


def _sw_hamiltonian(chi, phi, dx) -> float:
    d = dx_apply(phi, dx)
    return float(0.5 * np.sum((1.0 + chi) * d * d) + 0.5 * np.dot(chi, chi))


def _sw_grad(chi, phi, dx):
    d = dx_apply(phi, dx)
    g_chi = 0.5 * d * d + chi
    # D_x is antisymmetric, so d/dphi of sum((1+chi) (D phi)^2)/2 is -D((1+chi) D phi)
    g_phi = -dx_apply((1.0 + chi) * d, dx)
    return g_chi, g_phi


def sw_hamiltonian(s: State, grid: Grid1D | None = None) -> float:
    _require(s, ("shallow_water",))
    grid = grid or sw_grid(s.q.size)
    return _sw_hamiltonian(s.q, s.p, grid.dx)


def sw_grad(s: State, grid: Grid1D | None = None) -> tuple[np.ndarray, np.ndarray]:
    _require(s, ("shallow_water",))
    grid = grid or sw_grid(s.q.size)
    return _sw_grad(s.q, s.p, grid.dx)


# ---------------------------------------------------------------- model objects


class WaveFOM:
    """Separable wave Hamiltonian bound to a grid and parameter."""

    separable = True

    def __init__(self, grid: Grid1D, mu: WaveParams):
        self.grid = grid
        self.mu = mu
        self.dx = grid.dx
        self.family = mu.family

    @property
    def n(self) -> int:
        return self.grid.n

    def initial_state(self) -> State:
        return initial_state(self.family, self.mu, self.grid)

    def grad_q(self, q):
        return _wave_grad_u(q, self.mu, self.dx)

    def grad_p(self, p):
        return p

    def grad(self, q, p):
        return self.grad_q(q), self.grad_p(p)

    def hamiltonian(self, q, p) -> float:
        return _wave_hamiltonian(q, p, self.mu, self.dx)

    def field(self, y):
        q, p = y[: self.n], y[self.n :]
        return np.concatenate([p, -self.grad_q(q)])


class ShallowWaterFOM:
    """Non-separable shallow-water Hamiltonian, (q, p) = (chi, phi)."""

    separable = False
    family = "shallow_water"

    def __init__(self, grid: Grid1D, mu: SWParams):
        self.grid = grid
        self.mu = mu
        self.dx = grid.dx

    @property
    def n(self) -> int:
        return self.grid.n

    def initial_state(self) -> State:
        return initial_state(self.family, self.mu, self.grid)

    def grad(self, q, p):
        return _sw_grad(q, p, self.dx)

    def hamiltonian(self, q, p) -> float:
        return _sw_hamiltonian(q, p, self.dx)

    def field(self, y):
        q, p = y[: self.n], y[self.n :]
        gq, gp = self.grad(q, p)
        return np.concatenate([gp, -gq])


def make_fom(family: str, n: int, params) -> WaveFOM | ShallowWaterFOM:
    if family in ("linear", "nonlinear"):
        return WaveFOM(wave_grid(n), params)
    if family == "shallow_water":
        return ShallowWaterFOM(sw_grid(n), params)
    raise FamilyError(f"unknown family {family!r}")


def params_vector(params) -> np.ndarray:
    """The parameter vector fed to reduced-dynamics networks."""
    if isinstance(params, SWParams):
        return np.array([params.c, params.sigma])
    if params.family == "linear":
        return np.array([params.mu_a])
    return np.array([params.mu_a, params.mu_b, params.mu_c])


def params_from_vector(family: str, vec) -> WaveParams | SWParams:
    vec = [float(v) for v in np.atleast_1d(vec)]
    if family == "linear":
        return WaveParams(vec[0], family="linear")
    if family == "nonlinear":
        return WaveParams(*vec[:3], family="nonlinear")
    if family == "shallow_water":
        return SWParams(vec[0], vec[1])
    raise FamilyError(f"unknown family {family!r}")
