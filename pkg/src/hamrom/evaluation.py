"""Error metrics, reduced-model prediction and Hamiltonian traces."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .foms import make_fom, params_vector
from .integrators import IntegratorConfig, Trajectory, integrate
from .linear import LinearReducedModel, SymplecticBasis, project, reconstruct

__all__ = [
    "relative_error",
    "relative_l2",
    "hamiltonian_trace",
    "hamiltonian_drift",
    "reference_trajectory",
    "predict_linear",
    "predict_net",
    "TestResult",
    "ErrorReport",
]


def relative_error(ref, pred, dt: float = 1.0, dx: float = 1.0) -> float:
    """Squared relative discrete L2 error over time steps ``n >= 1``.

    ``sum_n dt sum_i dx (ref - pred)^2 / sum_n dt sum_i dx ref^2`` with arrays
    shaped ``(M + 1, N)``; row 0 (the shared initial state) is excluded.
    """
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if ref.shape != pred.shape:
        raise ValueError(f"reference {ref.shape} and prediction {pred.shape} differ in shape")
    r, p = ref[1:], pred[1:]
    den = dt * dx * np.sum(r * r)
    if den == 0.0:
        raise ValueError("reference has zero norm")
    return float(dt * dx * np.sum((r - p) ** 2) / den)


def relative_l2(ref, pred, dt: float = 1.0, dx: float = 1.0) -> float:
    """Square root of :func:`relative_error`, i.e. ||ref - pred|| / ||ref||."""
    return float(np.sqrt(relative_error(ref, pred, dt, dx)))


def hamiltonian_trace(fom, states: np.ndarray) -> np.ndarray:
    n = fom.n
    return np.array([fom.hamiltonian(y[:n], y[n:]) for y in np.asarray(states)])


def hamiltonian_drift(trace) -> float:
    """``max_t |H(t) - H(0)| / |H(0)|``."""
    trace = np.asarray(trace, dtype=np.float64)
    if not np.all(np.isfinite(trace)):
        return float("inf")
    return float(np.max(np.abs(trace - trace[0])) / abs(trace[0]))


def _fom_config(fom, dt):
    return IntegratorConfig(dt, "sv_explicit" if fom.separable else "sv_implicit")


def reference_trajectory(family: str, n: int, params, dt: float, n_steps: int) -> Trajectory:
    fom = make_fom(family, n, params)
    return integrate(fom.initial_state().y, n_steps, _fom_config(fom, dt), fom, params)


def predict_linear(basis: SymplecticBasis, family: str, params, dt: float, n_steps: int) -> Trajectory:
    """Encode with the basis, integrate the Galerkin system, decode every step."""
    fom = make_fom(family, basis.n, params)
    red = LinearReducedModel(basis, fom)
    cfg = IntegratorConfig(dt, "sv_explicit" if red.separable else "sv_implicit")
    lat = integrate(project(fom.initial_state().y, basis), n_steps, cfg, red, params)
    return Trajectory(lat.times, reconstruct(lat.states, basis), params)


def predict_net(net, family: str, params, n_steps: int) -> Trajectory:
    """Encode the initial state, roll the latent dynamics, decode every step."""
    fom = make_fom(family, net.ae.input_length, params)
    mu = net.prep.apply_mu(params_vector(params))
    z0 = net.encode(fom.initial_state().y)
    lat = integrate(z0, n_steps, net.integrator, net.dynamics(mu))
    return Trajectory(lat.times, net.decode(lat.states), params)


@dataclass
class TestResult:
    name: str
    mu: list[float]
    err_q: float
    err_p: float
    hamiltonian: list[float] = field(default_factory=list)
    hamiltonian_ref: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def l2_q(self) -> float:
        return float(np.sqrt(self.err_q))

    @property
    def l2_p(self) -> float:
        return float(np.sqrt(self.err_p))

    @property
    def drift(self) -> float:
        return hamiltonian_drift(self.hamiltonian) if self.hamiltonian else float("nan")


@dataclass
class ErrorReport:
    """Per-test errors: ``err_*`` is the squared ratio, ``l2_*`` its square root."""

    method: str
    family: str
    k: int
    dt: float
    results: list[TestResult] = field(default_factory=list)

    def add(self, name, params, ref: Trajectory, pred: Trajectory, fom, seconds=0.0) -> TestResult:
        n = fom.n
        res = TestResult(
            name,
            [float(v) for v in params_vector(params)],
            relative_error(ref.states[:, :n], pred.states[:, :n]),
            relative_error(ref.states[:, n:], pred.states[:, n:]),
            hamiltonian_trace(fom, pred.states).tolist(),
            hamiltonian_trace(fom, ref.states).tolist(),
            seconds,
        )
        if res.err_q < 0 or res.err_p < 0:
            raise ValueError("negative error")
        self.results.append(res)
        return res

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "family": self.family,
            "k": self.k,
            "dt": self.dt,
            "results": [
                {
                    "name": r.name,
                    "mu": r.mu,
                    "err_q": r.err_q,
                    "err_p": r.err_p,
                    "l2_q": r.l2_q,
                    "l2_p": r.l2_p,
                    "hamiltonian_drift": r.drift,
                    "hamiltonian": r.hamiltonian,
                    "hamiltonian_ref": r.hamiltonian_ref,
                    "seconds": r.seconds,
                }
                for r in self.results
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorReport":
        rep = cls(d["method"], d["family"], int(d["k"]), float(d["dt"]))
        for r in d["results"]:
            rep.results.append(
                TestResult(r["name"], r["mu"], r["err_q"], r["err_p"], r.get("hamiltonian", []),
                           r.get("hamiltonian_ref", []), r.get("seconds", 0.0))
            )
        return rep

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "mu", "err_q", "err_p", "l2_q", "l2_p", "hamiltonian_drift"])
            for r in self.results:
                w.writerow([r.name, " ".join(repr(m) for m in r.mu), repr(r.err_q), repr(r.err_p),
                            repr(r.l2_q), repr(r.l2_p), repr(r.drift)])


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
