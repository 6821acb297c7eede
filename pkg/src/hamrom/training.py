"""Datasets, standardization, the coupled AE-HNN losses, Adam and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .integrators import IntegrationError, IntegratorConfig, predict_s
from .networks import (
    AEArchitecture,
    FlowDynamics,
    HNNDynamics,
    MLPArchitecture,
    NetParams,
    decode,
    encode,
    hnn_value,
    init_params,
)

__all__ = [
    "TrainingError",
    "PairBatch",
    "PairSampler",
    "build_dataset",
    "Preprocessor",
    "standardize_fit",
    "LossWeights",
    "ReducedNet",
    "compute_losses",
    "loss_ae",
    "loss_pred_reduced",
    "loss_stab",
    "loss_pred",
    "loss_flow",
    "total_objective",
    "lr_schedule",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "History",
    "evaluate_losses",
    "train",
]


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured."""


# ---------------------------------------------------------------- data


@dataclass
class PairBatch:
    y_n: np.ndarray
    y_ns: np.ndarray
    mu: np.ndarray
    s: int

    def __post_init__(self):
        if self.y_n.shape != self.y_ns.shape or self.y_n.shape[0] < 1:
            raise ValueError("pair batch endpoints must have equal, non-empty shapes")
        if self.mu.shape[0] != self.y_n.shape[0]:
            raise ValueError("one parameter row per pair is required")

    def __len__(self):
        return self.y_n.shape[0]


class PairSampler:
    """Uniform draws of (trajectory, n) with ``n + s <= M``."""

    def __init__(self, trajectories: np.ndarray, mus: np.ndarray, s: int, batch_size: int = 64, seed: int = 0):
        self.trajectories = trajectories
        self.mus = np.asarray(mus, dtype=np.float64).reshape(trajectories.shape[0], -1)
        self.m = trajectories.shape[1] - 1
        if s < 0 or s >= self.m:
            raise ValueError(f"watch duration s={s} needs trajectories longer than {s} steps (M={self.m})")
        self.s = s
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def indices(self, size: int):
        traj = self.rng.integers(0, self.trajectories.shape[0], size)
        n = self.rng.integers(0, self.m - self.s + 1, size)
        return traj, n

    def sample(self, size: int | None = None) -> PairBatch:
        traj, n = self.indices(size or self.batch_size)
        return PairBatch(
            self.trajectories[traj, n], self.trajectories[traj, n + self.s], self.mus[traj], self.s
        )


def build_dataset(train_traj, train_mus, val_traj, val_mus, s: int, batch_size: int = 64,
                  val_pairs: int = 128, seed: int = 0):
    """Training sampler plus a fixed validation batch of ``val_pairs`` per validation parameter."""
    sampler = PairSampler(train_traj, train_mus, s, batch_size, seed)
    vs = PairSampler(val_traj, val_mus, s, val_pairs, seed + 10_007)
    y_n, y_ns, mu = [], [], []
    for i in range(val_traj.shape[0]):
        n = vs.rng.integers(0, vs.m - s + 1, val_pairs)
        y_n.append(val_traj[i, n])
        y_ns.append(val_traj[i, n + s])
        mu.append(np.repeat(vs.mus[i : i + 1], val_pairs, axis=0))
    val = PairBatch(np.concatenate(y_n), np.concatenate(y_ns), np.concatenate(mu), s)
    return sampler, val


@dataclass
class Preprocessor:
    """Per-channel affine standardization of (q, p) and per-component for mu."""

    mean: np.ndarray
    std: np.ndarray
    mu_mean: np.ndarray
    mu_std: np.ndarray
    eps: float = 1e-8

    def _chan(self, y):
        n = y.shape[-1] // 2
        return np.repeat(self.mean, n), np.repeat(np.maximum(self.std, self.eps), n)

    def apply(self, y):
        m, s = self._chan(np.asarray(y))
        return (y - m) / s

    def invert(self, y):
        m, s = self._chan(np.asarray(ad._data(y)))
        if isinstance(y, Tensor):
            return ad.add(ad.mul(y, s), m)
        return y * s + m

    def apply_mu(self, mu):
        return (np.asarray(mu) - self.mu_mean) / np.maximum(self.mu_std, self.eps)

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("mean", "std", "mu_mean", "mu_std")), d.get("eps", 1e-8))


def standardize_fit(trajectories: np.ndarray, mus: np.ndarray, eps: float = 1e-8) -> Preprocessor:
    trajectories = np.asarray(trajectories)
    if trajectories.size == 0:
        raise ValueError("cannot fit standardization on an empty set")
    n = trajectories.shape[-1] // 2
    flat = trajectories.reshape(-1, 2 * n)
    q, p = flat[:, :n], flat[:, n:]
    mean = np.array([q.mean(), p.mean()])
    std = np.array([q.std(), p.std()])
    mus = np.asarray(mus, dtype=np.float64).reshape(len(mus), -1)
    return Preprocessor(mean, std, mus.mean(axis=0), mus.std(axis=0), eps)


# ---------------------------------------------------------------- model bundle


@dataclass
class LossWeights:
    w_ae: float = 0.1
    w_pred_reduced: float = 80.0
    w_stab: float = 7e-4
    w_pred: float = 0.1

    def __post_init__(self):
        if min(self.w_ae, self.w_pred_reduced, self.w_stab, self.w_pred) < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.w_ae, self.w_pred_reduced, self.w_stab, self.w_pred)


@dataclass
class ReducedNet:
    """Autoencoder plus latent dynamics network (``kind`` is ``ae_hnn`` or ``ae_flow``).

    ``params`` holds the AE weights unprefixed and the dynamics weights under
    ``hnn.`` or ``flow.``.  All network inputs are standardized.
    """

    kind: str
    ae: AEArchitecture
    dyn: MLPArchitecture
    params: NetParams
    dt: float
    prep: Preprocessor | None = None
    fp_tol: float = 1e-10
    fp_max_iter: int = 100

    def __post_init__(self):
        if self.kind not in ("ae_hnn", "ae_flow"):
            raise ValueError(f"unknown reduced network kind {self.kind!r}")

    @classmethod
    def create(cls, kind, ae, dyn, dt, seed=0, prep=None, **kw) -> "ReducedNet":
        prefix = "hnn." if kind == "ae_hnn" else "flow."
        params = init_params(ae, seed).merged(init_params(dyn, seed + 1, prefix))
        params.seed = seed
        return cls(kind, ae, dyn, params, dt, prep, **kw)

    @property
    def prefix(self) -> str:
        return "hnn." if self.kind == "ae_hnn" else "flow."

    @property
    def integrator(self) -> IntegratorConfig:
        scheme = "sv_implicit" if self.kind == "ae_hnn" else "rk2"
        return IntegratorConfig(self.dt, scheme, self.fp_tol, self.fp_max_iter)

    def dynamics(self, mu_std, params=None):
        params = self.params.arrays if params is None else params
        if self.kind == "ae_hnn":
            return HNNDynamics(params, self.dyn, mu_std, self.prefix)
        return FlowDynamics(params, self.dyn, mu_std, self.prefix)

    # physical-unit helpers for inference
    def encode(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return encode(self.prep.apply(y), self.params.arrays, self.ae).data

    def decode(self, z) -> np.ndarray:
        return self.prep.invert(decode(z, self.params.arrays, self.ae).data)

    def latent_hamiltonian(self, z, mu) -> np.ndarray:
        if self.kind != "ae_hnn":
            raise ValueError("only AE-HNN models carry a reduced Hamiltonian")
        return hnn_value(z, self.prep.apply_mu(mu), self.params.arrays, self.dyn, self.prefix).data


# ---------------------------------------------------------------- losses


def _msq(diff) -> Tensor:
    """Mean over the batch of squared 2-norms."""
    b = ad._data(diff).shape[0] if ad._data(diff).ndim > 1 else 1
    return ad.mul(ad.reduce_sum_squares(diff), 1.0 / b)


def _rollout(net: ReducedNet, params, z0, mu, s, stats=None):
    return predict_s(z0, s, net.integrator, net.dynamics(mu, params), stats)


def compute_losses(batch: PairBatch, params, net: ReducedNet, stats=None) -> dict[str, Tensor]:
    """All four losses, sharing encoder passes and the latent rollout.

    ``batch`` is in standardized units.  For AE-Flow ``pred_reduced`` is the
    flow loss and ``stab`` is identically zero.
    """
    z_n = encode(batch.y_n, params, net.ae)
    z_ns = encode(batch.y_ns, params, net.ae)
    rec = decode(z_n, params, net.ae)
    out = {"ae": _msq(ad.sub(batch.y_n, rec))}
    z_pred = _rollout(net, params, z_n, batch.mu, batch.s, stats)
    out["pred_reduced"] = _msq(ad.sub(z_ns, z_pred))
    if net.kind == "ae_hnn":
        h_n = hnn_value(z_n, batch.mu, params, net.dyn, net.prefix)
        h_ns = hnn_value(z_ns, batch.mu, params, net.dyn, net.prefix)
        out["stab"] = _msq(ad.sub(h_ns, h_n))
    else:
        out["stab"] = Tensor(0.0)
    out["pred"] = _msq(ad.sub(batch.y_ns, decode(z_pred, params, net.ae)))
    return out


def loss_ae(batch: PairBatch, params, ae: AEArchitecture) -> Tensor:
    return _msq(ad.sub(batch.y_n, decode(encode(batch.y_n, params, ae), params, ae)))


def loss_pred_reduced(batch: PairBatch, params, net: ReducedNet) -> Tensor:
    z_pred = _rollout(net, params, encode(batch.y_n, params, net.ae), batch.mu, batch.s)
    return _msq(ad.sub(encode(batch.y_ns, params, net.ae), z_pred))


def loss_stab(batch: PairBatch, params, net: ReducedNet) -> Tensor:
    h_n = hnn_value(encode(batch.y_n, params, net.ae), batch.mu, params, net.dyn, net.prefix)
    h_ns = hnn_value(encode(batch.y_ns, params, net.ae), batch.mu, params, net.dyn, net.prefix)
    return _msq(ad.sub(h_ns, h_n))


def loss_pred(batch: PairBatch, params, net: ReducedNet) -> Tensor:
    z_pred = _rollout(net, params, encode(batch.y_n, params, net.ae), batch.mu, batch.s)
    return _msq(ad.sub(batch.y_ns, decode(z_pred, params, net.ae)))


def loss_flow(batch: PairBatch, params, net: ReducedNet) -> Tensor:
    if net.kind != "ae_flow":
        raise ValueError("loss_flow needs an AE-Flow network")
    return loss_pred_reduced(batch, params, net)


def total_objective(losses, weights: LossWeights):
    """Weighted sum; ``losses`` is a dict with keys ae/pred_reduced/stab/pred or a 4-tuple."""
    if isinstance(losses, dict):
        losses = (losses["ae"], losses["pred_reduced"], losses["stab"], losses["pred"])
    total = 0.0
    for w, l in zip(weights.as_tuple(), losses):
        total = ad.add(total, ad.mul(l, w)) if isinstance(l, Tensor) or isinstance(total, Tensor) else total + w * l
    return total


# ---------------------------------------------------------------- optimizer


def lr_schedule(k: int, resets=(), base: float = 1e-3, decay: float = 0.99, period: int = 150) -> float:
    """Staircase decay restarted at every reset step."""
    if k < 0:
        raise ValueError("step must be non-negative")
    last = max((r for r in resets if r <= k), default=0)
    return base * decay ** ((k - last) // period)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    k: int = 0
    resets: list[int] = field(default_factory=list)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Return updated parameters; ``state`` is advanced in place."""
    state.k += 1
    t = state.k
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    max_steps: int = 10_000
    batch_size: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 100
    plateau_window: int = 2000
    plateau_tol: float = 0.01
    min_reset_gap: int = 5000
    target: float | None = None
    seed: int = 0
    keep_best: bool = True


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)
    best_step: int = -1
    best_val: float = math.inf

    COLUMNS = ("step", "ae", "pred_reduced", "stab", "pred", "objective", "val_objective", "lr")

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(float(r[k])) if k != "step" else r[k] for k in self.COLUMNS})


def _grad_step(net: ReducedNet, batch: PairBatch, weights: LossWeights):
    with Tape() as tape:
        watched = {k: tape.watch(Tensor(v)) for k, v in net.params.arrays.items()}
        losses = compute_losses(batch, watched, net)
        obj = total_objective(losses, weights)
        grads = tape.gradient(obj, list(watched.values()))
    return {k: float(v.data) for k, v in losses.items()}, float(obj.data), dict(zip(watched, grads))


def evaluate_losses(net: ReducedNet, batch: PairBatch, weights: LossWeights, chunk: int = 256) -> dict[str, float]:
    """Weighted validation losses (plus their sum under ``objective``)."""
    sums = dict.fromkeys(("ae", "pred_reduced", "stab", "pred"), 0.0)
    n = len(batch)
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        part = PairBatch(batch.y_n[sl], batch.y_ns[sl], batch.mu[sl], batch.s)
        losses = compute_losses(part, net.params.arrays, net)
        for k in sums:
            sums[k] += float(ad._data(losses[k])) * len(part)
    w = dict(zip(sums, weights.as_tuple()))
    out = {k: w[k] * sums[k] / n for k in sums}
    out["objective"] = sum(out.values())
    return out


def train(net: ReducedNet, sampler: PairSampler, val: PairBatch, cfg: TrainConfig,
          callback=None) -> tuple[ReducedNet, History]:
    """Adam on the weighted objective with the staircase schedule and plateau resets.

    ``sampler`` and ``val`` must already be standardized.  With ``keep_best``
    the parameters of the best validation objective are kept.
    """
    state = AdamState()
    hist = History()
    best = net.params.copy()
    val_trace: list[tuple[int, float]] = []
    for k in range(cfg.max_steps):
        lr = lr_schedule(k, state.resets)
        batch = sampler.sample(cfg.batch_size)
        try:
            losses, obj, grads = _grad_step(net, batch, cfg.weights)
        except IntegrationError as exc:
            raise TrainingError(f"latent rollout failed at step {k}: {exc}") from exc
        if not math.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError(f"objective diverged at step {k}: {obj!r} ({losses})")
        net.params = NetParams(adam_step(net.params.arrays, grads, state, lr), net.params.seed)
        w = dict(zip(("ae", "pred_reduced", "stab", "pred"), cfg.weights.as_tuple()))
        row = {"step": k, **{n: w[n] * losses[n] for n in w}, "objective": obj, "val_objective": math.nan, "lr": lr}
        if (k + 1) % cfg.eval_every == 0 or k == cfg.max_steps - 1:
            v = evaluate_losses(net, val, cfg.weights)["objective"]
            row["val_objective"] = v
            val_trace.append((k, v))
            if v < hist.best_val:
                hist.best_val, hist.best_step = v, k
                best = net.params.copy()
            if _plateau(val_trace, k, state.resets, cfg):
                state.resets.append(k + 1)
            if callback is not None:
                callback(k, row)
            if cfg.target is not None and v <= cfg.target:
                hist.rows.append(row)
                break
        hist.rows.append(row)
    hist.resets = list(state.resets)
    if cfg.keep_best and hist.best_step >= 0:
        net.params = best
    return net, hist


def _plateau(trace, k, resets, cfg: TrainConfig) -> bool:
    last_reset = resets[-1] if resets else 0
    if k + 1 - last_reset < cfg.min_reset_gap:
        return False
    old = [v for s, v in trace if k - cfg.plateau_window - cfg.eval_every < s <= k - cfg.plateau_window]
    if not old:
        return False
    recent = [v for s, v in trace[-3:]]
    ref = min(old)
    return (ref - float(np.mean(recent))) < cfg.plateau_tol * ref
