"""End-to-end workflows shared by the command line and the acceptance suite."""

from __future__ import annotations

import time

import numpy as np

from .config import ExperimentConfig
from .evaluation import ErrorReport, predict_linear, predict_net, reference_trajectory
from .foms import make_fom, params_vector
from .integrators import IntegratorConfig, Trajectory, integrate
from .linear import SnapshotSet, cotangent_lift, pod_basis
from .storage import Checkpoint, checkpoint_from_basis, checkpoint_from_net
from .training import History, ReducedNet, build_dataset, standardize_fit, train

__all__ = [
    "generate_trajectories",
    "generate",
    "split_snapshots",
    "reduce",
    "datasets",
    "train_network",
    "predict",
    "evaluate",
]


def _fom_cfg(fom, dt):
    return IntegratorConfig(dt, "sv_explicit" if fom.separable else "sv_implicit")


def generate_trajectories(family: str, n: int, params: list, dt: float, n_steps: int) -> np.ndarray:
    out = np.empty((len(params), n_steps + 1, 2 * n))
    for i, mu in enumerate(params):
        fom = make_fom(family, n, mu)
        out[i] = integrate(fom.initial_state().y, n_steps, _fom_cfg(fom, dt), fom).states
    return out


def generate(cfg: ExperimentConfig) -> tuple[SnapshotSet, dict]:
    """Training trajectories followed by validation trajectories, in one set."""
    params = cfg.train_params() + cfg.val_params()
    traj = generate_trajectories(cfg.family, cfg.n, params, cfg.dt, cfg.n_steps)
    return SnapshotSet(traj, params, cfg.dt, cfg.family), {"n_train": cfg.p_train, "n_val": cfg.p_val}


def split_snapshots(snaps: SnapshotSet, n_train: int) -> tuple[SnapshotSet, SnapshotSet]:
    tr = SnapshotSet(snaps.trajectories[:n_train], snaps.params[:n_train], snaps.dt, snaps.family)
    va = SnapshotSet(snaps.trajectories[n_train:], snaps.params[n_train:], snaps.dt, snaps.family)
    return tr, va


def _mus(snaps: SnapshotSet) -> np.ndarray:
    return np.array([params_vector(m) for m in snaps.params])


def datasets(cfg: ExperimentConfig, train_set: SnapshotSet, val_set: SnapshotSet, seed: int, prep):
    """Standardized training sampler and fixed validation batch."""
    return build_dataset(
        prep.apply(train_set.trajectories),
        prep.apply_mu(_mus(train_set)),
        prep.apply(val_set.trajectories),
        prep.apply_mu(_mus(val_set)),
        cfg.s,
        cfg.batch_size,
        cfg.val_pairs,
        seed,
    )


def train_network(cfg: ExperimentConfig, train_set: SnapshotSet, val_set: SnapshotSet,
                  seed: int | None = None, callback=None) -> tuple[ReducedNet, History]:
    seed = cfg.seed if seed is None else seed
    if val_set.n_params == 0:
        raise ValueError("network training needs validation trajectories (p_val >= 1)")
    prep = standardize_fit(train_set.trajectories, _mus(train_set))
    sampler, val = datasets(cfg, train_set, val_set, seed, prep)
    kind = "ae_hnn" if cfg.method == "aehnn" else "ae_flow"
    net = ReducedNet.create(kind, cfg.ae_architecture(), cfg.dyn_architecture(), cfg.dt, seed=seed, prep=prep)
    tcfg = cfg.train_config()
    tcfg.seed = seed
    return train(net, sampler, val, tcfg, callback)


def reduce(cfg: ExperimentConfig, snaps: SnapshotSet, n_train: int, callback=None) -> tuple[Checkpoint, History | None]:
    train_set, val_set = split_snapshots(snaps, n_train)
    meta = {"config": cfg.to_dict()}
    if cfg.method == "psd":
        return checkpoint_from_basis(cotangent_lift(train_set, cfg.k), cfg.family, cfg.dt, meta), None
    if cfg.method == "pod":
        return checkpoint_from_basis(pod_basis(train_set, cfg.k), cfg.family, cfg.dt, meta), None
    net, hist = train_network(cfg, train_set, val_set, callback=callback)
    meta["steps"] = len(hist)
    meta["best_step"] = hist.best_step
    return checkpoint_from_net(net, cfg.family, meta), hist


def predict(ckpt: Checkpoint, params, n_steps: int) -> Trajectory:
    if ckpt.method in ("psd", "pod"):
        return predict_linear(ckpt.basis(), ckpt.family, params, ckpt.dt, n_steps)
    return predict_net(ckpt.net(), ckpt.family, params, n_steps)


def evaluate(ckpt: Checkpoint, tests: list, n_steps: int) -> ErrorReport:
    report = ErrorReport(ckpt.method, ckpt.family, ckpt.k, ckpt.dt)
    n = ckpt.arrays["A"].shape[0] // 2 if "A" in ckpt.arrays else ckpt.net().ae.input_length
    for name, params in tests:
        ref = reference_trajectory(ckpt.family, n, params, ckpt.dt, n_steps)
        t0 = time.perf_counter()
        pred = predict(ckpt, params, n_steps)
        seconds = time.perf_counter() - t0
        report.add(name, params, ref, pred, make_fom(ckpt.family, n, params), seconds)
    return report
