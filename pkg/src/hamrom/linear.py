"""Linear reductions: proper symplectic decomposition (cotangent lift) and POD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SnapshotSet",
    "SymplecticBasis",
    "svd_truncated",
    "gram_svd",
    "cotangent_lift",
    "pod_basis",
    "symplectic_j",
    "symplectic_inverse",
    "project",
    "reconstruct",
    "reduced_rhs",
    "LinearReducedModel",
]


@dataclass
class SnapshotSet:
    """Snapshots of P trajectories of M+1 states each, stored as (P, M+1, 2N).

    ``matrix`` gives the classical (2N, p) column layout as a view.
    """

    trajectories: np.ndarray
    params: list = field(default_factory=list)
    dt: float = 1.0
    family: str = ""

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        if self.trajectories.ndim != 3 or self.trajectories.shape[2] % 2:
            raise ValueError(f"expected (P, M+1, 2N) snapshots, got {self.trajectories.shape}")

    @property
    def n(self) -> int:
        return self.trajectories.shape[2] // 2

    @property
    def n_params(self) -> int:
        return self.trajectories.shape[0]

    @property
    def n_steps(self) -> int:
        return self.trajectories.shape[1] - 1

    @property
    def matrix(self) -> np.ndarray:
        return self.trajectories.reshape(-1, 2 * self.n).T

    @property
    def meta(self) -> list[tuple[int, int]]:
        return [(i, k) for i in range(self.n_params) for k in range(self.n_steps + 1)]


@dataclass
class SymplecticBasis:
    A: np.ndarray
    kind: str
    phi: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("psd_cotangent_lift", "pod"):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def k(self) -> int:
        return self.A.shape[1] // 2

    @property
    def n(self) -> int:
        return self.A.shape[0] // 2


def _eigh_desc(gram: np.ndarray, k: int):
    w, v = np.linalg.eigh(gram)
    order = np.argsort(w)[::-1][:k]
    return np.sqrt(np.clip(w[order], 0.0, None)), v[:, order]


def svd_truncated(x, k: int):
    """Leading-k SVD through the eigendecomposition of the thin-side Gram matrix.

    Returns ``(U_k, sigma, V_k)`` with singular values in decreasing order.
    Columns belonging to zero singular values are completed to an orthonormal
    set.
    """
    x = np.asarray(x, dtype=np.float64)
    m, n = x.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must lie in [1, {min(m, n)}], got {k}")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("svd_truncated: non-finite input")
    if m <= n:
        sigma, u = _eigh_desc(x @ x.T, k)
        v = _complete(x.T @ u, sigma, n)
    else:
        sigma, v = _eigh_desc(x.T @ x, k)
        u = _complete(x @ v, sigma, m)
    # one refinement pass: re-orthonormalise U and recompute sigma, V from it
    u, _ = np.linalg.qr(u)
    proj = x.T @ u
    sigma = np.linalg.norm(proj, axis=0)
    order = np.argsort(sigma)[::-1]
    sigma, u, proj = sigma[order], u[:, order], proj[:, order]
    v = _complete(proj, sigma, n)
    return u, sigma, v


def _complete(mapped: np.ndarray, sigma: np.ndarray, dim: int) -> np.ndarray:
    """Normalise columns ``mapped / sigma``; replace null ones by an orthonormal complement."""
    out = np.zeros((dim, sigma.size))
    scale = sigma.max() if sigma.size else 0.0
    good = sigma > 1e-13 * max(scale, 1e-300)
    out[:, good] = mapped[:, good] / sigma[good]
    if not np.all(good):
        q, _ = np.linalg.qr(np.concatenate([out[:, good], np.eye(dim)], axis=1))
        out[:, ~good] = q[:, good.sum() : good.sum() + (~good).sum()]
    return out


def gram_svd(gram: np.ndarray, k: int):
    """Left singular vectors and values of X from ``X X^T`` (streaming-friendly)."""
    if not 1 <= k <= gram.shape[0]:
        raise ValueError(f"k must lie in [1, {gram.shape[0]}], got {k}")
    sigma, u = _eigh_desc(gram, k)
    return u, sigma


def _snapshot_array(snapshots) -> np.ndarray:
    """(p, 2N) rows of snapshot states."""
    if isinstance(snapshots, SnapshotSet):
        return snapshots.trajectories.reshape(-1, snapshots.trajectories.shape[2])
    arr = np.asarray(snapshots, dtype=np.float64)
    if arr.ndim == 3:
        return arr.reshape(-1, arr.shape[2])
    return arr.T  # (2N, p) column layout


def cotangent_lift(snapshots, k: int, chunk: int = 8192) -> SymplecticBasis:
    """PSD basis ``A = blockdiag(Phi, Phi)`` from the SVD of ``[q_1..q_p, p_1..p_p]``."""
    rows = _snapshot_array(snapshots)
    n = rows.shape[1] // 2
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    gram = np.zeros((n, n))
    for start in range(0, rows.shape[0], chunk):
        blk = rows[start : start + chunk]
        q, p = blk[:, :n], blk[:, n:]
        gram += q.T @ q + p.T @ p
    phi, sigma = gram_svd(gram, k)
    a = np.zeros((2 * n, 2 * k))
    a[:n, :k] = phi
    a[n:, k:] = phi
    return SymplecticBasis(a, "psd_cotangent_lift", phi=phi, sigma=sigma)


def pod_basis(snapshots, k: int, chunk: int = 8192) -> SymplecticBasis:
    """POD basis: the first 2k left singular vectors of the snapshot matrix."""
    rows = _snapshot_array(snapshots)
    dim = rows.shape[1]
    if not 1 <= 2 * k <= min(dim, rows.shape[0]):
        raise ValueError(f"2k must lie in [2, {min(dim, rows.shape[0])}], got k={k}")
    gram = np.zeros((dim, dim))
    for start in range(0, rows.shape[0], chunk):
        blk = rows[start : start + chunk]
        gram += blk.T @ blk
    u, sigma = gram_svd(gram, 2 * k)
    return SymplecticBasis(u, "pod", sigma=sigma)


def symplectic_j(n: int) -> np.ndarray:
    j = np.zeros((2 * n, 2 * n))
    j[:n, n:] = np.eye(n)
    j[n:, :n] = -np.eye(n)
    return j


def symplectic_inverse(basis: SymplecticBasis) -> np.ndarray:
    """``A+ = J_2K^T A^T J_2N``."""
    if basis.kind != "psd_cotangent_lift":
        raise ValueError("symplectic inverse is only defined for PSD bases; POD uses A^T")
    return symplectic_j(basis.k).T @ basis.A.T @ symplectic_j(basis.n)


def _encoder_matrix(basis: SymplecticBasis) -> np.ndarray:
    return symplectic_inverse(basis) if basis.kind == "psd_cotangent_lift" else basis.A.T


def project(y, basis: SymplecticBasis) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != basis.A.shape[0]:
        raise ValueError(f"state length {y.shape[-1]} does not match basis rows {basis.A.shape[0]}")
    return y @ _encoder_matrix(basis).T


def reconstruct(ybar, basis: SymplecticBasis) -> np.ndarray:
    ybar = np.asarray(ybar, dtype=np.float64)
    if ybar.shape[-1] != basis.A.shape[1]:
        raise ValueError(f"latent length {ybar.shape[-1]} does not match basis columns {basis.A.shape[1]}")
    return ybar @ basis.A.T


def reduced_rhs(ybar, basis: SymplecticBasis, fom) -> np.ndarray:
    """Galerkin field ``J_2K A^T grad H(A ybar)``; POD uses ``A^T J_2N grad H(A ybar)``."""
    ybar = np.asarray(ybar, dtype=np.float64)
    if ybar.shape != (basis.A.shape[1],) or fom.n != basis.n:
        raise ValueError("reduced_rhs: dimension mismatch between latent, basis and model")
    y = basis.A @ ybar
    gq, gp = fom.grad(y[: fom.n], y[fom.n :])
    grad = np.concatenate([gq, gp])
    if basis.kind == "psd_cotangent_lift":
        return symplectic_j(basis.k) @ (basis.A.T @ grad)
    return basis.A.T @ np.concatenate([gp, -gq])


class LinearReducedModel:
    """Reduced dynamics of a linear basis, shaped for the integrators.

    For a PSD basis with a separable full-order Hamiltonian the reduced
    Hamiltonian ``H o A`` is separable too and ``grad_q``/``grad_p`` drive the
    explicit scheme.  Otherwise ``grad(qbar, pbar)`` returns the two halves of
    ``-J_2K`` times the reduced field, which is the partial gradient of
    ``H o A`` for PSD and a partitioned pseudo-gradient for POD.  Every
    evaluation goes through the full dimension.
    """

    def __init__(self, basis: SymplecticBasis, fom):
        if fom.n != basis.n:
            raise ValueError("basis and model dimensions differ")
        self.basis = basis
        self.fom = fom
        self.k = basis.k
        self.separable = bool(fom.separable and basis.kind == "psd_cotangent_lift")
        a = basis.A
        self._aq = np.ascontiguousarray(a[: basis.n])  # (N, 2K)
        self._ap = np.ascontiguousarray(a[basis.n :])
        if basis.phi is not None:
            self._phi = np.ascontiguousarray(basis.phi)
            self._phit = np.ascontiguousarray(basis.phi.T)

    def grad_q(self, qbar):
        return self._phit @ self.fom.grad_q(self._phi @ qbar)

    def grad_p(self, pbar):
        return self._phit @ self.fom.grad_p(self._phi @ pbar)

    def grad(self, qbar, pbar):
        ybar = np.concatenate([qbar, pbar])
        q, p = self._aq @ ybar, self._ap @ ybar
        gq, gp = self.fom.grad(q, p)
        if self.basis.kind == "psd_cotangent_lift":
            g = self._aq.T @ gq + self._ap.T @ gp
            return g[: self.k], g[self.k :]
        # field f = A^T (gp, -gq); pseudo-gradient (-f_p, f_q)
        f = self._aq.T @ gp - self._ap.T @ gq
        return -f[self.k :], f[: self.k]

    def encode(self, y):
        return project(y, self.basis)

    def decode(self, ybar):
        return reconstruct(ybar, self.basis)
