"""The set of system matrices consistent with noisy data.

Each transition (x_i, u_i, x_{i+1}) admits every (A, B) whose implied noise
``x_{i+1} - A x_i - B u_i`` lies in the eps-ball. As a quadratic matrix
inequality this reads ``[I A B] Pi_i [I A B]^T >= 0`` with

    Pi_i = D_i diag(eps I, -1) D_i^T,   D_i = [[I, x_{i+1}], [0, -x_i], [0, -u_i]],

and nonnegative combinations ``sum_i tau_i Pi_i`` feed the synthesis LMI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .lti_sim import DataSet

PSD_TOL = 1e-10
RESIDUAL_SLACK = 1e-12


def min_eig(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def is_psd(M: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Eigenvalue test ``lambda_min(M) >= -tol (1 + ||M||_2)``."""
    M = np.asarray(M, dtype=float)
    return min_eig(M) >= -tol * (1.0 + np.linalg.norm(M, 2))


@dataclass(frozen=True)
class PiBlocks:
    """Per-sample QMI matrices, stacked as an array of shape (T, 2n+m, 2n+m)."""

    blocks: np.ndarray
    n: int
    m: int
    eps: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        size = 2 * self.n + self.m
        if b.ndim != 3 or b.shape[1:] != (size, size):
            raise ValueError(f"expected blocks of shape (T, {size}, {size}), got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def T(self) -> int:
        return self.blocks.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.n + self.m

    def __len__(self):
        return self.T

    def __getitem__(self, i):
        return self.blocks[i]


@dataclass(frozen=True)
class Multipliers:
    tau: np.ndarray
    mode: str = "per-sample"

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float).reshape(-1)
        if self.mode not in ("per-sample", "common"):
            raise ValueError(f"unknown multiplier mode {self.mode!r}")
        if np.any(tau < 0):
            i = int(np.argmin(tau))
            raise ValueError(f"multiplier tau[{i}] = {tau[i]:.3e} is negative")
        if self.mode == "common" and tau.size and np.ptp(tau) != 0:
            raise ValueError("common-mode multipliers must all be equal")
        object.__setattr__(self, "tau", tau)

    @classmethod
    def common(cls, value: float, T: int) -> "Multipliers":
        return cls(np.full(T, float(value)), mode="common")


def _stacked_d(data: DataSet) -> np.ndarray:
    """D_i for every sample, shape (T, 2n+m, n+1)."""
    n, m, T = data.n, data.m, data.T
    D = np.zeros((T, 2 * n + m, n + 1))
    D[:, :n, :n] = np.eye(n)
    D[:, :n, n] = data.X_plus.T
    D[:, n:2 * n, n] = -data.X_minus.T
    D[:, 2 * n:, n] = -data.U.T
    return D


def build_pi_blocks(data: DataSet) -> PiBlocks:
    D = _stacked_d(data)
    weight = np.append(np.full(data.n, data.eps), -1.0)
    blocks = np.einsum("tik,k,tjk->tij", D, weight, D)
    blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    return PiBlocks(blocks, data.n, data.m, data.eps)


def assemble_pi(blocks: PiBlocks, mult: Multipliers) -> np.ndarray:
    if mult.tau.size != blocks.T:
        raise ValueError(f"got {mult.tau.size} multipliers for {blocks.T} blocks")
    return np.tensordot(mult.tau, blocks.blocks, axes=1)


def contains(data: DataSet, A, B) -> bool:
    """Definitional membership: every implied noise sample is within the bound."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(data.n, data.m)
    if A.shape != (data.n, data.n):
        raise ValueError(f"A has shape {A.shape}, data needs {(data.n, data.n)}")
    r = data.residuals(A, B)
    return bool(np.all(np.sum(r * r, axis=0) <= data.eps + RESIDUAL_SLACK))


def qmi_form(blocks: PiBlocks, mult: Multipliers, A, B) -> np.ndarray:
    """``[I A B] Pi(tau) [I A B]^T``."""
    n = blocks.n
    S = np.hstack([np.eye(n), np.asarray(A, dtype=float),
                   np.asarray(B, dtype=float).reshape(n, blocks.m)])
    return S @ assemble_pi(blocks, mult) @ S.T


def qmi_membership(blocks: PiBlocks, mult: Multipliers, A, B, tol: float = PSD_TOL) -> bool:
    return is_psd(qmi_form(blocks, mult, A, B), tol)


def dump_pi_blocks(blocks: PiBlocks, path) -> None:
    """Plain-text diagnostics: one header line then the rows of each block."""
    lines = []
    for i, b in enumerate(blocks.blocks):
        lines.append(f"# block {i}")
        lines.extend(" ".join(format(v, ".17g") for v in row) for row in b)
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

@dataclass
class ConsistentSamples:
    """Accepted (A, B) pairs plus bookkeeping of the rejection sampler."""

    pairs: list = field(default_factory=list)
    proposals: int = 0
    accepted: int = 0
    scale: float = 0.0
    undersampled: bool = False
    singleton: bool = False

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All pairs as arrays of shape (K, n, n) and (K, n, m)."""
        return (np.stack([a for a, _ in self.pairs]), np.stack([b for _, b in self.pairs]))


def least_squares_estimate(data: DataSet) -> tuple[np.ndarray, np.ndarray]:
    Z = np.vstack([data.X_minus, data.U])
    theta = np.linalg.lstsq(Z.T, data.X_plus.T, rcond=None)[0].T
    return theta[:, :data.n], theta[:, data.n:]


def _minimax_estimate(data: DataSet, theta0: np.ndarray) -> np.ndarray:
    """(A, B) minimizing the largest squared residual (epigraph form, SLSQP)."""
    Z = np.vstack([data.X_minus, data.U])
    shape = theta0.shape

    def residual_sq(v):
        r = data.X_plus - v[:-1].reshape(shape) @ Z
        return np.sum(r * r, axis=0)

    start = np.append(theta0.ravel(), residual_sq(np.append(theta0.ravel(), 0)).max())
    res = optimize.minimize(
        lambda v: v[-1], start, method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda v: v[-1] - residual_sq(v)}],
        options={"maxiter": 500, "ftol": 1e-16},
    )
    return res.x[:-1].reshape(shape)


def sample_consistent(data: DataSet, count: int, rng: np.random.Generator, *,
                      batch: int = 500, max_proposals: int | None = None,
                      target=(0.1, 0.5)) -> ConsistentSamples:
    """Rejection-sample ``count`` pairs from the consistency set.

    Proposals are Gaussian perturbations of a consistent center (the
    least-squares estimate, or the minimax-residual estimate when least
    squares is inconsistent), shaped by the inverse square root of the
    regressor Gram matrix so that they match the set's geometry. The
    perturbation scale is doubled or halved between batches to keep the
    acceptance rate inside ``target``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    n, m = data.n, data.m
    max_proposals = max_proposals or 200 * count + 10 * batch
    out = ConsistentSamples()

    A_ls, B_ls = least_squares_estimate(data)
    theta_c = np.hstack([A_ls, B_ls])
    if contains(data, A_ls, B_ls):
        out.pairs.append((A_ls, B_ls))
    else:
        theta_c = _minimax_estimate(data, theta_c)
        if not contains(data, theta_c[:, :n], theta_c[:, n:]):
            out.undersampled = True
            return out

    Z = np.vstack([data.X_minus, data.U])
    evals, evecs = np.linalg.eigh(Z @ Z.T)
    inv_sqrt = np.where(evals > 1e-12 * evals.max(), 1.0 / np.sqrt(np.maximum(evals, 1e-300)), 0.0)
    shape = (evecs * inv_sqrt) @ evecs.T
    if data.eps == 0.0:
        # exact data leaves no room to perturb along excited directions
        out.singleton = bool(out.pairs) and np.linalg.matrix_rank(Z) == n + m
        return out

    scale = np.sqrt(data.eps)
    lo, hi = target
    while len(out.pairs) < count and out.proposals < max_proposals:
        xi = rng.standard_normal((batch, n, n + m))
        thetas = theta_c + scale * xi @ shape
        r = data.X_plus[None] - thetas @ Z[None]
        ok = np.all(np.einsum("kit,kit->kt", r, r) <= data.eps + RESIDUAL_SLACK, axis=1)
        out.proposals += batch
        out.accepted += int(ok.sum())
        for th in thetas[ok]:
            if len(out.pairs) == count:
                break
            out.pairs.append((th[:, :n].copy(), th[:, n:].copy()))
        rate = ok.mean()
        if rate > hi:
            scale *= 2.0
        elif rate < lo:
            scale *= 0.5
    out.scale = scale
    out.undersampled = len(out.pairs) < count and out.acceptance_rate < 1e-4
    return out
