"""Sampling-based falsification of the synthesized certificates.

Nothing in this module calls an SDP solver: every check is an eigenvalue
evaluation or a forward simulation over (A, B) pairs drawn from the
consistency set, so agreement with the synthesis is independent evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consistency import ConsistentSamples, sample_consistent
from .lti_sim import DataSet
from .synthesis import ORIGIN, ConstraintSets, CostWeights, SynthesisResult

DECREASE_TOL = 1e-6
RPI_TOL = 1e-8
COST_TOL = 1e-6
LYAPUNOV_TOL = 1e-8
CONSTRAINT_CERT_TOL = 1e-8
IDENTITY_TOL = 1e-8
LEVEL_TOL = 1e-6


@dataclass
class CheckReport:
    name: str
    passed: bool
    samples: int = 0
    violations: int = 0
    worst: float = float("nan")
    worst_index: int | None = None
    note: str = ""

    def format(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        text = (f"[{flag}] {self.name}: samples={self.samples} violations={self.violations} "
                f"worst={self.worst:.4g}")
        if self.worst_index is not None:
            text += f" (index {self.worst_index})"
        if self.note:
            text += f" -- {self.note}"
        return text

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "samples": self.samples,
                "violations": self.violations, "worst": self.worst,
                "worst_index": self.worst_index, "note": self.note}


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def format(self) -> str:
        lines = [c.format() for c in self.checks]
        lines += [f"note: {n}" for n in self.notes]
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "notes": list(self.notes)}


def _stack(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, ConsistentSamples):
        return samples.stacked()
    samples = list(samples)
    return (np.stack([np.atleast_2d(a) for a, _ in samples]),
            np.stack([np.atleast_2d(b) for _, b in samples]))


def _closed_loop_matrices(F, samples) -> np.ndarray:
    A, B = _stack(samples)
    return A + B @ np.atleast_2d(F)


def check_decrease(F, P, weights: CostWeights, samples, tol: float = DECREASE_TOL) -> CheckReport:
    """Largest eigenvalue of ``(A+BF)^T P (A+BF) - P + F^T R F + Q`` per sample."""
    F = np.atleast_2d(F)
    P = np.asarray(P, dtype=float)
    Acl = _closed_loop_matrices(F, samples)
    M = np.swapaxes(Acl, 1, 2) @ P @ Acl - P + F.T @ weights.R @ F + weights.Q
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    lam = np.linalg.eigvalsh(M)[:, -1]
    worst = int(np.argmax(lam))
    bad = int(np.sum(lam > tol))
    return CheckReport("decrease", bad == 0, samples=lam.size, violations=bad,
                       worst=float(lam[worst]), worst_index=worst)


def boundary_states(P, gamma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` states on ``{x : x^T P x = gamma}``, shape (count, n)."""
    P = np.asarray(P, dtype=float)
    lam, V = np.linalg.eigh(P)
    inv_sqrt = (V / np.sqrt(lam)) @ V.T
    v = rng.standard_normal((count, P.shape[0]))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.sqrt(gamma) * v @ inv_sqrt.T


def check_rpi(F, P, gamma: float, samples, trial_states, depth: int = 20,
              tol: float = RPI_TOL) -> CheckReport:
    """Iterate every trial state under every sampled closed loop for ``depth``
    steps and require ``x^T P x <= gamma (1 + tol)`` throughout."""
    P = np.asarray(P, dtype=float)
    Acl = _closed_loop_matrices(F, samples)
    X = np.atleast_2d(np.asarray(trial_states, dtype=float))
    bound = gamma * (1 + tol)
    Y = np.broadcast_to(X, (Acl.shape[0],) + X.shape)
    worst_val = -np.inf
    worst_idx = None
    violations = 0
    for _ in range(depth):
        Y = Y @ np.swapaxes(Acl, 1, 2)
        level = np.einsum("kji,il,kjl->kj", Y, P, Y)
        violations += int(np.sum(level > bound))
        k = np.unravel_index(np.argmax(level), level.shape)
        if level[k] > worst_val:
            worst_val, worst_idx = float(level[k]), int(k[0])
    ratio = worst_val / gamma if gamma > 0 else worst_val
    return CheckReport("rpi", violations == 0, samples=Acl.shape[0] * X.shape[0],
                       violations=violations, worst=ratio, worst_index=worst_idx,
                       note=f"depth {depth}; worst x'Px/gamma")


def check_cost_bound(F, gamma: float, x_t, samples, weights: CostWeights,
                     sim_horizon: int = 20000, tol: float = COST_TOL,
                     stop_norm: float = 1e-10, diverge_norm: float = 1e6) -> CheckReport:
    """Simulate ``x+ = (A+BF) x`` from ``x_t`` for each sample and compare the
    accumulated stage cost with ``gamma``."""
    F = np.atleast_2d(F)
    Acl = _closed_loop_matrices(F, samples)
    K = Acl.shape[0]
    x = np.tile(np.asarray(x_t, dtype=float).reshape(-1), (K, 1))
    W = weights.Q + F.T @ weights.R @ F
    cost = np.zeros(K)
    active = np.linalg.norm(x, axis=1) >= stop_norm
    diverged = np.zeros(K, dtype=bool)
    for _ in range(sim_horizon):
        if not active.any():
            break
        xa = x[active]
        cost[active] += np.einsum("ki,ij,kj->k", xa, W, xa)
        x[active] = np.einsum("kij,kj->ki", Acl[active], xa)
        norms = np.linalg.norm(x, axis=1)
        diverged |= norms > diverge_norm
        active &= (norms >= stop_norm) & ~diverged
    truncated = int(active.sum())
    bound = gamma * (1 + tol)
    bad = (cost > bound) | diverged
    worst = int(np.argmax(cost))
    note = f"max cost / gamma = {cost[worst] / gamma:.6g}" if gamma > 0 else ""
    if diverged.any():
        note += f"; {int(diverged.sum())} sampled closed loops diverged"
    if truncated:
        note += f"; {truncated} runs hit the horizon before |x| < {stop_norm:g}"
    return CheckReport("cost-bound", not bad.any(), samples=K, violations=int(bad.sum()),
                       worst=float(cost[worst]), worst_index=worst, note=note.strip("; "))


def check_constraint_certificates(result: SynthesisResult, cons: ConstraintSets,
                                  tol: float = CONSTRAINT_CERT_TOL) -> CheckReport:
    """``H - L^T S_u L >= 0`` and ``S_x - P / gamma >= 0`` by eigenvalues,
    each relative to the spectral norm of the larger term."""
    H, L = np.asarray(result.H), np.atleast_2d(result.L)
    pairs = [(H, L.T @ cons.S_u @ L)]
    if cons.S_x is not None:
        pairs.append((cons.S_x, np.asarray(result.P) / result.gamma))
    values = []
    for big, small in pairs:
        scale = max(np.linalg.norm(big, 2), np.linalg.norm(small, 2), 1e-300)
        values.append(np.linalg.eigvalsh(big - small)[0] / scale)
    worst = float(min(values))
    return CheckReport("constraint-certificates", worst >= -tol, samples=len(values),
                       violations=int(sum(v < -tol for v in values)), worst=worst,
                       note="smallest eigenvalue relative to the matrix norm")


def check_certificate_identities(result: SynthesisResult, x_t, tol: float = IDENTITY_TOL,
                                 level_tol: float = LEVEL_TOL) -> CheckReport:
    """Recompute the certificate from its own decision variables.

    Checks ``F H = L`` and ``P H = gamma I`` by relative residuals and
    ``x_t' P x_t <= gamma``. The sampling checks cannot see a rescaled ``P``
    when the decrease inequality has slack, but these identities can.
    """
    H, L = np.asarray(result.H), np.atleast_2d(result.L)
    F, P, g = np.atleast_2d(result.F), np.asarray(result.P), float(result.gamma)
    x = np.asarray(x_t, dtype=float).reshape(-1)
    values = [
        np.linalg.norm(F @ H - L) / max(np.linalg.norm(L), 1e-300),
        np.linalg.norm(P @ H - g * np.eye(H.shape[0])) / max(g * np.sqrt(H.shape[0]), 1e-300),
    ]
    gain_bad = sum(v > tol for v in values)
    level = float(x @ P @ x / g - 1.0)
    worst = max(max(values), level)
    return CheckReport("certificate-identities", gain_bad == 0 and level <= level_tol,
                       samples=3, violations=int(gain_bad + (level > level_tol)), worst=worst,
                       note="relative residuals of FH = L, PH = gamma I and x'Px/gamma - 1")


def check_closed_loop_guarantees(run, weights: CostWeights, tol: float = LYAPUNOV_TOL,
                                 gamma_tol: float = 1e-6) -> VerificationReport:
    """Clause-by-clause check of a noise-free closed loop against recursive
    feasibility, constraint satisfaction and the Lyapunov decrease."""
    report = VerificationReport()
    steps = run.steps
    feasible = all(run.feasible_flags) and len(run.feasible_flags) == steps
    report.checks.append(CheckReport("feasible", feasible, samples=steps,
                                     violations=steps - int(sum(run.feasible_flags))))
    flags = run.constraint_flags
    report.checks.append(CheckReport(
        "constraints", all(flags), samples=len(flags), violations=len(flags) - int(sum(flags)),
        worst=max(max(run.input_norms, default=0.0), max(run.state_norms, default=0.0)),
        note="largest ellipsoidal norm"))

    c = float(np.linalg.eigvalsh(weights.Q)[0])
    sub_bad = dec_bad = 0
    sub_worst = dec_worst = -np.inf
    checked = 0
    for t in range(steps - 1):
        P0, P1 = run.lyapunov[t], run.lyapunov[t + 1]
        if P0 is None or P1 is None:
            continue
        x0, x1 = run.states[t], run.states[t + 1]
        v1 = x1 @ P1 @ x1
        sub = v1 - x1 @ P0 @ x1
        dec = v1 - x0 @ P0 @ x0 + c * (x0 @ x0)
        sub_worst, dec_worst = max(sub_worst, sub), max(dec_worst, dec)
        sub_bad += sub > tol
        dec_bad += dec > tol
        checked += 1
    report.checks.append(CheckReport("lyapunov-suboptimality", sub_bad == 0, samples=checked,
                                     violations=int(sub_bad), worst=float(sub_worst),
                                     note="x1'P1x1 - x1'P0x1"))
    report.checks.append(CheckReport("lyapunov-decrease", dec_bad == 0, samples=checked,
                                     violations=int(dec_bad), worst=float(dec_worst),
                                     note="x1'P1x1 - x0'P0x0 + c|x0|^2"))

    g = run.gammas
    ratios = [g[t + 1] / g[t] - 1 for t in range(len(g) - 1)
              if run.statuses[t] != ORIGIN and run.statuses[t + 1] != ORIGIN and g[t] > 0]
    worst = max(ratios, default=0.0)
    bad = int(sum(r > gamma_tol for r in ratios))
    report.checks.append(CheckReport("gamma-monotone", bad == 0, samples=len(ratios),
                                     violations=bad, worst=float(worst),
                                     note="largest relative increase"))
    if steps == 0 or all(s == ORIGIN for s in run.statuses):
        report.notes.append("vacuous: the state never left the origin")
    return report


def verify_certificate(result: SynthesisResult, data: DataSet, weights: CostWeights,
                       cons: ConstraintSets | None, x_t, rng: np.random.Generator,
                       n_samples: int = 1000, n_states: int = 100, depth: int = 20,
                       samples: ConsistentSamples | None = None) -> VerificationReport:
    """Run every certificate check for one synthesis result."""
    report = VerificationReport()
    if samples is None:
        samples = sample_consistent(data, n_samples, rng)
    if samples.singleton:
        report.notes.append("singleton consistency set (exact data): checked at the "
                            "least-squares system only")
    if samples.undersampled:
        report.notes.append(f"undersampled: {len(samples)} of {n_samples} pairs accepted")
    if len(samples) == 0:
        report.checks.append(CheckReport("sampling", False, note="no consistent pair found"))
        return report
    if result.status == ORIGIN:
        report.notes.append("state at origin: certificate is trivial")
        return report
    if result.H is not None and result.L is not None:
        report.checks.append(check_certificate_identities(result, x_t))
    report.checks.append(check_decrease(result.F, result.P, weights, samples))
    states = boundary_states(result.P, result.gamma, n_states, rng)
    report.checks.append(check_rpi(result.F, result.P, result.gamma, samples, states, depth))
    report.checks.append(check_cost_bound(result.F, result.gamma, x_t, samples, weights))
    if cons is not None:
        report.checks.append(check_constraint_certificates(result, cons))
    return report
