"""SDP synthesis of the worst-case cost bound and the state-feedback gain.

Decision variables are ``gamma``, symmetric ``H``, ``L`` and the multipliers
``tau >= 0``; the gain is ``F = L H^{-1}`` and the Lyapunov matrix
``P = gamma H^{-1}``. The four LMI builders below accept either numeric
arrays (returning a numpy matrix, handy for checking a candidate) or cvxpy
expressions (returning an affine cvxpy expression).
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy import linalg

from .consistency import Multipliers, PiBlocks, assemble_pi

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"
ORIGIN = "origin"

_ACCEPTED = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
_INFEASIBLE = (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE)


def factor_weight(W, name: str = "W") -> np.ndarray:
    """Upper-triangular ``M`` with ``M^T M = W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"{name} must be square, got shape {W.shape}")
    if not np.allclose(W, W.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(W).max())):
        raise ValueError(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(W)
    if lam[0] <= 0:
        raise ValueError(f"{name} is not positive definite: smallest eigenvalue {lam[0]:.3e}")
    return np.linalg.cholesky(W).T


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    M_Q: np.ndarray = field(init=False, repr=False)
    M_R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "M_Q", factor_weight(Q, "Q"))
        object.__setattr__(self, "M_R", factor_weight(R, "R"))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class ConstraintSets:
    """Ellipsoidal constraints ``u^T S_u u <= 1`` and ``x^T S_x x <= 1``.

    ``S_x = None`` (or the zero matrix) disables the state constraint.
    """

    S_u: np.ndarray
    S_x: np.ndarray | None = None

    def __post_init__(self):
        S_u = np.atleast_2d(np.asarray(self.S_u, dtype=float))
        factor_weight(S_u, "S_u")
        object.__setattr__(self, "S_u", S_u)
        if self.S_x is not None:
            S_x = np.atleast_2d(np.asarray(self.S_x, dtype=float))
            if not np.allclose(S_x, S_x.T):
                raise ValueError("S_x is not symmetric")
            lam = np.linalg.eigvalsh(S_x)[0]
            if lam < -1e-12 * max(1.0, np.abs(S_x).max()):
                raise ValueError(f"S_x is not positive semidefinite: smallest eigenvalue {lam:.3e}")
            object.__setattr__(self, "S_x", None if not S_x.any() else S_x)

    @property
    def S_u_inv(self) -> np.ndarray:
        return np.linalg.inv(self.S_u)

    def input_norm(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(np.sqrt(max(u @ self.S_u @ u, 0.0)))

    def state_norm(self, x) -> float:
        if self.S_x is None:
            return 0.0
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ self.S_x @ x, 0.0)))


@dataclass(frozen=True)
class SynthesisOptions:
    multiplier_mode: str = "per-sample"
    constrained: bool = True
    solver: str = "CVXOPT"
    fallback_solvers: tuple = ("CLARABEL",)
    # per-solver keyword arguments passed to cvxpy, e.g. {"CVXOPT": {"abstol": 1e-9}}
    solver_options: dict = field(default_factory=dict)
    # keep the previous certificate when it is still feasible and re-solving
    # lowers gamma by less than this relative amount; None disables
    incumbent_rtol: float | None = 1e-6
    # strict decrease LMI is imposed as <= -margin (1 + |x_t|^2) I
    margin: float = 1e-8
    origin_threshold: float = 1e-9
    precondition: bool = True
    # multiplier scales tried in turn with the primary solver; the fallback
    # solvers use the first one
    tau_scales: tuple = (1.0, 0.1, 10.0)
    warm_start: bool = False
    max_condition: float = 1e12

    def __post_init__(self):
        if self.multiplier_mode not in ("per-sample", "common"):
            raise ValueError(f"unknown multiplier mode {self.multiplier_mode!r}")
        if any(k <= 0 for k in self.tau_scales):
            raise ValueError(f"tau scales must be positive, got {self.tau_scales}")
        if self.incumbent_rtol is not None and not self.incumbent_rtol >= 0:
            raise ValueError(f"incumbent_rtol must be non-negative or None, got {self.incumbent_rtol}")


@dataclass
class SynthesisResult:
    status: str
    gamma: float | None = None
    H: np.ndarray | None = None
    L: np.ndarray | None = None
    tau: Multipliers | None = None
    F: np.ndarray | None = None
    P: np.ndarray | None = None
    solve_time: float = 0.0
    solver: str = ""
    iterations: int | None = None
    diagnostics: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, ORIGIN)

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v).tolist()
        return {
            "status": self.status,
            "gamma": self.gamma,
            "H": arr(self.H),
            "L": arr(self.L),
            "F": arr(self.F),
            "P": arr(self.P),
            "tau": None if self.tau is None else self.tau.tau.tolist(),
            "tau_mode": None if self.tau is None else self.tau.mode,
            "solver": self.solver,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisResult":
        def arr(v):
            return None if v is None else np.atleast_2d(np.asarray(v, dtype=float))
        tau = None
        if d.get("tau") is not None:
            tau = Multipliers(np.asarray(d["tau"], dtype=float), d.get("tau_mode") or "per-sample")
        return cls(status=d["status"], gamma=d.get("gamma"), H=arr(d.get("H")), L=arr(d.get("L")),
                   tau=tau, F=arr(d.get("F")), P=arr(d.get("P")),
                   solve_time=d.get("solve_time", 0.0), solver=d.get("solver", ""),
                   iterations=d.get("iterations"), diagnostics=d.get("diagnostics", ""))


# --------------------------------------------------------------------------
# LMI blocks
# --------------------------------------------------------------------------

def _is_expr(v) -> bool:
    return isinstance(v, cp.Expression)


def _bmat(rows):
    if any(_is_expr(v) for row in rows for v in row):
        return cp.bmat(rows)
    return np.block([[np.atleast_2d(np.asarray(v, dtype=float)) for v in row] for row in rows])


def _sym(M):
    return (M + M.T) / 2


def build_lmi_initial(x_t, H):
    """``[[1, x^T], [x, H]]``; PSD iff ``x^T H^{-1} x <= 1`` (for H > 0)."""
    if _is_expr(x_t):
        n = x_t.shape[0]
        col = cp.reshape(x_t, (n, 1), order="C")
    else:
        col = np.asarray(x_t, dtype=float).reshape(-1, 1)
        n = col.shape[0]
    return _bmat([[np.ones((1, 1)), col.T], [col, H]])


def pi_of_tau(blocks: PiBlocks, tau):
    """``sum_i tau_i Pi_i`` for numeric or cvxpy ``tau``."""
    if _is_expr(tau):
        size = blocks.size
        stacked = blocks.blocks.reshape(blocks.T, size * size).T
        return cp.reshape(stacked @ tau, (size, size), order="C")
    if not isinstance(tau, Multipliers):
        tau = Multipliers(tau)
    return assemble_pi(blocks, tau)


def build_lmi_decrease(blocks: PiBlocks, weights: CostWeights, H, L, tau, gamma, Pi=None):
    """Three-block-row matrix that must be negative definite.

    Rows/columns are ordered as [I, A, B] (size 2n+m), then the coupling
    block (n), then the cost block (m+n). ``Pi`` may be passed to reuse an
    already assembled ``sum tau_i Pi_i``.
    """
    n, m = blocks.n, blocks.m
    N = 2 * n + m
    if Pi is None:
        Pi = pi_of_tau(blocks, tau)
    zeros = np.zeros
    top_left = Pi + _bmat([[-H, zeros((n, n + m))], [zeros((n + m, n)), zeros((n + m, n + m))]])
    coupling = _bmat([[zeros((n, n))], [H], [L]])
    Phi = _bmat([[weights.M_R @ L], [weights.M_Q @ H]])
    if _is_expr(gamma):
        cost_block = -gamma * np.eye(n + m)
    else:
        cost_block = -float(gamma) * np.eye(n + m)
    return _bmat([
        [top_left, coupling, zeros((N, n + m))],
        [coupling.T, -H, Phi.T],
        [zeros((n + m, N)), Phi, cost_block],
    ])


def build_lmi_input(H, L, S_u):
    """``[[H, L^T], [L, S_u^{-1}]]``; PSD iff ``H - L^T S_u L >= 0``."""
    S_u = np.atleast_2d(np.asarray(S_u, dtype=float))
    try:
        S_u_inv = linalg.inv(S_u)
    except linalg.LinAlgError as exc:
        raise ValueError("S_u is singular") from exc
    return _bmat([[H, L.T], [L, S_u_inv]])


def build_lmi_state(H, S_x):
    """``[[S_x, I], [I, H]]``; PSD iff ``S_x >= H^{-1}``."""
    S_x = np.atleast_2d(np.asarray(S_x, dtype=float))
    n = S_x.shape[0]
    return _bmat([[S_x, np.eye(n)], [np.eye(n), H]])


def lmi_margins(result: SynthesisResult, x_t, blocks: PiBlocks, weights: CostWeights,
                cons: ConstraintSets | None) -> dict:
    """Smallest eigenvalue of each LMI (decrease LMI negated) at a candidate."""
    H, L = result.H, result.L
    out = {
        "initial": float(np.linalg.eigvalsh(_sym(build_lmi_initial(x_t, H)))[0]),
        "decrease": float(np.linalg.eigvalsh(
            _sym(-build_lmi_decrease(blocks, weights, H, L, result.tau, result.gamma)))[0]),
        "tau": float(result.tau.tau.min()) if result.tau.tau.size else 0.0,
    }
    if cons is not None:
        out["input"] = float(np.linalg.eigvalsh(_sym(build_lmi_input(H, L, cons.S_u)))[0])
        if cons.S_x is not None:
            out["state"] = float(np.linalg.eigvalsh(_sym(build_lmi_state(H, cons.S_x)))[0])
    return out


def recover_certificate(result: SynthesisResult, max_condition: float = 1e12) -> SynthesisResult:
    """Fill ``F = L H^{-1}`` and ``P = gamma H^{-1}`` from the decision variables.

    Uses a Cholesky factorization of H; no explicit inverse is formed except
    through the factor solve for P.
    """
    H = _sym(np.asarray(result.H, dtype=float))
    L = np.atleast_2d(np.asarray(result.L, dtype=float))
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > max_condition:
        result.status = NUMERICAL_FAILURE
        result.diagnostics += f" H is numerically singular (condition number {cond:.3e})"
        return result
    try:
        factor = linalg.cho_factor(H)
    except linalg.LinAlgError:
        result.status = NUMERICAL_FAILURE
        result.diagnostics += " H is not positive definite"
        return result
    result.H = H
    result.F = linalg.cho_solve(factor, L.T).T
    P = result.gamma * linalg.cho_solve(factor, np.eye(H.shape[0]))
    result.P = _sym(P)
    if np.linalg.eigvalsh(result.P)[0] <= 0:
        result.status = NUMERICAL_FAILURE
        result.diagnostics += " recovered P is not positive definite"
    return result


# --------------------------------------------------------------------------
# the SDP
# --------------------------------------------------------------------------

def _blkdiag(*mats):
    return linalg.block_diag(*[np.atleast_2d(m) for m in mats])


class Synthesizer:
    """Compiled SDP for fixed data, weights and constraints.

    The state ``x_t`` enters as a cvxpy parameter so the problem is
    canonicalized once and re-solved cheaply in a receding-horizon loop.

    With ``precondition`` on, the variables are rescaled as
    ``H = D Hs D``, ``L = E Ls D`` and ``tau = kappa taus`` (D, E the RMS
    magnitudes of the recorded states and inputs), and every LMI is passed
    through the matching congruence. Feasible sets and the optimal gamma are
    unchanged; the solver just sees entries of comparable size.
    """

    def __init__(self, blocks: PiBlocks, weights: CostWeights,
                 cons: ConstraintSets | None = None, opts: SynthesisOptions | None = None):
        self.blocks = blocks
        self.weights = weights
        self.cons = cons
        self.opts = opts or SynthesisOptions()
        n, m, T = blocks.n, blocks.m, blocks.T
        if weights.n != n or weights.m != m:
            raise ValueError(f"weights are for (n, m) = ({weights.n}, {weights.m}), data has ({n}, {m})")
        if cons is not None:
            if cons.S_u.shape != (m, m):
                raise ValueError(f"S_u has shape {cons.S_u.shape}, expected {(m, m)}")
            if cons.S_x is not None and cons.S_x.shape != (n, n):
                raise ValueError(f"S_x has shape {cons.S_x.shape}, expected {(n, n)}")
        self.n, self.m, self.T = n, m, T
        self._build()

    def _scales(self):
        n, m = self.n, self.m
        if not self.opts.precondition:
            return np.ones(n), np.ones(m)
        # bottom-right (n+m) block of each Pi_i is -[x_i; u_i][x_i; u_i]^T
        second = -np.diagonal(self.blocks.blocks[:, n:, n:], axis1=1, axis2=2).mean(axis=0)
        rms = np.sqrt(np.maximum(second, 0.0))
        rms[rms == 0] = 1.0
        dx, du = rms[:n], rms[n:]
        return dx, du

    def _build(self):
        n, m, T = self.n, self.m, self.T
        opts = self.opts
        dx, du = self._scales()
        self.scales = (dx, du)
        self.x_param = cp.Parameter(n, name="x_t")
        self.margin_param = cp.Parameter(nonneg=True, name="margin")

        self.Hs = cp.Variable((n, n), symmetric=True, name="H")
        self.Ls = cp.Variable((m, n), name="L")
        self.gamma = cp.Variable(name="gamma")
        ntau = 1 if opts.multiplier_mode == "common" else T
        self.taus = cp.Variable(ntau, nonneg=True, name="tau")
        self.kappa = cp.Parameter(pos=True, name="kappa", value=1.0)
        size = self.blocks.size
        stacked = self.blocks.blocks.reshape(T, size * size).T
        if opts.multiplier_mode == "common":
            stacked = stacked.sum(axis=1, keepdims=True)
        Pi = self.kappa * cp.reshape(stacked @ self.taus, (size, size), order="C")
        self.problem = cp.Problem(cp.Minimize(self.gamma),
                                  self._lmis(self.Hs, self.Ls, self.gamma, Pi))


    def _lmis(self, Hs, Ls, gamma, Pi) -> list:
        """All LMIs in preconditioned coordinates for scaled ``Hs``, ``Ls``."""
        n, m = self.n, self.m
        dx, du = self.scales
        D, E = np.diag(dx), np.diag(du)
        Di, Ei = np.diag(1.0 / dx), np.diag(1.0 / du)
        H = D @ Hs @ D
        L = E @ Ls @ D

        Tdec = _blkdiag(Di, Di, Ei, Di, np.eye(n + m))
        dec = build_lmi_decrease(self.blocks, self.weights, H, L, None, gamma, Pi=Pi)
        dec = _sym(Tdec.T @ dec @ Tdec)
        constraints = [dec << -self.margin_param * (Tdec.T @ Tdec)]

        Tini = _blkdiag(np.eye(1), Di)
        constraints.append(_sym(Tini.T @ build_lmi_initial(self.x_param, H) @ Tini) >> 0)

        if self.opts.constrained and self.cons is not None:
            Tin = _blkdiag(Di, Ei)
            constraints.append(_sym(Tin.T @ build_lmi_input(H, L, self.cons.S_u) @ Tin) >> 0)
            if self.cons.S_x is not None:
                Tst = _blkdiag(D, Di)
                constraints.append(_sym(Tst.T @ build_lmi_state(H, self.cons.S_x) @ Tst) >> 0)
        return constraints

    def _unscale(self, Hs, Ls):
        dx, du = self.scales
        return np.diag(dx) @ Hs @ np.diag(dx), np.diag(du) @ Ls @ np.diag(dx)

    def _values(self):
        H, L = self._unscale(self.Hs.value, self.Ls.value)
        kappa = float(self.kappa.value)
        tau = np.maximum(np.asarray(self.taus.value, dtype=float).reshape(-1), 0.0) * kappa
        if self.opts.multiplier_mode == "common":
            mult = Multipliers.common(float(tau[0]), self.T)
        else:
            mult = Multipliers(tau)
        return H, L, mult

    def _run(self, problem, name, kwargs):
        """Solve, keeping CVXOPT's global options intact even when it raises."""
        import cvxopt.solvers
        saved = dict(cvxopt.solvers.options)
        try:
            problem.solve(solver=name, warm_start=self.opts.warm_start, **kwargs)
        finally:
            cvxopt.solvers.options.clear()
            cvxopt.solvers.options.update(saved)
        return problem.status

    def solve(self, x_t, previous: SynthesisResult | None = None) -> SynthesisResult:
        """Minimize gamma at ``x_t``.

        ``previous`` is the certificate in force, if any; see ``_incumbent``
        for when it is returned instead of the new solution.
        """
        x_t = np.asarray(x_t, dtype=float).reshape(-1)
        if x_t.size != self.n:
            raise ValueError(f"state has length {x_t.size}, expected {self.n}")
        if np.linalg.norm(x_t) <= self.opts.origin_threshold:
            return self._origin_result(previous)

        self.x_param.value = x_t
        self.margin_param.value = self.opts.margin * (1.0 + x_t @ x_t)
        start = time.perf_counter()
        result, seen_infeasible, notes = self._solve_full()
        elapsed = time.perf_counter() - start
        kept = self._incumbent(x_t, previous, result, notes)
        if kept is not None:
            kept.solve_time = elapsed
            return kept
        if result is not None:
            result.solve_time = elapsed
            result.diagnostics = "; ".join(notes)
            return result
        status = INFEASIBLE if seen_infeasible else NUMERICAL_FAILURE
        log.info("synthesis %s at x_t=%s (%s)", status, x_t, "; ".join(notes))
        return SynthesisResult(status=status, solve_time=elapsed, solver=self.opts.solver,
                               diagnostics="; ".join(notes))

    def _incumbent(self, x_t, previous, result, notes) -> SynthesisResult | None:
        """The previous certificate, if it should be kept at ``x_t``.

        Only the initial LMI depends on the state, so the previous solution
        is feasible at ``x_t`` iff ``x_t' P x_t <= gamma``; this is tested with
        the relative slack ``incumbent_rtol``, since the inequality is tight
        whenever the initial LMI was binding. It is kept when the new
        solution improves on it by less than ``incumbent_rtol``, or when
        every solve failed. Without this tie-break the solver may pick any
        point of a non-unique optimal face, and ``x' P x`` can then rise
        between steps even though ``gamma`` does not.
        """
        rtol = self.opts.incumbent_rtol
        if rtol is None or previous is None or previous.status != OPTIMAL or previous.P is None:
            return None
        level = float(x_t @ previous.P @ x_t)
        if level > previous.gamma * (1.0 + rtol):
            return None
        best = None if result is None else result.gamma
        if best is not None and best < previous.gamma * (1.0 - rtol):
            return None
        reason = ("every solve failed" if best is None
                  else f"best new gamma {best:.10g} is within {rtol:g} of it")
        kept = copy.copy(previous)
        kept.diagnostics = "; ".join(notes + [f"kept the previous certificate ({reason})"])
        return kept

    def _solve_full(self):
        notes = []
        seen_infeasible = False
        for name, kappa in self._attempts():
            kwargs = dict(self.opts.solver_options.get(name, {}))
            self.kappa.value = kappa
            tag = f"{name}(kappa={kappa:g})"
            try:
                status = self._run(self.problem, name, kwargs)
            except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
                # CVXOPT surfaces some breakdowns as raw arithmetic errors
                notes.append(f"{tag}: {type(exc).__name__}: {exc}")
                continue
            if status in _INFEASIBLE:
                seen_infeasible = True
                notes.append(f"{tag}: {status}")
                continue
            if status not in _ACCEPTED or self.gamma.value is None:
                notes.append(f"{tag}: {status}")
                continue
            H, L, mult = self._values()
            stats = self.problem.solver_stats
            result = SynthesisResult(status=OPTIMAL, gamma=float(self.gamma.value), H=H, L=L,
                                     tau=mult, solver=name,
                                     iterations=getattr(stats, "num_iters", None))
            result = recover_certificate(result, self.opts.max_condition)
            if result.status == OPTIMAL:
                notes.append(f"{tag}: {status}")
                return result, seen_infeasible, notes
            notes.append(f"{tag}: {result.diagnostics.strip()}")
        return None, seen_infeasible, notes

    def _attempts(self):
        """(solver, tau scale) pairs in the order tried."""
        scales = tuple(float(k) for k in self.opts.tau_scales) or (1.0,)
        out = [(self.opts.solver, k) for k in scales]
        out += [(s, scales[0]) for s in self.opts.fallback_solvers if s != self.opts.solver]
        return out

    def _origin_result(self, previous):
        if previous is not None and previous.F is not None:
            return SynthesisResult(status=ORIGIN, gamma=0.0, H=previous.H, L=previous.L,
                                   tau=previous.tau, F=previous.F, P=previous.P,
                                   diagnostics="state at origin; previous gain reused")
        return SynthesisResult(status=ORIGIN, gamma=0.0, F=np.zeros((self.m, self.n)),
                               diagnostics="state at origin; zero input")


def synthesize(x_t, blocks: PiBlocks, weights: CostWeights, cons: ConstraintSets | None = None,
               opts: SynthesisOptions | None = None,
               previous: SynthesisResult | None = None) -> SynthesisResult:
    """One-shot solve of the min-gamma SDP at state ``x_t``."""
    return Synthesizer(blocks, weights, cons, opts).solve(x_t, previous)


def format_report(result: SynthesisResult) -> str:
    lines = [f"status: {result.status}"]
    if result.gamma is not None:
        lines.append(f"gamma: {result.gamma:.10g}")
    if result.F is not None:
        lines.append(f"F: {np.array2string(np.asarray(result.F), precision=8)}")
    if result.P is not None:
        lines.append(f"P: {np.array2string(np.asarray(result.P), precision=8)}")
    if result.tau is not None and result.tau.tau.size:
        t = result.tau.tau
        lines.append(f"tau ({result.tau.mode}): min {t.min():.4g} max {t.max():.4g} "
                     f"sum {t.sum():.4g} nonzero {(t > 1e-9 * max(t.max(), 1e-300)).sum()}/{t.size}")
    lines.append(f"solver: {result.solver} iterations: {result.iterations} "
                 f"time: {result.solve_time:.3f}s")
    if result.diagnostics:
        lines.append(f"diagnostics: {result.diagnostics}")
    return "\n".join(lines)
