"""Receding-horizon loop: re-solve the SDP at every measured state and apply
``u_t = F_t x_t``."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .consistency import build_pi_blocks
from .lti_sim import DataSet, LtiSystem, NoiseModel, sample_noise, step, trajectory_to_csv
from .synthesis import (ORIGIN, ConstraintSets, CostWeights, SynthesisOptions, SynthesisResult,
                        Synthesizer)

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-8


class InitialInfeasibilityError(RuntimeError):
    """The SDP has no solution at the initial state."""

    def __init__(self, result: SynthesisResult):
        super().__init__(f"synthesis {result.status} at t=0: {result.diagnostics}")
        self.result = result


class RecursiveFeasibilityError(RuntimeError):
    """The SDP became infeasible after a feasible start."""

    def __init__(self, t: int, result: SynthesisResult, run: "ClosedLoopRun"):
        super().__init__(f"synthesis {result.status} at t={t} after a feasible start: "
                         f"{result.diagnostics}")
        self.t = t
        self.result = result
        self.run = run


@dataclass
class MpcConfig:
    weights: CostWeights
    cons: ConstraintSets | None
    data: DataSet
    horizon_steps: int = 300
    online_noise: NoiseModel = field(default_factory=lambda: NoiseModel(0.0, "zero"))
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)
    convergence_threshold: float = 1e-6
    early_stop: bool = False


@dataclass
class ClosedLoopRun:
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    feasible_flags: list = field(default_factory=list)
    input_norms: list = field(default_factory=list)
    state_norms: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    lyapunov: list = field(default_factory=list)
    noisy: bool = False

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def total_cost(self) -> float:
        return float(sum(self.stage_costs))

    @property
    def constraint_flags(self) -> list:
        """Per step: input and state norm both within 1 (+1e-8)."""
        return [u <= 1 + CONSTRAINT_TOL and x <= 1 + CONSTRAINT_TOL
                for u, x in zip(self.input_norms, self.state_norms)]

    def state_array(self) -> np.ndarray:
        return np.array(self.states).T


def stage_cost(u, x, weights: CostWeights) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if u.size != weights.m or x.size != weights.n:
        raise ValueError(f"stage cost expects u in R^{weights.m} and x in R^{weights.n}, "
                         f"got {u.size} and {x.size}")
    return float(u @ weights.R @ u + x @ weights.Q @ x)


def run_closed_loop(sys: LtiSystem, x0, cfg: MpcConfig, rng: np.random.Generator | None = None,
                    synthesizer: Synthesizer | None = None) -> ClosedLoopRun:
    """Run the receding-horizon controller on the true plant.

    Online noise is drawn from ``cfg.online_noise`` and only enters the plant;
    the offline data set stays fixed for the whole run.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if synthesizer is None:
        synthesizer = Synthesizer(build_pi_blocks(cfg.data), cfg.weights, cfg.cons, cfg.synthesis)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != sys.n:
        raise ValueError(f"x0 has length {x.size}, plant has n={sys.n}")
    noisy = cfg.online_noise.kind != "zero" and cfg.online_noise.eps > 0
    run = ClosedLoopRun(noisy=noisy)
    run.states.append(x.copy())
    previous = None
    for t in range(cfg.horizon_steps):
        if cfg.early_stop and np.linalg.norm(x) <= cfg.convergence_threshold:
            break
        result = synthesizer.solve(x, previous)
        if not result.ok:
            if t == 0:
                raise InitialInfeasibilityError(result)
            raise RecursiveFeasibilityError(t, result, run)
        u = np.asarray(result.F) @ x
        run.inputs.append(u)
        run.gammas.append(float(result.gamma))
        run.stage_costs.append(stage_cost(u, x, cfg.weights))
        run.feasible_flags.append(True)
        run.statuses.append(result.status)
        run.solve_times.append(result.solve_time)
        run.gains.append(np.asarray(result.F).copy())
        run.lyapunov.append(None if result.status == ORIGIN or result.P is None
                            else np.asarray(result.P).copy())
        if cfg.cons is not None:
            run.input_norms.append(cfg.cons.input_norm(u))
            run.state_norms.append(cfg.cons.state_norm(x))
        else:
            run.input_norms.append(0.0)
            run.state_norms.append(0.0)
        if result.status != ORIGIN:
            previous = result
        x = step(sys, x, u, sample_noise(cfg.online_noise, sys.n, rng))
        run.states.append(x.copy())
        log.debug("t=%d gamma=%.6g cost=%.3g |x|=%.3g", t, result.gamma, run.stage_costs[-1],
                  np.linalg.norm(x))
    return run


@dataclass
class RunSummary:
    total_cost: float
    steps: int
    max_input_norm: float
    max_state_norm: float
    gamma0: float | None
    gamma_monotone: bool
    convergence_step: int | None
    final_norm: float
    verdict: str

    def format(self) -> str:
        conv = "-" if self.convergence_step is None else str(self.convergence_step)
        g0 = "-" if self.gamma0 is None else f"{self.gamma0:.6g}"
        return "\n".join([
            f"verdict: {self.verdict}",
            f"steps: {self.steps}",
            f"total cost: {self.total_cost:.6g}",
            f"gamma_0: {g0}",
            f"gamma nonincreasing: {self.gamma_monotone}",
            f"max |u|_Su: {self.max_input_norm:.6g}",
            f"max |x|_Sx: {self.max_state_norm:.6g}",
            f"final |x|: {self.final_norm:.3e}",
            f"convergence step: {conv}",
        ])


def summarize(run: ClosedLoopRun, threshold: float = 1e-6, gamma_tol: float = 1e-6,
              cons: ConstraintSets | None = None) -> RunSummary:
    """Classify a run as converged, bounded-but-not-converged, or failed.

    A run converges when its final state is within ``threshold`` of the
    origin; the convergence step is the first index from which the state
    norm stays within the threshold.
    """
    norms = [float(np.linalg.norm(x)) for x in run.states]
    within = [v <= threshold for v in norms]
    convergence_step = None
    if within and within[-1]:
        k = len(within) - 1
        while k > 0 and within[k - 1]:
            k -= 1
        convergence_step = k
    # include the final state, which has no input attached
    state_norms = list(run.state_norms)
    if cons is not None and run.states:
        state_norms.append(cons.state_norm(run.states[-1]))
    gammas = run.gammas
    monotone = all(gammas[t + 1] <= gammas[t] * (1 + gamma_tol) + 1e-15
                   for t in range(len(gammas) - 1)
                   if run.statuses[t + 1] != ORIGIN and run.statuses[t] != ORIGIN)
    if convergence_step is not None:
        verdict = "converged"
    elif all(run.feasible_flags) and all(np.isfinite(gammas)):
        verdict = "bounded, not converged"
    else:
        verdict = "failed"
    return RunSummary(
        total_cost=run.total_cost,
        steps=run.steps,
        max_input_norm=max(run.input_norms, default=0.0),
        max_state_norm=max(state_norms, default=0.0),
        gamma0=gammas[0] if gammas else None,
        gamma_monotone=monotone,
        convergence_step=convergence_step,
        final_norm=norms[-1] if norms else 0.0,
        verdict=verdict,
    )


def run_to_csv(run: ClosedLoopRun, m: int) -> str:
    """Closed-loop trajectory in the shared trajectory CSV format."""
    U = np.array(run.inputs).T if run.inputs else np.zeros((m, 0))
    return trajectory_to_csv(run.state_array(), U)


def step_log_csv(run: ClosedLoopRun) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "gamma", "stage_cost", "norm_u_Su", "norm_x_Sx", "solver_status",
                     "solve_time"])
    for t in range(run.steps):
        writer.writerow([t, format(run.gammas[t], ".17g"), format(run.stage_costs[t], ".17g"),
                         format(run.input_norms[t], ".17g"), format(run.state_norms[t], ".17g"),
                         run.statuses[t], format(run.solve_times[t], ".6g")])
    return buf.getvalue()
