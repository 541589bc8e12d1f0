"""The linearized-CSTR benchmark: preset parameters, seeded data generation
and the reproduction run that compares closed-loop costs with the
published figures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consistency import build_pi_blocks
from .lti_sim import DataSet, NoiseModel, cstr_system, generate_dataset, random_inputs
from .mpc import (ClosedLoopRun, InitialInfeasibilityError, MpcConfig, RecursiveFeasibilityError,
                  run_closed_loop, summarize)
from .synthesis import ConstraintSets, CostWeights, SynthesisOptions, Synthesizer

# published closed-loop costs (Q = I, R = 1e-4, 300 steps)
REFERENCE_COST_NOISE_FREE = 0.0369
REFERENCE_COST_ONLINE_NOISE = 0.0411
NOISE_FREE_BAND = (0.03, 0.047)
ONLINE_NOISE_BAND = (0.031, 0.055)

DEFAULT_SEED = 3


@dataclass(frozen=True)
class CstrPreset:
    T: int = 200
    eps: float = 1e-6
    input_low: float = -10.0
    input_high: float = 10.0
    offline_noise: str = "uniform"
    data_x0: tuple = (0.0, 0.0)
    x0: tuple = (-0.01, -0.04)
    S_u: float = 0.01
    S_x: tuple = ((1000.0, 0.0), (0.0, 500.0))
    Q: tuple = ((1.0, 0.0), (0.0, 1.0))
    R: float = 1e-4
    steps: int = 300
    online_eps: float = 1e-6
    online_noise: str = "uniform"
    convergence_threshold: float = 1e-6
    seed: int = DEFAULT_SEED
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)

    def weights(self, R: float | None = None) -> CostWeights:
        return CostWeights(np.array(self.Q), np.atleast_2d(self.R if R is None else R))

    def constraints(self) -> ConstraintSets:
        return ConstraintSets(np.atleast_2d(self.S_u), np.array(self.S_x))


def seed_streams(seed: int) -> dict:
    """Independent generators for data, online noise and verification, all
    derived from one recorded seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return {name: np.random.default_rng(ss)
            for name, ss in zip(("data", "online", "verify"), children)}


def cstr_dataset(preset: CstrPreset = CstrPreset(), seed: int | None = None) -> DataSet:
    rng = seed_streams(preset.seed if seed is None else seed)["data"]
    plant = cstr_system()
    U = random_inputs(rng, preset.T, plant.m, preset.input_low, preset.input_high)
    return generate_dataset(plant, np.array(preset.data_x0), U,
                            NoiseModel(preset.eps, preset.offline_noise), rng)


def cstr_config(data: DataSet, preset: CstrPreset = CstrPreset(), R: float | None = None,
                online: bool = False) -> MpcConfig:
    noise = NoiseModel(preset.online_eps, preset.online_noise) if online else NoiseModel(0.0, "zero")
    return MpcConfig(weights=preset.weights(R), cons=preset.constraints(), data=data,
                     horizon_steps=preset.steps, online_noise=noise,
                     synthesis=preset.synthesis,
                     convergence_threshold=preset.convergence_threshold)


@dataclass
class CaseResult:
    label: str
    R: float
    online_noise: bool
    run: ClosedLoopRun | None = None
    error: str = ""
    summary: object = None


def run_case(data: DataSet, preset: CstrPreset, R: float, online: bool, seed: int,
             label: str, synthesizer: Synthesizer | None = None) -> CaseResult:
    cfg = cstr_config(data, preset, R, online)
    case = CaseResult(label, R, online)
    try:
        case.run = run_closed_loop(cstr_system(), np.array(preset.x0), cfg,
                                   seed_streams(seed)["online"], synthesizer)
    except (InitialInfeasibilityError, RecursiveFeasibilityError) as exc:
        case.error = str(exc)
        return case
    case.summary = summarize(case.run, preset.convergence_threshold, cons=cfg.cons)
    return case


@dataclass
class ReproductionReport:
    seed: int
    cases: list
    criteria: list

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.criteria)

    def format(self) -> str:
        lines = [f"CSTR reproduction, seed {self.seed}",
                 f"{'case':<28}{'R':>8}{'cost':>12}{'ref':>10}{'gamma_0':>12}"
                 f"{'max|u|':>9}{'max|x|':>9}{'final|x|':>11}  verdict"]
        reference = {("noise-free", 1e-4): REFERENCE_COST_NOISE_FREE,
                     ("online-noise", 1e-4): REFERENCE_COST_ONLINE_NOISE}
        for c in self.cases:
            key = ("online-noise" if c.online_noise else "noise-free", c.R)
            ref = f"{reference[key]:.4f}" if key in reference else "-"
            if c.summary is None:
                lines.append(f"{c.label:<28}{c.R:>8g}  FAILED: {c.error}")
                continue
            s = c.summary
            lines.append(f"{c.label:<28}{c.R:>8g}{s.total_cost:>12.5f}{ref:>10}{s.gamma0:>12.5g}"
                         f"{s.max_input_norm:>9.4f}{s.max_state_norm:>9.4f}{s.final_norm:>11.2e}"
                         f"  {s.verdict}")
        for name, ok, detail in self.criteria:
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return "\n".join(lines)


def reproduce_cstr(preset: CstrPreset = CstrPreset(), seed: int | None = None,
                   include_r1: bool = True) -> ReproductionReport:
    """Data generation, both weightings noise-free, and the online-noise run
    for R = 1e-4, judged against the published costs."""
    seed = preset.seed if seed is None else seed
    data = cstr_dataset(preset, seed)
    blocks = build_pi_blocks(data)
    cases = []
    if include_r1:
        cases.append(run_case(data, preset, 1.0, False, seed, "noise-free"))
    synth = Synthesizer(blocks, preset.weights(1e-4), preset.constraints(), preset.synthesis)
    clean = run_case(data, preset, 1e-4, False, seed, "noise-free", synth)
    noisy = run_case(data, preset, 1e-4, True, seed, "online-noise", synth)
    cases += [clean, noisy]

    criteria = []
    if clean.summary is not None:
        s = clean.summary
        lo, hi = NOISE_FREE_BAND
        criteria.append(("noise-free cost band",
                         lo <= s.total_cost <= hi and s.max_input_norm <= 1 + 1e-8
                         and s.max_state_norm <= 1 + 1e-8 and s.final_norm <= 1e-3,
                         f"cost {s.total_cost:.5f} in [{lo}, {hi}], final |x| {s.final_norm:.2e}"))
    else:
        criteria.append(("noise-free cost band", False, clean.error))
    if noisy.summary is not None:
        s = noisy.summary
        lo, hi = ONLINE_NOISE_BAND
        criteria.append(("online-noise cost band",
                         lo <= s.total_cost <= hi and s.max_input_norm <= 1 + 1e-8
                         and s.max_state_norm <= 1 + 1e-8 and s.final_norm <= 0.02,
                         f"cost {s.total_cost:.5f} in [{lo}, {hi}], final |x| {s.final_norm:.2e}"))
    else:
        criteria.append(("online-noise cost band", False, noisy.error))
    if clean.summary is not None and noisy.summary is not None:
        criteria.append(("noisy cost >= noise-free cost",
                         noisy.summary.total_cost >= clean.summary.total_cost,
                         f"{noisy.summary.total_cost:.5f} vs {clean.summary.total_cost:.5f}"))
    return ReproductionReport(seed, cases, criteria)


@dataclass
class SeedRow:
    seed: int
    noise_free: float | None
    online_noise: float | None
    gamma0: float | None
    note: str = ""


def seed_sweep(seeds, preset: CstrPreset = CstrPreset()) -> list:
    """Noise-free and online-noise costs (R = 1e-4) for several data seeds."""
    rows = []
    for seed in seeds:
        data = cstr_dataset(preset, seed)
        synth = Synthesizer(build_pi_blocks(data), preset.weights(1e-4), preset.constraints(),
                            preset.synthesis)
        clean = run_case(data, preset, 1e-4, False, seed, "noise-free", synth)
        if clean.summary is None:
            rows.append(SeedRow(seed, None, None, None, clean.error.split(":")[0]))
            continue
        noisy = run_case(data, preset, 1e-4, True, seed, "online-noise", synth)
        rows.append(SeedRow(seed, clean.summary.total_cost,
                            None if noisy.summary is None else noisy.summary.total_cost,
                            clean.summary.gamma0, noisy.error.split(":")[0]))
    return rows


def format_sweep(rows) -> str:
    lines = [f"{'seed':>5}{'noise-free':>12}{'online':>10}{'gamma_0':>10}  note"]
    for r in rows:
        def f(v):
            return "-" if v is None else f"{v:.5f}"
        lines.append(f"{r.seed:>5}{f(r.noise_free):>12}{f(r.online_noise):>10}{f(r.gamma0):>10}  {r.note}")
    ok = [r.noise_free for r in rows if r.noise_free is not None]
    if ok:
        lines.append(f"feasible {len(ok)}/{len(rows)}; noise-free cost mean {np.mean(ok):.5f} "
                     f"std {np.std(ok):.5f} range [{min(ok):.5f}, {max(ok):.5f}]")
    else:
        lines.append(f"feasible 0/{len(rows)}")
    return "\n".join(lines)
