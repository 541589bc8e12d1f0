"""Data-driven min-max MPC for linear systems identified from noisy
input-state data."""

from .consistency import (ConsistentSamples, Multipliers, PiBlocks, assemble_pi, build_pi_blocks,
                          contains, qmi_membership, sample_consistent)
from .lti_sim import (DataSet, LtiSystem, NoiseModel, cstr_system, generate_dataset, load_dataset,
                      save_dataset, step)
from .mpc import (ClosedLoopRun, InitialInfeasibilityError, MpcConfig, RecursiveFeasibilityError,
                  run_closed_loop, summarize)
from .synthesis import (ConstraintSets, CostWeights, SynthesisOptions, SynthesisResult, Synthesizer,
                        synthesize)
from .verification import verify_certificate

__version__ = "0.1.0"

__all__ = [
    "ClosedLoopRun", "ConsistentSamples", "ConstraintSets", "CostWeights", "DataSet",
    "InitialInfeasibilityError", "LtiSystem", "MpcConfig", "Multipliers", "NoiseModel", "PiBlocks",
    "RecursiveFeasibilityError", "SynthesisOptions", "SynthesisResult", "Synthesizer",
    "assemble_pi", "build_pi_blocks", "contains", "cstr_system", "generate_dataset",
    "load_dataset", "qmi_membership", "run_closed_loop", "sample_consistent", "save_dataset",
    "step", "summarize", "synthesize", "verify_certificate",
]
