import warnings
from dataclasses import dataclass

import pytest

from ddminmax.benchmark import CstrPreset, cstr_dataset, run_case, seed_streams
from ddminmax.consistency import build_pi_blocks, sample_consistent
from ddminmax.synthesis import Synthesizer


@dataclass
class CstrBench:
    preset: CstrPreset
    data: object
    blocks: object
    synth: Synthesizer
    clean: object
    noisy: object
    clean_r1: object
    samples: object


@pytest.fixture(scope="session")
def cstr_bench():
    """Benchmark data, both closed loops for R = 1e-4, the noise-free loop
    for R = 1 and 1000 consistent samples. Computed once per session
    (about three minutes)."""
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        preset = CstrPreset()
        data = cstr_dataset(preset)
        blocks = build_pi_blocks(data)
        synth = Synthesizer(blocks, preset.weights(), preset.constraints(), preset.synthesis)
        synth_r1 = Synthesizer(blocks, preset.weights(1.0), preset.constraints(), preset.synthesis)
        clean = run_case(data, preset, preset.R, False, preset.seed, "noise-free", synth)
        noisy = run_case(data, preset, preset.R, True, preset.seed, "online-noise", synth)
        clean_r1 = run_case(data, preset, 1.0, False, preset.seed, "noise-free", synth_r1)
        samples = sample_consistent(data, 1000, seed_streams(preset.seed)["verify"])
    return CstrBench(preset, data, blocks, synth, clean, noisy, clean_r1, samples)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """Record and print the verdict line of one acceptance criterion."""
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in range(1, 9):
        terminalreporter.write_line(ACCEPTANCE_LINES.get(
            key, f"criterion {key} FAIL: no verdict recorded (test errored or was not run)"))
