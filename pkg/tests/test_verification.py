import copy

import numpy as np
import pytest

from ddminmax.consistency import build_pi_blocks
from ddminmax.lti_sim import LtiSystem, NoiseModel, generate_dataset, random_inputs
from ddminmax.mpc import MpcConfig, run_closed_loop
from ddminmax.synthesis import ConstraintSets, CostWeights, synthesize
from ddminmax.verification import (boundary_states, check_certificate_identities,
                                   check_closed_loop_guarantees,
                                   check_constraint_certificates, check_cost_bound,
                                   check_decrease, check_rpi, verify_certificate)

W1 = CostWeights([[1.0]], [[1.0]])


def scalar_riccati(a, b, q, r, iters=500):
    p = q
    for _ in range(iters):
        p = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
    return p


@pytest.fixture(scope="module")
def scalar():
    rng = np.random.default_rng(0)
    sys = LtiSystem([[0.5]], [[1.0]])
    data = generate_dataset(sys, [1.0], random_inputs(rng, 10, 1, -1, 1), NoiseModel(0.0), rng)
    result = synthesize([1.0], build_pi_blocks(data), W1)
    assert result.ok
    return sys, data, result


def test_decrease_passes_on_singleton(scalar):
    sys, _, r = scalar
    rep = check_decrease(r.F, r.P, W1, [(sys.A, sys.B)])
    assert rep.passed and rep.worst < 0


def test_decrease_flags_open_loop_unstable_sample():
    A = np.array([[1.2, 0.0], [0.0, 0.5]])
    assert max(abs(np.linalg.eigvals(A))) > 1
    rep = check_decrease(np.zeros((1, 2)), np.eye(2), CostWeights(np.eye(2), [[1.0]]),
                         [(A, np.zeros((2, 1)))])
    # A^T A - I + Q has eigenvalue 1.44 on the unstable axis
    assert not rep.passed and rep.worst == pytest.approx(1.44)


def test_boundary_states_lie_on_level_set():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((3, 3))
    P = G @ G.T + np.eye(3)
    X = boundary_states(P, 2.5, 50, rng)
    np.testing.assert_allclose(np.einsum("ki,ij,kj->k", X, P, X), 2.5, rtol=1e-12)


def test_rpi_origin_and_singleton_interior(scalar):
    sys, _, r = scalar
    samples = [(sys.A, sys.B)]
    assert check_rpi(r.F, r.P, r.gamma, samples, np.zeros((1, 1))).passed
    inside = np.linspace(-1, 1, 21).reshape(-1, 1) * np.sqrt(r.gamma / r.P.item())
    assert check_rpi(r.F, r.P, r.gamma, samples, inside, depth=50).passed


def test_rpi_detects_escape():
    # x+ = 2x leaves any level set
    rep = check_rpi(np.zeros((1, 1)), np.eye(1), 1.0, [(np.array([[2.0]]), np.zeros((1, 1)))],
                    np.array([[1.0]]), depth=3)
    assert not rep.passed and rep.violations == 3 and rep.worst == pytest.approx(64.0)


def test_cost_bound_at_origin(scalar):
    sys, _, r = scalar
    rep = check_cost_bound(r.F, r.gamma, [0.0], [(sys.A, sys.B)], W1)
    assert rep.passed and rep.worst == 0.0


def test_cost_bound_scalar_matches_riccati(scalar):
    sys, _, r = scalar
    rep = check_cost_bound(r.F, r.gamma, [1.0], [(sys.A, sys.B)], W1)
    p = scalar_riccati(0.5, 1.0, 1.0, 1.0)
    assert rep.passed
    assert rep.worst == pytest.approx(p, rel=0.05)
    assert rep.worst <= r.gamma


def test_cost_bound_flags_divergence():
    rep = check_cost_bound(np.zeros((1, 1)), 10.0, [1.0], [(np.array([[1.5]]), np.zeros((1, 1)))], W1)
    assert not rep.passed and "diverged" in rep.note


def test_constraint_certificates_mutation(scalar):
    _, _, r = scalar
    cons = ConstraintSets([[1.0]], [[0.1]])
    good = copy.deepcopy(r)
    good.P = np.array([[0.1 * r.gamma]])
    good.H, good.L = np.array([[10.0]]), np.array([[1.0]])
    assert check_constraint_certificates(good, cons).passed
    bad = copy.deepcopy(good)
    bad.L = np.array([[10.0]])
    assert not check_constraint_certificates(bad, cons).passed


def test_certificate_identities_and_mutations(scalar):
    _, _, r = scalar
    rep = check_certificate_identities(r, [1.0])
    assert rep.passed and rep.worst <= 1e-8
    for field, factor in (("P", 0.5), ("F", 0.0), ("P", 2.0)):
        bad = copy.deepcopy(r)
        setattr(bad, field, factor * getattr(r, field))
        assert not check_certificate_identities(bad, [1.0]).passed, (field, factor)


def test_verify_certificate_singleton_note(scalar):
    _, data, r = scalar
    rep = verify_certificate(r, data, W1, None, [1.0], np.random.default_rng(0))
    assert rep.passed
    assert any("singleton consistency set" in n for n in rep.notes)
    assert {c.name for c in rep.checks} == {"certificate-identities", "decrease", "rpi",
                                            "cost-bound"}


def test_verify_certificate_mutations(scalar):
    _, data, r = scalar
    halved = copy.deepcopy(r)
    halved.P = 0.5 * r.P
    rep = verify_certificate(halved, data, W1, None, [1.0], np.random.default_rng(0))
    assert not rep.passed


def _small_run(x0):
    rng = np.random.default_rng(4)
    sys = LtiSystem([[1.05, 0.1], [0.0, 0.9]], [[0.0], [1.0]])
    data = generate_dataset(sys, [0, 0], random_inputs(rng, 30, 1, -1, 1), NoiseModel(1e-4), rng)
    w = CostWeights(np.eye(2), [[1.0]])
    cfg = MpcConfig(weights=w, cons=ConstraintSets([[1.0]], 0.5 * np.eye(2)), data=data,
                    horizon_steps=15)
    return run_closed_loop(sys, x0, cfg), w


def test_closed_loop_guarantees_vacuous_at_origin():
    run, w = _small_run([0.0, 0.0])
    rep = check_closed_loop_guarantees(run, w)
    assert rep.passed and any("vacuous" in n for n in rep.notes)


def test_closed_loop_guarantees_and_lyapunov_mutation():
    run, w = _small_run([0.5, -0.5])
    rep = check_closed_loop_guarantees(run, w)
    assert rep.passed, rep.format()
    bad = copy.deepcopy(run)
    bad.lyapunov = [None if P is None else P.copy() for P in run.lyapunov]
    bad.lyapunov[3] = 3.0 * bad.lyapunov[3]
    rep = check_closed_loop_guarantees(bad, w)
    failed = {c.name for c in rep.checks if not c.passed}
    assert "lyapunov-decrease" in failed


# -- benchmark certificate (shared session fixture) -------------------------

@pytest.fixture(scope="module")
def bench_cert(cstr_bench):
    x0 = np.array(cstr_bench.preset.x0)
    r = cstr_bench.synth.solve(x0)
    assert r.ok
    return cstr_bench, x0, r


def test_benchmark_certificate_passes(bench_cert):
    b, x0, r = bench_cert
    rep = verify_certificate(r, b.data, b.preset.weights(), b.preset.constraints(), x0,
                             np.random.default_rng(5), samples=b.samples)
    print(rep.format())
    assert rep.passed


@pytest.mark.parametrize("mutation", ["P-halved", "F-zero"])
def test_benchmark_certificate_mutations(bench_cert, mutation):
    b, x0, r = bench_cert
    bad = copy.deepcopy(r)
    if mutation == "P-halved":
        bad.P = 0.5 * r.P
    else:
        bad.F = np.zeros_like(r.F)
    rep = verify_certificate(bad, b.data, b.preset.weights(), b.preset.constraints(), x0,
                             np.random.default_rng(5), samples=b.samples)
    assert not rep.passed
