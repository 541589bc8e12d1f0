import numpy as np
import pytest

from ddminmax.benchmark import REFERENCE_COST_NOISE_FREE, REFERENCE_COST_ONLINE_NOISE
from ddminmax.lti_sim import (LtiSystem, NoiseModel, generate_dataset, random_inputs,
                              trajectory_from_csv)
from ddminmax.mpc import (ClosedLoopRun, InitialInfeasibilityError, MpcConfig, run_closed_loop,
                          run_to_csv, stage_cost, step_log_csv, summarize)
from ddminmax.synthesis import ORIGIN, ConstraintSets, CostWeights, SynthesisOptions


def test_stage_cost_examples():
    assert stage_cost([0.0], [0.0, 0.0], CostWeights(np.eye(2), [[1.0]])) == 0.0
    assert stage_cost([2.0], [3.0, 4.0], CostWeights(np.eye(2), [[1.0]])) == pytest.approx(29.0)
    # 1e-4 * 25 + (1e-4 + 16e-4)
    assert stage_cost([5.0], [-0.01, -0.04], CostWeights(np.eye(2), [[1e-4]])) == \
        pytest.approx(0.0042, rel=1e-12)
    with pytest.raises(ValueError, match="stage cost"):
        stage_cost([1.0, 2.0], [0.0, 0.0], CostWeights(np.eye(2), [[1.0]]))


def _small_problem(eps=1e-4, T=30, seed=0, S_u=1.0, S_x=0.5):
    rng = np.random.default_rng(seed)
    sys = LtiSystem([[1.05, 0.1], [0.0, 0.9]], [[0.0], [1.0]])
    data = generate_dataset(sys, [0, 0], random_inputs(rng, T, 1, -1, 1), NoiseModel(eps), rng)
    cfg = MpcConfig(weights=CostWeights(np.eye(2), [[1.0]]),
                    cons=ConstraintSets([[S_u]], S_x * np.eye(2)), data=data, horizon_steps=40)
    return sys, cfg


def test_zero_initial_state_run():
    sys, cfg = _small_problem()
    run = run_closed_loop(sys, [0.0, 0.0], cfg)
    assert run.steps == 40 and run.total_cost == 0.0
    assert all(s == ORIGIN for s in run.statuses)
    assert all(np.all(u == 0) for u in run.inputs)
    s = summarize(run)
    assert s.verdict == "converged" and s.convergence_step == 0


def test_empty_horizon():
    sys, cfg = _small_problem()
    cfg.horizon_steps = 0
    run = run_closed_loop(sys, [0.1, 0.1], cfg)
    assert run.steps == 0 and len(run.states) == 1
    assert run_to_csv(run, 1).splitlines() == ["t,x1,x2,u1", "0,0.10000000000000001,0.10000000000000001,"]


def test_small_closed_loop_invariants():
    sys, cfg = _small_problem()
    run = run_closed_loop(sys, [0.5, -0.5], cfg)
    assert all(run.feasible_flags) and all(run.constraint_flags)
    assert run.total_cost == sum(run.stage_costs)
    assert np.linalg.norm(run.states[-1]) < np.linalg.norm(run.states[0])
    g = [v for v, s in zip(run.gammas, run.statuses) if s != ORIGIN]
    assert all(b <= a * (1 + 1e-5) for a, b in zip(g, g[1:]))
    assert run.total_cost <= run.gammas[0] * (1 + 1e-6)


def test_early_stop():
    sys, cfg = _small_problem()
    cfg.horizon_steps = 200
    cfg.early_stop = True
    cfg.convergence_threshold = 1e-3
    run = run_closed_loop(sys, [0.5, -0.5], cfg)
    assert run.steps < 200 and np.linalg.norm(run.states[-1]) <= 1e-3


def test_determinism():
    sys, cfg = _small_problem()
    cfg.online_noise = NoiseModel(1e-4)
    a = run_closed_loop(sys, [0.5, -0.5], cfg, np.random.default_rng(3))
    b = run_closed_loop(sys, [0.5, -0.5], cfg, np.random.default_rng(3))
    np.testing.assert_array_equal(np.array(a.states), np.array(b.states))
    assert a.gammas == b.gammas


def test_initial_infeasibility_raises():
    sys, cfg = _small_problem(S_u=1e6)
    with pytest.raises(InitialInfeasibilityError, match="t=0"):
        run_closed_loop(sys, [1.0, 1.0], cfg)


def test_dataset_untouched_by_run():
    sys, cfg = _small_problem()
    X = cfg.data.X.copy()
    run_closed_loop(sys, [0.5, -0.5], cfg)
    np.testing.assert_array_equal(cfg.data.X, X)


def test_warm_start_toggle_does_not_change_results():
    sys, cfg = _small_problem()
    cfg.horizon_steps = 10
    a = run_closed_loop(sys, [0.5, -0.5], cfg)
    cfg.synthesis = SynthesisOptions(warm_start=True)
    b = run_closed_loop(sys, [0.5, -0.5], cfg)
    np.testing.assert_allclose(a.gammas, b.gammas, rtol=1e-6)


def test_summary_classification():
    run = ClosedLoopRun(states=[np.array([1.0, 0]), np.array([0.1, 0]), np.array([1e-3, 0])],
                        inputs=[np.zeros(1)] * 2, gammas=[1.0, 0.5], stage_costs=[1.0, 0.01],
                        feasible_flags=[True, True], input_norms=[0.1, 0.1],
                        state_norms=[0.5, 0.1], statuses=["optimal"] * 2)
    assert summarize(run, threshold=1e-6).verdict == "bounded, not converged"
    assert summarize(run, threshold=1e-2).verdict == "converged"
    assert summarize(run, threshold=1e-2).convergence_step == 2
    run.gammas = [1.0, float("inf")]
    assert summarize(run, threshold=1e-6).verdict == "failed"


def test_csv_outputs():
    sys, cfg = _small_problem()
    cfg.horizon_steps = 5
    run = run_closed_loop(sys, [0.5, -0.5], cfg)
    X, U = trajectory_from_csv(run_to_csv(run, 1))
    np.testing.assert_array_equal(X, run.state_array())
    log = step_log_csv(run).splitlines()
    assert log[0] == "t,gamma,stage_cost,norm_u_Su,norm_x_Sx,solver_status,solve_time"
    assert len(log) == 6 and log[1].split(",")[5] == "optimal"


# -- benchmark runs (shared session fixture) --------------------------------

def test_benchmark_noise_free_run(cstr_bench):
    case = cstr_bench.clean
    assert case.run is not None, case.error
    s = case.summary
    print(f"noise-free cost {s.total_cost:.5f} (published {REFERENCE_COST_NOISE_FREE})")
    assert s.steps == 300
    assert s.max_input_norm <= 1 + 1e-8 and s.max_state_norm <= 1 + 1e-8
    assert 0.03 <= s.total_cost <= 0.047


def test_benchmark_online_noise_run(cstr_bench):
    case = cstr_bench.noisy
    assert case.run is not None, case.error
    s = case.summary
    print(f"online-noise cost {s.total_cost:.5f} (published {REFERENCE_COST_ONLINE_NOISE})")
    assert s.verdict == "bounded, not converged"
    assert s.total_cost >= cstr_bench.clean.summary.total_cost
