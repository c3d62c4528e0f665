import numpy as np
import pytest

from matpred.designs import (Dataset, NoiseModel, completion_design,
                             generate_dataset, low_rank_truth,
                             multitask_design)
from matpred.linalg import operator_norm, vec, vec_stack
from matpred.penalties import PenaltyConfig, penalty_value
from matpred.solver import (SolverOptions, empirical_risk,
                            empirical_risk_gradient, fit)


def _completion_data(m=3, t=3, n=60, sigma=0.3, seed=5, rank=2, s1=4.0):
    design = completion_design(m, t)
    a0 = low_rank_truth((m, t), rank, s1, seed=seed + 100)
    return generate_dataset(design, a0, NoiseModel.gaussian(sigma), n, seed=seed), a0


def test_empirical_risk_at_truth_noiseless():
    design = completion_design(3, 3)
    a0 = low_rank_truth((3, 3), 2, 3.0, seed=1)
    data = generate_dataset(design, a0, NoiseModel.custom_subgaussian(
        lambda rng, n: np.zeros(n), std=0.0, psi2=0.0, psi1=0.0), 40, seed=2)
    assert empirical_risk(a0, data) <= 1e-28


def test_empirical_risk_at_zero():
    data, _ = _completion_data()
    assert empirical_risk(np.zeros(data.shape), data) == pytest.approx(
        float(data.ys @ data.ys) / data.n, rel=1e-14)


def test_empirical_risk_hand_dataset():
    xs = np.array([[[1.0, 0.0], [0.0, 0.0]],
                   [[0.0, 1.0], [1.0, 0.0]],
                   [[0.5, 0.5], [0.5, 0.5]]])
    ys = np.array([1.0, -2.0, 0.5])
    data = Dataset.from_arrays(xs, ys)
    a = np.array([[2.0, -1.0], [3.0, 0.5]])
    # hand expansion of the three squared residuals
    r1 = 1.0 - 2.0
    r2 = -2.0 - (-1.0 + 3.0)
    r3 = 0.5 - 0.5 * (2.0 - 1.0 + 3.0 + 0.5)
    expected = (r1**2 + r2**2 + r3**2) / 3
    assert empirical_risk(a, data) == pytest.approx(expected, rel=1e-12)


def test_gradient_vanishes_at_least_squares_solution():
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((40, 2, 2))
    a_true = rng.standard_normal((2, 2))
    ys = np.tensordot(xs, a_true, axes=([1, 2], [0, 1]))
    data = Dataset.from_arrays(xs, ys)
    stack = vec_stack(xs)
    sol, *_ = np.linalg.lstsq(stack, ys, rcond=None)
    grad = empirical_risk_gradient(sol.reshape(2, 2, order="F").copy(), data)
    assert np.linalg.norm(grad) <= 1e-8


def test_gradient_finite_differences():
    data, _ = _completion_data(n=40)
    rng = np.random.default_rng(4)
    a = rng.standard_normal(data.shape)
    grad = empirical_risk_gradient(a, data)
    h = 1e-6
    for _ in range(20):
        direction = rng.standard_normal(data.shape)
        direction /= np.linalg.norm(direction)
        plus = empirical_risk(a + h * direction, data)
        minus = empirical_risk(a - h * direction, data)
        fd = (plus - minus) / (2 * h)
        analytic = float(np.sum(grad * direction))
        assert fd == pytest.approx(analytic, rel=1e-5, abs=1e-10)


def test_gradient_single_completion_observation():
    design = completion_design(2, 2)
    data = Dataset(ys=np.array([2.0]), shape=(2, 2),
                   atom_indices=np.array([0]), design=design)
    grad = empirical_risk_gradient(np.zeros((2, 2)), data)
    expected = np.zeros((2, 2))
    expected[0, 0] = -4.0
    assert np.allclose(grad, expected)


def test_fit_zero_solution_above_dual_threshold():
    data, _ = _completion_data(n=50, sigma=0.4)
    g0 = empirical_risk_gradient(np.zeros(data.shape), data)
    lam = operator_norm(g0) * 1.0001
    res = fit(data, PenaltyConfig(nuclear=lam))
    assert np.linalg.norm(res.estimate) == 0.0
    assert res.converged


def test_fit_ridge_matches_linear_solve():
    data, _ = _completion_data(m=3, t=3, n=45, sigma=0.3, seed=7)
    lam2 = 0.05
    res = fit(data, PenaltyConfig(frob2=lam2),
              SolverOptions(rel_obj_tol=1e-13, cert_tol=1e-10))
    stack = vec_stack(data.xs)
    gram = stack.T @ stack
    rhs = stack.T @ data.ys
    direct = np.linalg.solve(gram + data.n * lam2 * np.eye(gram.shape[0]), rhs)
    assert np.max(np.abs(vec(res.estimate) - direct)) <= 1e-7
    # independent sanity: penalized gradient vanishes at the linear solution
    grad_pen = vec(empirical_risk_gradient(
        res.estimate, data)) + 2 * lam2 * vec(res.estimate)
    assert np.linalg.norm(grad_pen) <= 1e-6


def test_fit_small_completion_matches_grid_polish():
    design = completion_design(2, 2)
    a0 = np.array([[1.0, -0.5], [0.3, 0.8]])
    data = generate_dataset(design, a0, NoiseModel.gaussian(0.2), 8, seed=11)
    cfg = PenaltyConfig(nuclear=0.1, frob2=0.05, l1=0.1)
    res = fit(data, cfg)
    obj = empirical_risk(res.estimate, data) + penalty_value(res.estimate, cfg)

    import scipy.optimize

    def objective(flat):
        a = flat.reshape(2, 2)
        return empirical_risk(a, data) + penalty_value(a, cfg)

    grid = np.linspace(-3, 3, 9)
    best = np.inf
    best_x = None
    for i in grid:
        for j in grid:
            for k in grid:
                for l in grid:
                    val = objective(np.array([i, j, k, l]))
                    if val < best:
                        best, best_x = val, np.array([i, j, k, l])
    polished = scipy.optimize.minimize(objective, best_x, method="Nelder-Mead",
                                       options={"xatol": 1e-10, "fatol": 1e-12,
                                                "maxiter": 20000})
    assert obj <= polished.fun + 1e-5
    assert abs(obj - min(polished.fun, best)) <= 1e-5


def test_fit_subgradient_certificate():
    data, _ = _completion_data(m=4, t=3, n=70, sigma=0.3, seed=13)
    for cfg in (PenaltyConfig(nuclear=0.08),
                PenaltyConfig(nuclear=0.05, frob2=0.02),
                PenaltyConfig(nuclear=0.05, l1=0.04),
                PenaltyConfig(0.04, 0.02, 0.03)):
        res = fit(data, cfg)
        assert res.converged
        scale = 1 + np.linalg.norm(res.estimate)
        assert res.subgradient_residual <= 1e-6 * scale


def test_fit_objective_trace_monotone_and_bounded():
    data, _ = _completion_data(n=80, sigma=0.5, seed=17)
    res = fit(data, PenaltyConfig(nuclear=0.03, l1=0.01))
    trace = res.objective_trace
    assert np.all(np.diff(trace) <= 1e-12)
    assert np.all(trace >= 0.0)
    assert trace[-1] <= trace[0]


def test_fit_converged_implies_small_last_step():
    data, _ = _completion_data(seed=19)
    opts = SolverOptions(rel_obj_tol=1e-9)
    res = fit(data, PenaltyConfig(nuclear=0.05), opts)
    assert res.converged
    last, prev = res.objective_trace[-1], res.objective_trace[-2]
    assert abs(prev - last) <= opts.rel_obj_tol * max(1.0, abs(last))


def test_fit_iteration_cap_reports_not_converged():
    data, _ = _completion_data(n=100, sigma=0.5, seed=23)
    res = fit(data, PenaltyConfig(nuclear=1e-4), SolverOptions(max_iters=3))
    assert not res.converged
    assert res.iterations >= 3


def test_fit_warm_start_terminates_fast():
    data, _ = _completion_data(seed=29)
    cfg = PenaltyConfig(nuclear=0.04, frob2=0.01)
    cold = fit(data, cfg)
    warm = fit(data, cfg, SolverOptions(init=cold.estimate))
    assert warm.iterations <= 2


def test_fit_deterministic():
    data, _ = _completion_data(seed=31)
    cfg = PenaltyConfig(nuclear=0.05, l1=0.02)
    a = fit(data, cfg)
    b = fit(data, cfg)
    assert a.estimate.tobytes() == b.estimate.tobytes()
    assert np.array_equal(a.objective_trace, b.objective_trace)


def test_fit_ridge_solution_scales_linearly():
    design = completion_design(3, 3)
    a0 = low_rank_truth((3, 3), 2, 3.0, seed=37)
    data = generate_dataset(design, a0, NoiseModel.gaussian(0.2), 50, seed=37)
    lam2 = 0.04
    tight = SolverOptions(rel_obj_tol=1e-14, cert_tol=1e-11)
    base = fit(data, PenaltyConfig(frob2=lam2), tight)
    scaled_data = Dataset(ys=2.0 * data.ys, shape=data.shape,
                          atom_indices=data.atom_indices, design=design)
    scaled = fit(scaled_data, PenaltyConfig(frob2=lam2), tight)
    assert np.max(np.abs(scaled.estimate - 2.0 * base.estimate)) <= 1e-8


def test_fit_pure_erm_requires_nonsingular_gram():
    design = completion_design(3, 3)
    a0 = np.zeros((3, 3))
    sparse = generate_dataset(design, a0, NoiseModel.gaussian(0.1), 4, seed=41)
    with pytest.raises(ValueError):
        fit(sparse, PenaltyConfig())
    dense = generate_dataset(design, a0, NoiseModel.gaussian(0.1), 400, seed=43)
    res = fit(dense, PenaltyConfig())
    assert res.converged


def test_fit_backtracking_agrees_with_fixed_step():
    data, _ = _completion_data(seed=47)
    cfg = PenaltyConfig(nuclear=0.05)
    fixed = fit(data, cfg, SolverOptions(rel_obj_tol=1e-13, cert_tol=1e-9))
    back = fit(data, cfg, SolverOptions(step_rule="backtracking",
                                        rel_obj_tol=1e-13, cert_tol=1e-9))
    assert np.max(np.abs(fixed.estimate - back.estimate)) <= 1e-6


def test_fit_multitask_design():
    rng = np.random.default_rng(53)
    vectors = [[rng.standard_normal(4) / 2 for _ in range(5)] for _ in range(3)]
    design = multitask_design(vectors)
    a0 = low_rank_truth(design.shape, 1, 2.0, seed=53)
    data = generate_dataset(design, a0, NoiseModel.gaussian(0.2), 90, seed=54)
    res = fit(data, PenaltyConfig(nuclear=0.02))
    assert res.converged
    assert res.subgradient_residual <= 1e-6 * (1 + np.linalg.norm(res.estimate))
