import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import interleaved_line, two_blobs
from csvm.core import bnb
from csvm.core.bnb import (
    CsvmProblem,
    SolveStatus,
    accepted,
    counts_met,
    diagnose_feasibility,
    node_bound,
    propagate_counts,
    solve_csvm,
    warm_start_from_svm,
)
from csvm.core.kernel import KernelKind, KernelSpec, gram
from csvm.core.metrics import RateKind, count_target
from csvm.core.qp import (
    AnchorStatus,
    CountRow,
    QpStatus,
    build_qp_problem,
    recover_intercept,
    solve_qp,
)


def random_instance(seed: int, n_I: int = 12, n_J: int = 6, rates=(RateKind.TPR,), p_star: float = 0.8):
    """Overlapping RBF instance; the first anchors of each class make every scope non-empty."""
    rng = np.random.default_rng(seed)
    n = n_I + n_J
    y = np.where(rng.random(n) < 0.5, 1, -1)
    y[:2] = (1, -1)
    y[n_I : n_I + 2] = (1, -1)
    X = rng.normal(size=(n, 2)) + 0.8 * y[:, None]
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    K = gram(spec, X).entries
    constraints = []
    for rate in rates:
        scope = int((y[n_I:] == rate.scope_label).sum()) if rate.scope_label else n_J
        constraints.append(count_target(p_star, scope, rate))
    problem = CsvmProblem.build(K, y, n_I, np.full(n_I, 1.0), constraints, time_limit=120.0, kernel=spec)
    return problem


def enumerate_optimum(problem: CsvmProblem) -> float:
    best = math.inf
    for bits in itertools.product((0, 1), repeat=problem.qp.n_J):
        z = np.array(bits, dtype=np.int8)
        if not counts_met(problem.count_rows, z):
            continue
        solution = solve_qp(problem.qp.with_status(z))
        if solution.status is QpStatus.OPTIMAL:
            best = min(best, solution.objective)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_matches_enumeration(seed):
    problem = random_instance(seed)
    model = solve_csvm(problem)
    assert model.status is SolveStatus.PROVEN_OPTIMAL
    assert model.objective == pytest.approx(enumerate_optimum(problem), rel=1e-5)
    assert all(a >= c.required for a, c in zip(model.achieved_counts(problem), problem.constraints))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_matches_enumeration_eight_anchors(seed):
    problem = random_instance(seed, n_I=16, n_J=8)
    model = solve_csvm(problem)
    assert model.objective == pytest.approx(enumerate_optimum(problem), rel=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100, 125))
def test_matches_enumeration_larger_training_part(seed):
    problem = random_instance(seed, n_I=20, n_J=8)
    model = solve_csvm(problem)
    assert model.objective == pytest.approx(enumerate_optimum(problem), rel=1e-6)


def test_more_constraints_never_lower_the_objective():
    loose = solve_csvm(random_instance(7, rates=(RateKind.TPR,)))
    tight = solve_csvm(random_instance(7, rates=(RateKind.TPR, RateKind.TNR)))
    assert tight.objective >= loose.objective - 1e-7 * max(1.0, abs(loose.objective))


def test_without_constraints_matches_svm_on_I():
    data = two_blobs(n_per_class=8, spread=1.5, seed=2)
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    K = gram(spec, data.X).entries
    n_I = 10
    c_I = np.full(n_I, 1.0)
    model = solve_csvm(CsvmProblem.build(K, data.y, n_I, c_I, (), kernel=spec))
    svm = solve_qp(build_qp_problem(K[:n_I, :n_I], data.y[:n_I], n_I, c_I))
    assert model.objective == pytest.approx(svm.objective, rel=1e-5)


def test_infeasible_interleaved_line():
    data = interleaved_line(40)
    K = gram(KernelSpec(KernelKind.LINEAR), data.X).entries
    n_I = 20
    constraints = [count_target(1.5, 10, RateKind.TPR), count_target(1.5, 10, RateKind.TNR)]
    problem = CsvmProblem.build(
        K, data.y, n_I, np.full(n_I, 1.0), constraints, time_limit=60.0, kernel=KernelSpec(KernelKind.LINEAR)
    )
    model = solve_csvm(problem)
    assert model.status is SolveStatus.INFEASIBLE
    assert model.solution is None
    assert model.violated
    assert diagnose_feasibility(problem).possibly_infeasible


def test_diagnose_verdicts():
    problem = random_instance(0, rates=(RateKind.TPR,))
    assert diagnose_feasibility(problem).verdict == "feasible by intercept shift"
    two_sided = random_instance(0, rates=(RateKind.TPR, RateKind.TNR))
    report = diagnose_feasibility(two_sided)
    assert report.verdict == "feasible (separating kernel)"
    assert "TNR" in report.to_text()


def _warm_started_problem():
    data = two_blobs(n_per_class=10, seed=5)
    order = np.concatenate([np.arange(0, 20, 2), np.arange(1, 20, 2)])
    X, y = data.X[order], data.y[order]
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    K = gram(spec, X).entries
    c = np.full(20, 1.0)
    problem = CsvmProblem.build(K, y, 10, c[:10], [count_target(0.9, 5, RateKind.TPR)], kernel=spec)
    svm_problem = build_qp_problem(K, y, 20, c)
    return problem, recover_intercept(svm_problem, solve_qp(svm_problem))


def test_warm_start_when_svm_meets_targets():
    problem, svm = _warm_started_problem()
    warm = warm_start_from_svm(svm, problem)
    assert warm is not None
    assert warm.status is SolveStatus.HEURISTIC
    np.testing.assert_array_equal(warm.z, np.ones(10))

    model = solve_csvm(problem, warm)
    assert model.objective <= warm.objective + 1e-9
    assert model.status is SolveStatus.PROVEN_OPTIMAL


def test_failed_root_relaxation_keeps_the_warm_incumbent(monkeypatch):
    problem, svm = _warm_started_problem()
    warm = warm_start_from_svm(svm, problem)
    assert warm is not None
    monkeypatch.setattr(bnb._BranchAndBound, "solve_relaxation", lambda self, status, start: None)
    model = solve_csvm(problem, warm)
    assert model.status is SolveStatus.HEURISTIC
    assert model.gap == math.inf
    assert model.objective == pytest.approx(warm.objective)
    np.testing.assert_array_equal(model.z, warm.z)


def test_unconverged_relaxation_inherits_the_parent_bound():
    qp = random_instance(0).qp
    converged = solve_qp(qp)
    assert accepted(converged)
    assert node_bound(converged, -math.inf) == converged.objective
    assert node_bound(converged, converged.objective + 1.0) == converged.objective + 1.0

    stalled = replace(converged, status=QpStatus.MAX_ITER, objective=converged.objective - 10.0)
    assert not accepted(stalled)
    assert node_bound(stalled, 2.5) == 2.5
    assert node_bound(stalled, -math.inf) == -math.inf


def test_propagation_forces_full_scopes():
    rows = (CountRow("tpr>=2", np.array([0, 1]), 2),)
    status = np.full(3, AnchorStatus.RELAXED, dtype=np.int8)
    forced = propagate_counts(rows, status)
    assert list(forced[:2]) == [AnchorStatus.FIXED_ONE] * 2
    status[0] = AnchorStatus.FIXED_ZERO
    assert propagate_counts(rows, status) is None


def test_template_must_leave_anchors_relaxed():
    problem = random_instance(1)
    fixed = problem.qp.with_status(np.zeros(problem.qp.n_J, dtype=np.int8))
    with pytest.raises(ValueError):
        CsvmProblem(qp=fixed, constraints=problem.constraints)


@pytest.mark.parametrize("seed", range(10))
def test_reduction_predicts_like_svm_on_I(seed):
    problem = random_instance(seed, rates=())
    model = solve_csvm(problem)
    n_I = problem.qp.n_I
    svm_problem = build_qp_problem(problem.qp.K_II, problem.qp.y_I, n_I, problem.qp.c_I)
    svm = recover_intercept(svm_problem, solve_qp(svm_problem))
    assert model.objective == pytest.approx(svm.objective, rel=1e-6, abs=1e-9)
    K_rows = problem.qp.K[:, :n_I]
    ours = problem.qp.K @ model.solution.dual_coef + model.solution.beta
    theirs = K_rows @ (svm.lam * svm.y_I) + svm.beta
    confident = np.abs(theirs) > 1e-4
    np.testing.assert_array_equal(np.sign(ours[confident]), np.sign(theirs[confident]))
