import numpy as np
import pytest
from sklearn.svm import SVC

from conftest import overlapping, two_blobs
from csvm.core.dataset import Dataset
from csvm.core.kernel import KernelKind, KernelSpec, gram
from csvm.core.qp import (
    AnchorStatus,
    CountRow,
    PenaltyConfig,
    QpStatus,
    SupportModel,
    build_qp_problem,
    dump_qp_problem,
    kkt_residuals,
    recover_intercept,
    solve_qp,
    solve_standard_svm,
)


def test_two_point_problem():
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = np.array([1, -1])
    K = gram(KernelSpec(KernelKind.LINEAR), X).entries
    problem = build_qp_problem(K, y, 2, np.array([100.0, 100.0]))
    solution = recover_intercept(problem, solve_qp(problem))
    assert solution.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(solution.lam, [0.5, 0.5], atol=1e-5)
    assert solution.beta == pytest.approx(0.0, abs=1e-5)
    assert solution.objective == pytest.approx(1.0, rel=1e-5)
    scores = K @ solution.dual_coef + solution.beta
    np.testing.assert_allclose(scores, [1.0, -1.0], atol=1e-5)


def test_penalty_resolution():
    labels = np.array([1, 1, -1, -1, -1])
    c_plus, c_minus = PenaltyConfig(C=6.0).resolve(labels)
    assert (c_plus, c_minus) == pytest.approx((3.0, 2.0))
    penalties = PenaltyConfig.independent(2.0, 5.0).slack_penalties(labels)
    np.testing.assert_allclose(penalties, [2.0, 2.0, 5.0, 5.0, 5.0])
    with pytest.raises(ValueError):
        PenaltyConfig(C=0.0)


def _sklearn_oracle(data: Dataset, penalties: PenaltyConfig, gamma: float) -> SVC:
    c_plus, c_minus = penalties.resolve(data.y)
    # sklearn minimises 1/2 w'w + sum C_i xi_i, i.e. half our objective
    svc = SVC(kernel="rbf", gamma=gamma, C=1.0, class_weight={1: c_plus / 2, -1: c_minus / 2}, tol=1e-8)
    return svc.fit(data.X, data.y)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("penalties", [PenaltyConfig(C=4.0), PenaltyConfig.independent(0.3, 0.1)])
def test_standard_svm_matches_sklearn(seed, penalties):
    data = overlapping(n=30, seed=seed)
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    solution = solve_standard_svm(data, penalties, spec)
    assert solution.status is QpStatus.OPTIMAL

    svc = _sklearn_oracle(data, penalties, 0.5)
    ours = SupportModel(solution, data.X, spec).decision_function(data.X)
    theirs = svc.decision_function(data.X)
    np.testing.assert_allclose(ours, theirs, atol=1e-3)

    K = gram(spec, data.X).entries
    coef = np.zeros(data.n)
    coef[svc.support_] = svc.dual_coef_.ravel()
    xi = np.maximum(0.0, 1.0 - data.y * theirs)
    c = penalties.slack_penalties(data.y)
    oracle_objective = coef @ K @ coef + c @ xi
    assert solution.objective == pytest.approx(oracle_objective, rel=1e-3)


@pytest.mark.parametrize("seed", range(8))
def test_kkt_residuals_small(seed):
    rng = np.random.default_rng(seed)
    n_I, n_J = 12, 6
    X = rng.normal(size=(n_I + n_J, 2))
    y = np.where(rng.random(n_I + n_J) < 0.5, 1, -1)
    y[:2] = (1, -1)
    K = gram(KernelSpec(KernelKind.RBF, gamma=1.0), X).entries
    J_pos = np.flatnonzero(y[n_I:] == 1)
    rows = [CountRow("tpr", J_pos, max(0, J_pos.size - 1))] if J_pos.size else []
    problem = build_qp_problem(K, y, n_I, np.full(n_I, 2.0), count_rows=rows)
    solution = solve_qp(problem)
    assert solution.status is QpStatus.OPTIMAL
    assert kkt_residuals(problem, solution).worst <= 1e-6
    assert np.all(solution.lam >= -1e-8)
    assert np.all(solution.lam <= problem.c_I / 2 + 1e-8)


def test_all_anchors_off_reduces_to_svm_on_I():
    data = two_blobs(n_per_class=8, spread=1.5, seed=3)
    order = np.concatenate([np.arange(0, 8, 2), np.arange(8, 16, 2), np.arange(1, 8, 2), np.arange(9, 16, 2)])
    X, y = data.X[order], data.y[order]
    n_I = 8
    K = gram(KernelSpec(KernelKind.RBF, gamma=0.5), X).entries
    c_I = np.full(n_I, 1.0)

    full = build_qp_problem(K, y, n_I, c_I).with_status(np.full(8, AnchorStatus.FIXED_ZERO))
    with_J = solve_qp(full)
    alone = solve_qp(build_qp_problem(K[:n_I, :n_I], y[:n_I], n_I, c_I))
    assert with_J.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(with_J.mu, 0.0, atol=1e-9)
    assert with_J.objective == pytest.approx(alone.objective, rel=1e-5, abs=1e-8)


def test_fixed_anchor_is_classified():
    data = two_blobs(n_per_class=10, seed=4)
    K = gram(KernelSpec(KernelKind.RBF, gamma=0.5), data.X).entries
    n_I = 14
    status = np.full(6, AnchorStatus.FIXED_ONE)
    problem = build_qp_problem(K, data.y, n_I, np.full(n_I, 1.0)).with_status(status)
    solution = solve_qp(problem)
    assert solution.status is QpStatus.OPTIMAL
    scores = K[n_I:] @ solution.dual_coef + solution.beta
    assert np.all(data.y[n_I:] * scores >= 1.0 - 1e-5)


def test_unreachable_count_row_is_infeasible():
    K = np.eye(4)
    y = np.array([1, -1, 1, 1])
    rows = [CountRow("tpr>=2", np.array([0, 1]), 2)]
    problem = build_qp_problem(K, y, 2, np.ones(2), count_rows=rows)
    problem = problem.with_status([AnchorStatus.FIXED_ZERO, AnchorStatus.RELAXED])
    assert solve_qp(problem).status is QpStatus.INFEASIBLE


def test_problem_validation():
    with pytest.raises(ValueError):
        build_qp_problem(np.eye(3), [1, -1], 2, np.ones(2))
    with pytest.raises(ValueError):
        build_qp_problem(np.eye(2), [1, -1], 2, np.array([1.0, 0.0]))


def test_dump_qp_problem(tmp_path):
    K = np.eye(3)
    problem = build_qp_problem(K, [1, -1, 1], 2, np.ones(2))
    written = dump_qp_problem(problem, tmp_path / "qp")
    assert sorted(p.name for p in written) == ["A.mtx", "P.mtx", "l.mtx", "q.mtx", "u.mtx"]


def _random_problem(seed: int, anchored: bool):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 41))
    X = rng.normal(size=(n, int(rng.integers(1, 5))))
    y = np.where(rng.random(n) < 0.5, 1, -1)
    y[:2] = (1, -1)
    spec = KernelSpec(KernelKind.RBF, gamma=2.0 ** int(rng.integers(-5, 4)))
    C = 2.0 ** int(rng.integers(-5, 8))
    K = gram(spec, X).entries
    if not anchored:
        return build_qp_problem(K, y, n, np.full(n, C))
    n_I = max(2, (2 * n) // 3)
    J_pos = np.flatnonzero(y[n_I:] == 1)
    rows = [CountRow("tpr", J_pos, J_pos.size // 2)] if J_pos.size else []
    return build_qp_problem(K, y, n_I, np.full(n_I, C), count_rows=rows)


def _assert_converged(problem):
    solution = solve_qp(problem)
    assert solution.status is QpStatus.OPTIMAL
    assert kkt_residuals(problem, solution).worst <= 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_random_svm_qps_reach_kkt_tolerance(seed):
    _assert_converged(_random_problem(seed, anchored=False))


@pytest.mark.parametrize("seed", range(40))
def test_random_anchored_qps_reach_kkt_tolerance(seed):
    _assert_converged(_random_problem(1000 + seed, anchored=True))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100, 1000))
def test_random_qp_sweep_reaches_kkt_tolerance(seed):
    _assert_converged(_random_problem(seed, anchored=seed % 3 == 0))


@pytest.mark.parametrize("copies", [2, 3])
def test_duplicated_instance_equals_weighted_instance(copies):
    data = overlapping(n=16, seed=2)
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    X = np.vstack([data.X, np.repeat(data.X[:1], copies - 1, axis=0)])
    y = np.concatenate([data.y, np.repeat(data.y[:1], copies - 1)])
    repeated = solve_qp(build_qp_problem(gram(spec, X).entries, y, y.size, np.ones(y.size)))

    weights = np.ones(data.n)
    weights[0] = copies
    weighted = solve_qp(build_qp_problem(gram(spec, data.X).entries, data.y, data.n, weights))
    assert repeated.status is QpStatus.OPTIMAL and weighted.status is QpStatus.OPTIMAL
    assert repeated.objective == pytest.approx(weighted.objective, rel=1e-4, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_relaxing_an_anchor_never_raises_the_objective(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(18, 2))
    y = np.where(rng.random(18) < 0.5, 1, -1)
    y[:2] = (1, -1)
    K = gram(KernelSpec(KernelKind.RBF, gamma=1.0), X).entries
    problem = build_qp_problem(K, y, 12, np.full(12, 2.0))
    fixed = solve_qp(problem.with_status(np.full(6, AnchorStatus.FIXED_ZERO)))
    assert fixed.status is QpStatus.OPTIMAL
    slack = 1e-6 * max(1.0, abs(fixed.objective))
    for k in range(6):
        status = np.full(6, AnchorStatus.FIXED_ZERO)
        status[k] = AnchorStatus.RELAXED
        relaxed = solve_qp(problem.with_status(status))
        assert relaxed.status is QpStatus.OPTIMAL
        assert relaxed.objective <= fixed.objective + slack


def test_anchor_copy_of_a_well_classified_point_changes_nothing():
    data = two_blobs(n_per_class=8, seed=5)
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    alone_problem = build_qp_problem(gram(spec, data.X).entries, data.y, data.n, np.ones(data.n))
    alone = recover_intercept(alone_problem, solve_qp(alone_problem))
    assert alone.status is QpStatus.OPTIMAL
    margins = data.y * (alone_problem.K @ alone.dual_coef + alone.beta)
    pick = int(np.argmax(margins))
    assert margins[pick] > 1.0

    X = np.vstack([data.X, data.X[pick : pick + 1]])
    y = np.append(data.y, data.y[pick])
    problem = build_qp_problem(gram(spec, X).entries, y, data.n, np.ones(data.n))
    anchored = solve_qp(problem.with_status([AnchorStatus.FIXED_ONE]))
    assert anchored.status is QpStatus.OPTIMAL
    assert anchored.objective == pytest.approx(alone.objective, rel=1e-5, abs=1e-8)
