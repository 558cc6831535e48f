"""
Constrained SVM: best-first branch-and-bound over the anchor indicators z.

Each node fixes some anchors to 0 or 1 and relaxes the rest to [0, 1]; its
QP relaxation (solved by `solve_qp`, warm-started from the parent) bounds
every integral descendant. Count rows are propagated before a node is
solved, rounding heuristics supply incumbents, and a time limit turns the
search into a heuristic that still returns a count-feasible model.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .baselines import slide_beta
from .kernel import KernelKind, KernelSpec
from .logging_utils import log_node, log_solver_summary
from .metrics import CountConstraint, RateKind, scope_mask
from .qp import (
    DEFAULT_BIG_M,
    DEFAULT_TOL,
    AnchorStatus,
    CountRow,
    QpProblem,
    QpSolution,
    QpStatus,
    SolverError,
    build_qp_problem,
    recover_intercept,
    solve_qp,
)

logger = logging.getLogger(__name__)

DEFAULT_TIME_LIMIT = 300.0
DEFAULT_INT_TOL = 1e-5
PRUNE_ABS_TOL = 1e-9
PRUNE_REL_TOL = 1e-7
MARGIN_TOL = 1e-6
# A node QP that ran out of iterations is kept, with its parent's bound, if it is this close to feasible.
MAX_ITER_PRIMAL_TOL = 1e-4
HEURISTIC_INTERVAL = 25


class InfeasibleProblemError(SolverError):
    """No z satisfies the count constraints together with the margins."""

    def __init__(self, message: str, diagnosis: str = ""):
        super().__init__(message)
        self.diagnosis = diagnosis


class NoIncumbentError(SolverError):
    """The time limit ran out before any count-feasible z was found."""


class SolveStatus(str, Enum):
    PROVEN_OPTIMAL = "proven_optimal"
    INCUMBENT_AT_TIMEOUT = "incumbent_at_timeout"
    INFEASIBLE = "infeasible"
    HEURISTIC = "heuristic"


# === Problem and model ======================================================

@dataclass(frozen=True, eq=False)
class CsvmProblem:
    qp: QpProblem
    constraints: tuple[CountConstraint, ...] = ()
    time_limit: float | None = DEFAULT_TIME_LIMIT
    node_tol: float = DEFAULT_TOL
    int_tol: float = DEFAULT_INT_TOL
    kernel: KernelSpec | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")
        if len(self.constraints) != len(self.qp.count_rows):
            raise ValueError("Each count constraint needs exactly one count row in the QP template")
        if (self.qp.anchor_status != AnchorStatus.RELAXED).any():
            raise ValueError("The QP template must leave every anchor relaxed")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")

    @classmethod
    def build(
        cls,
        K,
        labels,
        n_I: int,
        slack_penalties,
        constraints: Sequence[CountConstraint] = (),
        *,
        M1: float = DEFAULT_BIG_M,
        M2: float = DEFAULT_BIG_M,
        **kwargs,
    ) -> "CsvmProblem":
        """Template problem over a joint Gram in I-then-J order."""
        y_J = np.asarray(labels)[n_I:]
        rows = tuple(
            CountRow(
                name=f"{c.rate.value}>={c.required}",
                indices=np.flatnonzero(scope_mask(c.rate, y_J)),
                required=c.required,
            )
            for c in constraints
        )
        qp = build_qp_problem(K, labels, n_I, slack_penalties, M1=M1, M2=M2, count_rows=rows)
        return cls(qp=qp, constraints=tuple(constraints), **kwargs)

    @property
    def count_rows(self) -> tuple[CountRow, ...]:
        return self.qp.count_rows


@dataclass(frozen=True, eq=False)
class CsvmModel:
    solution: QpSolution | None
    z: np.ndarray
    objective: float
    gap: float
    status: SolveStatus
    wall_time_seconds: float
    nodes: int = 0
    violated: str | None = None
    incumbent_history: tuple[tuple[float, float], ...] = ()

    def achieved_counts(self, problem: CsvmProblem) -> tuple[int, ...]:
        return tuple(int(self.z[row.indices].sum()) for row in problem.count_rows)


@dataclass(order=True)
class BnbNode:
    bound: float
    sequence: int
    status: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)
    relaxation: QpSolution | None = field(compare=False, default=None)

    @property
    def fixed_one(self) -> np.ndarray:
        return np.flatnonzero(self.status == AnchorStatus.FIXED_ONE)

    @property
    def fixed_zero(self) -> np.ndarray:
        return np.flatnonzero(self.status == AnchorStatus.FIXED_ZERO)

    @property
    def relaxed(self) -> np.ndarray:
        return np.flatnonzero(self.status == AnchorStatus.RELAXED)


# === Node helpers ===========================================================

def propagate_counts(rows: Sequence[CountRow], status: np.ndarray) -> np.ndarray | None:
    """
    Tighten anchor status against the count rows.

    Returns None when some row cannot be met by its fixed-one plus relaxed
    anchors; fixes all relaxed anchors of a row to 1 when every one of them
    is needed.
    """
    status = np.array(status, dtype=np.int8)
    changed = True
    while changed:
        changed = False
        for row in rows:
            scoped = status[row.indices]
            ones = int((scoped == AnchorStatus.FIXED_ONE).sum())
            free = scoped == AnchorStatus.RELAXED
            if ones + int(free.sum()) < row.required:
                return None
            if free.any() and ones + int(free.sum()) == row.required:
                status[row.indices[free]] = AnchorStatus.FIXED_ONE
                changed = True
    return status


def counts_met(rows: Sequence[CountRow], z: np.ndarray) -> bool:
    return all(int(z[row.indices].sum()) >= row.required for row in rows)


def branching_anchor(z: np.ndarray, mu: np.ndarray, fractional: np.ndarray) -> int:
    """Fractional anchor closest to 0.5; ties go to larger mu, then lower index."""
    candidates = np.flatnonzero(fractional)
    order = np.lexsort((candidates, -mu[candidates], np.abs(z[candidates] - 0.5)))
    return int(candidates[order[0]])


def round_relaxation(rows: Sequence[CountRow], status: np.ndarray, z: np.ndarray) -> np.ndarray | None:
    """Round relaxed anchors at 0.5, then raise the largest z values until every row is met."""
    rounded = np.where(status == AnchorStatus.RELAXED, (z >= 0.5).astype(np.int8), status).astype(np.int8)
    for row in rows:
        need = row.required - int(rounded[row.indices].sum())
        if need <= 0:
            continue
        spare = row.indices[(status[row.indices] == AnchorStatus.RELAXED) & (rounded[row.indices] == 0)]
        if spare.size < need:
            return None
        spare = spare[np.argsort(-z[spare], kind="stable")]
        rounded[spare[:need]] = 1
    return rounded


def accepted(solution: QpSolution) -> bool:
    """A fixed-z QP counts as a candidate only when it converged to the KKT tolerance."""
    return solution.status is QpStatus.OPTIMAL


def node_bound(solution: QpSolution, parent_bound: float) -> float:
    """Lower bound of a node; an unconverged relaxation only inherits its parent's bound."""
    if solution.status is not QpStatus.OPTIMAL:
        return parent_bound
    return max(solution.objective, parent_bound)


def margins_met(problem: QpProblem, solution: QpSolution, z: np.ndarray) -> bool:
    """Every anchor with z = 1 sits on the correct side with margin 1 (within tolerance)."""
    active = np.flatnonzero(z == 1)
    if active.size == 0:
        return True
    rows = problem.n_I + active
    scores = problem.K[rows] @ solution.dual_coef + solution.beta
    return bool((problem.y_J[active] * scores >= 1.0 - MARGIN_TOL).all())


# === Search =================================================================

class _BranchAndBound:
    def __init__(self, problem: CsvmProblem, run_id: str):
        self.problem = problem
        self.rows = problem.count_rows
        self.run_id = run_id
        self.started = time.perf_counter()
        self.deadline = None if problem.time_limit is None else self.started + problem.time_limit
        self.heap: list[BnbNode] = []
        self.sequence = itertools.count()
        self.incumbent: QpSolution | None = None
        self.incumbent_z: np.ndarray | None = None
        self.incumbent_obj = math.inf
        self.history: list[tuple[float, float]] = []
        self.nodes = 0

    # --- bookkeeping ---------------------------------------------------------

    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def timed_out(self) -> bool:
        return self.deadline is not None and time.perf_counter() >= self.deadline

    def remaining(self) -> float | None:
        if self.deadline is None:
            return None
        return max(self.deadline - time.perf_counter(), 1e-3)

    def prune_level(self) -> float:
        if not math.isfinite(self.incumbent_obj):
            return math.inf
        return self.incumbent_obj - (PRUNE_ABS_TOL + PRUNE_REL_TOL * max(1.0, abs(self.incumbent_obj)))

    def gap(self) -> float:
        if not self.heap:
            return 0.0
        best_bound = min(node.bound for node in self.heap)
        return max(0.0, (self.incumbent_obj - best_bound) / max(1.0, abs(self.incumbent_obj)))

    # --- QP calls ------------------------------------------------------------

    def solve_relaxation(self, status: np.ndarray, warm: QpSolution | None) -> QpSolution | None:
        qp = self.problem.qp.with_status(status)
        solution = solve_qp(qp, warm=warm, tol=self.problem.node_tol, time_limit=self.remaining())
        if solution.status is QpStatus.INFEASIBLE:
            return None
        if solution.status is QpStatus.MAX_ITER and solution.residuals.primal > MAX_ITER_PRIMAL_TOL:
            logger.warning("[%s] node QP stopped at residual %.2e; treating node as infeasible",
                           self.run_id, solution.residuals.primal)
            return None
        return solution

    def solve_many(self, statuses: list[np.ndarray], warm: QpSolution | None) -> list[QpSolution | None]:
        if self.problem.workers > 1 and len(statuses) > 1:
            return Parallel(n_jobs=min(self.problem.workers, len(statuses)), prefer="threads")(
                delayed(self.solve_relaxation)(status, warm) for status in statuses
            )
        return [self.solve_relaxation(status, warm) for status in statuses]

    def offer(self, solution: QpSolution, z: np.ndarray, source: str) -> None:
        z = np.asarray(z, dtype=np.int8)
        if not counts_met(self.rows, z):
            return
        if not margins_met(self.problem.qp, solution, z):
            return
        if solution.objective < self.incumbent_obj:
            if self.history:
                assert solution.objective <= self.history[-1][1], "incumbent objective increased"
            self.incumbent, self.incumbent_z, self.incumbent_obj = solution, z, solution.objective
            self.history.append((self.elapsed(), solution.objective))
            logger.debug("[%s] new incumbent %.9g from %s", self.run_id, solution.objective, source)

    def try_fixed(self, z: np.ndarray, warm: QpSolution | None, source: str) -> bool:
        """Solve the QP with every anchor fixed to `z`; True if it produced a candidate."""
        z = np.asarray(z, dtype=np.int8)
        if not counts_met(self.rows, z):
            return False
        solution = solve_qp(self.problem.qp.with_status(z), warm=warm,
                            tol=self.problem.node_tol, time_limit=self.remaining())
        if accepted(solution):
            self.offer(solution, z, source)
            return True
        return False

    def try_rounding(self, status: np.ndarray, relaxation: QpSolution) -> None:
        rounded = round_relaxation(self.rows, status, relaxation.z)
        if rounded is not None:
            self.try_fixed(rounded, relaxation, "rounding")

    # --- driver --------------------------------------------------------------

    def run(self, warm: "CsvmModel | None") -> CsvmModel:
        qp = self.problem.qp
        warm_solution = None
        if warm is not None and warm.solution is not None and warm.status is not SolveStatus.INFEASIBLE:
            warm_solution = warm.solution
            self.offer(warm.solution, warm.z, "warm start")

        root_status = propagate_counts(self.rows, qp.anchor_status)
        if root_status is None:
            return self.infeasible()
        root = self.solve_relaxation(root_status, warm_solution)
        if root is None:
            if self.timed_out():
                return self.timeout(gap=math.inf)
            if self.incumbent is not None:
                logger.warning("[%s] root relaxation failed; returning the known incumbent", self.run_id)
                return self.model(SolveStatus.HEURISTIC, math.inf)
            return self.infeasible()

        if all(row.required == 0 for row in self.rows):
            self.try_fixed(np.zeros(qp.n_J, dtype=np.int8), root, "all-zero anchors")
        self.try_rounding(root_status, root)
        root_bound = node_bound(root, -math.inf)
        heapq.heappush(self.heap, BnbNode(root_bound, next(self.sequence), root_status, 0, root))

        while self.heap:
            if self.timed_out():
                return self.timeout()
            if self.heap[0].bound >= self.prune_level():
                self.heap.clear()
                break
            node = heapq.heappop(self.heap)
            self.nodes += 1
            log_node(self.run_id, self.nodes, node.bound, self.incumbent_obj, self.gap(), node.depth)
            self.expand(node)

        if self.incumbent is None:
            return self.infeasible()
        return self.model(SolveStatus.PROVEN_OPTIMAL, 0.0)

    def expand(self, node: BnbNode) -> None:
        relaxation = node.relaxation
        relaxed = node.status == AnchorStatus.RELAXED
        z = relaxation.z
        fractional = relaxed & (np.minimum(z, 1.0 - z) > self.problem.int_tol)
        if not fractional.any():
            leaf = np.where(relaxed, np.rint(z), node.status).astype(np.int8)
            if self.try_fixed(leaf, relaxation, "integral relaxation") or not relaxed.any():
                return
            # rounding broke a margin; split on the least integral relaxed anchor instead
            fractional = relaxed
        elif self.nodes % HEURISTIC_INTERVAL == 0:
            self.try_rounding(node.status, relaxation)

        j = branching_anchor(z, relaxation.mu, fractional)
        children = []
        for value in (AnchorStatus.FIXED_ONE, AnchorStatus.FIXED_ZERO):
            status = node.status.copy()
            status[j] = value
            status = propagate_counts(self.rows, status)
            if status is not None:
                children.append(status)
        for status, solution in zip(children, self.solve_many(children, relaxation)):
            if solution is None:
                if self.timed_out():
                    heapq.heappush(self.heap, BnbNode(node.bound, next(self.sequence), status, node.depth + 1))
                continue
            bound = node_bound(solution, node.bound)
            if bound < self.prune_level():
                heapq.heappush(
                    self.heap, BnbNode(bound, next(self.sequence), status, node.depth + 1, solution)
                )

    # --- outcomes ------------------------------------------------------------

    def model(self, status: SolveStatus, gap: float) -> CsvmModel:
        z = self.incumbent_z
        solution = recover_intercept(self.problem.qp.with_status(z), self.incumbent)
        if not margins_met(self.problem.qp, solution, z):
            solution = self.incumbent
        result = CsvmModel(
            solution=solution,
            z=z.astype(np.int8),
            objective=solution.objective,
            gap=gap,
            status=status,
            wall_time_seconds=self.elapsed(),
            nodes=self.nodes,
            incumbent_history=tuple(self.history),
        )
        log_solver_summary(self.run_id, status.value, result.objective, gap, self.nodes, result.wall_time_seconds)
        return result

    def timeout(self, gap: float | None = None) -> CsvmModel:
        if self.incumbent is None:
            raise NoIncumbentError(
                f"Time limit of {self.problem.time_limit:g}s reached before a count-feasible incumbent was found"
            )
        return self.model(SolveStatus.INCUMBENT_AT_TIMEOUT, self.gap() if gap is None else gap)

    def infeasible(self) -> CsvmModel:
        violated = identify_violated(self.problem)
        logger.info("[%s] Problem infeasible; violated constraint(s): %s", self.run_id, violated)
        return CsvmModel(
            solution=None,
            z=np.zeros(self.problem.qp.n_J, dtype=np.int8),
            objective=math.inf,
            gap=math.inf,
            status=SolveStatus.INFEASIBLE,
            wall_time_seconds=self.elapsed(),
            nodes=self.nodes,
            violated=violated,
        )


def identify_violated(problem: CsvmProblem) -> str:
    """Name the count rows whose removal alone restores feasibility of the root."""
    rows = problem.count_rows
    if not rows:
        return "margin constraints"
    short = [row.name for row in rows if row.indices.size < row.required]
    if short:
        return ", ".join(short)
    culprits = []
    for k, row in enumerate(rows):
        reduced = problem.qp.without_count_rows([k])
        status = propagate_counts(reduced.count_rows, reduced.anchor_status)
        if status is None:
            continue
        solution = solve_qp(reduced.with_status(status), tol=problem.node_tol)
        if solution.status is not QpStatus.INFEASIBLE:
            culprits.append(row.name)
    if culprits:
        return ", ".join(culprits)
    return " jointly with ".join(row.name for row in rows)


def solve_csvm(problem: CsvmProblem, warm: CsvmModel | None = None, *, run_id: str = "csvm") -> CsvmModel:
    """Branch-and-bound over z; see the module docstring."""
    return _BranchAndBound(problem, run_id).run(warm)


# === Warm start and diagnosis ===============================================

def warm_start_from_svm(svm: QpSolution, problem: CsvmProblem) -> CsvmModel | None:
    """
    Incumbent built from an SVM trained on I and J together.

    The SVM intercept is slid until the count targets hold on J, anchors the
    shifted classifier gets right are set to z = 1, and the node QP with that
    z is solved. Returns None (cold start) when no shift reaches the targets.
    """
    started = time.perf_counter()
    qp = problem.qp
    if svm.lam.size != qp.n_I + qp.n_J:
        raise ValueError(f"SVM has {svm.lam.size} coefficients; expected |I|+|J| = {qp.n_I + qp.n_J}")
    labels = qp.labels
    scores_J = qp.K[qp.n_I :] @ (svm.lam * labels) + svm.beta
    try:
        sliding = slide_beta(svm, scores_J, qp.y_J, problem.constraints)
    except ValueError as exc:
        logger.warning("Sliding beta cannot meet the targets (%s); solving from a cold start", exc)
        return None

    z = (qp.y_J * (scores_J + sliding.beta_shift) > 0).astype(np.int8)
    if not counts_met(qp.count_rows, z):
        return None
    fixed = qp.with_status(z)
    lam = np.clip(svm.lam[: qp.n_I], 0.0, qp.c_I / 2.0)
    mu = np.clip(svm.lam[qp.n_I :], 0.0, qp.M2 * z)
    f_I = qp.K[: qp.n_I] @ np.concatenate([lam * qp.y_I, mu * qp.y_J])
    beta = sliding.beta
    xi = np.maximum(0.0, 1.0 - qp.y_I * (f_I + beta))
    start = QpSolution(
        lam=lam, mu=mu, beta=beta, xi=xi, z=z.astype(float), objective=math.inf,
        status=QpStatus.MAX_ITER, iterations=0, y_I=qp.y_I, y_J=qp.y_J,
        x=fixed.pack(lam, mu, beta, xi, z),
    )
    solution = solve_qp(fixed, warm=start, tol=problem.node_tol)
    if not accepted(solution) or not margins_met(qp, solution, z):
        logger.warning("Warm-start QP did not converge (%s); solving from a cold start", solution.status.value)
        return None
    return CsvmModel(
        solution=solution,
        z=z,
        objective=solution.objective,
        gap=math.inf,
        status=SolveStatus.HEURISTIC,
        wall_time_seconds=time.perf_counter() - started,
    )


@dataclass(frozen=True)
class ConstraintDiagnosis:
    rate: RateKind
    required: int
    scope_size: int
    one_sided: bool


@dataclass(frozen=True)
class FeasibilityReport:
    constraints: tuple[ConstraintDiagnosis, ...]
    kernel_rbf: bool
    verdict: str

    @property
    def possibly_infeasible(self) -> bool:
        return self.verdict == "possibly infeasible"

    def to_text(self) -> str:
        lines = [f"Feasibility: {self.verdict}"]
        for item in self.constraints:
            side = "one-sided (intercept shift reaches it)" if item.one_sided else "two-sided"
            lines.append(f"  {item.rate.value.upper()} >= {item.required}/{item.scope_size}: {side}")
        lines.append(f"  kernel: {'rbf (separating)' if self.kernel_rbf else 'not rbf'}")
        return "\n".join(lines)


def diagnose_feasibility(problem: CsvmProblem) -> FeasibilityReport:
    items = tuple(
        ConstraintDiagnosis(c.rate, c.required, c.scope_size, c.rate is not RateKind.ACC)
        for c in problem.constraints
    )
    kernel_rbf = problem.kernel is not None and problem.kernel.kind is KernelKind.RBF
    sides = {c.rate for c in problem.constraints if c.required > 0}
    if all(item.one_sided for item in items) and len(sides) <= 1:
        verdict = "feasible by intercept shift"
    elif kernel_rbf:
        verdict = "feasible (separating kernel)"
    else:
        verdict = "possibly infeasible"
    return FeasibilityReport(constraints=items, kernel_rbf=kernel_rbf, verdict=verdict)
