"""
Nested cross-validation harness comparing SVM, SVM(C+,C-), sliding beta and CSVM.

The outer loop holds out one stratified fold at a time; everything fitted
(standardization, compression, grid search, the final models) sees only the
outer training part. Grid search scores each candidate by inner-CV mean
accuracy or G-mean and keeps the later candidate on ties.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import StratifiedKFold
from tqdm import tqdm

from .baselines import fit_weighted_model, slide_beta
from .bnb import (
    DEFAULT_INT_TOL,
    DEFAULT_TIME_LIMIT,
    CsvmModel,
    CsvmProblem,
    InfeasibleProblemError,
    diagnose_feasibility,
    solve_csvm,
    warm_start_from_svm,
)
from .dataset import Dataset, TrainSplit, compress_kmeans, split_half, standardize
from .kernel import GramCache, KernelKind, KernelSpec, gram
from .logging_utils import log_fold_complete, log_fold_start
from .metrics import (
    CountConstraint,
    PerformanceTarget,
    RateKind,
    RateReport,
    build_count_constraints,
    evaluate,
)
from .qp import (
    DEFAULT_BIG_M,
    DEFAULT_TOL,
    PenaltyConfig,
    QpSolution,
    SupportModel,
    build_qp_problem,
    fit_standard_svm,
    recover_intercept,
    solve_qp,
)

logger = logging.getLogger(__name__)

POWERS_OF_TWO = tuple(2.0**k for k in range(-5, 6))
SMALL_POWERS = (2.0**-3, 1.0, 2.0**3)
RATE_KEYS = ("tpr", "tnr", "acc", "gmean")


class Method(str, Enum):
    SVM = "svm"
    WEIGHTED = "svm_weighted"
    SLIDING = "sliding_beta"
    CSVM = "csvm"

    @property
    def label(self) -> str:
        return {
            Method.SVM: "SVM",
            Method.WEIGHTED: "SVM(C+,C-)",
            Method.SLIDING: "Sliding beta",
            Method.CSVM: "CSVM",
        }[self]


class Selection(str, Enum):
    ACC = "acc"
    GMEAN = "gmean"


class Reference(str, Enum):
    ANCHOR = "anchor"
    ALL = "all"


# === Configuration ==========================================================

def _check_grid(name: str, values) -> tuple[float, ...]:
    values = tuple(float(v) for v in values)
    if not values:
        raise ValueError(f"Grid {name} must not be empty")
    if any(v <= 0 for v in values):
        raise ValueError(f"Grid {name} must hold positive values, got {values}")
    if list(values) != sorted(values):
        raise ValueError(f"Grid {name} must be sorted ascending, got {values}")
    return values


@dataclass(frozen=True)
class GridSpec:
    C_values: tuple[float, ...] = POWERS_OF_TWO
    gamma_values: tuple[float, ...] = POWERS_OF_TWO
    C_plus_values: tuple[float, ...] = POWERS_OF_TWO
    C_minus_values: tuple[float, ...] = POWERS_OF_TWO
    name: str = "full"

    def __post_init__(self) -> None:
        for attr in ("C_values", "gamma_values", "C_plus_values", "C_minus_values"):
            object.__setattr__(self, attr, _check_grid(attr, getattr(self, attr)))

    @classmethod
    def full(cls) -> "GridSpec":
        return cls()

    @classmethod
    def small(cls) -> "GridSpec":
        return cls(SMALL_POWERS, SMALL_POWERS, SMALL_POWERS, SMALL_POWERS, name="small")

    def candidates(self, method: Method, kernel: KernelKind = KernelKind.RBF) -> list[dict]:
        """Candidates with gamma outermost and C (or C+, then C-) ascending inside."""
        gammas = self.gamma_values if KernelKind(kernel) is KernelKind.RBF else (None,)
        if method is Method.WEIGHTED:
            return [
                {"C_plus": cp, "C_minus": cm, "gamma": g}
                for g in gammas
                for cp in self.C_plus_values
                for cm in self.C_minus_values
            ]
        return [{"C": c, "gamma": g} for g in gammas for c in self.C_values]


@dataclass(frozen=True)
class CvPlan:
    outer_folds: int = 10
    inner_folds: int = 10
    selection: Selection = Selection.ACC
    seed: int = 0
    kernel: KernelKind = KernelKind.RBF
    reference: Reference = Reference.ANCHOR
    global_standardize: bool = False
    compress: bool = False
    compress_threshold: int = 1000
    compress_fraction: float = 0.2
    estimate_p0: bool = True
    workers: int = 1
    methods: tuple[Method, ...] = tuple(Method)

    def __post_init__(self) -> None:
        object.__setattr__(self, "selection", Selection(self.selection))
        object.__setattr__(self, "kernel", KernelKind(self.kernel))
        object.__setattr__(self, "reference", Reference(self.reference))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ValueError(f"Need at least 2 folds, got {self.outer_folds}/{self.inner_folds}")
        if not self.methods:
            raise ValueError("At least one method must be evaluated")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")

    @classmethod
    def for_dataset(cls, data: Dataset, *, compress_threshold: int = 1000, **overrides) -> "CvPlan":
        """K = 5 above 1000 instances else 10; G-mean when the minority class is under 30%."""
        folds = 5 if data.n > 1000 else 10
        n_pos, n_neg = data.class_counts()
        selection = Selection.GMEAN if min(n_pos, n_neg) / data.n < 0.3 else Selection.ACC
        settings = {
            "outer_folds": folds,
            "inner_folds": folds,
            "selection": selection,
            "compress": data.n > compress_threshold,
            "compress_threshold": compress_threshold,
        }
        settings.update(overrides)
        return cls(**settings)


@dataclass(frozen=True)
class SolverConfig:
    M1: float = DEFAULT_BIG_M
    M2: float = DEFAULT_BIG_M
    time_limit: float | None = DEFAULT_TIME_LIMIT
    inner_time_limit: float | None = None
    node_tol: float = DEFAULT_TOL
    int_tol: float = DEFAULT_INT_TOL
    workers: int = 1

    @property
    def tuning_time_limit(self) -> float | None:
        return self.time_limit if self.inner_time_limit is None else self.inner_time_limit


# === Fitting ================================================================

@dataclass(frozen=True, eq=False)
class CsvmFit:
    model: SupportModel
    result: CsvmModel
    problem: CsvmProblem
    split: TrainSplit
    constraints: tuple[CountConstraint, ...]
    svm: QpSolution

    def decision_function(self, X) -> np.ndarray:
        return self.model.decision_function(X)


def fit_csvm(
    train: Dataset,
    C: float,
    spec: KernelSpec,
    targets: Sequence[PerformanceTarget],
    *,
    seed: int,
    solver: SolverConfig,
    time_limit: float | None = None,
    run_id: str = "csvm",
    K=None,
) -> CsvmFit:
    """
    Split `train` into I and J, warm-start from an SVM on both and solve the CSVM.

    `K` is the Gram of `train` in row order when the caller already has it.

    Raises InfeasibleProblemError (carrying the feasibility diagnosis) when no
    anchor assignment meets the targets.
    """
    split = split_half(np.arange(train.n), train.y, seed)
    order = split.order
    n_I = split.I.size
    X, y, w = train.X[order], train.y[order], train.weights[order]
    K = gram(spec, X).entries if K is None else np.asarray(K)[np.ix_(order, order)]
    c_plus, c_minus = PenaltyConfig(C=C).resolve(y[:n_I], w[:n_I])
    c_all = np.where(y == 1, c_plus, c_minus) * w
    constraints = build_count_constraints(targets, y[n_I:])
    problem = CsvmProblem.build(
        K, y, n_I, c_all[:n_I], constraints,
        M1=solver.M1,
        M2=solver.M2,
        time_limit=time_limit,
        node_tol=solver.node_tol,
        int_tol=solver.int_tol,
        kernel=spec,
        workers=solver.workers,
    )
    svm_problem = build_qp_problem(K, y, y.size, c_all)
    svm = recover_intercept(svm_problem, solve_qp(svm_problem))
    warm = warm_start_from_svm(svm, problem) if constraints else None
    result = solve_csvm(problem, warm, run_id=run_id)
    if result.solution is None:
        diagnosis = diagnose_feasibility(problem).to_text()
        raise InfeasibleProblemError(
            f"CSVM infeasible; violated constraint(s): {result.violated}", diagnosis
        )
    return CsvmFit(
        model=SupportModel(result.solution, X, spec),
        result=result,
        problem=problem,
        split=split,
        constraints=tuple(constraints),
        svm=svm,
    )


def kernel_for(plan: CvPlan, gamma: float | None) -> KernelSpec:
    return KernelSpec(plan.kernel, gamma)


def fit_method(
    train: Dataset,
    method: Method,
    params: dict,
    plan: CvPlan,
    target: PerformanceTarget | None = None,
    solver: SolverConfig | None = None,
    *,
    time_limit: float | None = None,
    run_id: str = "cv",
    grams: GramCache | None = None,
    rows=None,
):
    """
    Fit one method at fixed hyperparameters; the result has decision_function(X).

    With `grams`, the kernel block of `train` is sliced from the cache, `rows`
    being the positions of `train` within the cached points.
    """
    spec = kernel_for(plan, params.get("gamma"))
    K = None if grams is None else grams.block(spec, rows)
    if method is Method.WEIGHTED:
        return fit_weighted_model(train, params["C_plus"], params["C_minus"], spec, K)
    if method is Method.CSVM and target is not None:
        return fit_csvm(
            train, params["C"], spec, [target],
            seed=plan.seed, solver=solver or SolverConfig(), time_limit=time_limit, run_id=run_id, K=K,
        )
    if method in (Method.SVM, Method.CSVM):
        # without a target the CSVM reduces to the SVM on I and J together
        return fit_standard_svm(train, PenaltyConfig(C=params["C"]), spec, K)
    raise ValueError(f"Method {method.value} is not fitted from a grid point")


# === Tuning =================================================================

@dataclass(frozen=True)
class TuneResult:
    params: dict
    score: float
    rates: dict
    evaluated: int
    failed: int

    def as_tuple(self) -> tuple:
        if "C_plus" in self.params:
            return self.params["C_plus"], self.params["C_minus"], self.params["gamma"]
        return self.params["C"], self.params["gamma"]


def inner_splits(data: Dataset, plan: CvPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    skf = StratifiedKFold(n_splits=plan.inner_folds, shuffle=True, random_state=plan.seed)
    return list(skf.split(data.X, data.y))


def mean_rates(reports: Sequence[RateReport]) -> dict:
    return {key: float(np.mean([getattr(r, key) for r in reports])) for key in RATE_KEYS}


def score_candidate(
    train: Dataset,
    method: Method,
    params: dict,
    plan: CvPlan,
    target: PerformanceTarget | None,
    solver: SolverConfig | None,
    splits: Sequence[tuple[np.ndarray, np.ndarray]],
    grams: GramCache | None = None,
) -> tuple[float, dict]:
    """Inner-CV (score, mean rates) of one grid point; `grams` caches kernels over `train`."""
    reports = []
    time_limit = None if solver is None else solver.tuning_time_limit
    for tr, va in splits:
        inner_train, inner_val = train.subset(tr), train.subset(va)
        model = fit_method(inner_train, method, params, plan, target, solver,
                           time_limit=time_limit, grams=grams, rows=tr)
        reports.append(evaluate(model.decision_function(inner_val.X), inner_val.y, seed=plan.seed))
    rates = mean_rates(reports)
    return rates[plan.selection.value], rates


def _safe_score(*args, **kwargs) -> tuple[float, dict] | None:
    try:
        return score_candidate(*args, **kwargs)
    except Exception as exc:
        logger.debug("Grid candidate %s failed: %s", args[2], exc)
        return None


def tune_grid(
    train: Dataset,
    grid: GridSpec,
    plan: CvPlan,
    method: Method,
    *,
    target: PerformanceTarget | None = None,
    solver: SolverConfig | None = None,
    splits: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
    grams: GramCache | None = None,
) -> TuneResult:
    candidates = grid.candidates(method, plan.kernel)
    splits = inner_splits(train, plan) if splits is None else splits
    results = Parallel(n_jobs=plan.workers)(
        delayed(_safe_score)(train, method, params, plan, target, solver, splits, grams=grams)
        for params in candidates
    )
    best = None
    for params, outcome in zip(candidates, results):
        if outcome is None:
            continue
        score, rates = outcome
        # later grid points win ties
        if best is None or score >= best[1]:
            best = (params, score, rates)
    failed = sum(outcome is None for outcome in results)
    if best is None:
        raise RuntimeError(f"All {len(candidates)} grid candidates failed to train for {method.label}")
    if failed:
        logger.warning("%d of %d grid candidates failed for %s", failed, len(candidates), method.label)
    return TuneResult(params=best[0], score=best[1], rates=best[2], evaluated=len(candidates), failed=failed)


def estimate_rate(data: Dataset, params: dict, plan: CvPlan, rate: RateKind) -> float:
    """Inner-CV estimate of `rate` for the standard SVM at fixed hyperparameters."""
    _, rates = score_candidate(data, Method.SVM, params, plan, None, None, inner_splits(data, plan))
    return rates[RateKind(rate).value]


# === Reports ================================================================

@dataclass
class MethodFold:
    method: Method
    rates: RateReport | None = None
    params: dict = field(default_factory=dict)
    p_star: float | None = None
    status: str | None = None
    gap: float | None = None
    achieved: tuple[int, ...] = ()
    required: tuple[int, ...] = ()
    wall_seconds: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "rates": None if self.rates is None else self.rates.as_dict(),
            "params": self.params,
            "p_star": self.p_star,
            "status": self.status,
            "gap": self.gap,
            "achieved": list(self.achieved),
            "required": list(self.required),
            "wall_seconds": self.wall_seconds,
            "error": self.error,
        }


@dataclass
class FoldRecord:
    fold: int
    train_size: int
    validation_size: int
    p0: float | None
    results: dict[Method, MethodFold]
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train_size": self.train_size,
            "validation_size": self.validation_size,
            "p0": self.p0,
            "wall_seconds": self.wall_seconds,
            "results": {m.value: r.to_dict() for m, r in self.results.items()},
        }


@dataclass
class MethodSummary:
    mean: dict
    std: dict
    n_folds: int
    mean_target: float | None = None


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def to_jsonable(tree):
    if isinstance(tree, dict):
        return {(k.value if isinstance(k, Enum) else str(k)): to_jsonable(v) for k, v in tree.items()}
    if isinstance(tree, (list, tuple)):
        return [to_jsonable(v) for v in tree]
    if isinstance(tree, Enum):
        return tree.value
    if isinstance(tree, np.generic):
        return to_jsonable(tree.item())
    return _finite_or_none(tree)


@dataclass
class CvReport:
    folds: list[FoldRecord]
    summary: dict[Method, MethodSummary]
    target_rate: RateKind | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return to_jsonable({
            "target_rate": self.target_rate,
            "metadata": self.metadata,
            "methods": {
                m.value: {
                    "label": m.label,
                    "n_folds": s.n_folds,
                    "mean": s.mean,
                    "std": s.std,
                    "mean_target": s.mean_target,
                }
                for m, s in self.summary.items()
            },
            "folds": [f.to_dict() for f in self.folds],
        })

    def format_table(self) -> str:
        """Mean (target) and std of every rate, one column per method."""
        methods = list(self.summary)
        width = 16
        rate_name = "none" if self.target_rate is None else self.target_rate.value.upper()
        lines = [f"Target rate: {rate_name}", " " * 12 + "".join(m.label.rjust(width) for m in methods)]
        for key in RATE_KEYS:
            label = "G-mean" if key == "gmean" else key.upper()
            means, stds = [], []
            for m in methods:
                s = self.summary[m]
                cell = f"{s.mean[key]:.3f}"
                if self.target_rate is not None and key == self.target_rate.value and s.mean_target is not None:
                    cell += f" ({s.mean_target:.3f})"
                means.append(cell.rjust(width))
                stds.append(f"({s.std[key]:.3f})".rjust(width))
            lines.append(f"{label:<6}Mean " + " " + "".join(means))
            lines.append(f"{'':<6}Std  " + " " + "".join(stds))
        return "\n".join(lines)

    def format_rates_table(self, method: Method = Method.SVM) -> str:
        """Percentage of each class classified correctly (mean and std)."""
        method = method if method in self.summary else next(iter(self.summary))
        s = self.summary[method]
        rows = [
            ("% negative instances well classified", s.mean["tnr"], s.std["tnr"]),
            ("% positive instances well classified", s.mean["tpr"], s.std["tpr"]),
        ]
        lines = [f"{method.label}: {'':<28}Mean    Std"]
        for name, mean, std in rows:
            lines.append(f"{name:<40}{100 * mean:5.1f}  ({100 * std:.1f})")
        return "\n".join(lines)


def aggregate(
    folds: Sequence[FoldRecord],
    *,
    target_rate: RateKind | None = None,
    metadata: dict | None = None,
) -> CvReport:
    """Means and sample (n-1) standard deviations per method over successful folds."""
    folds = list(folds)
    if len(folds) < 2:
        raise ValueError(f"aggregate needs at least 2 folds, got {len(folds)}")
    methods = []
    for record in folds:
        methods.extend(m for m in record.results if m not in methods)
    summary = {}
    for method in methods:
        entries = [r.results[method] for r in folds if method in r.results and r.results[method].rates is not None]
        if not entries:
            logger.warning("%s failed on every fold; no summary", method.label)
            continue
        mean, std = {}, {}
        for key in RATE_KEYS:
            values = np.array([getattr(e.rates, key) for e in entries])
            mean[key] = float(values.mean())
            std[key] = float(values.std(ddof=1)) if values.size > 1 else math.nan
        targets = [e.p_star for e in entries if e.p_star is not None]
        summary[method] = MethodSummary(
            mean=mean,
            std=std,
            n_folds=len(entries),
            mean_target=float(np.mean([min(1.0, t) for t in targets])) if targets else None,
        )
        if len(entries) < len(folds):
            logger.warning("%s: %d of %d folds contributed", method.label, len(entries), len(folds))
    return CvReport(folds=folds, summary=summary, target_rate=target_rate, metadata=dict(metadata or {}))


# === Nested cross-validation ==============================================

def outer_splits(data: Dataset, plan: CvPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    skf = StratifiedKFold(n_splits=plan.outer_folds, shuffle=True, random_state=plan.seed)
    splits = list(skf.split(data.X, data.y))
    for k, (tr, va) in enumerate(splits):
        for name, part in (("training", tr), ("validation", va)):
            labels = data.y[part]
            if not ((labels == 1).any() and (labels == -1).any()):
                raise ValueError(f"Outer fold {k + 1} {name} part lacks a class; dataset too small for {plan.outer_folds} folds")
    return splits


def _evaluate_method(
    method: Method,
    fit_data: Dataset,
    val: Dataset,
    plan: CvPlan,
    grid: GridSpec,
    target: PerformanceTarget | None,
    solver: SolverConfig,
    splits,
    svm_tune: TuneResult,
    cache: dict,
    run_id: str,
    grams: GramCache | None = None,
) -> MethodFold:
    def svm_model():
        if "svm" not in cache:
            cache["svm"] = fit_method(fit_data, Method.SVM, svm_tune.params, plan, grams=grams)
        return cache["svm"]

    if method is Method.SVM:
        model = svm_model()
        return MethodFold(method, evaluate(model.decision_function(val.X), val.y, plan.seed), svm_tune.params)

    if method is Method.WEIGHTED:
        tune = tune_grid(fit_data, grid, plan, method, splits=splits, grams=grams)
        model = fit_method(fit_data, method, tune.params, plan, grams=grams)
        return MethodFold(method, evaluate(model.decision_function(val.X), val.y, plan.seed), tune.params)

    if method is Method.SLIDING:
        model = svm_model()
        if target is None:
            return MethodFold(method, evaluate(model.decision_function(val.X), val.y, plan.seed), svm_tune.params)
        if plan.reference is Reference.ANCHOR:
            ref = fit_data.subset(split_half(np.arange(fit_data.n), fit_data.y, plan.seed).J)
        else:
            ref = fit_data
        constraints = build_count_constraints([target], ref.y)
        sliding = slide_beta(model.solution, model.decision_function(ref.X), ref.y, constraints)
        return MethodFold(
            method,
            evaluate(sliding.shift_scores(model.decision_function(val.X)), val.y, plan.seed),
            {**svm_tune.params, "beta_shift": sliding.beta_shift},
            p_star=constraints[0].p_star,
            achieved=sliding.achieved,
            required=sliding.required,
        )

    tune = tune_grid(fit_data, grid, plan, method, target=target, solver=solver, splits=splits, grams=grams)
    model = fit_method(fit_data, method, tune.params, plan, target, solver,
                       time_limit=solver.time_limit, run_id=run_id, grams=grams)
    fold = MethodFold(method, evaluate(model.decision_function(val.X), val.y, plan.seed), tune.params)
    if isinstance(model, CsvmFit):
        fold.p_star = model.constraints[0].p_star
        fold.status = model.result.status.value
        fold.gap = model.result.gap
        fold.achieved = model.result.achieved_counts(model.problem)
        fold.required = tuple(c.required for c in model.constraints)
    return fold


def run_outer_fold(
    fold: int,
    data: Dataset,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    plan: CvPlan,
    grid: GridSpec,
    target: PerformanceTarget | None,
    solver: SolverConfig,
    run_id: str = "cv",
) -> FoldRecord:
    started = time.perf_counter()
    train, val = data.subset(train_idx), data.subset(val_idx)
    if not plan.global_standardize:
        train, val = standardize(train, [train, val])
    fit_data = compress_kmeans(train, plan.compress_fraction, plan.seed) if plan.compress else train
    log_fold_start(run_id, fold, plan.outer_folds, fit_data.n, val.n)

    splits = inner_splits(fit_data, plan)
    # one Gram per gamma for this fold, filled before any worker gets a copy
    grams = GramCache(fit_data.X)
    for gamma in dict.fromkeys(c["gamma"] for c in grid.candidates(Method.SVM, plan.kernel)):
        grams.get(kernel_for(plan, gamma))
    svm_tune = tune_grid(fit_data, grid, plan, Method.SVM, splits=splits, grams=grams)
    fold_target = target
    if target is not None and plan.estimate_p0:
        fold_target = replace(target, p0=svm_tune.rates[target.rate.value])
        logger.info("[%s] fold %d: estimated %s0 = %.4f", run_id, fold + 1, target.rate.value.upper(), fold_target.p0)

    cache: dict = {}
    results = {}
    for method in plan.methods:
        t0 = time.perf_counter()
        try:
            entry = _evaluate_method(method, fit_data, val, plan, grid, fold_target, solver,
                                     splits, svm_tune, cache, f"{run_id}-f{fold + 1}", grams)
        except Exception as exc:
            logger.warning("[%s] fold %d: %s failed: %s", run_id, fold + 1, method.label, exc)
            entry = MethodFold(method, error=f"{type(exc).__name__}: {exc}")
        entry.wall_seconds = time.perf_counter() - t0
        results[method] = entry

    summary = ", ".join(
        f"{m.label} acc={r.rates.acc:.3f}" if r.rates else f"{m.label} failed" for m, r in results.items()
    )
    log_fold_complete(run_id, fold, summary)
    return FoldRecord(
        fold=fold,
        train_size=fit_data.n,
        validation_size=val.n,
        p0=None if fold_target is None else fold_target.p0,
        results=results,
        wall_seconds=time.perf_counter() - started,
    )


def run_algorithm1(
    data: Dataset,
    plan: CvPlan,
    grid: GridSpec,
    target: PerformanceTarget | None,
    solver: SolverConfig | None = None,
    *,
    run_id: str = "cv",
) -> CvReport:
    """Outer stratified CV around grid-tuned fits of every method in `plan.methods`."""
    solver = solver or SolverConfig()
    if not data.has_both_classes():
        raise ValueError("Dataset must contain both classes")
    if plan.global_standardize:
        data = standardize(data, [data])[0]
    splits = outer_splits(data, plan)
    tasks = [
        delayed(run_outer_fold)(k, data, tr, va, plan, grid, target, solver, run_id)
        for k, (tr, va) in enumerate(splits)
    ]
    if plan.workers > 1:
        folds = Parallel(n_jobs=plan.workers)(tasks)
    else:
        folds = [fn(*args, **kwargs) for fn, args, kwargs in tqdm(tasks, desc="outer folds", unit="fold")]
    metadata = {
        "plan": asdict(plan),
        "grid": asdict(grid),
        "solver": asdict(solver),
        "target": None if target is None else asdict(target),
        "n_instances": data.n,
        "n_features": data.dimension,
    }
    return aggregate(folds, target_rate=None if target is None else target.rate, metadata=metadata)
