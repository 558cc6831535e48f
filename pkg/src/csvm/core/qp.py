"""
Convex QP engine for the representer-form constrained SVM.

Every problem of the family is written as

    minimize    1/2 x'Px + q'x
    subject to  l <= Ax <= u

over x = [lambda (|I|), mu (|J|), beta, xi (|I|), z (|J|)], so that
1/2 x'Px + q'x = w'w + sum_i c_i xi_i with w = sum a_s y_s phi(x_s). The
branch-and-bound nodes share P, q and A; fixing an anchor only moves the
bounds of its z row.

`solve_qp` runs an operator-splitting (ADMM) iteration with Ruiz scaling
and adaptive step size, and finishes every converged run by polishing: it
guesses the active set from the dual signs, solves the reduced KKT system
directly and repeats with the set corrected by the new multipliers until
the KKT residuals reach the tolerance. A polished point is accepted only
when its residuals beat the ADMM iterate. An exhausted iteration budget
restarts ADMM from the best point with tighter tolerances before the
solver gives up with MAX_ITER.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as spa
import scipy.sparse.linalg as spla

from .dataset import Dataset
from .kernel import KernelSpec, cross_kernel, gram

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20_000
DEFAULT_BIG_M = 100.0

# Bounds at or beyond this magnitude are written out as infinite in dumps.
QP_INFTY = 1e20

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3
ADAPTIVE_RHO_TOLERANCE = 5.0
MIN_SCALING = 1e-4
MAX_SCALING = 1e4

JITTER_START = 1e-10
JITTER_MAX = 1e-6
PSD_TOL = 1e-8

# Relative margin inside (0, c_i) for a margin multiplier to count as free.
FREE_SV_TOL = 1e-4


class SolverError(RuntimeError):
    """Root of the solver failure hierarchy."""


class NonPsdGramError(SolverError):
    """The Gram matrix stays indefinite after the largest allowed diagonal jitter."""


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


class AnchorStatus(IntEnum):
    RELAXED = -1
    FIXED_ZERO = 0
    FIXED_ONE = 1


class Coupling(str, Enum):
    COUPLED = "coupled"
    INDEPENDENT = "independent"


# === Penalties ==============================================================

@dataclass(frozen=True)
class PenaltyConfig:
    """
    Slack penalties per class.

    Coupled penalties divide C by the total instance weight of each class
    (C+ = C/|I+|, C- = C/|I-| with unit weights); independent penalties use
    C_plus and C_minus as given.
    """

    C: float = 1.0
    coupling: Coupling = Coupling.COUPLED
    C_plus: float | None = None
    C_minus: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        if self.coupling is Coupling.COUPLED:
            if not self.C > 0:
                raise ValueError(f"C must be positive, got {self.C}")
        elif not (self.C_plus and self.C_minus and self.C_plus > 0 and self.C_minus > 0):
            raise ValueError(
                f"Independent penalties need C_plus > 0 and C_minus > 0, got {self.C_plus}, {self.C_minus}"
            )

    @classmethod
    def independent(cls, C_plus: float, C_minus: float) -> "PenaltyConfig":
        return cls(C=1.0, coupling=Coupling.INDEPENDENT, C_plus=float(C_plus), C_minus=float(C_minus))

    def resolve(self, labels, weights=None) -> tuple[float, float]:
        """(C+, C-) for a training set with these labels and weights."""
        if self.coupling is Coupling.INDEPENDENT:
            return float(self.C_plus), float(self.C_minus)
        labels = np.asarray(labels)
        w = np.ones(labels.shape) if weights is None else np.asarray(weights, dtype=float)
        pos, neg = w[labels == 1].sum(), w[labels == -1].sum()
        if pos <= 0 or neg <= 0:
            raise ValueError("Coupled penalties need both classes in the training part")
        return self.C / pos, self.C / neg

    def slack_penalties(self, labels, weights=None) -> np.ndarray:
        """Per-instance penalty C_{y_i} * w_i."""
        labels = np.asarray(labels)
        w = np.ones(labels.shape) if weights is None else np.asarray(weights, dtype=float)
        c_plus, c_minus = self.resolve(labels, w)
        return np.where(labels == 1, c_plus, c_minus) * w


# === Problem ================================================================

@dataclass(frozen=True, eq=False)
class CountRow:
    """Sum of z over `indices` (positions within J) must reach `required`."""

    name: str
    indices: np.ndarray
    required: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.intp))
        if self.required < 0:
            raise ValueError(f"Count row {self.name!r} has negative requirement {self.required}")


@dataclass(frozen=True)
class QpLayout:
    """Positions of each variable block and each constraint block."""

    n_I: int
    n_J: int
    n_counts: int = 0

    @property
    def n_alpha(self) -> int:
        return self.n_I + self.n_J

    @property
    def n_var(self) -> int:
        return 2 * self.n_alpha + 1

    @property
    def n_rows(self) -> int:
        return 3 * self.n_alpha + self.n_J + 1 + self.n_counts

    # variables
    @property
    def alpha(self) -> slice:
        return slice(0, self.n_alpha)

    @property
    def lam(self) -> slice:
        return slice(0, self.n_I)

    @property
    def mu(self) -> slice:
        return slice(self.n_I, self.n_alpha)

    @property
    def beta(self) -> int:
        return self.n_alpha

    @property
    def xi(self) -> slice:
        return slice(self.n_alpha + 1, self.n_alpha + 1 + self.n_I)

    @property
    def z(self) -> slice:
        return slice(self.n_alpha + 1 + self.n_I, self.n_var)

    # constraint rows
    @property
    def margin(self) -> slice:
        return slice(0, self.n_alpha)

    @property
    def equality(self) -> int:
        return self.n_alpha

    @property
    def box(self) -> slice:
        start = self.n_alpha + 1
        return slice(start, start + self.n_alpha)

    @property
    def mu_cap(self) -> slice:
        start = 2 * self.n_alpha + 1
        return slice(start, start + self.n_J)

    @property
    def slack(self) -> slice:
        start = 2 * self.n_alpha + 1 + self.n_J
        return slice(start, start + self.n_I)

    @property
    def anchor(self) -> slice:
        start = 2 * self.n_alpha + 1 + self.n_J + self.n_I
        return slice(start, start + self.n_J)

    @property
    def count(self) -> slice:
        start = 3 * self.n_alpha + self.n_J + 1
        return slice(start, start + self.n_counts)


@dataclass(frozen=True, eq=False)
class _Structure:
    P: spa.csc_matrix
    q: np.ndarray
    A: spa.csc_matrix
    l: np.ndarray
    u: np.ndarray
    Q: np.ndarray
    jitter: float


def _gram_jitter(Q: np.ndarray) -> float:
    """Smallest diagonal shift (0 or a doubling from 1e-10) that makes Q PSD."""
    if Q.size == 0:
        return 0.0
    eigs = np.linalg.eigvalsh(Q)
    floor = -PSD_TOL * max(1.0, abs(eigs[-1]))
    if eigs[0] >= floor:
        return 0.0
    jitter = JITTER_START
    while jitter <= JITTER_MAX:
        if eigs[0] + jitter >= floor:
            logger.debug("Gram matrix smallest eigenvalue %.3e repaired with jitter %.1e", eigs[0], jitter)
            return jitter
        jitter *= 2
    raise NonPsdGramError(
        f"Gram matrix has smallest eigenvalue {eigs[0]:.3e}; diagonal jitter up to {JITTER_MAX:g} cannot repair it"
    )


@dataclass(frozen=True, eq=False)
class QpProblem:
    """
    One QP of the family: joint Gram K over I then J, labels, slack
    penalties of I, big-M pair, anchor status per J row and count rows.
    """

    K: np.ndarray
    y_I: np.ndarray
    y_J: np.ndarray
    c_I: np.ndarray
    M1: float = DEFAULT_BIG_M
    M2: float = DEFAULT_BIG_M
    anchor_status: np.ndarray | None = None
    count_rows: tuple[CountRow, ...] = ()

    def __post_init__(self) -> None:
        y_I = np.asarray(self.y_I).astype(np.int64)
        y_J = np.asarray(self.y_J).astype(np.int64)
        n_alpha = y_I.size + y_J.size
        K = np.asarray(self.K, dtype=float)
        if K.shape != (n_alpha, n_alpha):
            raise ValueError(f"Gram matrix shape {K.shape} does not match |I|+|J| = {n_alpha}")
        if y_I.size == 0:
            raise ValueError("The training part I must not be empty")
        if not np.isin(np.concatenate([y_I, y_J]), (-1, 1)).all():
            raise ValueError("Labels must be -1 or +1")
        c_I = np.asarray(self.c_I, dtype=float)
        if c_I.shape != y_I.shape or (c_I <= 0).any():
            raise ValueError("Slack penalties must be positive, one per instance of I")
        if not (self.M1 > 0 and self.M2 > 0):
            raise ValueError(f"Big-M constants must be positive, got M1={self.M1}, M2={self.M2}")
        status = (
            np.full(y_J.size, AnchorStatus.RELAXED, dtype=np.int8)
            if self.anchor_status is None
            else np.asarray(self.anchor_status, dtype=np.int8).copy()
        )
        if status.shape != y_J.shape or not np.isin(status, (-1, 0, 1)).all():
            raise ValueError("Anchor status must hold one of -1, 0, 1 per anchor")
        rows = tuple(self.count_rows)
        for row in rows:
            if row.indices.size and (row.indices.min() < 0 or row.indices.max() >= y_J.size):
                raise ValueError(f"Count row {row.name!r} references anchors outside J")
        status.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "y_I", y_I)
        object.__setattr__(self, "y_J", y_J)
        object.__setattr__(self, "c_I", c_I)
        object.__setattr__(self, "anchor_status", status)
        object.__setattr__(self, "count_rows", rows)

    @property
    def n_I(self) -> int:
        return self.y_I.size

    @property
    def n_J(self) -> int:
        return self.y_J.size

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.y_I, self.y_J])

    @property
    def K_II(self) -> np.ndarray:
        return self.K[: self.n_I, : self.n_I]

    @property
    def K_JJ(self) -> np.ndarray:
        return self.K[self.n_I :, self.n_I :]

    @property
    def K_IJ(self) -> np.ndarray:
        return self.K[: self.n_I, self.n_I :]

    @property
    def layout(self) -> QpLayout:
        return QpLayout(self.n_I, self.n_J, len(self.count_rows))

    @cached_property
    def structure(self) -> _Structure:
        return _build_structure(self)

    def with_status(self, status) -> "QpProblem":
        """Same template, new anchor bounds; the factor-free structure is shared."""
        new = replace(self, anchor_status=np.asarray(status, dtype=np.int8))
        if "structure" in self.__dict__:
            new.__dict__["structure"] = self.__dict__["structure"]
        return new

    def without_count_rows(self, drop: Sequence[int]) -> "QpProblem":
        drop = set(drop)
        keep = tuple(row for k, row in enumerate(self.count_rows) if k not in drop)
        return replace(self, count_rows=keep)

    def anchor_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        status = self.anchor_status
        lower = np.where(status == AnchorStatus.FIXED_ONE, 1.0, 0.0)
        upper = np.where(status == AnchorStatus.FIXED_ZERO, 0.0, 1.0)
        return lower, upper

    def matrices(self) -> tuple[spa.csc_matrix, np.ndarray, spa.csc_matrix, np.ndarray, np.ndarray]:
        """(P, q, A, l, u) with the anchor rows bounded by the current status."""
        s = self.structure
        l, u = s.l.copy(), s.u.copy()
        lay = self.layout
        l[lay.anchor], u[lay.anchor] = self.anchor_bounds()
        return s.P, s.q, s.A, l, u

    def unreachable_count_rows(self) -> list[str]:
        """Count rows that cannot be met even with every non-zero anchor at 1."""
        _, upper = self.anchor_bounds()
        return [row.name for row in self.count_rows if upper[row.indices].sum() < row.required]

    def objective(self, x: np.ndarray) -> float:
        s = self.structure
        a = x[self.layout.alpha]
        return float(0.5 * x @ (s.P @ x) + s.q @ x - s.jitter * (a @ a))

    def pack(self, lam, mu, beta, xi, z) -> np.ndarray:
        lay = self.layout
        x = np.zeros(lay.n_var)
        x[lay.lam] = lam
        x[lay.mu] = mu
        x[lay.beta] = beta
        x[lay.xi] = xi
        x[lay.z] = z
        return x


def _build_structure(problem: QpProblem) -> _Structure:
    lay = problem.layout
    n_I, n_J, n_alpha = lay.n_I, lay.n_J, lay.n_alpha
    y = problem.labels.astype(float)
    Q = np.outer(y, y) * problem.K
    jitter = _gram_jitter(Q)

    alpha_idx = np.arange(n_alpha)
    I_idx = np.arange(n_I)
    J_idx = np.arange(n_J)
    dense_r = np.repeat(alpha_idx, n_alpha)
    dense_c = np.tile(alpha_idx, n_alpha)

    P_block = 2.0 * (Q + jitter * np.eye(n_alpha))
    P = spa.csc_matrix((P_block.ravel(), (dense_r, dense_c)), shape=(lay.n_var, lay.n_var))
    q = np.zeros(lay.n_var)
    q[lay.xi] = problem.c_I

    rows, cols, vals = [], [], []

    def put(r, c, v) -> None:
        r, c = np.broadcast_arrays(np.asarray(r), np.asarray(c))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape).ravel())

    # margins: (Q a)_r + y_r beta + xi_r - M1 (J rows) z_r
    put(dense_r, dense_c, Q.ravel())
    put(alpha_idx, lay.beta, y)
    put(I_idx, lay.xi.start + I_idx, 1.0)
    put(n_I + J_idx, lay.z.start + J_idx, -problem.M1)
    # sum a_s y_s = 0
    put(lay.equality, alpha_idx, y)
    # 0 <= lambda <= c/2, mu >= 0
    put(lay.box.start + alpha_idx, alpha_idx, 1.0)
    # mu_j - M2 z_j <= 0
    put(lay.mu_cap.start + J_idx, lay.mu.start + J_idx, 1.0)
    put(lay.mu_cap.start + J_idx, lay.z.start + J_idx, -problem.M2)
    # xi >= 0
    put(lay.slack.start + I_idx, lay.xi.start + I_idx, 1.0)
    # z bounds
    put(lay.anchor.start + J_idx, lay.z.start + J_idx, 1.0)
    # sum_{j in scope} z_j >= required
    for k, row in enumerate(problem.count_rows):
        put(np.full(row.indices.size, lay.count.start + k), lay.z.start + row.indices, 1.0)

    A = spa.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(lay.n_rows, lay.n_var),
    )

    l = np.empty(lay.n_rows)
    u = np.empty(lay.n_rows)
    l[lay.margin] = np.concatenate([np.ones(n_I), np.full(n_J, 1.0 - problem.M1)])
    u[lay.margin] = np.inf
    l[lay.equality] = u[lay.equality] = 0.0
    l[lay.box] = 0.0
    u[lay.box] = np.concatenate([problem.c_I / 2.0, np.full(n_J, np.inf)])
    l[lay.mu_cap] = -np.inf
    u[lay.mu_cap] = 0.0
    l[lay.slack] = 0.0
    u[lay.slack] = np.inf
    l[lay.anchor] = 0.0
    u[lay.anchor] = 1.0
    l[lay.count] = [row.required for row in problem.count_rows]
    u[lay.count] = np.inf
    return _Structure(P=P, q=q, A=A, l=l, u=u, Q=Q, jitter=jitter)


def build_qp_problem(
    K,
    labels,
    n_I: int,
    slack_penalties,
    *,
    M1: float = DEFAULT_BIG_M,
    M2: float = DEFAULT_BIG_M,
    count_rows: Sequence[CountRow] = (),
) -> QpProblem:
    """QpProblem from a joint Gram matrix whose first `n_I` rows are I."""
    labels = np.asarray(labels)
    return QpProblem(
        K=K,
        y_I=labels[:n_I],
        y_J=labels[n_I:],
        c_I=slack_penalties,
        M1=M1,
        M2=M2,
        count_rows=tuple(count_rows),
    )


# === Solution ===============================================================

@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "dual": self.dual,
            "complementarity": self.complementarity,
        }


@dataclass(frozen=True, eq=False)
class QpSolution:
    lam: np.ndarray
    mu: np.ndarray
    beta: float
    xi: np.ndarray
    z: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    y_I: np.ndarray
    y_J: np.ndarray
    residuals: KktResiduals | None = None
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    certificate: np.ndarray | None = None
    message: str = ""
    polished: bool = False

    @property
    def z_relaxed(self) -> np.ndarray:
        return self.z

    @property
    def dual_coef(self) -> np.ndarray:
        """Expansion coefficients a_s y_s over I then J."""
        return np.concatenate([self.lam * self.y_I, self.mu * self.y_J])

    @property
    def n_support(self) -> int:
        return int((np.abs(self.dual_coef) > 0).sum())


def kkt_residual_parts(P, q, A, l, u, x, y) -> KktResiduals:
    """Infinity-norm KKT residuals of (x, y) for min 1/2x'Px+q'x s.t. l<=Ax<=u."""
    Ax = A @ x
    primal = float(max(0.0, np.max(l - Ax, initial=0.0), np.max(Ax - u, initial=0.0)))
    stationarity = float(np.linalg.norm(P @ x + q + A.T @ y, np.inf))
    l_inf, u_inf = np.isneginf(l), np.isposinf(u)
    y_plus, y_minus = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    dual = float(max(np.max(y_plus[u_inf], initial=0.0), np.max(y_minus[l_inf], initial=0.0)))
    upper_gap = np.abs(u[~u_inf] - Ax[~u_inf]) * y_plus[~u_inf]
    lower_gap = np.abs(Ax[~l_inf] - l[~l_inf]) * y_minus[~l_inf]
    complementarity = float(max(np.max(upper_gap, initial=0.0), np.max(lower_gap, initial=0.0)))
    return KktResiduals(stationarity, primal, dual, complementarity)


# === ADMM solver ============================================================

@dataclass(frozen=True)
class AdmmSettings:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    eps_prim_inf: float = 1e-6
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    polish_delta: float = 1e-7
    polish_refine_iter: int = 10
    polish_passes: int = 20
    polish_loose: float = 1e-5
    restarts: int = 2
    check_interval: int = 10
    rho_interval: int = 50
    deadline: float | None = None


@dataclass
class _AdmmResult:
    x: np.ndarray
    y: np.ndarray
    status: QpStatus
    iterations: int
    residuals: KktResiduals
    polished: bool = False
    certificate: np.ndarray | None = None


def _col_inf_norm(M: spa.spmatrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf_norm(M: spa.spmatrix) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit_scaling(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[v < MIN_SCALING] = 1.0
    return np.minimum(v, MAX_SCALING)


class AdmmSolver:
    """
    Workspace for one QP. Holds the scaled data and the KKT factorization;
    not shareable while a solve is in progress.
    """

    def __init__(self, P, q, A, l, u, settings: AdmmSettings | None = None):
        self.settings = settings or AdmmSettings()
        self.n = A.shape[1]
        self.m = A.shape[0]
        self._P0, self._q0, self._A0 = P.tocsc(), np.asarray(q, float), A.tocsc()
        self._l0, self._u0 = np.asarray(l, float), np.asarray(u, float)
        if (self._l0 > self._u0).any():
            raise ValueError("Lower bound exceeds upper bound on some constraint row")
        self.l_inf = np.isneginf(self._l0)
        self.u_inf = np.isposinf(self._u0)
        self.jitter = 0.0
        self._scale_data()
        self._set_rho(self.settings.rho)
        self._factorize()
        self.x = np.zeros(self.n)
        self.z = np.zeros(self.m)
        self.y = np.zeros(self.m)
        self.certificate: np.ndarray | None = None

    # --- setup ---------------------------------------------------------------

    def _scale_data(self) -> None:
        """Ruiz equilibration of the KKT matrix followed by cost scaling."""
        P, A = self._P0.copy(), self._A0.copy()
        D = np.ones(self.n)
        E = np.ones(self.m)
        for _ in range(self.settings.scaling_iter):
            d = 1.0 / np.sqrt(_limit_scaling(np.maximum(_col_inf_norm(P), _col_inf_norm(A))))
            e = 1.0 / np.sqrt(_limit_scaling(_row_inf_norm(A)))
            Dk, Ek = spa.diags(d), spa.diags(e)
            P = (Dk @ P @ Dk).tocsc()
            A = (Ek @ A @ Dk).tocsc()
            D *= d
            E *= e
        q = D * self._q0
        norm_P = float(np.mean(_col_inf_norm(P))) if self.n else 0.0
        norm_q = float(np.linalg.norm(q, np.inf)) if self.n else 0.0
        scale = max(norm_P, norm_q)
        c = 1.0 if scale < MIN_SCALING else 1.0 / min(scale, MAX_SCALING)
        self.P = (c * P).tocsc()
        self.q = c * q
        self.A = A
        self.A_csr = A.tocsr()
        self.D, self.E, self.c = D, E, c
        self.l = E * self._l0
        self.u = E * self._u0

    def _set_rho(self, rho_mid: float) -> None:
        self.rho_mid = float(np.clip(rho_mid, RHO_MIN, RHO_MAX))
        rho = np.full(self.m, self.rho_mid)
        free = self.l_inf & self.u_inf
        equal = ~self.l_inf & ~self.u_inf & (self.u - self.l < 1e-4)
        rho[free] = RHO_MIN
        rho[equal] = RHO_EQ_SCALE * self.rho_mid
        self.rho = np.clip(rho, RHO_MIN, RHO_MAX)
        self.rho_inv = 1.0 / self.rho

    def _factorize(self) -> None:
        sigma = self.settings.sigma
        while True:
            top = self.P + (sigma + self.jitter) * spa.identity(self.n, format="csc")
            kkt = spa.bmat(
                [[top, self.A.T], [self.A, -spa.diags(self.rho_inv)]], format="csc"
            )
            try:
                self._lu = spla.splu(kkt)
                return
            except RuntimeError as exc:
                self.jitter = JITTER_START if self.jitter == 0 else 2 * self.jitter
                if self.jitter > JITTER_MAX:
                    raise NonPsdGramError(
                        f"KKT factorization failed with diagonal jitter up to {JITTER_MAX:g}"
                    ) from exc
                logger.debug("KKT factorization failed (%s); retrying with jitter %.1e", exc, self.jitter)

    def warm_start(self, x: np.ndarray | None = None, y: np.ndarray | None = None) -> None:
        if x is not None:
            self.x = np.asarray(x, float) / self.D
            self.z = np.clip(self.A @ self.x, self.l, self.u)
        if y is not None:
            self.y = self.c * np.asarray(y, float) / self.E

    # --- helpers ------------------------------------------------------------

    def _unscale(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.D * x, self.E * y / self.c

    def _residuals(self, x: np.ndarray, y: np.ndarray) -> KktResiduals:
        return kkt_residual_parts(self._P0, self._q0, self._A0, self._l0, self._u0, x, y)

    def _primal_infeasible(self, dy: np.ndarray) -> bool:
        dy = dy.copy()
        dy[self.u_inf] = np.minimum(dy[self.u_inf], 0.0)
        dy[self.l_inf] = np.maximum(dy[self.l_inf], 0.0)
        norm = float(np.linalg.norm(self.E * dy, np.inf))
        if norm <= self.settings.eps_prim_inf:
            return False
        eps = self.settings.eps_prim_inf * norm
        u_fin = np.where(self.u_inf, 0.0, self.u)
        l_fin = np.where(self.l_inf, 0.0, self.l)
        support = u_fin @ np.maximum(dy, 0.0) + l_fin @ np.minimum(dy, 0.0)
        if support >= -eps:
            return False
        return float(np.linalg.norm((self.A.T @ dy) / self.D, np.inf)) < eps

    def _adapt_rho(self, x, z, y, force: bool = False) -> None:
        Ax, Px, Aty = self.A @ x, self.P @ x, self.A.T @ y
        pri = np.linalg.norm(Ax - z, np.inf) / max(
            np.linalg.norm(Ax, np.inf), np.linalg.norm(z, np.inf), 1e-10
        )
        dua = np.linalg.norm(Px + self.q + Aty, np.inf) / max(
            np.linalg.norm(Px, np.inf), np.linalg.norm(Aty, np.inf), np.linalg.norm(self.q, np.inf), 1e-10
        )
        new_rho = self.rho_mid * math.sqrt(pri / max(dua, 1e-10))
        low, high = self.rho_mid / ADAPTIVE_RHO_TOLERANCE, self.rho_mid * ADAPTIVE_RHO_TOLERANCE
        if force or not low <= new_rho <= high:
            self._set_rho(new_rho)
            self._factorize()

    # --- polish ---------------------------------------------------------------

    def _pin_equalities(self, low: np.ndarray, upp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        equal = ~self.l_inf & ~self.u_inf & (self.u - self.l <= 0.0)
        return low | (equal & ~upp), upp

    def _guess_active(
        self, z: np.ndarray, y: np.ndarray, loose: float = 0.0
    ) -> tuple[np.ndarray, np.ndarray]:
        """Active rows from an ADMM iterate; `loose` also takes rows within that distance of a bound."""
        low = (z - self.l) < -y
        upp = ((self.u - z) < y) & ~low
        if loose > 0.0:
            near_l = ~self.l_inf & ((z - self.l) <= loose * (1.0 + np.abs(np.where(self.l_inf, 0.0, self.l))))
            near_u = ~self.u_inf & ((self.u - z) <= loose * (1.0 + np.abs(np.where(self.u_inf, 0.0, self.u))))
            low |= near_l & (y <= 0.0)
            upp |= near_u & (y >= 0.0) & ~low
        return self._pin_equalities(low, upp)

    def _next_active(self, Ax: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Primal-dual active-set update: drop wrong-signed multipliers, add violated rows."""
        low = (y + (Ax - self.l)) < 0.0
        upp = ((y + (Ax - self.u)) > 0.0) & ~low
        return self._pin_equalities(low, upp)

    def _solve_reduced(self, low: np.ndarray, upp: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        """Scaled (x, y) of the KKT system with `low` rows at l and `upp` rows at u."""
        ind_low, ind_upp = np.flatnonzero(low), np.flatnonzero(upp)
        A_red = self.A_csr[np.concatenate([ind_low, ind_upp])].tocsc()
        n_red = A_red.shape[0]
        delta = self.settings.polish_delta
        eye_n = spa.identity(self.n, format="csc")
        if n_red:
            kkt = spa.bmat(
                [[self.P + delta * eye_n, A_red.T], [A_red, -delta * spa.identity(n_red)]], format="csc"
            )
            kkt0 = spa.bmat([[self.P, A_red.T], [A_red, None]], format="csc")
        else:
            kkt = (self.P + delta * eye_n).tocsc()
            kkt0 = self.P
        rhs = np.concatenate([-self.q, self.l[ind_low], self.u[ind_upp]])
        try:
            lu = spla.splu(kkt)
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        for _ in range(self.settings.polish_refine_iter):
            step = lu.solve(rhs - kkt0 @ sol)
            sol = sol + step
            if np.linalg.norm(step, np.inf) <= 1e-15 * (1.0 + np.linalg.norm(sol, np.inf)):
                break
        if not np.all(np.isfinite(sol)):
            return None
        y_red = np.zeros(self.m)
        y_red[ind_low] = sol[self.n : self.n + ind_low.size]
        y_red[ind_upp] = sol[self.n + ind_low.size :]
        return sol[: self.n], y_red

    def _polish(self, z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, KktResiduals] | None:
        """
        Active-set refinement of an ADMM iterate.

        Starting from the set guessed from (z, y), and then from a looser
        guess, each pass solves the reduced KKT system directly and updates
        the set from the signs of the new multipliers and the violated rows.
        A chain stops at tolerance, on a repeated set or after
        `polish_passes` passes. Returns the unscaled point with the smallest
        KKT residual.
        """
        s = self.settings
        best = None
        for loose in (0.0, s.polish_loose):
            low, upp = self._guess_active(z, y, loose)
            seen: set[bytes] = set()
            for _ in range(s.polish_passes):
                key = np.packbits(np.concatenate([low, upp])).tobytes()
                if key in seen:
                    break
                seen.add(key)
                reduced = self._solve_reduced(low, upp)
                if reduced is None:
                    break
                x_s, y_s = reduced
                x_u, y_u = self._unscale(x_s, y_s)
                res = self._residuals(x_u, y_u)
                if best is None or res.worst < best[2].worst:
                    best = (x_u, y_u, res)
                if res.worst <= s.tol:
                    return best
                low, upp = self._next_active(self.A @ x_s, y_s)
        return best

    def _best_point(self, x, z, y) -> tuple[np.ndarray, np.ndarray, KktResiduals, bool]:
        x_u, y_u = self._unscale(x, y)
        res = self._residuals(x_u, y_u)
        polished = self._polish(z, y)
        if polished is not None and polished[2].worst < res.worst:
            return polished[0], polished[1], polished[2], True
        return x_u, y_u, res, False

    def _past_deadline(self) -> bool:
        return self.settings.deadline is not None and time.perf_counter() > self.settings.deadline

    # --- main loop ------------------------------------------------------------

    def _iterate(
        self, budget: int, eps: list[float], best: tuple | None
    ) -> tuple[QpStatus, int, tuple | None]:
        """
        Run up to `budget` ADMM iterations from the stored (x, z, y).

        `eps` holds the absolute and relative stopping tolerances and is
        tightened in place whenever a polish is rejected.
        """
        s = self.settings
        x, z, y = self.x.copy(), self.z.copy(), self.y.copy()
        infeasible_hits = 0
        status = QpStatus.MAX_ITER
        self.certificate = None
        it = 0
        for it in range(1, budget + 1):
            y_prev = y
            rhs = np.concatenate([s.sigma * x - self.q, z - self.rho_inv * y])
            sol = self._lu.solve(rhs)
            x_tilde = sol[: self.n]
            z_tilde = z + self.rho_inv * (sol[self.n :] - y)
            x = s.alpha * x_tilde + (1.0 - s.alpha) * x
            z_relax = s.alpha * z_tilde + (1.0 - s.alpha) * z
            z = np.clip(z_relax + self.rho_inv * y, self.l, self.u)
            y = y + self.rho * (z_relax - z)

            if it % s.check_interval and it != budget:
                continue

            Ax, Px, Aty = self.A @ x, self.P @ x, self.A.T @ y
            E_inv, D_inv = 1.0 / self.E, 1.0 / self.D
            pri = np.linalg.norm(E_inv * (Ax - z), np.inf)
            eps_pri = eps[0] + eps[1] * max(
                np.linalg.norm(E_inv * Ax, np.inf), np.linalg.norm(E_inv * z, np.inf)
            )
            dua = np.linalg.norm(D_inv * (Px + self.q + Aty), np.inf) / self.c
            eps_dua = eps[0] + eps[1] / self.c * max(
                np.linalg.norm(D_inv * Px, np.inf),
                np.linalg.norm(D_inv * Aty, np.inf),
                np.linalg.norm(D_inv * self.q, np.inf),
            )

            if pri <= eps_pri and dua <= eps_dua:
                candidate = self._best_point(x, z, y)
                if best is None or candidate[2].worst < best[2].worst:
                    best = candidate
                if candidate[2].worst <= s.tol:
                    status = QpStatus.OPTIMAL
                    break
                eps[0] = max(eps[0] * 0.1, 1e-13)
                eps[1] = max(eps[1] * 0.1, 1e-13)
                logger.debug("Polish rejected (residual %.2e); tightening ADMM tolerance to %.0e",
                             candidate[2].worst, eps[0])
            elif self._primal_infeasible(y - y_prev):
                infeasible_hits += 1
                if infeasible_hits >= 2:
                    dy = self.E * (y - y_prev)
                    self.certificate = dy / np.linalg.norm(dy, np.inf)
                    status = QpStatus.INFEASIBLE
                    break
            else:
                infeasible_hits = 0

            if self._past_deadline():
                break
            if it % s.rho_interval == 0:
                self._adapt_rho(x, z, y)

        self.x, self.z, self.y = x, z, y
        if status is QpStatus.MAX_ITER:
            final = self._best_point(x, z, y)
            if best is None or final[2].worst < best[2].worst:
                best = final
            if best[2].worst <= s.tol:
                status = QpStatus.OPTIMAL
        return status, it, best

    def solve(self) -> _AdmmResult:
        """
        ADMM with polishing; an exhausted budget restarts the iteration from
        the best point so far with tighter tolerances and a re-estimated step
        size, up to `restarts` times, before MAX_ITER is reported.
        """
        s = self.settings
        eps = [s.eps_abs, s.eps_rel]
        best = None
        total = 0
        status = QpStatus.MAX_ITER
        for attempt in range(s.restarts + 1):
            if attempt:
                self.warm_start(best[0], best[1])
                eps = [max(eps[0] * 1e-2, 1e-13), max(eps[1] * 1e-2, 1e-13)]
                self._adapt_rho(self.x, self.z, self.y, force=True)
                logger.debug("Restarting ADMM (attempt %d) from residual %.2e with rho %.2e",
                             attempt, best[2].worst, self.rho_mid)
            budget = s.max_iter if attempt == 0 else max(s.max_iter // 2, s.check_interval)
            status, it, best = self._iterate(budget, eps, best)
            total += it
            if status is not QpStatus.MAX_ITER or self._past_deadline():
                break

        if status is QpStatus.INFEASIBLE:
            x_u, y_u = self._unscale(self.x, self.y)
            res = self._residuals(x_u, y_u)
            return _AdmmResult(x_u, y_u, status, total, res, certificate=self.certificate)
        if status is QpStatus.MAX_ITER:
            logger.warning("ADMM stopped after %d iterations and %d restarts; best KKT residual %.2e",
                           total, s.restarts, best[2].worst)
        x_b, y_b, res_b, polished = best
        return _AdmmResult(x_b, y_b, status, total, res_b, polished=polished)


# === Public operations ======================================================

def _solution_from_x(problem: QpProblem, x: np.ndarray, **kwargs) -> QpSolution:
    lay = problem.layout
    z = x[lay.z].copy()
    fixed = problem.anchor_status != AnchorStatus.RELAXED
    z[fixed] = problem.anchor_status[fixed]
    return QpSolution(
        lam=x[lay.lam].copy(),
        mu=x[lay.mu].copy(),
        beta=float(x[lay.beta]),
        xi=x[lay.xi].copy(),
        z=z,
        y_I=problem.y_I,
        y_J=problem.y_J,
        x=x,
        **kwargs,
    )


def solve_qp(
    problem: QpProblem,
    warm: QpSolution | None = None,
    tol: float = DEFAULT_TOL,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
    time_limit: float | None = None,
) -> QpSolution:
    """Solve one QP of the family; see the module docstring for the layout."""
    lay = problem.layout
    short = problem.unreachable_count_rows()
    if short:
        return _solution_from_x(
            problem,
            np.zeros(lay.n_var),
            objective=math.inf,
            status=QpStatus.INFEASIBLE,
            iterations=0,
            message=f"count row(s) {', '.join(short)} cannot be met by the anchors left",
        )

    P, q, A, l, u = problem.matrices()
    deadline = None if time_limit is None else time.perf_counter() + time_limit
    settings = AdmmSettings(tol=tol, max_iter=max_iter, deadline=deadline)
    solver = AdmmSolver(P, q, A, l, u, settings)
    if warm is not None and warm.x is not None and warm.x.shape == (lay.n_var,):
        duals = warm.duals if warm.duals is not None and warm.duals.shape == (lay.n_rows,) else None
        solver.warm_start(warm.x, duals)
    result = solver.solve()

    if result.status is QpStatus.INFEASIBLE:
        objective, message = math.inf, "primal infeasibility certificate found"
    else:
        objective = problem.objective(result.x)
        message = "" if result.status is QpStatus.OPTIMAL else "iteration budget exhausted"
    logger.debug("QP %dx%d: %s after %d iterations (residual %.2e)",
                 lay.n_rows, lay.n_var, result.status.value, result.iterations, result.residuals.worst)
    return _solution_from_x(
        problem,
        result.x,
        objective=objective,
        status=result.status,
        iterations=result.iterations,
        residuals=result.residuals,
        duals=result.y,
        certificate=result.certificate,
        message=message,
        polished=result.polished,
    )


def kkt_residuals(problem: QpProblem, solution: QpSolution) -> KktResiduals:
    if solution.x is None or solution.duals is None:
        raise ValueError("Solution carries no primal/dual vectors")
    P, q, A, l, u = problem.matrices()
    return kkt_residual_parts(P, q, A, l, u, solution.x, solution.duals)


def recover_intercept(problem: QpProblem, solution: QpSolution) -> QpSolution:
    """
    Re-derive beta from the margin multipliers.

    Rows whose multiplier is strictly inside its range pin beta and are
    averaged; without any, beta is the midpoint of the interval allowed by
    the remaining margin rows. Slacks and objective are refreshed; the
    original solution is kept if the new beta would make things worse.
    """
    if solution.status is not QpStatus.OPTIMAL or solution.duals is None:
        return solution
    lay = problem.layout
    y = problem.labels.astype(float)
    f = problem.K @ solution.dual_coef
    rhs = np.concatenate([np.ones(problem.n_I), 1.0 - problem.M1 * (1.0 - solution.z)])
    nu = np.maximum(-solution.duals[lay.margin], 0.0)
    cap = np.concatenate([problem.c_I, np.full(problem.n_J, np.inf)])
    eps = FREE_SV_TOL * np.concatenate([problem.c_I, np.full(problem.n_J, problem.c_I.max())])
    implied = y * rhs - f

    pinned = (nu > eps) & (nu < cap - eps)
    if pinned.any():
        beta = float(np.mean(implied[pinned]))
    else:
        # margin must hold for rows at zero multiplier and every J row; rows at cap may be violated
        at_zero = nu <= eps
        at_cap = ~at_zero
        must_hold = at_zero.copy()
        must_hold[problem.n_I :] = True
        lower = np.max(implied[must_hold & (y > 0)], initial=-np.inf)
        upper = np.min(implied[must_hold & (y < 0)], initial=np.inf)
        at_cap[problem.n_I :] = False
        lower = max(lower, np.max(implied[at_cap & (y < 0)], initial=-np.inf))
        upper = min(upper, np.min(implied[at_cap & (y > 0)], initial=np.inf))
        if not (np.isfinite(lower) and np.isfinite(upper) and lower <= upper):
            return solution
        beta = 0.5 * (lower + upper)

    margins = y * (f + beta)
    xi = np.maximum(0.0, 1.0 - margins[: problem.n_I])
    x = solution.x.copy()
    x[lay.beta] = beta
    x[lay.xi] = xi
    objective = problem.objective(x)
    j_ok = (margins[problem.n_I :] >= rhs[problem.n_I :] - 1e-7).all()
    if not j_ok or objective > solution.objective + 1e-6 * max(1.0, abs(solution.objective)):
        return solution
    return replace(solution, beta=beta, xi=xi, objective=objective, x=x)


def decision_scores(solution: QpSolution, gram_rows) -> np.ndarray:
    """Scores sum_s a_s y_s K(x_s, x) + beta for each row of kernel values."""
    if solution.status is QpStatus.INFEASIBLE:
        raise ValueError("Cannot score with an infeasible solution")
    K_rows = np.asarray(gram_rows, dtype=float)
    if K_rows.ndim == 1:
        K_rows = K_rows.reshape(1, -1)
    coef = solution.dual_coef
    if K_rows.shape[1] != coef.size:
        raise ValueError(f"Dimension mismatch: {K_rows.shape[1]} kernel columns for {coef.size} coefficients")
    return K_rows @ coef + solution.beta


@dataclass(frozen=True, eq=False)
class SupportModel:
    """A solution together with the points its coefficients refer to (I then J)."""

    solution: QpSolution
    support: np.ndarray
    spec: KernelSpec

    def decision_function(self, X) -> np.ndarray:
        return decision_scores(self.solution, cross_kernel(self.spec, X, self.support))


def _require_both_classes(labels) -> None:
    labels = np.asarray(labels)
    if not ((labels == 1).any() and (labels == -1).any()):
        raise ValueError("Training data must contain both classes")


def solve_standard_svm(data: Dataset, penalties: PenaltyConfig, spec: KernelSpec, K=None) -> QpSolution:
    """
    SVM(C+, C-) as the J-empty member of the family, with recovered intercept.

    `K` is the Gram of `data` in row order when the caller already has it.
    """
    _require_both_classes(data.y)
    K = gram(spec, data.X).entries if K is None else K
    problem = build_qp_problem(K, data.y, data.n, penalties.slack_penalties(data.y, data.weights))
    solution = solve_qp(problem)
    if solution.status is QpStatus.INFEASIBLE:
        raise SolverError("Standard SVM QP reported infeasible")
    return recover_intercept(problem, solution)


def fit_standard_svm(data: Dataset, penalties: PenaltyConfig, spec: KernelSpec, K=None) -> SupportModel:
    return SupportModel(solve_standard_svm(data, penalties, spec, K), data.X, spec)


def dump_qp_problem(problem: QpProblem, directory) -> list[Path]:
    """Write P, A, q, l, u as matrix-market files; infinite bounds become +-1e20."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    P, q, A, l, u = problem.matrices()
    written = []
    for name, value in (
        ("P", P),
        ("A", A),
        ("q", q.reshape(-1, 1)),
        ("l", np.clip(l, -QP_INFTY, QP_INFTY).reshape(-1, 1)),
        ("u", np.clip(u, -QP_INFTY, QP_INFTY).reshape(-1, 1)),
    ):
        path = directory / f"{name}.mtx"
        scipy.io.mmwrite(str(path), value, comment=f"csvm qp {name}")
        written.append(path)
    logger.info("Dumped QP (%d rows, %d variables) to %s", A.shape[0], A.shape[1], directory)
    return written
