"""
Exact population risk between two networks with Gaussian inputs.

For unit-norm rows the squared error expands in the Hermite basis as

    E|y(x) - yhat(x)|^2 = sum_k sigma_hat_k^2 (P_k(W,W) - 2 P_k(W,What) + P_k(What,What)),

with P_k(A,B) = sum_ij <a_i,b_j>^k the Gram power sums.  The lower-bound
certificate for separated isotropic teachers and the correlation bound used
in its proof are evaluated on top of these sums.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ensembles import AssumptionReport, as_matrix, check_assumptions
from .errors import PreconditionError
from .hermite import Activation, _check_unit_rows, gram_powers, network_moments

MAX_ASSIGNMENT = 64
BOUND_RTOL = 1e-7
# Slack on "max correlation <= epsilon" (students are built to within this).
CORR_TOL = 1e-12


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        elif isinstance(v, np.generic):
            out[k] = v.item()
        else:
            out[k] = v
    return out


@dataclass(frozen=True, eq=False)
class GramPowerSums:
    """P[k] = sum_ij <a_i, b_j>^k for k = 0..K; P[0] is the pair count."""

    P: np.ndarray
    cross: bool

    @property
    def K(self) -> int:
        return len(self.P) - 1


def _pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A, B = as_matrix(A), as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise PreconditionError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def gram_power_sums(A, B, K: int) -> GramPowerSums:
    A, B = _pair(A, B)
    _check_unit_rows(A)
    _check_unit_rows(B)
    cross = A is not B and not (A.shape == B.shape and np.array_equal(A, B))
    return GramPowerSums(gram_powers(A, B, K), cross)


@dataclass(frozen=True)
class RiskReport:
    population_mse: float
    var_y: float
    baseline_risk: float
    truncation_error_bar: float
    bound_c1: float = float("nan")
    bound_c2: float = float("nan")
    bound_rhs: float = float("nan")
    bound_applicable: bool = False
    even_case_used: bool = False

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def population_mse(teacher, student, act: Activation) -> RiskReport:
    """Closed-form generalisation error; the bound fields are left unset."""
    W, S = _pair(teacher, student)
    _check_unit_rows(W)
    _check_unit_rows(S)
    K = act.truncation_degree
    c2 = act.hermite_coeffs ** 2
    P_ww = gram_powers(W, W, K)
    P_ws = gram_powers(W, S, K)
    P_ss = gram_powers(S, S, K)
    mse = float(np.sum(c2 * (P_ww - 2.0 * P_ws + P_ss)))
    m = network_moments(act, W)
    bar = act.parseval_residual * (W.shape[0] + S.shape[0]) ** 2
    return RiskReport(population_mse=mse, var_y=m.var_y, baseline_risk=m.baseline_risk, truncation_error_bar=bar)


@dataclass(frozen=True)
class BoundCertificate:
    c1: float
    c2: float
    rhs: float
    applicable: bool
    even_case: bool


def lower_bound_certificate(
    report: AssumptionReport, act: Activation, R: int, epsilon: float, baseline_risk: float
) -> BoundCertificate:
    """Constants c1, c2 and the right-hand side (baseline - c1)(1 - c2).

    Even activations use the squared (epsilon^2, delta^2) constants and drop
    the linear term from c1.  The certificate is flagged inapplicable when
    1 - delta (1 + eta_var) r/d < 0, and also when both factors of the
    product are negative: the bound is only derived for 1 - c2 >= 0 or a
    non-negative first factor.
    """
    if not 0.0 < epsilon < 1.0:
        raise PreconditionError(f"epsilon must lie in (0, 1), got {epsilon}")
    r, d = report.r, report.d
    delta, eta_avg, eta_var = report.delta, report.eta_avg, report.eta_var
    s1, s2 = act.coeff(1), act.coeff(2)
    even = act.parity == "even"
    if even:
        c1 = 2.0 * s2**2 * eta_var**2 * r**2 / d
        num = 2.0 * epsilon**2 * (1.0 + eta_var) * R / d
        den = 1.0 - delta**2 * (1.0 + eta_var) * r / d
    else:
        c1 = 2.0 * s1**2 * eta_avg * r + 2.0 * s2**2 * eta_var**2 * r**2 / d
        num = 2.0 * epsilon * (1.0 + eta_var) * R / d
        den = 1.0 - delta * (1.0 + eta_var) * r / d
    applicable = 1.0 - delta * (1.0 + eta_var) * r / d >= 0.0
    c2 = num / den if den > 0 else math.inf
    first = baseline_risk - c1
    if math.isinf(c2):
        rhs = -math.inf if first > 0 else (math.nan if first == 0 else math.inf)
    else:
        rhs = first * (1.0 - c2)
    if first < 0 and c2 > 1:
        applicable = False
    return BoundCertificate(c1=c1, c2=c2, rhs=rhs, applicable=bool(applicable), even_case=even)


def risk_report(teacher, student, act: Activation, epsilon: float) -> RiskReport:
    """Population error together with the lower-bound certificate."""
    base = population_mse(teacher, student, act)
    R = as_matrix(student).shape[0]
    cert = lower_bound_certificate(check_assumptions(teacher), act, R, epsilon, base.baseline_risk)
    return RiskReport(
        population_mse=base.population_mse,
        var_y=base.var_y,
        baseline_risk=base.baseline_risk,
        truncation_error_bar=base.truncation_error_bar,
        bound_c1=cert.c1,
        bound_c2=cert.c2,
        bound_rhs=cert.rhs,
        bound_applicable=cert.applicable,
        even_case_used=cert.even_case,
    )


@dataclass(frozen=True)
class BoundCheck:
    in_scope: bool
    holds: bool | None
    population_mse: float
    rhs: float
    margin: float
    reason: str = ""
    report: RiskReport | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = _jsonable({k: v for k, v in asdict(self).items() if k != "report"})
        out["report"] = None if self.report is None else self.report.to_dict()
        return out


def verify_thm2_bound(teacher, student, act: Activation, epsilon: float) -> BoundCheck:
    """Check population_mse >= rhs - 1e-7 max(1, |rhs|) on in-scope inputs.

    Out-of-scope inputs (epsilon outside (0,1), non-unit rows, students more
    correlated than epsilon, infeasible teachers, inapplicable certificate)
    return ``in_scope=False`` and ``holds=None`` with a reason.
    """
    W, S = _pair(teacher, student)

    def out(reason: str) -> BoundCheck:
        return BoundCheck(False, None, math.nan, math.nan, math.nan, reason)

    if not 0.0 < epsilon < 1.0:
        return out(f"epsilon={epsilon} not in (0, 1)")
    for name, M in (("teacher", W), ("student", S)):
        dev = np.abs(np.linalg.norm(M, axis=1) - 1.0).max()
        if dev > 1e-8:
            return out(f"{name} rows not unit norm (deviation {dev:.3e})")
    corr = float(np.abs(W @ S.T).max())
    if corr > epsilon + CORR_TOL:
        return out(f"student max correlation {corr:.6g} exceeds epsilon={epsilon}")
    assumptions = check_assumptions(W)
    if not assumptions.feasible_thm2:
        return out("teacher violates 1 - delta (1 + eta_var) r/d >= 0")
    rep = risk_report(W, S, act, epsilon)
    if not rep.bound_applicable:
        return BoundCheck(False, None, rep.population_mse, rep.bound_rhs, math.nan, "certificate not applicable", rep)
    rhs = rep.bound_rhs
    margin = rep.population_mse - rhs
    holds = margin >= -BOUND_RTOL * max(1.0, abs(rhs))
    return BoundCheck(True, bool(holds), rep.population_mse, rhs, margin, "", rep)


def correlation_bound_check(teacher, student, k: int, epsilon: float | None = None) -> tuple[float, float, bool]:
    """sum_ij <w_i, what_j>^k against epsilon^(k-2) (1 + eta_var) r R / d."""
    if k < 3:
        raise ValueError(f"k must be >= 3, got {k}")
    W, S = _pair(teacher, student)
    _check_unit_rows(S)
    G = W @ S.T
    corr = float(np.abs(G).max())
    if epsilon is None:
        epsilon = corr
    elif corr > epsilon + CORR_TOL:
        raise PreconditionError(f"student max correlation {corr:.6g} exceeds epsilon={epsilon}")
    r, d = W.shape
    R = S.shape[0]
    eta_var = check_assumptions(W).eta_var
    lhs = float(np.sum(G**k))
    rhs = epsilon ** (k - 2) * (1.0 + eta_var) * r * R / d
    return lhs, rhs, bool(lhs <= rhs + 1e-10)


@dataclass(frozen=True)
class EstimationErrorReport:
    permutation_error: float | None
    max_correlation: float
    chamfer_error: float
    third_order_corr: float

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(D, 0.0)


def chamfer_error(teacher, student) -> float:
    """Symmetric average of nearest-neighbour squared distances between two weight sets."""
    W, S = _pair(teacher, student)
    D = sq_distances(S, W)
    return float(0.5 * D.min(axis=1).mean() + 0.5 * D.min(axis=0).mean())


def estimation_errors(teacher, student) -> EstimationErrorReport:
    W, S = _pair(teacher, student)
    r, R = W.shape[0], S.shape[0]
    G = W @ S.T
    D = sq_distances(W, S)
    perm = None
    if r == R and r <= MAX_ASSIGNMENT:
        rows, cols = linear_sum_assignment(D)
        perm = float(D[rows, cols].sum())
    return EstimationErrorReport(
        permutation_error=perm,
        max_correlation=float(np.abs(G).max()),
        chamfer_error=float(0.5 * D.min(axis=0).mean() + 0.5 * D.min(axis=1).mean()),
        third_order_corr=float(np.sum(G**3) / R),
    )
