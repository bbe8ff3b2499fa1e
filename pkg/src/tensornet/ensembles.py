"""Weight ensembles and the measured isotropy/separation constants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, PreconditionError

PRNG_NAME = "numpy.random.Generator(PCG64)"
KINDS = ("identity", "centered_identity", "simplex", "random_isotropic", "haar_centered", "custom")


@dataclass(frozen=True, eq=False)
class WeightEnsemble:
    """An r x d matrix of weight rows.

    Generators in this module emit unit-norm rows; the one exception is the
    centred Haar teacher used by the SGD experiments, whose rows are left
    unnormalised.  Operations that need unit rows check it themselves.
    """

    W: np.ndarray
    kind: str = "custom"
    seed: int = 0

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim == 1:
            W = W[None, :]
        if W.ndim != 2 or W.shape[0] == 0 or W.shape[1] == 0:
            raise ValueError(f"weights must be a non-empty 2-D array, got shape {W.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def r(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.W, axis=1)

    def is_unit_norm(self, tol: float = 1e-10) -> bool:
        return bool(np.all(np.abs(self.row_norms() - 1.0) <= tol))

    def __array__(self, dtype=None, copy=None):
        return self.W if dtype is None else self.W.astype(dtype)


def as_matrix(W) -> np.ndarray:
    return np.asarray(getattr(W, "W", W), dtype=float)


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x d orthogonal matrix (QR with positive R diagonal)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def simplex_basis(d: int) -> np.ndarray:
    """(d+1) x d orthonormal basis of the complement of the all-ones vector.

    Columns 2..d+1 of the Householder reflection sending 1/sqrt(d+1) to e_1.
    """
    n = d + 1
    u = np.full(n, 1.0 / np.sqrt(n))
    u[0] -= 1.0
    H = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


def make_identity(d: int) -> WeightEnsemble:
    if d < 1:
        raise ValueError("d must be >= 1")
    return WeightEnsemble(np.eye(d), kind="identity")


def make_centered_identity(d: int) -> WeightEnsemble:
    """Rows (e_i - 1/d) * sqrt(d / (d-1))."""
    if d < 2:
        raise ValueError("centered identity needs d >= 2")
    W = (np.eye(d) - 1.0 / d) * np.sqrt(d / (d - 1.0))
    return WeightEnsemble(W, kind="centered_identity")


def make_simplex(d: int, r: int, seed: int) -> WeightEnsemble:
    """r/(d+1) independently rotated copies of the regular simplex in R^d."""
    if d < 1 or r < 1 or r % (d + 1):
        raise ValueError(f"r must be a positive multiple of d+1 = {d + 1}, got r={r}")
    rng = np.random.default_rng(seed)
    V = simplex_basis(d) * np.sqrt((d + 1.0) / d)
    blocks = [V @ haar_orthogonal(d, rng) for _ in range(r // (d + 1))]
    return WeightEnsemble(np.vstack(blocks), kind="simplex", seed=seed)


def make_random_isotropic(d: int, r: int, seed: int) -> WeightEnsemble:
    """g_i ~ N(0, I/d), centred by the empirical mean, then normalised."""
    if r < 2:
        raise ValueError("random isotropic ensemble needs r >= 2")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((r, d)) / np.sqrt(d)
    g = g - g.mean(axis=0)
    return WeightEnsemble(g / np.linalg.norm(g, axis=1, keepdims=True), kind="random_isotropic", seed=seed)


@dataclass(frozen=True)
class AssumptionReport:
    delta: float
    eta_avg: float
    eta_var: float
    unit_norm_residual: float
    feasible_thm2: bool
    d: int
    r: int


def check_assumptions(W) -> AssumptionReport:
    """Measure separation, mean and covariance constants of an ensemble exactly."""
    W = as_matrix(W)
    r, d = W.shape
    G = W @ W.T
    off = np.abs(G - np.diag(np.diag(G)))
    delta = float(off.max()) if r > 1 else 0.0
    s = W.sum(axis=0)
    eta_avg = float(s @ s) / r
    C = W.T @ W - (r / d) * np.eye(d)
    eta_var = float(np.abs(np.linalg.eigvalsh(C)).max()) * d / r
    unit_res = float(np.abs(np.linalg.norm(W, axis=1) - 1.0).max())
    feasible = 1.0 - delta * (1.0 + eta_var) * r / d >= 0.0
    return AssumptionReport(delta, eta_avg, eta_var, unit_res, bool(feasible), d, r)


MAX_REPAIR_ITERS = 5000


def _repair(W: np.ndarray, v: np.ndarray, eps: float, tol: float) -> np.ndarray | None:
    """Push offending correlations onto +-eps and renormalise until feasible."""
    target = eps * (1.0 - 1e-9)
    best, since_best = np.inf, 0
    for _ in range(MAX_REPAIR_ITERS):
        c = W @ v
        worst = np.abs(c).max()
        if worst <= eps + tol:
            return v
        if worst < best * (1.0 - 1e-10):
            best, since_best = worst, 0
        else:
            since_best += 1
            if since_best > 50:
                return None
        bad = np.abs(c) > target
        Wb = W[bad]
        excess = c[bad] - target * np.sign(c[bad])
        v = v - Wb.T @ np.linalg.lstsq(Wb @ Wb.T, excess, rcond=None)[0]
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            return None
        v = v / nv
    return None


def make_constrained_student(
    teacher, R: int, epsilon: float, seed: int, max_attempts: int = 10_000, tol: float = 1e-12
) -> WeightEnsemble:
    """Sample R unit rows whose correlation with every teacher row is at most epsilon.

    Each row starts uniform on the sphere and is repaired by projecting the
    offending correlations back to +-epsilon and renormalising.  A cheap
    eigenvalue certificate rejects instances where no such row exists.
    """
    if not 0.0 <= epsilon < 1.0:
        raise PreconditionError(f"epsilon must lie in [0, 1), got {epsilon}")
    W = as_matrix(teacher)
    r, d = W.shape
    lam_min = float(np.linalg.eigvalsh(W.T @ W).min())
    floor = np.sqrt(max(lam_min, 0.0) / r)
    if floor > epsilon + tol and lam_min > 1e-12:
        raise InfeasibleError(
            f"teacher spans R^{d} with smallest covariance eigenvalue {lam_min:.6g}; every unit "
            f"vector has max |<w_i, v>| >= {floor:.6g} > epsilon = {epsilon}"
        )
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(R):
        for _ in range(max_attempts):
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            v = _repair(W, v, epsilon, tol)
            if v is not None:
                rows.append(v)
                break
        else:
            raise InfeasibleError(f"no row {j} with max correlation <= {epsilon} after {max_attempts} attempts")
    return WeightEnsemble(np.array(rows), kind="custom", seed=seed)
