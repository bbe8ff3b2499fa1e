"""
Dense moment tensors and the tensor-to-label reduction oracles.

T^(k) = sum_i w_i^{(x)k} is stored densely as an array of shape (d,)*k.
For unit-norm weights, tracing out one index pair maps T^(k) to T^(k-2),
which is what lets a polynomial network's labels be rebuilt from a single
moment tensor (or from two, when both parities are needed).
"""
from __future__ import annotations

import itertools
import string
from dataclasses import dataclass, field

import numpy as np

from .ensembles import as_matrix, check_assumptions
from .errors import PreconditionError, ResourceGuardError

MAX_ENTRIES = 10**8
# Largest even p the dense index-pattern contraction accepts.
MAX_NOISY_P = 4
MODES = ("parity", "two_tensor", "noisy")


def _guard(d: int, k: int, what: str = "tensor") -> None:
    if d > 0 and k > 0 and k * np.log10(d) > np.log10(MAX_ENTRIES) + 1e-12:
        raise ResourceGuardError(
            f"{what} of order {k} in dimension {d} needs {d}^{k} entries, above the guard of {MAX_ENTRIES:.0e}"
        )


@dataclass(frozen=True, eq=False)
class SymmetricTensor:
    """Dense order-k tensor over R^d with entries of shape (d,)*k.

    Moment tensors are symmetric under index permutations; the noisy
    contractions are only symmetric within each copy's free block, which is
    enough for evaluating <T, x^{(x)k}>.  ``symmetry_residual`` measures it.
    """

    entries: np.ndarray
    dim: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        d = int(self.dim)
        if d < 1:
            raise ValueError(f"dim must be >= 1, got {d}")
        if any(s != d for s in a.shape):
            raise ValueError(f"entries of shape {a.shape} are not (d,)*k with d={d}")
        _guard(d, a.ndim)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def order(self) -> int:
        return self.entries.ndim

    def symmetry_residual(self) -> float:
        a = self.entries
        worst = 0.0
        for ax in range(1, a.ndim):
            worst = max(worst, float(np.abs(a - np.swapaxes(a, 0, ax)).max()))
        return worst

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.entries.ravel()))


def build_moment_tensor(W, k: int) -> SymmetricTensor:
    """sum_i w_i^{(x)k} via row-wise Khatri-Rao products, in row blocks."""
    if k < 0:
        raise ValueError(f"order must be >= 0, got {k}")
    M = as_matrix(W)
    r, d = M.shape
    _guard(d, k)
    if k == 0:
        return SymmetricTensor(np.array(float(r)), d, {"r": r})
    block = max(1, int(1e7 // d**k))
    out = np.zeros(d**k)
    for start in range(0, r, block):
        B = M[start : start + block]
        P = B
        for _ in range(k - 1):
            P = (P[:, :, None] * B[:, None, :]).reshape(B.shape[0], -1)
        out += P.sum(axis=0)
    return SymmetricTensor(out.reshape((d,) * k), d, {"r": r})


def tensor_apply(T: SymmetricTensor, x) -> np.ndarray | float:
    """<T, x^{(x)k}> by contracting one axis at a time; x may be a batch (n, d)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    d, k = T.dim, T.order
    if X.shape[1] != d:
        raise PreconditionError(f"input dimension {X.shape[1]} does not match tensor dimension {d}")
    n = X.shape[0]
    if k == 0:
        vals = np.full(n, float(T.entries))
    else:
        V = T.entries.reshape(-1, d) @ X.T  # (d^{k-1}, n)
        for _ in range(k - 1):
            V = np.einsum("adn,nd->an", V.reshape(-1, d, n), X)
        vals = V.reshape(n)
    return float(vals[0]) if single else vals


def contract_pair(T: SymmetricTensor) -> SymmetricTensor:
    """Sum over the diagonal of the first two indices: order k -> k-2.

    Order 2 is accepted and yields the order-0 trace, which for unit-norm
    weights equals r and supplies the constant term of a polynomial network.
    """
    if T.order < 2:
        raise PreconditionError(f"contraction needs order >= 2, got {T.order}")
    return SymmetricTensor(np.trace(T.entries, axis1=0, axis2=1), T.dim, T.provenance)


@dataclass(frozen=True)
class ReductionSpec:
    """How labels are rebuilt from moment tensors.

    ``coeffs`` are monomial coefficients a_0..a_D of sigma for the parity and
    two_tensor modes.  In noisy mode they are c_m..c_M (M = floor(ell/(p-1)))
    of sigma(z) = sum_k c_k z^{p(ell-(p-1)k)} and must all be positive.
    """

    ell: int
    mode: str
    coeffs: tuple[float, ...]
    p: int = 2
    m: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.ell < 3:
            raise PreconditionError(f"ell must be >= 3, got {self.ell}")
        if self.mode not in MODES:
            raise PreconditionError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.coeffs:
            raise PreconditionError("coefficient list is empty")
        if self.mode == "noisy":
            self._check_noisy()
            return
        deg = self.degree
        if self.mode == "parity":
            if deg > self.ell:
                raise PreconditionError(f"degree {deg} exceeds ell={self.ell} in parity mode")
            bad = [k for k, c in enumerate(self.coeffs) if c != 0.0 and (k - self.ell) % 2]
            if bad:
                raise PreconditionError(f"parity mode needs sigma of the parity of ell; nonzero a_k at k={bad}")
        elif deg > self.ell + 1:
            raise PreconditionError(f"degree {deg} exceeds ell+1={self.ell + 1} in two_tensor mode")

    def _check_noisy(self) -> None:
        p, m, ell = self.p, self.m, self.ell
        if p < 2 or p % 2 or p > ell + 1:
            raise PreconditionError(f"p must be even with 2 <= p <= ell+1, got p={p}")
        top = ell // (p - 1)
        if not 1 <= m <= top:
            raise PreconditionError(f"m must lie in [1, {top}], got {m}")
        if len(self.coeffs) != top - m + 1:
            raise PreconditionError(f"noisy mode expects {top - m + 1} coefficients c_{m}..c_{top}, got {len(self.coeffs)}")
        if any(c <= 0 for c in self.coeffs):
            raise PreconditionError(f"noisy mode needs all c_k > 0, got {self.coeffs}")

    @property
    def degree(self) -> int:
        nz = [k for k, c in enumerate(self.coeffs) if c != 0.0]
        return nz[-1] if nz else 0

    def noisy_terms(self) -> list[tuple[int, float, int]]:
        """(k, c_k, order of T_0^(k)) for each noisy-mode term."""
        if self.mode != "noisy":
            raise PreconditionError("noisy_terms is only defined in noisy mode")
        p, ell = self.p, self.ell
        return [(k, c, p * (ell - (p - 1) * k)) for k, c in enumerate(self.coeffs, start=self.m)]

    def noisy_activation_coeffs(self) -> np.ndarray:
        """Monomial coefficients of the even activation used in noisy mode."""
        terms = self.noisy_terms()
        a = np.zeros(max(o for _, _, o in terms) + 1)
        for _, c, o in terms:
            a[o] += c
        return a


def _check_tensor(T: SymmetricTensor, order: int, name: str) -> None:
    if T.order != order:
        raise PreconditionError(f"{name} has order {T.order}, expected {order}")


def labels_from_tensor(spec: ReductionSpec, T_ell: SymmetricTensor, T_ell_plus_1: SymmetricTensor | None, X) -> np.ndarray:
    """y_j = sum_k a_k <T^(k), x_j^{(x)k}> with every T^(k) obtained by contraction."""
    if spec.mode not in ("parity", "two_tensor"):
        raise PreconditionError(f"labels_from_tensor handles parity/two_tensor modes, got {spec.mode!r}")
    _check_tensor(T_ell, spec.ell, "T_ell")
    roots = {spec.ell % 2: T_ell}
    if spec.mode == "two_tensor":
        if T_ell_plus_1 is None:
            raise PreconditionError("two_tensor mode needs the order ell+1 tensor")
        _check_tensor(T_ell_plus_1, spec.ell + 1, "T_ell_plus_1")
        if T_ell_plus_1.dim != T_ell.dim:
            raise PreconditionError("the two tensors have different dimensions")
        roots[(spec.ell + 1) % 2] = T_ell_plus_1
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.zeros(X.shape[0])
    chains: dict[int, SymmetricTensor] = {}
    for k in sorted((k for k, c in enumerate(spec.coeffs) if c != 0.0), reverse=True):
        T = chains.get(k % 2, roots[k % 2])
        while T.order > k:
            T = contract_pair(T)
        chains[k % 2] = T
        y += spec.coeffs[k] * tensor_apply(T, X)
    return y


def _noisy_pattern(ell: int, p: int, k: int) -> str:
    """einsum subscripts: p copies of an order-ell tensor, each pair sharing k indices."""
    letters = iter(string.ascii_letters)
    shared = {pair: [next(letters) for _ in range(k)] for pair in itertools.combinations(range(p), 2)}
    ins, free = [], []
    for q in range(p):
        idx = []
        for pair, ls in shared.items():
            if q in pair:
                idx += ls
        f = [next(letters) for _ in range(ell - (p - 1) * k)]
        free += f
        ins.append("".join(idx + f))
    return ",".join(ins) + "->" + "".join(free)


def _check_noisy_args(ell: int, p: int, k: int, d: int) -> int:
    if p < 2 or p % 2:
        raise PreconditionError(f"p must be even and >= 2, got {p}")
    if k < 0:
        raise PreconditionError(f"k must be >= 0, got {k}")
    free = ell - (p - 1) * k
    if free < 0:
        raise PreconditionError(f"ell - (p-1)k = {free} < 0 for ell={ell}, p={p}, k={k}")
    _guard(d, p * free, "noisy contraction")
    return free


def build_noisy_contraction(T_ell: SymmetricTensor, p: int, k: int) -> SymmetricTensor:
    """T_0^(k): p copies of T^(ell), each pair contracted over k shared indices.

    The output has order p(ell - (p-1)k), with the free indices of copy 1
    first, then copy 2, and so on.  This is the index-pattern ground truth;
    ``noisy_contraction_from_weights`` is the factorised equivalent.
    """
    ell, d = T_ell.order, T_ell.dim
    _check_noisy_args(ell, p, k, d)
    if p > MAX_NOISY_P:
        raise ResourceGuardError(f"dense index-pattern contraction is limited to p <= {MAX_NOISY_P}, got p={p}")
    pattern = _noisy_pattern(ell, p, k)
    out = np.einsum(pattern, *([T_ell.entries] * p), optimize=True)
    return SymmetricTensor(out, d, {**T_ell.provenance, "p": p, "k": k})


def noisy_contraction_from_weights(W, ell: int, p: int, k: int) -> SymmetricTensor:
    """sum over (i_1..i_p) of prod_{b<c} <w_ib, w_ic>^k times (x)_q w_iq^{(x)(ell-(p-1)k)}."""
    M = as_matrix(W)
    r, d = M.shape
    free = _check_noisy_args(ell, p, k, d)
    G = (M @ M.T) ** k
    F = build_rows(M, free)  # (r, d^free)
    if p == 2:
        out = F.T @ G @ F
    else:
        out = np.zeros(d ** (p * free))
        for tup in itertools.product(range(r), repeat=p):
            w = 1.0
            for b, c in itertools.combinations(range(p), 2):
                w *= G[tup[b], tup[c]]
            if w == 0.0:
                continue
            v = F[tup[0]]
            for q in tup[1:]:
                v = np.multiply.outer(v, F[q]).ravel()
            out += w * v
    return SymmetricTensor(np.reshape(out, (d,) * (p * free)), d, {"r": r, "p": p, "k": k})


def build_rows(M: np.ndarray, k: int) -> np.ndarray:
    """Row-wise k-fold Kronecker powers: an (r, d^k) matrix."""
    P = np.ones((M.shape[0], 1))
    for _ in range(k):
        P = (P[:, :, None] * M[:, None, :]).reshape(M.shape[0], -1)
    return P


def noisy_cross_terms(W, spec: ReductionSpec, X) -> np.ndarray:
    """Exact error term E(x): the off-diagonal tuples of the factorised sum.

    Each tuple contributes c_k prod_{b<c} <w_ib, w_ic>^k prod_q <w_iq, x>^(ell-(p-1)k);
    for an orthonormal teacher every product contains an exact zero.
    """
    M = as_matrix(W)
    r = M.shape[0]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = X @ M.T  # (n, r)
    G = M @ M.T
    p = spec.p
    E = np.zeros(X.shape[0])
    for k, c, _ in spec.noisy_terms():
        free = spec.ell - (p - 1) * k
        Gk = G**k
        Af = A**free
        if p == 2:
            off = Gk - np.diag(np.diag(Gk))
            E += c * np.einsum("ni,ij,nj->n", Af, off, Af)
            continue
        for tup in itertools.product(range(r), repeat=p):
            if len(set(tup)) == 1:
                continue
            w = 1.0
            for b, cc in itertools.combinations(range(p), 2):
                w *= Gk[tup[b], tup[cc]]
            if w != 0.0:
                E += c * w * np.prod(Af[:, list(tup)], axis=1)
    return E


@dataclass(frozen=True, eq=False)
class NoisyLabels:
    labels: np.ndarray
    clean: np.ndarray
    cross_terms: np.ndarray | None
    bound_factor: float
    error_bound_ok: bool

    @property
    def max_abs_error(self) -> float:
        return float(np.abs(self.labels - self.clean).max())


def noisy_labels(spec: ReductionSpec, T_ell: SymmetricTensor, X, teacher) -> NoisyLabels:
    """Labels rebuilt from contracted copies of T^(ell), checked against the teacher.

    The teacher is only used for the clean reference y(x), the measured
    separation delta and the exact cross terms; the labels themselves come
    from the tensor alone.
    """
    if spec.mode != "noisy":
        raise PreconditionError(f"noisy_labels needs a noisy-mode spec, got {spec.mode!r}")
    _check_tensor(T_ell, spec.ell, "T_ell")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.zeros(X.shape[0])
    for k, c, _ in spec.noisy_terms():
        labels += c * tensor_apply(build_noisy_contraction(T_ell, spec.p, k), X)
    M = as_matrix(teacher)
    A = X @ M.T
    clean = np.zeros(X.shape[0])
    for _, c, order in spec.noisy_terms():
        clean += c * (A**order).sum(axis=1)
    rep = check_assumptions(M)
    factor = (rep.delta**spec.m * rep.r) ** (spec.p - 1)
    ok = bool(np.all(np.abs(labels - clean) <= factor * clean + 1e-9))
    return NoisyLabels(labels, clean, noisy_cross_terms(M, spec, X), factor, ok)
