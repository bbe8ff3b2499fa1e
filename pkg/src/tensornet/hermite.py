"""
Hermite analysis of activation functions under the standard Gaussian measure.

Everything here uses the orthonormal Hermite basis

    h_0 = 1,  h_1 = z,  h_{k+1}(z) = (z h_k(z) - sqrt(k) h_{k-1}(z)) / sqrt(k+1),

so that E[h_k(G) h_l(G)] = 1{k == l} for G ~ N(0, 1), and an activation
sigma is summarised by its coefficients sigma_hat_k = E[h_k(G) sigma(G)].

Gaussian expectations are computed with Gauss-Hermite quadrature for the
weight exp(-z^2/2) (probabilists' nodes), normalised so that weights sum to 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, sqrt
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e, polynomial as P
from scipy.special import roots_hermitenorm

from .errors import PreconditionError, QuadratureError

MAX_DEGREE = 200
DEFAULT_TRUNCATION = 40
DEFAULT_NODES = 201
PARITY_TOL = 1e-10
UNIT_NORM_TOL = 1e-8
# Allowed growth of the Parseval residual when the node count is doubled,
# relative to E[sigma(G)^2].
CONVERGENCE_RTOL = 1e-6
# Refinements tried before a growing residual counts as non-convergence.
MAX_DOUBLINGS = 4


def hermite_eval(k: int, z):
    """Orthonormal Hermite polynomial h_k evaluated at z (scalar or array)."""
    if not isinstance(k, (int, np.integer)) or k < 0 or k > MAX_DEGREE:
        raise ValueError(f"Hermite degree must be an integer in [0, {MAX_DEGREE}], got {k!r}")
    z = np.asarray(z, dtype=float)
    h_prev, h = np.ones_like(z), z
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for j in range(1, k):
        h_prev, h = h, (z * h - sqrt(j) * h_prev) / sqrt(j + 1)
    return h if h.ndim else float(h)


def hermite_table(K: int, z) -> np.ndarray:
    """Rows h_0(z), ..., h_K(z); shape (K+1,) + z.shape."""
    if K < 0 or K > MAX_DEGREE:
        raise ValueError(f"Hermite degree must be in [0, {MAX_DEGREE}], got {K}")
    z = np.asarray(z, dtype=float)
    H = np.empty((K + 1,) + z.shape)
    H[0] = 1.0
    if K >= 1:
        H[1] = z
    for j in range(1, K):
        H[j + 1] = (z * H[j] - sqrt(j) * H[j - 1]) / sqrt(j + 1)
    return H


@lru_cache(maxsize=32)
def gauss_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with sum(w * f(z)) ~= E[f(G)], G ~ N(0, 1)."""
    if n < 1:
        raise ValueError("need at least one quadrature node")
    z, w = roots_hermitenorm(n)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def gaussian_expectation(f: Callable[[np.ndarray], np.ndarray], n: int = DEFAULT_NODES) -> float:
    z, w = gauss_nodes(n)
    return float(w @ f(z))


def _detect_parity(coeffs: np.ndarray) -> str:
    even_zero = np.all(np.abs(coeffs[0::2]) < PARITY_TOL)
    odd_zero = np.all(np.abs(coeffs[1::2]) < PARITY_TOL)
    if odd_zero:
        return "even"
    if even_zero:
        return "odd"
    return "none"


@dataclass(frozen=True, eq=False)
class Activation:
    """An activation function together with its truncated Hermite expansion.

    ``kind`` is ``"polynomial"`` (monomial coefficients in ``poly_coeffs``,
    lowest degree first) or ``"scaled_tanh"`` (sigma(z) = tanh(beta z)).
    """

    kind: str
    hermite_coeffs: np.ndarray
    parseval_residual: float
    parity: str
    poly_coeffs: tuple[float, ...] = ()
    beta: float | None = None
    second_moment: float = field(default=float("nan"))

    def __post_init__(self):
        c = np.array(self.hermite_coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "hermite_coeffs", c)

    @property
    def truncation_degree(self) -> int:
        return len(self.hermite_coeffs) - 1

    @property
    def degree(self) -> int | None:
        if self.kind != "polynomial":
            return None
        nz = np.flatnonzero(np.asarray(self.poly_coeffs) != 0.0)
        return int(nz[-1]) if nz.size else 0

    def coeff(self, k: int) -> float:
        """sigma_hat_k, zero beyond the truncation degree."""
        return float(self.hermite_coeffs[k]) if k <= self.truncation_degree else 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "polynomial":
            return P.polyval(z, self.poly_coeffs)
        return np.tanh(self.beta * z)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "polynomial":
            return P.polyval(z, P.polyder(self.poly_coeffs)) if len(self.poly_coeffs) > 1 else np.zeros_like(z)
        t = np.tanh(self.beta * z)
        return self.beta * (1.0 - t * t)

    def describe(self) -> dict:
        """JSON-ready description; feeding it to :func:`hermite_coefficients` rebuilds this object."""
        if self.kind == "polynomial":
            return {"kind": "polynomial", "coeffs": [float(a) for a in self.poly_coeffs], "K": self.truncation_degree}
        return {"kind": "scaled_tanh", "beta": float(self.beta), "K": self.truncation_degree}


def polynomial(coeffs: Sequence[float], K: int | None = None) -> Activation:
    """Exact Hermite coefficients of sigma(z) = sum_j coeffs[j] z^j."""
    a = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if a.size == 0:
        a = np.zeros(1)
    D = a.size - 1
    if K is None:
        K = max(D, 1)
    if K < D:
        raise PreconditionError(f"truncation K={K} is below the polynomial degree {D}")
    if K > MAX_DEGREE:
        raise ValueError(f"K must be <= {MAX_DEGREE}")
    he = hermite_e.poly2herme(a)
    c = np.zeros(K + 1)
    c[: he.size] = he * np.sqrt([float(factorial(k)) for k in range(he.size)])
    z, w = gauss_nodes(D + 1)
    second = float(w @ P.polyval(z, a) ** 2)
    residual = max(0.0, second - float(c @ c))
    return Activation(
        kind="polynomial",
        hermite_coeffs=c,
        parseval_residual=residual,
        parity=_detect_parity(c),
        poly_coeffs=tuple(float(x) for x in a),
        second_moment=second,
    )


def _quadrature_coeffs(f, K: int, n: int) -> tuple[np.ndarray, float, float]:
    z, w = gauss_nodes(n)
    fz = f(z)
    c = hermite_table(K, z) @ (w * fz)
    second = float(w @ (fz * fz))
    return c, second, second - float(c @ c)


def scaled_tanh(beta: float = 2.5, K: int = DEFAULT_TRUNCATION, nodes: int = DEFAULT_NODES) -> Activation:
    """Hermite expansion of tanh(beta z) by quadrature.

    Starting from ``nodes`` points the rule is doubled until the Parseval
    residual stops growing by more than ``CONVERGENCE_RTOL * E[sigma^2]``;
    the finest rule computed is returned.  If the residual still grows after
    ``MAX_DOUBLINGS`` refinements a QuadratureError is raised.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if K > MAX_DEGREE:
        raise ValueError(f"K must be <= {MAX_DEGREE}")
    f = lambda z: np.tanh(beta * z)
    n = nodes
    _, _, res_prev = _quadrature_coeffs(f, K, n)
    for _ in range(MAX_DOUBLINGS):
        n *= 2
        c, second, res = _quadrature_coeffs(f, K, n)
        grew = res - res_prev > CONVERGENCE_RTOL * max(second, 1e-300)
        if not grew:
            break
        res_prev = res
    else:
        raise QuadratureError(
            f"Parseval residual still grows ({res_prev:.3e} -> {res:.3e}) after refining to {n} nodes"
        )
    return Activation(
        kind="scaled_tanh",
        hermite_coeffs=c,
        parseval_residual=max(0.0, res),
        parity=_detect_parity(c),
        beta=float(beta),
        second_moment=second,
    )


def hermite_coefficients(description, K: int | None = None) -> Activation:
    """Build an :class:`Activation` from a description dict.

    Accepted forms::

        {"kind": "polynomial", "coeffs": [a0, a1, ...]}
        {"kind": "scaled_tanh", "beta": 2.5}

    An explicit ``K`` overrides any ``"K"`` entry in the description.
    """
    if isinstance(description, Activation):
        description = description.describe()
    desc = dict(description)
    kind = desc.pop("kind", None)
    K = K if K is not None else desc.pop("K", None)
    desc.pop("K", None)
    if kind == "polynomial":
        coeffs = desc.pop("coeffs")
        if desc:
            raise ValueError(f"unknown activation keys: {sorted(desc)}")
        return polynomial(coeffs, K)
    if kind == "scaled_tanh":
        beta = desc.pop("beta", 2.5)
        nodes = desc.pop("nodes", DEFAULT_NODES)
        if desc:
            raise ValueError(f"unknown activation keys: {sorted(desc)}")
        return scaled_tanh(beta, DEFAULT_TRUNCATION if K is None else K, nodes)
    raise ValueError(f"unknown activation kind {kind!r}")


def gaussian_pair_expectation(sigma_hat, gamma_hat, rho: float) -> float:
    """E[sigma(<u,x>) gamma(<v,x>)] for unit u, v with <u,v> = rho."""
    if abs(rho) > 1.0:
        raise ValueError(f"|rho| must be <= 1, got {rho}")
    s = np.asarray(sigma_hat, dtype=float)
    g = np.asarray(gamma_hat, dtype=float)
    n = max(s.size, g.size)
    s = np.pad(s, (0, n - s.size))
    g = np.pad(g, (0, n - g.size))
    return float(np.sum(s * g * rho ** np.arange(n)))


def scaled_coefficients(act: Activation, scale: float, K: int = 2, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Hermite coefficients (0..K) of z -> sigma(scale * z)."""
    n = nodes
    if act.kind == "polynomial":
        n = max(len(act.poly_coeffs) + K + 1, 2)
    z, w = gauss_nodes(n)
    return hermite_table(K, z) @ (w * act(scale * z))


def network_output(W, act: Activation, X) -> np.ndarray:
    """y(x) = sum_i sigma(<w_i, x>) for each row x of X."""
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    return act(X @ W.T).sum(axis=-1)


def gram_powers(A, B, K: int) -> np.ndarray:
    """P[k] = sum_ij <a_i, b_j>^k for k = 0..K (P[0] = rows(A) * rows(B))."""
    G = np.asarray(A, dtype=float) @ np.asarray(B, dtype=float).T
    out = np.empty(K + 1)
    Gk = np.ones_like(G)
    for k in range(K + 1):
        out[k] = Gk.sum()
        Gk = Gk * G
    return out


def _check_unit_rows(W: np.ndarray, tol: float = UNIT_NORM_TOL) -> None:
    dev = np.abs(np.linalg.norm(W, axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        raise PreconditionError(f"rows must have unit norm (max deviation {dev.max():.3e} > {tol})")


@dataclass(frozen=True)
class MomentSummary:
    mean_y: float
    var_y: float
    cov_y_norm2: float
    baseline_a: float
    baseline_b: float
    baseline_risk: float


def network_moments(act: Activation, ensemble) -> MomentSummary:
    """Closed-form mean, variance and norm-only least-squares fit of y(x).

    Uses E[h_k(<w,x>) ||x||^2] = d 1{k=0} + sqrt(2) 1{k=2} for unit w, so the
    best predictor a + b ||x||^2 has b = sqrt(2) sigma_hat_2 r / (2d) and
    removes sigma_hat_2^2 r^2 / d from Var{y}.
    """
    W = np.asarray(getattr(ensemble, "W", ensemble), dtype=float)
    _check_unit_rows(W)
    r, d = W.shape
    c = act.hermite_coeffs
    Pk = gram_powers(W, W, act.truncation_degree)
    mean_y = r * act.coeff(0)
    var_y = float(np.sum(c[1:] ** 2 * Pk[1:]))
    s2 = act.coeff(2)
    cov = sqrt(2.0) * s2 * r
    b = cov / (2.0 * d)
    a = mean_y - b * d
    baseline = var_y - s2 * s2 * r * r / d
    return MomentSummary(mean_y=mean_y, var_y=var_y, cov_y_norm2=cov, baseline_a=a, baseline_b=b, baseline_risk=baseline)
