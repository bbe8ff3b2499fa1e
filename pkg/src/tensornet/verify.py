"""Deterministic randomized sweeps and the self-check suite behind ``tensornet verify``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ensembles as ens
from .errors import InfeasibleError
from .hermite import gaussian_expectation, hermite_eval, network_output, polynomial, scaled_tanh
from .risk import correlation_bound_check, gram_power_sums, population_mse, verify_thm2_bound
from .tensors import (
    ReductionSpec,
    build_moment_tensor,
    contract_pair,
    labels_from_tensor,
    noisy_labels,
)

SQRT2 = math.sqrt(2.0)


def cubic():
    return polynomial([0.0, 0.0, 0.0, 1.0])


def even_hermite_poly():
    """h_2(x) + h_4(x)/2 written in monomials: an even polynomial with a non-zero h_2 part."""
    # h_4 = (x^4 - 6x^2 + 3)/sqrt(24)
    s24 = math.sqrt(24.0)
    return polynomial([-1 / SQRT2 + 1.5 / s24, 0.0, 1 / SQRT2 - 3.0 / s24, 0.0, 0.5 / s24])


SWEEP_ACTIVATIONS = {"cubic": cubic, "even_h2": even_hermite_poly}


@dataclass(frozen=True)
class Thm2Row:
    index: int
    teacher: str
    d: int
    r: int
    R: int
    epsilon: float
    activation: str
    seed: int
    population_mse: float
    rhs: float
    margin: float
    holds: bool


def thm2_sweep(n_configs: int = 50, seed: int = 0, max_draws: int = 2000) -> tuple[list[Thm2Row], int]:
    """Random in-scope configurations for the lower-bound inequality.

    Teachers are one simplex block (r = d+1) or the centred identity
    (r = d), d in {16, 32}; students are epsilon-constrained with
    epsilon in {0.05, 0.1, 0.2}.  Draws whose student cannot exist or whose
    certificate is out of scope are skipped; the skip count is returned.
    """
    rng = np.random.default_rng(seed)
    acts = {k: f() for k, f in SWEEP_ACTIVATIONS.items()}
    rows: list[Thm2Row] = []
    skipped = 0
    for _ in range(max_draws):
        if len(rows) == n_configs:
            break
        kind = ("simplex", "centered_identity")[rng.integers(2)]
        d = int(rng.choice([16, 32]))
        eps = float(rng.choice([0.05, 0.1, 0.2]))
        act_name = ("cubic", "even_h2")[rng.integers(2)]
        R = int(rng.integers(1, 2 * d + 1))
        s = int(rng.integers(2**31))
        T = ens.make_simplex(d, d + 1, s) if kind == "simplex" else ens.make_centered_identity(d)
        try:
            S = ens.make_constrained_student(T, R, eps, s, max_attempts=20)
        except InfeasibleError:
            skipped += 1
            continue
        chk = verify_thm2_bound(T, S, acts[act_name], eps)
        if not chk.in_scope:
            skipped += 1
            continue
        rows.append(Thm2Row(len(rows), kind, d, T.r, R, eps, act_name, s, chk.population_mse, chk.rhs, chk.margin, bool(chk.holds)))
    return rows, skipped


@dataclass(frozen=True)
class Lemma2Row:
    index: int
    d: int
    r: int
    R: int
    k: int
    epsilon: float
    seed: int
    lhs: float
    rhs: float
    holds: bool


def lemma2_sweep(n_instances: int = 200, seed: int = 1, max_draws: int = 5000) -> tuple[list[Lemma2Row], int]:
    """Correlation-sum bound on simplex teachers with epsilon-constrained students.

    epsilon is drawn above the floor 1/sqrt(d) below which no student exists
    for a single simplex block; draws that remain infeasible (several
    rotated blocks raise the floor) are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    rows: list[Lemma2Row] = []
    skipped = 0
    for _ in range(max_draws):
        if len(rows) == n_instances:
            break
        d = int(rng.integers(3, 13))
        blocks = int(rng.integers(1, 4))
        R = int(rng.integers(1, 9))
        k = int(rng.integers(3, 6))
        eps = float(rng.uniform(1.0 / math.sqrt(d) + 0.02, 0.95))
        s = int(rng.integers(2**31))
        T = ens.make_simplex(d, blocks * (d + 1), s)
        try:
            S = ens.make_constrained_student(T, R, eps, s, max_attempts=20)
        except InfeasibleError:
            skipped += 1
            continue
        lhs, rhs, ok = correlation_bound_check(T, S, k, eps)
        rows.append(Lemma2Row(len(rows), d, T.r, R, k, eps, s, lhs, rhs, ok))
    return rows, skipped


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    invariant: bool
    detail: dict


def _check_ensembles() -> list[Check]:
    out = []
    for d in (8, 16, 32):
        rep = ens.check_assumptions(ens.make_identity(d))
        out.append(Check(f"identity_d{d}", (rep.delta, rep.eta_avg, rep.eta_var) == (0.0, 1.0, 0.0), True, asdict(rep)))
        rep = ens.check_assumptions(ens.make_simplex(d, d + 1, 7))
        ok = abs(rep.delta - 1 / d) < 1e-8 and rep.eta_avg < 1e-8 and rep.eta_var < 1e-8
        out.append(Check(f"simplex_d{d}", ok, True, asdict(rep)))
        rep = ens.check_assumptions(ens.make_centered_identity(d))
        stated = ((d + 1) / (d * (d - 1)), 0.0, 2.0)
        within = rep.delta <= stated[0] + 1e-12 and rep.eta_avg <= 1e-12 and rep.eta_var <= stated[2] + 1e-12
        out.append(Check(f"centered_identity_d{d}_within_stated", within, True, {**asdict(rep), "stated": list(stated)}))
        exact = abs(rep.delta - stated[0]) < 1e-8 and abs(rep.eta_var - stated[2]) < 1e-8
        out.append(Check(f"centered_identity_d{d}_equals_stated", exact, False, {"delta": rep.delta, "eta_var": rep.eta_var}))
    return out


def _check_hermite() -> list[Check]:
    act = cubic()
    err = max(abs(act.coeff(1) - 3.0), abs(act.coeff(3) - math.sqrt(6.0)))
    out = [Check("cubic_coefficients", err < 1e-10, True, {"max_error": err})]
    orth = max(
        abs(gaussian_expectation(lambda z, k=k, l=l: hermite_eval(k, z) * hermite_eval(l, z), 64) - (k == l))
        for k in range(13)
        for l in range(13)
    )
    out.append(Check("orthonormality_k12", orth < 1e-8, True, {"max_error": orth}))
    t = scaled_tanh(2.5, 40)
    even = float(np.abs(t.hermite_coeffs[0::2]).max())
    out.append(Check("tanh_even_coefficients", even < 1e-12, True, {"max_even": even}))
    out.append(Check("tanh_residual_K40_below_1e-4", t.parseval_residual < 1e-4, False, {"residual": t.parseval_residual}))
    return out


def _check_risk(seed: int, n_mc: int) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(3):
        d = int(rng.integers(2, 8))
        r, R = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        A = rng.standard_normal((r, d))
        B = rng.standard_normal((R, d))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        B /= np.linalg.norm(B, axis=1, keepdims=True)
        act = polynomial(rng.uniform(-1, 1, int(rng.integers(1, 5)) + 1))
        exact = population_mse(A, B, act).population_mse
        X = rng.standard_normal((n_mc, d))
        e2 = (network_output(A, act, X) - network_output(B, act, X)) ** 2
        z = abs(e2.mean() - exact) / (e2.std(ddof=1) / math.sqrt(n_mc))
        worst = max(worst, float(z))
    out = [Check("risk_monte_carlo_4se", worst <= 4.0, True, {"worst_z": worst, "samples": n_mc})]
    d = 5
    rel = 0.0
    for k in (3, 4):
        A = rng.standard_normal((4, d))
        B = rng.standard_normal((6, d))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        B /= np.linalg.norm(B, axis=1, keepdims=True)
        diff = build_moment_tensor(A, k).entries - build_moment_tensor(B, k).entries
        lhs = float(np.sum(diff**2))
        P = [gram_power_sums(X1, X2, k).P[k] for X1, X2 in ((A, A), (A, B), (B, B))]
        rhs = P[0] - 2 * P[1] + P[2]
        rel = max(rel, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    out.append(Check("kernel_tensor_identity", rel < 1e-10, True, {"max_rel_error": rel}))
    return out


def _check_tensors(seed: int) -> list[Check]:
    W = ens.make_simplex(4, 5, seed)
    err = float(np.abs(contract_pair(build_moment_tensor(W, 5)).entries - build_moment_tensor(W, 3).entries).max())
    out = [Check("contraction_identity", err < 1e-12, True, {"max_error": err})]
    rng = np.random.default_rng(seed)
    W = ens.make_random_isotropic(8, 12, seed)
    X = rng.standard_normal((100, 8))
    T3, T4 = build_moment_tensor(W, 3), build_moment_tensor(W, 4)
    for name, spec, T2 in (
        ("parity", ReductionSpec(3, "parity", (0.0, 1.0, 0.0, 0.3)), None),
        ("two_tensor", ReductionSpec(3, "two_tensor", (0.4, -1.0, 0.5, 0.3, -0.2)), T4),
    ):
        y = labels_from_tensor(spec, T3, T2, X)
        ref = network_output(W, polynomial(spec.coeffs), X)
        rel = float(np.max(np.abs(y - ref) / np.maximum(np.abs(ref), 1e-300)))
        out.append(Check(f"reduction_{name}", rel < 1e-9, True, {"max_rel_error": rel}))
    spec = ReductionSpec(4, "noisy", (1.0, 1.0), p=2, m=3)
    Xn = rng.standard_normal((100, 9))
    W = ens.make_simplex(9, 10, seed)
    nl = noisy_labels(spec, build_moment_tensor(W, 4), Xn, W)
    out.append(Check("noisy_bound", nl.error_bound_ok, True, {"max_abs_error": nl.max_abs_error, "bound_factor": nl.bound_factor}))
    I = np.eye(9)
    nl = noisy_labels(spec, build_moment_tensor(I, 4), Xn, I)
    cross = float(np.abs(nl.cross_terms).max())
    out.append(Check("noisy_orthonormal_zero", cross == 0.0 and nl.error_bound_ok, True, {"max_cross_term": cross}))
    return out


def run_checks(seed: int = 0, n_mc: int = 200_000, n_thm2: int = 50, n_lemma2: int = 200) -> dict:
    """Every self-check plus the two sweeps; the result is a pure function of the arguments."""
    checks = _check_ensembles() + _check_hermite() + _check_risk(seed, n_mc) + _check_tensors(seed)
    thm2, skipped = thm2_sweep(n_thm2, seed)
    checks.append(
        Check(
            "thm2_sweep",
            len(thm2) == n_thm2 and all(r.holds for r in thm2),
            True,
            {"configs": len(thm2), "skipped": skipped, "violations": sum(not r.holds for r in thm2)},
        )
    )
    lem, lem_skipped = lemma2_sweep(n_lemma2, seed + 1)
    checks.append(
        Check(
            "lemma2_sweep",
            len(lem) == n_lemma2 and all(r.holds for r in lem),
            True,
            {"instances": len(lem), "skipped": lem_skipped, "violations": sum(not r.holds for r in lem)},
        )
    )
    return {"checks": checks, "thm2": thm2, "lemma2": lem}
