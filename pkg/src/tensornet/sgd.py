"""
Online teacher-student SGD with Polyak-Ruppert averaging.

Each step draws x ~ N(0, I_d), scores the averaged student on it (before the
update), then takes a squared-loss gradient step on the raw iterate.  Every
``window`` steps the per-sample scores are pooled into one record.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .ensembles import (
    PRNG_NAME,
    WeightEnsemble,
    as_matrix,
    haar_orthogonal,
    make_random_isotropic,
    make_simplex,
)
from .hermite import Activation, scaled_coefficients, scaled_tanh
from .risk import sq_distances

TEACHER_KINDS = ("sec6", "simplex", "random_isotropic", "explicit")
INIT_KINDS = ("sphere", "teacher", "explicit")
# Raw-iterate MSE growth over the first window that counts as divergence.
DIVERGENCE_FACTOR = 1e6
# Row-norm growth over the initial scale that counts as divergence.
NORM_FACTOR = 1e3

DESIGN_CHOICES = {
    "init": "student rows i.i.d. uniform on the unit sphere unless configured otherwise",
    "metric_timing": "averaged student scored on each sample before the gradient step",
    "polyak_start": "running average over all iterates from step 1, never reset",
    "window_ratio": "window sum of squared errors divided by window sum of squared baseline errors",
    "no_projection": "student rows are never renormalised during training",
    "step_sizes": "step-size grid chosen here; not reported for the original experiment",
}


@dataclass(frozen=True, eq=False)
class SgdConfig:
    d: int
    r: int
    n_steps: int
    step_size: float
    R: int | None = None
    activation: Activation = field(default_factory=lambda: scaled_tanh(2.5))
    window: int = 10_000
    seed: int = 0
    teacher_kind: str = "sec6"
    init_kind: str = "sphere"
    teacher_weights: np.ndarray | None = None
    init_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.R is None:
            object.__setattr__(self, "R", self.r)
        if min(self.d, self.r, self.R) < 1:
            raise ValueError("d, r and R must be positive")
        if self.window < 1 or self.n_steps < self.window:
            raise ValueError(f"need 1 <= window <= n_steps, got window={self.window}, n_steps={self.n_steps}")
        if not self.step_size >= 0:
            raise ValueError(f"step size must be >= 0, got {self.step_size}")
        if self.teacher_kind not in TEACHER_KINDS:
            raise ValueError(f"unknown teacher_kind {self.teacher_kind!r}")
        if self.init_kind not in INIT_KINDS:
            raise ValueError(f"unknown init_kind {self.init_kind!r}")
        if (self.teacher_kind == "explicit") != (self.teacher_weights is not None):
            raise ValueError("teacher_weights must be given exactly when teacher_kind='explicit'")
        if (self.init_kind == "explicit") != (self.init_weights is not None):
            raise ValueError("init_weights must be given exactly when init_kind='explicit'")
        if self.init_kind == "teacher" and self.R != self.r:
            raise ValueError("init_kind='teacher' needs R == r")

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "r": self.r,
            "R": self.R,
            "n_steps": self.n_steps,
            "step_size": self.step_size,
            "window": self.window,
            "seed": self.seed,
            "teacher_kind": self.teacher_kind,
            "init_kind": self.init_kind,
            "activation": self.activation.describe(),
        }
        if self.teacher_weights is not None:
            out["teacher_weights"] = np.asarray(self.teacher_weights, dtype=float).tolist()
        if self.init_weights is not None:
            out["init_weights"] = np.asarray(self.init_weights, dtype=float).tolist()
        return out


@dataclass(frozen=True, eq=False)
class SgdTrace:
    """Per-window records: columns step, norm_gen_err, chamfer_err, raw_mse.

    ``raw_mse`` is the window mean of (y - yhat)^2 for the averaged student;
    ``iterate_mse`` is the same for the raw iterate and drives the divergence
    guard.  ``wall_time`` is kept out of ``metadata`` so that serialised
    artifacts stay byte-identical across reruns.
    """

    records: np.ndarray
    iterate_mse: np.ndarray
    teacher: np.ndarray
    student: np.ndarray
    raw_student: np.ndarray
    metadata: dict
    diverged: bool = False
    reason: str = ""
    wall_time: float = 0.0
    history: tuple | None = None

    @property
    def steps(self) -> np.ndarray:
        return self.records[:, 0]

    @property
    def norm_gen_err(self) -> np.ndarray:
        return self.records[:, 1]

    @property
    def chamfer_err(self) -> np.ndarray:
        return self.records[:, 2]

    @property
    def final_error(self) -> float:
        return float(self.records[-1, 1]) if len(self.records) else float("nan")

    def spearman(self) -> float:
        return metric_spearman(self)


def make_teacher_sec6(d: int, r: int, seed: int) -> WeightEnsemble:
    """r/d Haar orthogonal matrices stacked and centred; rows are not renormalised."""
    if d < 1 or r < 1 or r % d:
        raise ValueError(f"r must be a positive multiple of d={d}, got r={r}")
    rng = np.random.default_rng(seed)
    W = np.vstack([haar_orthogonal(d, rng) for _ in range(r // d)])
    return WeightEnsemble(W - W.mean(axis=0), kind="haar_centered", seed=seed)


def least_squares_baseline(teacher, act: Activation) -> tuple[float, float]:
    """Population least squares of y on (1, |x|^2): returns (a, b).

    Row i contributes through the Hermite coefficients of z -> sigma(|w_i| z):
    E y = sum_i g_0,i and Cov(y, |x|^2) = sqrt(2) sum_i g_2,i, Var |x|^2 = 2d.
    """
    if act.parity == "odd":
        return 0.0, 0.0
    W = as_matrix(teacher)
    d = W.shape[1]
    norms = np.linalg.norm(W, axis=1)
    mean_y, cov = 0.0, 0.0
    cache: dict[float, np.ndarray] = {}
    for rho in norms:
        key = float(rho)
        if key not in cache:
            cache[key] = scaled_coefficients(act, key, K=2)
        g = cache[key]
        mean_y += g[0]
        cov += np.sqrt(2.0) * g[2]
    b = cov / (2.0 * d)
    return float(mean_y - b * d), float(b)


def sgd_step(V: np.ndarray, W: np.ndarray, x: np.ndarray, s: float, act: Activation) -> np.ndarray:
    """One raw update: w_i <- w_i - s 2 (yhat - y) sigma'(<x, w_i>) x."""
    z = V @ x
    resid = act(z).sum() - act(W @ x).sum()
    return V - s * np.outer(2.0 * resid * act.derivative(z), x)


def _make_teacher(cfg: SgdConfig, seed: int) -> np.ndarray:
    if cfg.teacher_kind == "explicit":
        W = np.array(cfg.teacher_weights, dtype=float)
        if W.shape != (cfg.r, cfg.d):
            raise ValueError(f"teacher_weights has shape {W.shape}, expected {(cfg.r, cfg.d)}")
        return W
    if cfg.teacher_kind == "sec6":
        return make_teacher_sec6(cfg.d, cfg.r, seed).W.copy()
    if cfg.teacher_kind == "simplex":
        return make_simplex(cfg.d, cfg.r, seed).W.copy()
    return make_random_isotropic(cfg.d, cfg.r, seed).W.copy()


def _make_init(cfg: SgdConfig, W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if cfg.init_kind == "explicit":
        V = np.array(cfg.init_weights, dtype=float)
        if V.shape != (cfg.R, cfg.d):
            raise ValueError(f"init_weights has shape {V.shape}, expected {(cfg.R, cfg.d)}")
        return V
    if cfg.init_kind == "teacher":
        return W.copy()
    V = rng.standard_normal((cfg.R, cfg.d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _kernels(act: Activation):
    """Fast sigma and sigma' closures for the inner loop."""
    if act.kind == "scaled_tanh":
        beta = act.beta

        def both(z):
            t = np.tanh(beta * z)
            return t, beta * (1.0 - t * t)

        return (lambda z: np.tanh(beta * z)), both

    def both(z):
        return act(z), act.derivative(z)

    return act, both


def chamfer(student: np.ndarray, teacher: np.ndarray) -> float:
    D = sq_distances(student, teacher)
    return float(0.5 * D.min(axis=1).mean() + 0.5 * D.min(axis=0).mean())


def sgd_run(cfg: SgdConfig, keep_history: bool = False) -> SgdTrace:
    """Run online SGD; deterministic in (config, seed).

    The seed is split into independent streams for the teacher, the student
    initialisation and the input samples.
    """
    t0 = time.perf_counter()
    teacher_ss, init_ss, data_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    W = _make_teacher(cfg, int(teacher_ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    V = _make_init(cfg, W, np.random.default_rng(init_ss))
    rng = np.random.default_rng(data_ss)
    act = cfg.activation
    f, f_both = _kernels(act)
    a_ls, b_ls = least_squares_baseline(W, act)
    s = float(cfg.step_size)
    A = V.copy()
    init_scale = max(1.0, float(np.linalg.norm(V, axis=1).max()))
    records, it_mse, hist = [], [], []
    num = den = it = 0.0
    first_it = None
    diverged, reason = False, ""
    for j in range(1, cfg.n_steps + 1):
        x = rng.standard_normal(cfg.d)
        y = f(W @ x).sum()
        A += (V - A) / j
        if keep_history:
            hist.append((V.copy(), A.copy()))
        e = y - f(A @ x).sum()
        base = y - (a_ls + b_ls * (x @ x))
        num += e * e
        den += base * base
        t, tp = f_both(V @ x)
        resid = t.sum() - y
        it += resid * resid
        if s != 0.0:
            V -= s * np.outer(2.0 * resid * tp, x)
        if not np.isfinite(resid):
            diverged, reason = True, f"non-finite prediction at step {j}"
        if j % cfg.window == 0 or diverged:
            n = cfg.window if j % cfg.window == 0 else j % cfg.window
            records.append((j, num / den if den > 0 else 0.0, chamfer(A, W), num / n))
            it_mse.append(it / n)
            if first_it is None:
                first_it = it / n
            elif it / n > DIVERGENCE_FACTOR * max(first_it, np.finfo(float).tiny):
                diverged, reason = True, f"iterate MSE {it / n:.3e} exceeds {DIVERGENCE_FACTOR:.0e} x first window {first_it:.3e}"
            norm = float(np.linalg.norm(V, axis=1).max())
            if not diverged and not norm <= NORM_FACTOR * init_scale:
                diverged, reason = True, f"student row norm {norm:.3e} exceeds {NORM_FACTOR:.0e} x initial scale at step {j}"
            num = den = it = 0.0
            if diverged:
                break
    meta = {
        "config": cfg.to_dict(),
        "prng": PRNG_NAME,
        "baseline": {"a": a_ls, "b": b_ls},
        "design_choices": DESIGN_CHOICES,
        "diverged": diverged,
        "reason": reason,
    }
    rec = np.array(records, dtype=float).reshape(-1, 4)
    return SgdTrace(
        records=rec,
        iterate_mse=np.array(it_mse),
        teacher=W,
        student=A.copy(),
        raw_student=V.copy(),
        metadata=meta,
        diverged=diverged,
        reason=reason,
        wall_time=time.perf_counter() - t0,
        history=tuple(hist) if keep_history else None,
    )


def metric_spearman(trace: SgdTrace) -> float:
    """Rank correlation between the windowed error and the chamfer weight error."""
    if len(trace.records) < 3:
        return float("nan")
    rho = spearmanr(trace.norm_gen_err, trace.chamfer_err).statistic
    return float(rho)


SCALES = {
    "desk": {"d": 50, "rs": (50, 350), "n_steps": 200_000, "steps": (0.01, 0.05, 0.25)},
    "full": {"d": 50, "rs": (50, 350, 2500), "n_steps": 5_000_000, "steps": (0.01, 0.05, 0.25)},
}


def figure1_configs(scale: str = "desk", seed: int = 0, steps=None, n_steps: int | None = None) -> list[SgdConfig]:
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {tuple(SCALES)}, got {scale!r}")
    p = SCALES[scale]
    grid = tuple(steps) if steps is not None else p["steps"]
    n = n_steps or p["n_steps"]
    return [SgdConfig(d=p["d"], r=r, n_steps=n, step_size=s, seed=seed) for r in p["rs"] for s in grid]


def _run(cfg: SgdConfig) -> SgdTrace:
    return sgd_run(cfg)


def replicate_figure1(
    scale: str = "desk", jobs: int = 1, out: str | Path | None = None, seed: int = 0, steps=None, n_steps: int | None = None
) -> dict[tuple[int, float], SgdTrace]:
    """Run the step-size grid for each teacher width; optionally write one CSV and JSON per run."""
    cfgs = figure1_configs(scale, seed, steps, n_steps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            traces = list(ex.map(_run, cfgs))
    else:
        traces = [_run(c) for c in cfgs]
    result = {(c.r, c.step_size): t for c, t in zip(cfgs, traces)}
    if out is not None:
        write_traces(result, out)
    return result


def write_traces(result: dict, out) -> None:
    from .serialize import write_json, write_trace_csv

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for (r, s), t in sorted(result.items()):
        stem = f"r{r}_s{s:g}"
        write_trace_csv(t.records, out / f"{stem}.csv")
        write_json({**t.metadata, "spearman": metric_spearman(t), "final_norm_gen_err": t.final_error}, out / f"{stem}.json")

