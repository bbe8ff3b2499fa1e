from __future__ import annotations

import math

import numpy as np
import pytest

from tensornet.hermite import polynomial, scaled_tanh
from tensornet.serialize import dumps
from tensornet.sgd import (
    SgdConfig,
    figure1_configs,
    least_squares_baseline,
    make_teacher_sec6,
    metric_spearman,
    replicate_figure1,
    sgd_run,
    sgd_step,
)

SQRT2 = math.sqrt(2.0)
H2 = polynomial([-1 / SQRT2, 0, 1 / SQRT2])


def ols(y, features):
    """Coefficients and standard errors of an ordinary least-squares fit."""
    beta, *_ = np.linalg.lstsq(features, y, rcond=None)
    resid = y - features @ beta
    s2 = resid @ resid / (len(y) - features.shape[1])
    se = np.sqrt(np.diag(s2 * np.linalg.inv(features.T @ features)))
    return beta, se


class TestTeacher:
    def test_centered(self):
        W = make_teacher_sec6(50, 50, seed=1).W
        np.testing.assert_allclose(W.sum(axis=0), 0, atol=1e-12)

    def test_norm_spread(self):
        d = 50
        for seed in range(5):
            norms = np.linalg.norm(make_teacher_sec6(d, d, seed).W, axis=1)
            assert np.abs(norms - 1).max() < 5 / math.sqrt(d)

    def test_two_rows_antipodal(self):
        W = make_teacher_sec6(2, 2, seed=3).W
        np.testing.assert_allclose(W[0], -W[1], atol=1e-15)

    def test_multiple_of_d(self):
        with pytest.raises(ValueError):
            make_teacher_sec6(5, 7, 0)

    def test_not_renormalised(self):
        W = make_teacher_sec6(10, 30, seed=0)
        assert W.kind == "haar_centered"
        assert not W.is_unit_norm()


class TestBaseline:
    def test_odd_activation(self):
        assert least_squares_baseline(make_teacher_sec6(6, 12, 0), scaled_tanh(2.5)) == (0.0, 0.0)

    def test_constant(self):
        a, b = least_squares_baseline(np.eye(4), polynomial([1.0]))
        assert (a, b) == (pytest.approx(4.0), pytest.approx(0.0, abs=1e-15))

    def test_h2_unit_rows_formula(self):
        r, d = 3, 5
        a, b = least_squares_baseline(np.eye(d)[:r], H2)
        assert b == pytest.approx(SQRT2 * r / (2 * d))
        assert a == pytest.approx(-b * d)

    @pytest.mark.parametrize("scale", [1.0, 0.7])
    def test_against_population_regression(self, scale):
        rng = np.random.default_rng(8)
        d, n = 4, 1_000_000
        W = scale * np.eye(d)[:2]
        a, b = least_squares_baseline(W, H2)
        X = rng.standard_normal((n, d))
        y = H2(X @ W.T).sum(axis=1)
        beta, se = ols(y, np.column_stack([np.ones(n), (X * X).sum(axis=1)]))
        assert abs(beta[0] - a) < 4 * se[0]
        assert abs(beta[1] - b) < 4 * se[1]


class TestStep:
    def test_hand_gradient(self):
        V = np.array([[1e-12, 0.0]])
        new = sgd_step(V, np.array([[1.0, 0.0]]), np.array([1.0, 0.0]), 0.1, polynomial([0, 1]))
        np.testing.assert_allclose(new - V, [[0.2, 0.0]], atol=1e-15)

    def test_zero_at_teacher(self):
        W = make_teacher_sec6(4, 4, 0).W
        x = np.random.default_rng(0).standard_normal(4)
        np.testing.assert_array_equal(sgd_step(W, W, x, 0.5, scaled_tanh()), W)


def tiny(**kw):
    base = dict(d=6, r=6, n_steps=3000, step_size=1e-3, window=500, seed=4)
    base.update(kw)
    return SgdConfig(**base)


class TestRun:
    def test_trace_shape(self):
        tr = sgd_run(tiny())
        assert tr.records.shape == (6, 4)
        assert np.all(np.diff(tr.steps) > 0)
        assert np.all(tr.norm_gen_err >= 0)

    def test_partial_last_window_dropped(self):
        assert sgd_run(tiny(n_steps=2900)).records.shape[0] == 5

    def test_zero_step_freezes_weights(self):
        tr = sgd_run(tiny(step_size=0.0))
        init = sgd_run(tiny(step_size=0.0, n_steps=500)).student
        np.testing.assert_array_equal(tr.raw_student, init)
        np.testing.assert_array_equal(tr.student, init)
        assert np.all(tr.chamfer_err == tr.chamfer_err[0])

    def test_teacher_init_is_flat_zero(self):
        tr = sgd_run(tiny(init_kind="teacher", step_size=0.1))
        np.testing.assert_array_equal(tr.norm_gen_err, 0.0)
        np.testing.assert_array_equal(tr.records[:, 3], 0.0)

    def test_polyak_average(self):
        tr = sgd_run(tiny(n_steps=1000, window=1000), keep_history=True)
        raw = np.array([v for v, _ in tr.history])
        for j in (1, 10, 1000):
            np.testing.assert_allclose(tr.history[j - 1][1], raw[:j].mean(axis=0), atol=1e-10)

    def test_deterministic(self):
        a, b = sgd_run(tiny()), sgd_run(tiny())
        assert a.records.tobytes() == b.records.tobytes()
        assert dumps(a.metadata) == dumps(b.metadata)
        assert a.student.tobytes() == b.student.tobytes()

    def test_seed_changes_run(self):
        assert sgd_run(tiny()).records.tobytes() != sgd_run(tiny(seed=5)).records.tobytes()

    def test_divergence_guard(self):
        tr = sgd_run(SgdConfig(d=50, r=50, n_steps=20_000, step_size=10.0, seed=0))
        assert tr.diverged
        assert tr.reason
        assert len(tr.records) < 2

    def test_metadata(self):
        md = sgd_run(tiny()).metadata
        assert md["prng"].startswith("numpy.random.Generator")
        assert {"init", "metric_timing", "polyak_start", "window_ratio"} <= set(md["design_choices"])
        assert "wall" not in dumps(md)

    def test_learning_reduces_error(self):
        tr = sgd_run(SgdConfig(d=10, r=10, n_steps=60_000, step_size=3e-3, window=5000, seed=1))
        assert tr.norm_gen_err[-1] < 0.5 * tr.norm_gen_err[0]
        assert metric_spearman(tr) > 0.8

    def test_explicit_weights(self):
        W = np.eye(3)
        V = np.eye(3)[::-1] * 0.5
        tr = sgd_run(SgdConfig(d=3, r=3, n_steps=100, step_size=0.0, window=50, teacher_kind="explicit", teacher_weights=W, init_kind="explicit", init_weights=V))
        np.testing.assert_array_equal(tr.teacher, W)
        np.testing.assert_array_equal(tr.student, V)


class TestConfig:
    def test_window_not_above_steps(self):
        with pytest.raises(ValueError):
            SgdConfig(d=2, r=2, n_steps=10, step_size=0.1, window=20)

    def test_negative_step(self):
        with pytest.raises(ValueError):
            SgdConfig(d=2, r=2, n_steps=10, step_size=-1, window=5)

    def test_default_width_and_activation(self):
        cfg = SgdConfig(d=2, r=4, n_steps=10, step_size=0.1, window=5)
        assert cfg.R == 4
        assert cfg.activation.kind == "scaled_tanh" and cfg.activation.beta == 2.5

    def test_explicit_needs_weights(self):
        with pytest.raises(ValueError):
            SgdConfig(d=2, r=2, n_steps=10, step_size=0.1, window=5, teacher_kind="explicit")


class TestFigure1:
    def test_grids(self):
        desk = figure1_configs("desk")
        assert {(c.r, c.step_size) for c in desk} == {(r, s) for r in (50, 350) for s in (0.01, 0.05, 0.25)}
        assert all(c.n_steps == 200_000 and c.d == 50 for c in desk)
        full = figure1_configs("full")
        assert {c.r for c in full} == {50, 350, 2500} and full[0].n_steps == 5_000_000
        with pytest.raises(ValueError):
            figure1_configs("huge")

    def test_small_run_writes_bundle(self, tmp_path):
        res = replicate_figure1("desk", out=tmp_path, steps=(1e-4,), n_steps=20_000)
        assert set(res) == {(50, 1e-4), (350, 1e-4)}
        assert sorted(p.name for p in tmp_path.iterdir()) == ["r350_s0.0001.csv", "r350_s0.0001.json", "r50_s0.0001.csv", "r50_s0.0001.json"]
        header = (tmp_path / "r50_s0.0001.csv").read_text().splitlines()[0]
        assert header == "step,norm_gen_err,chamfer_err,raw_mse"
