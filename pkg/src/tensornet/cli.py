"""
Command-line front end.

Every command resolves its parameters as: built-in defaults, then the
matching block of a JSON config (``--config``), then explicit flags.  The
resolved document is written to ``<out>/manifest.json`` and can be fed back
with ``--config`` to reproduce the run.  The output directory and ``--jobs``
do not affect results and are not part of the manifest.

Exit codes: 0 success, 2 configuration error, 3 resource guard,
4 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ensembles as ens
from .errors import InfeasibleError, PreconditionError, ResourceGuardError
from .hermite import hermite_coefficients, network_output
from .risk import estimation_errors, risk_report, verify_thm2_bound
from .serialize import fmt, save_ensemble_csv, save_tensor, write_json, write_trace_csv
from .tensors import ReductionSpec, build_moment_tensor, labels_from_tensor, noisy_labels

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_INVARIANT = 0, 2, 3, 4
TOP_KEYS = {"command", "seed"}


class ConfigError(Exception):
    pass


class InvariantViolation(Exception):
    pass


DEFAULTS: dict[str, dict] = {
    "hermite": {"activation": {"kind": "polynomial", "coeffs": [0.0, 1.0]}, "K": None},
    "ensemble": {"kind": "simplex", "d": 9, "r": 10, "seed": None},
    "risk": {
        "teacher_kind": "simplex",
        "d": 10,
        "r": 11,
        "teacher_seed": None,
        "student_kind": "constrained",
        "R": None,
        "epsilon": 0.35,
        "student_seed": None,
        "activation": {"kind": "polynomial", "coeffs": [0.0, 0.0, 0.0, 1.0]},
        "K": None,
        "sweep": None,
    },
    "reduce": {
        "mode": "parity",
        "ell": 3,
        "coeffs": [0.0, 1.0, 0.0, 0.3],
        "p": 2,
        "m": 1,
        "teacher_kind": "random_isotropic",
        "d": 8,
        "r": 12,
        "teacher_seed": None,
        "n_inputs": 100,
        "input_seed": None,
        "save_tensors": False,
    },
    "sgd": {
        "scale": None,
        "d": 50,
        "rs": [50],
        "steps": [0.01],
        "n_steps": 200_000,
        "window": 10_000,
        "beta": 2.5,
        "seed": None,
        "init_kind": "sphere",
        "teacher_kind": "sec6",
    },
    "verify": {"seed": None, "n_mc": 200_000, "n_thm2": 50, "n_lemma2": 200, "sgd_steps": 20_000},
}


def _global_seed(config_seed, flag_seed) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get("TENSORNET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"TENSORNET_SEED must be an integer, got {env!r}") from None
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensornet", description=__doc__.split("\n\n")[0].strip())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config document (a previous manifest.json works)")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: tensornet-out/<command>)")
    common.add_argument("--seed", type=int, default=None, help="global seed (fallback: $TENSORNET_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1, help="concurrent independent runs")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def act_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--poly", type=_floats, default=S, help="monomial coefficients a0,a1,...")
        g.add_argument("--tanh-beta", type=float, default=S, help="sigma(x) = tanh(beta x)")
        p.add_argument("--K", type=int, default=S, help="Hermite truncation degree")

    p = sub.add_parser("hermite", parents=[common], help="Hermite coefficients of an activation")
    act_flags(p)

    p = sub.add_parser("ensemble", parents=[common], help="generate an ensemble and measure its constants")
    p.add_argument("--kind", choices=["identity", "centered_identity", "simplex", "random_isotropic", "sec6"], default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--r", type=int, default=S)

    p = sub.add_parser("risk", parents=[common], help="population risk and lower-bound certificate")
    act_flags(p)
    p.add_argument("--teacher-kind", dest="teacher_kind", choices=["identity", "centered_identity", "simplex", "random_isotropic"], default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--r", type=int, default=S)
    p.add_argument("--student-kind", dest="student_kind", choices=["constrained", "teacher", "random"], default=S)
    p.add_argument("--R", type=int, default=S)
    p.add_argument("--epsilon", type=float, default=S)
    p.add_argument("--sweep", type=_floats, default=S, help="epsilon grid for a bound sweep CSV")

    p = sub.add_parser("reduce", parents=[common], help="labels from moment tensors")
    p.add_argument("--mode", choices=["parity", "two_tensor", "noisy"], default=S)
    p.add_argument("--ell", type=int, default=S)
    p.add_argument("--coeffs", type=_floats, default=S)
    p.add_argument("--p", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--teacher-kind", dest="teacher_kind", choices=["identity", "centered_identity", "simplex", "random_isotropic"], default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--r", type=int, default=S)
    p.add_argument("--n-inputs", dest="n_inputs", type=int, default=S)
    p.add_argument("--save-tensors", dest="save_tensors", action="store_true", default=S)

    p = sub.add_parser("sgd", parents=[common], help="teacher-student SGD runs")
    p.add_argument("--scale", choices=["desk", "full"], default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--rs", type=_ints, default=S, help="teacher widths, comma-separated")
    p.add_argument("--steps", type=_floats, default=S, help="step sizes, comma-separated")
    p.add_argument("--n-steps", dest="n_steps", type=int, default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--beta", type=float, default=S)

    p = sub.add_parser("verify", parents=[common], help="run the deterministic self-check suite")
    p.add_argument("--n-mc", dest="n_mc", type=int, default=S)
    p.add_argument("--sgd-steps", dest="sgd_steps", type=int, default=S)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config block and flags into one manifest document."""
    cmd = args.command
    block = json.loads(json.dumps(DEFAULTS[cmd]))
    doc: dict = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - TOP_KEYS - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        if doc.get("command", cmd) != cmd:
            raise ConfigError(f"config is for command {doc['command']!r}, not {cmd!r}")
        given = doc.get(cmd, {})
        if not isinstance(given, dict):
            raise ConfigError(f"config block {cmd!r} must be an object")
        unknown = set(given) - set(block)
        if unknown:
            raise ConfigError(f"unknown keys in {cmd!r} block: {sorted(unknown)}")
        block.update(given)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "seed", "jobs")}
    if "poly" in flags:
        block["activation"] = {"kind": "polynomial", "coeffs": flags.pop("poly")}
    if "tanh_beta" in flags:
        block["activation"] = {"kind": "scaled_tanh", "beta": flags.pop("tanh_beta")}
    block.update(flags)
    seed = _global_seed(doc.get("seed"), args.seed)
    for key, offset in (("seed", 0), ("teacher_seed", 0), ("student_seed", 1), ("input_seed", 2)):
        if key in block and block[key] is None:
            block[key] = seed + offset
    if cmd == "sgd" and block.get("scale"):
        from .sgd import SCALES

        preset = SCALES[block["scale"]]
        explicit = set(flags) | set(doc.get(cmd, {}))
        for key, val in (("d", preset["d"]), ("rs", list(preset["rs"])), ("steps", list(preset["steps"])), ("n_steps", preset["n_steps"])):
            if key not in explicit:
                block[key] = val
    return {"command": cmd, "seed": seed, cmd: block}


def _make_activation(block: dict, K):
    desc = dict(block)
    if K is not None:
        desc["K"] = K
    try:
        return hermite_coefficients(desc)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad activation {block}: {exc}") from None


def _make_teacher(kind: str, d: int, r: int, seed: int):
    if kind == "identity":
        return ens.make_identity(d)
    if kind == "centered_identity":
        return ens.make_centered_identity(d)
    if kind == "simplex":
        return ens.make_simplex(d, r, seed)
    if kind == "random_isotropic":
        return ens.make_random_isotropic(d, r, seed)
    if kind == "sec6":
        from .sgd import make_teacher_sec6

        return make_teacher_sec6(d, r, seed)
    raise ConfigError(f"unknown teacher kind {kind!r}")


def _say(*parts) -> None:
    print(*parts, flush=True)


def cmd_hermite(cfg: dict, out: Path, jobs: int) -> None:
    act = _make_activation(cfg["activation"], cfg["K"])
    _say("k,sigma_hat_k")
    for k, c in enumerate(act.hermite_coeffs):
        _say(f"{k},{fmt(c)}")
    _say(f"parseval_residual,{fmt(act.parseval_residual)}")
    _say(f"parity,{act.parity}")
    write_json(
        {"activation": act.describe(), "hermite_coeffs": act.hermite_coeffs, "parseval_residual": act.parseval_residual, "parity": act.parity},
        out / "hermite.json",
    )


def cmd_ensemble(cfg: dict, out: Path, jobs: int) -> None:
    W = _make_teacher(cfg["kind"], cfg["d"], cfg["r"], cfg["seed"])
    rep = ens.check_assumptions(W)
    save_ensemble_csv(W, out / "ensemble.csv")
    write_json({**asdict(rep), "kind": W.kind, "seed": W.seed, "prng": ens.PRNG_NAME}, out / "assumptions.json")
    for k, v in asdict(rep).items():
        _say(f"{k}: {fmt(v) if isinstance(v, float) else v}")


def cmd_risk(cfg: dict, out: Path, jobs: int) -> None:
    act = _make_activation(cfg["activation"], cfg["K"])
    d, r = cfg["d"], cfg["r"]
    if cfg["teacher_kind"] in ("identity", "centered_identity"):
        r = d
    W = _make_teacher(cfg["teacher_kind"], d, r, cfg["teacher_seed"])
    R = cfg["R"] if cfg["R"] is not None else W.r
    eps = cfg["epsilon"]

    def student(e):
        kind = cfg["student_kind"]
        if kind == "teacher":
            return W
        if kind == "random":
            return ens.make_random_isotropic(d, max(R, 2), cfg["student_seed"])
        return ens.make_constrained_student(W, R, e, cfg["student_seed"])

    S = student(eps)
    rep = risk_report(W, S, act, eps) if 0 < eps < 1 else None
    chk = verify_thm2_bound(W, S, act, eps)
    if rep is None:
        from .risk import population_mse

        rep = population_mse(W, S, act)
    body = {
        "risk": rep.to_dict(),
        "estimation": estimation_errors(W, S).to_dict(),
        "assumptions": asdict(ens.check_assumptions(W)),
        "thm2_check": {k: v for k, v in chk.to_dict().items() if k != "report"},
        "activation": act.describe(),
        "truncation_K": act.truncation_degree,
    }
    write_json(body, out / "risk.json")
    save_ensemble_csv(W, out / "teacher.csv")
    save_ensemble_csv(S, out / "student.csv")
    _say(json.dumps({k: body["risk"][k] for k in ("population_mse", "bound_rhs", "bound_applicable")}))
    violated = chk.in_scope and chk.holds is False
    if cfg["sweep"]:
        lines = ["epsilon,population_mse,bound_rhs,in_scope,holds"]
        for e in cfg["sweep"]:
            try:
                c = verify_thm2_bound(W, student(e), act, e)
            except (InfeasibleError, PreconditionError):
                lines.append(f"{fmt(e)},,,False,")
                continue
            violated |= c.in_scope and c.holds is False
            lines.append(f"{fmt(e)},{fmt(c.population_mse)},{fmt(c.rhs)},{c.in_scope},{'' if c.holds is None else c.holds}")
        (out / "bound_sweep.csv").write_text("\n".join(lines) + "\n")
    if violated:
        raise InvariantViolation("lower bound violated on an in-scope configuration")


def cmd_reduce(cfg: dict, out: Path, jobs: int) -> None:
    spec = ReductionSpec(cfg["ell"], cfg["mode"], tuple(cfg["coeffs"]), p=cfg["p"], m=cfg["m"])
    d, r = cfg["d"], cfg["r"]
    if cfg["teacher_kind"] in ("identity", "centered_identity"):
        r = d
    W = _make_teacher(cfg["teacher_kind"], d, r, cfg["teacher_seed"])
    X = np.random.default_rng(cfg["input_seed"]).standard_normal((cfg["n_inputs"], d))
    T = build_moment_tensor(W, spec.ell)
    if cfg["save_tensors"]:
        save_tensor(_with_prov(T, W), out / f"T{spec.ell}.symt")
    report: dict = {"mode": spec.mode, "ell": spec.ell, "d": d, "r": W.r}
    if spec.mode == "noisy":
        nl = noisy_labels(spec, T, X, W)
        labels, ref = nl.labels, nl.clean
        report.update(
            max_abs_error=nl.max_abs_error,
            max_abs_cross_term=float(np.abs(nl.cross_terms).max()),
            bound_factor=nl.bound_factor,
            error_bound_ok=nl.error_bound_ok,
        )
        ok = nl.error_bound_ok
    else:
        T2 = build_moment_tensor(W, spec.ell + 1) if spec.mode == "two_tensor" else None
        if T2 is not None and cfg["save_tensors"]:
            save_tensor(_with_prov(T2, W), out / f"T{spec.ell + 1}.symt")
        from .hermite import polynomial

        labels = labels_from_tensor(spec, T, T2, X)
        ref = network_output(W, polynomial(spec.coeffs), X)
        rel = float(np.max(np.abs(labels - ref) / np.maximum(np.abs(ref), np.finfo(float).tiny)))
        report["max_rel_error"] = rel
        ok = rel < 1e-9
    write_trace_like(out / "labels.csv", ("index", "label", "direct"), [(i, a, b) for i, (a, b) in enumerate(zip(labels, ref))])
    write_json(report, out / "reduce.json")
    _say(json.dumps(json.loads(json.dumps(report, default=float))))
    if not ok:
        raise InvariantViolation("reduction round trip out of tolerance")


def _with_prov(T, W):
    from .tensors import SymmetricTensor

    return SymmetricTensor(T.entries, T.dim, {"ensemble_kind": W.kind, "seed": W.seed, "r": W.r})


def write_trace_like(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, *vals in rows:
            fh.write(",".join([str(i)] + [fmt(v) for v in vals]) + "\n")


def cmd_sgd(cfg: dict, out: Path, jobs: int) -> None:
    from .hermite import scaled_tanh
    from .sgd import SgdConfig, metric_spearman, sgd_run, write_traces

    act = scaled_tanh(cfg["beta"])
    cfgs = [
        SgdConfig(
            d=cfg["d"],
            r=r,
            n_steps=cfg["n_steps"],
            step_size=s,
            window=cfg["window"],
            seed=cfg["seed"],
            activation=act,
            teacher_kind=cfg["teacher_kind"],
            init_kind=cfg["init_kind"],
        )
        for r in cfg["rs"]
        for s in cfg["steps"]
    ]
    if jobs > 1 and len(cfgs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            traces = list(ex.map(sgd_run, cfgs))
    else:
        traces = [sgd_run(c) for c in cfgs]
    result = {(c.r, c.step_size): t for c, t in zip(cfgs, traces)}
    write_traces(result, out)
    summary = []
    for (r, s), t in sorted(result.items()):
        row = {"r": r, "step_size": s, "final_norm_gen_err": t.final_error, "spearman": metric_spearman(t), "diverged": t.diverged}
        summary.append(row)
        _say(f"r={r} s={fmt(s)} final={fmt(t.final_error)} spearman={fmt(row['spearman'])} diverged={t.diverged} wall={t.wall_time:.1f}s")
    write_json({"runs": summary}, out / "summary.json")


def cmd_verify(cfg: dict, out: Path, jobs: int) -> None:
    from .hermite import scaled_tanh
    from .sgd import SgdConfig, sgd_run
    from .verify import run_checks

    res = run_checks(cfg["seed"], cfg["n_mc"], cfg["n_thm2"], cfg["n_lemma2"])
    checks = [asdict(c) for c in res["checks"]]
    trace = sgd_run(SgdConfig(d=10, r=10, n_steps=cfg["sgd_steps"], step_size=1e-3, window=max(1, cfg["sgd_steps"] // 10), seed=cfg["seed"], activation=scaled_tanh(2.5)))
    write_trace_csv(trace.records, out / "sgd_trace.csv")
    _rows_csv(out / "thm2_sweep.csv", res["thm2"])
    _rows_csv(out / "lemma2_sweep.csv", res["lemma2"])
    write_json({"checks": checks, "sgd_metadata": trace.metadata}, out / "verify.json")
    failed = []
    for c in res["checks"]:
        tag = "PASS" if c.passed else ("FAIL" if c.invariant else "NOTE")
        _say(f"{tag} {c.name}")
        if c.invariant and not c.passed:
            failed.append(c.name)
    if failed:
        raise InvariantViolation(f"invariant checks failed: {failed}")


def _rows_csv(path: Path, rows) -> None:
    if not rows:
        path.write_text("")
        return
    fields = list(asdict(rows[0]))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            vals = asdict(row).values()
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in vals) + "\n")


COMMANDS = {
    "hermite": cmd_hermite,
    "ensemble": cmd_ensemble,
    "risk": cmd_risk,
    "reduce": cmd_reduce,
    "sgd": cmd_sgd,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        manifest = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path("tensornet-out") / args.command
    cfg = manifest[args.command]
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(manifest, out / "manifest.json")
        COMMANDS[args.command](cfg, out, max(1, args.jobs))
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, PreconditionError, InfeasibleError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
