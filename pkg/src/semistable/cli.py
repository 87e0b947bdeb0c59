"""Command-line entry point: estimate, limit, mc, ci, validate, replay.

Every command is a pure function of its config dict, so a manifest (config +
outputs) can be replayed and compared exactly.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import io
from .dist_core import SizePmf
from .errors import (BudgetExceededError, DivergenceError, InconclusiveError,
                     NotInScopeError, NotSupportedError, OutOfTheoryError, SemistableError)
from .estimator import EstimatorInput, classify_regime, estimate_fw

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET, EXIT_THEORY = 0, 1, 2, 3, 4


class UsageError(ValueError):
    pass


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (BudgetExceededError, InconclusiveError)):
        return EXIT_BUDGET
    if isinstance(exc, (OutOfTheoryError, NotSupportedError, NotInScopeError, DivergenceError)):
        return EXIT_THEORY
    if isinstance(exc, SemistableError):
        return EXIT_FAIL
    return EXIT_USAGE


def _family(cfg: dict) -> SizePmf | None:
    fam = cfg.get("family")
    if fam is None:
        return None
    if isinstance(fam, dict):
        return SizePmf.from_dict(fam)
    if fam == "geometric":
        return SizePmf.geometric(float(cfg["c"]))
    if fam == "negbin":
        if cfg.get("r") is None:
            raise UsageError("--family negbin needs --r")
        return SizePmf.negbin(int(cfg["r"]), float(cfg["c"]))
    raise UsageError(f"unknown family {fam!r}")


# ---------------------------------------------------------------- commands

def run_estimate(cfg: dict) -> tuple[dict, dict]:
    samples = io.read_samples(cfg["input"])
    inp = EstimatorInput(samples, float(cfg["q"]), int(cfg["w"]))
    out = {"f_hat": estimate_fw(inp), "N": int(samples.size), "q": inp.q, "w": inp.w}
    f_W = _family(cfg)
    if f_W is None:
        out["regime"] = None
        out["regime_note"] = "no reference size law given (--family); regime not assessed"
    else:
        out["regime"] = classify_regime(f_W, inp.q, inp.w).to_dict()
    if cfg.get("gamma") is not None:
        if f_W is None:
            raise UsageError("--gamma needs a reference size law (--family, --c) for the regime")
        from .inference import build_spec, confidence_interval

        if out["regime"]["regime"] != "semistable_12":
            raise OutOfTheoryError(
                f"regime is {out['regime']['regime']}: the conservative interval is only "
                "defined for alpha in (1, 2)")
        spec = build_spec(f_W, inp.q, inp.w, float(cfg["gamma"]), inp.samples.size,
                          int(cfg.get("lambda_grid", 101)))
        out["ci"] = confidence_interval(out["f_hat"], int(samples.size), spec).to_dict()
    return out, {"input": io.file_digest(cfg["input"])}


def run_limit(cfg: dict) -> tuple[dict, dict]:
    from .limit import law_for, schedule, slowly_varying_monotone

    f_W = _family(cfg)
    if f_W is None:
        raise UsageError("limit needs --family")
    q, w = float(cfg["q"]), int(cfg["w"])
    rep = classify_regime(f_W, q, w)
    out = {"regime": rep.to_dict()}
    if rep.regime == "gaussian_clt":
        raise OutOfTheoryError(
            f"R_qw = {rep.r_qw:.6g} is finite: sqrt(N)(f_hat - f) is asymptotically normal "
            "with variance R_qw - f_W(w)^2 (see `estimate` or asymptotic_variance); "
            "there is no semi-stable limit")
    if rep.regime in ("boundary", "out_of_theory"):
        out["notice"] = f"regime is {rep.regime}; no limit law is constructed"
        if cfg.get("strict"):
            raise OutOfTheoryError(out["notice"])
        return out, {}
    law = law_for(f_W, q)
    levels = int(cfg.get("levels", 6))
    sch = schedule(f_W, q, w, levels, with_B=levels > 0)
    out["law"] = law.to_dict()
    out["schedule"] = sch.to_dict()
    out["L_monotone_on_schedule"] = slowly_varying_monotone(q, w, range(0, 2 * levels + 1))
    return out, {}


def run_mc(cfg: dict) -> tuple[dict, dict]:
    from .montecarlo import McConfig, run_experiment

    mc_cfg = dict(cfg["config"])
    if cfg.get("seed") is not None:
        mc_cfg["master_seed"] = int(cfg["seed"])
    if int(mc_cfg.get("replicates", 0)) < 1:
        raise UsageError("replicates must be positive")
    conf = McConfig.from_dict(mc_cfg, n_jobs=cfg.get("n_jobs"))
    rep = run_experiment(conf, probe=bool(cfg.get("probe", True)))
    return rep.to_dict(), {}


def run_ci(cfg: dict) -> tuple[dict, dict]:
    from .inference import build_spec, confidence_interval

    c = dict(cfg["config"])
    f_W = _family(c)
    if f_W is None:
        raise UsageError("ci config needs 'family'")
    q, w, N = float(c["q"]), int(c["w"]), int(c["N"])
    spec = build_spec(f_W, q, w, float(c.get("gamma", 0.1)), N,
                      int(c.get("lambda_grid_size", 101)))
    return confidence_interval(float(c["f_hat"]), N, spec).to_dict(), {}


def run_validate(cfg: dict) -> tuple[dict, dict]:
    from .validate import format_table, run_checks

    res = run_checks(cfg.get("only") or None)
    return {"checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in res],
            "all_passed": all(r.passed for r in res),
            "table": format_table(res, show_time=False)}, {}


COMMANDS = {"estimate": run_estimate, "limit": run_limit, "mc": run_mc, "ci": run_ci,
            "validate": run_validate}


def execute(command: str, cfg: dict) -> io.RunManifest:
    t0 = time.perf_counter()
    outputs, digests = COMMANDS[command](cfg)
    diag = {"wall_seconds": time.perf_counter() - t0, "environment": io.environment_info(),
            "budget_env": os.environ.get("SEMISTABLE_BUDGET")}
    seed = cfg.get("seed")
    if seed is None and isinstance(cfg.get("config"), dict):
        seed = cfg["config"].get("master_seed")
    return io.RunManifest(command, cfg, outputs, seed, digests, diag)


def replay(path: str) -> tuple[bool, list[str]]:
    """Re-run a manifest; returns (identical, list of differing output keys)."""
    man = io.RunManifest.read(path)
    for key, digest in man.input_digests.items():
        if io.file_digest(man.config[key]) != digest:
            return False, [f"input {key} changed"]
    fresh = execute(man.command, man.config)
    old = io.loads(io.dumps(man.outputs))
    new = io.loads(io.dumps(fresh.outputs))
    diffs = [k for k in set(old) | set(new) if old.get(k) != new.get(k)
             and not k.endswith("seconds")]
    return not diffs, sorted(diffs)


# ---------------------------------------------------------------- argparse

def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semistable", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--manifest", help="write a run manifest (JSON) to this path")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    def law_args(sp, required):
        sp.add_argument("--family", choices=("geometric", "negbin"), required=required)
        sp.add_argument("--c", type=float)
        sp.add_argument("--r", type=int)

    e = sub.add_parser("estimate", help="estimate f_W(w) from sampled sizes")
    e.add_argument("input", help="CSV (one size per line) or JSON {'samples': [...]}")
    e.add_argument("--q", type=float, required=True)
    e.add_argument("--w", type=int, required=True)
    e.add_argument("--gamma", type=float, help="also report the conservative interval")
    e.add_argument("--lambda-grid", type=int, default=101)
    law_args(e, False)
    common(e)

    lm = sub.add_parser("limit", help="limit law and schedule for a size law")
    law_args(lm, True)
    lm.add_argument("--q", type=float, required=True)
    lm.add_argument("--w", type=int, default=1)
    lm.add_argument("--levels", type=int, default=6)
    lm.add_argument("--strict", action="store_true",
                    help="exit nonzero when no limit law applies")
    common(lm)

    mc = sub.add_parser("mc", help="Monte Carlo convergence experiment")
    mc.add_argument("config", help="JSON experiment config")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--n-jobs", type=int, default=1)
    mc.add_argument("--no-probe", action="store_true")
    common(mc)

    ci = sub.add_parser("ci", help="conservative interval from an estimate")
    ci.add_argument("config", help="JSON: family, c, q, w, gamma, N, f_hat")
    ci.add_argument("--seed", type=int)
    common(ci)

    v = sub.add_parser("validate", help="run the invariant checks")
    v.add_argument("--only", nargs="*", help="substrings of check names to run")
    common(v)

    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    rp.add_argument("manifest_path")
    return p


def _config_from_args(args) -> dict:
    if args.command == "estimate":
        return {"input": args.input, "q": args.q, "w": args.w, "gamma": args.gamma,
                "lambda_grid": args.lambda_grid, "family": args.family, "c": args.c,
                "r": args.r}
    if args.command == "limit":
        if args.c is None:
            raise UsageError("--c is required")
        if args.levels < 0:
            raise UsageError("--levels must be >= 0")
        return {"family": args.family, "c": args.c, "r": args.r, "q": args.q, "w": args.w,
                "levels": args.levels, "strict": args.strict}
    if args.command == "mc":
        return {"config": _read_json(args.config), "seed": args.seed, "n_jobs": args.n_jobs,
                "probe": not args.no_probe}
    if args.command == "ci":
        return {"config": _read_json(args.config), "seed": args.seed}
    return {"only": args.only}


def _render(outputs: dict, fmt: str, command: str) -> str:
    if command == "validate" and fmt == "json":
        return outputs["table"] + "\n"
    if fmt == "csv":
        return io.dumps_csv(outputs)
    return io.dumps(outputs) + "\n"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "replay":
        try:
            same, diffs = replay(args.manifest_path)
        except (OSError, KeyError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print("replay identical" if same else f"replay differs: {', '.join(diffs)}")
        return EXIT_OK if same else EXIT_FAIL
    try:
        cfg = _config_from_args(args)
        man = execute(args.command, cfg)
    except (io.SampleParseError, UsageError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SemistableError as exc:
        print(f"error ({exc.kind}): {exc}", file=sys.stderr)
        return _exit_code(exc)
    sys.stdout.write(_render(man.outputs, args.format, args.command))
    if args.manifest:
        man.write(args.manifest)
    if args.command == "validate" and not man.outputs["all_passed"]:
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
