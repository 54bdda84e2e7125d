"""Command-line interface.

Subcommands: audit (one trajectory), replicate (a replication study),
calibrate (bet-size calibration report), oracle (exact references as JSON),
fpr (faithful-provider replicate preset), bound (detection-time bound from
oracle inputs). Exit status: 0 success, 1 config or input problem, 2
internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .audit import detection_time_bound, calibration_report, LambdaSchedule
from .errors import (
    ConditionsViolated,
    InputError,
    InvariantViolation,
    TokenAuditError,
)
from .harness import (
    CALIBRATION_STREAM,
    RunConfig,
    load_config,
    replication_rng,
    run_replications,
    summary_dict,
    write_trajectory_csv,
    TRAJECTORY_COLUMNS,
)
from .oracle import (
    conditional_expected_length,
    enumerate_output_distribution,
    evidence_moments,
    exact_intensity,
)
from .audit import run_audit
from .tokenspace import str_of


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this tool reserves 2 for internal
    # invariant violations, so usage problems exit 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to a JSON run config")
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--policy", choices=["faithful", "random", "heuristic"])
    sub.add_argument("--m", type=int, help="split budget for random/heuristic policies")
    sub.add_argument("--p", type=float, help="top-p level for the heuristic policy")
    sub.add_argument("--lambda", dest="lambda0", type=float, help="fixed bet size")
    sub.add_argument("--schedule", choices=["constant", "decreasing", "calibrate"])
    sub.add_argument("--max-steps", type=int)
    sub.add_argument("--replications", type=int)
    sub.add_argument("--seed", type=int, help="master seed (beats TOKEN_AUDIT_SEED)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--anomaly-mode", choices=["abort", "clamp"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="tokaudit",
        description="Audit a token-billed text provider for over-reporting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("audit", "run a single audit and print its trajectory"),
        ("replicate", "run independent audit replications and export results"),
        ("calibrate", "calibrate the bet size on the holdout corpus"),
        ("oracle", "emit exact per-prompt references as JSON"),
        ("fpr", "replicate preset with the policy forced to faithful"),
        ("bound", "detection-time bound from oracle-computed inputs"),
    ]:
        sp = sub.add_parser(name, help=doc)
        _add_common(sp)
        if name in ("oracle", "bound"):
            sp.add_argument(
                "--moments-n",
                type=int,
                default=2000,
                help="Monte Carlo draws for evidence moments",
            )
    return parser


def _overrides(args) -> dict:
    out = {}
    env_seed = os.environ.get("TOKEN_AUDIT_SEED")
    if env_seed is not None:
        try:
            out["master_seed"] = int(env_seed)
        except ValueError:
            raise InputError(f"TOKEN_AUDIT_SEED is not an integer: {env_seed!r}")
    for key, name in [
        ("alpha", "alpha"),
        ("policy", "policy"),
        ("m", "m"),
        ("p", "p"),
        ("lambda0", "lambda0"),
        ("schedule", "schedule"),
        ("max_steps", "max_steps"),
        ("replications", "replications"),
        ("out", "out_dir"),
        ("anomaly_mode", "anomaly_mode"),
    ]:
        val = getattr(args, key, None)
        if val is not None:
            out[name] = val
    if getattr(args, "seed", None) is not None:
        out["master_seed"] = args.seed
    return out


def _resolve_schedule(config: RunConfig):
    """Return (schedule, calibration or None), calibrating when configured."""
    if config.schedule is not None:
        return config.schedule, None
    crng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(CALIBRATION_STREAM,))
    )
    calib = calibration_report(
        config.model,
        config.holdout,
        config.trunc,
        config.n_holdout,
        config.safety,
        config.lambda_cap,
        crng,
    )
    return LambdaSchedule.constant(calib.lam), calib


def _cmd_audit(config: RunConfig) -> int:
    schedule, _ = _resolve_schedule(config)
    rng = replication_rng(config.master_seed, 0)
    outcome = run_audit(
        config.model,
        config.policy,
        config.corpus,
        schedule,
        config.alpha,
        config.trunc,
        config.max_steps,
        rng,
        config.anomaly_mode,
        config.clamp_eps,
    )
    print(",".join(TRAJECTORY_COLUMNS))
    log_w = 0.0
    for rec in outcome.trajectory:
        log_w += math.log(rec.factor)
        flagged = "true" if outcome.flagged and rec.step == outcome.tau else "false"
        print(
            f"{rec.step},{rec.prompt_id},{rec.reported_len},{rec.estimate!r},"
            f"{rec.evidence!r},{rec.lam!r},{rec.factor!r},{log_w!r},"
            f"{math.exp(log_w)!r},{flagged}"
        )
    tau = outcome.tau if outcome.tau is not None else "censored"
    print(f"# flagged={str(outcome.flagged).lower()} tau={tau} "
          f"final_wealth={outcome.final_wealth!r}")
    if outcome.anomaly is not None:
        print(f"# anomaly at step {outcome.anomaly.step}: factor={outcome.anomaly.factor!r}")
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out / "trajectory_0.csv", outcome)
    return 0


def _cmd_replicate(config: RunConfig) -> int:
    summary = run_replications(config)
    print(json.dumps(summary.aggregates(), indent=2, sort_keys=True))
    if summary.errors:
        for r, msg in summary.errors:
            print(f"replication {r} failed: {msg}", file=sys.stderr)
    return 0


def _cmd_calibrate(config: RunConfig) -> int:
    if config.holdout is None:
        raise InputError("calibrate needs a calibration corpus in the config")
    crng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(CALIBRATION_STREAM,))
    )
    calib = calibration_report(
        config.model,
        config.holdout,
        config.trunc,
        config.n_holdout,
        config.safety,
        config.lambda_cap,
        crng,
    )
    es = calib.evidences
    print(f"lambda_max = {calib.lam_max!r}")
    print(f"lambda = {calib.lam!r}")
    print(
        f"holdout evidence: n={len(es)} min={min(es)!r} "
        f"mean={calib.mean_evidence!r} max={max(es)!r}"
    )
    return 0


def _cmd_oracle(config: RunConfig, moments_n: int) -> int:
    schedule, _ = _resolve_schedule(config)
    lam = schedule.lambda0
    report: dict = {"prompts": {}}
    for pid, prompt in enumerate(config.corpus):
        dist = enumerate_output_distribution(config.model, prompt)
        strings = sorted({str_of(seq, config.model.vocab) for seq, _ in dist.entries})
        report["prompts"][str(pid)] = {
            "prompt": prompt,
            "support_size": len(dist.entries),
            "total_mass": dist.total_mass,
            "conditional_expected_length": {
                s: conditional_expected_length(config.model, prompt, s) for s in strings
            },
        }
    mrng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(CALIBRATION_STREAM - 1,))
    )
    moments = evidence_moments(
        config.policy, config.model, config.corpus, config.trunc, moments_n, mrng, lam
    )
    report["intensity"] = exact_intensity(config.policy, config.model, config.corpus)
    report["policy"] = {"kind": config.policy.kind, "m": config.policy.m, "p": config.policy.p}
    report["moments"] = {
        "mean": moments.mean,
        "variance": moments.variance,
        "se": moments.se,
        "n": moments.n,
        "min_evidence": moments.min_evidence,
        "max_evidence": moments.max_evidence,
        "lambda0": moments.lambda0,
        "empirical_b_minus": moments.empirical_b_minus,
        "empirical_b_plus": moments.empirical_b_plus,
    }
    payload = json.dumps(report, indent=2, sort_keys=True)
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(payload + "\n", encoding="utf-8")
        print(str(out / "oracle.json"))
    else:
        print(payload)
    return 0


def _cmd_fpr(config: RunConfig) -> int:
    forced = RunConfig(
        model=config.model,
        policy=type(config.policy).faithful(),
        alpha=config.alpha,
        trunc=config.trunc,
        max_steps=config.max_steps,
        replications=config.replications,
        master_seed=config.master_seed,
        corpus=config.corpus,
        schedule=config.schedule,
        holdout=config.holdout,
        n_holdout=config.n_holdout,
        safety=config.safety,
        lambda_cap=config.lambda_cap,
        out_dir=config.out_dir,
        anomaly_mode=config.anomaly_mode,
        clamp_eps=config.clamp_eps,
    )
    return _cmd_replicate(forced)


def _cmd_bound(config: RunConfig, moments_n: int) -> int:
    schedule, _ = _resolve_schedule(config)
    lam = schedule.lambda0
    intensity = exact_intensity(config.policy, config.model, config.corpus)
    mrng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(CALIBRATION_STREAM - 1,))
    )
    moments = evidence_moments(
        config.policy, config.model, config.corpus, config.trunc, moments_n, mrng, lam
    )
    print(f"lambda0 = {lam!r}")
    print(f"intensity = {intensity!r}")
    print(f"var_e = {moments.variance!r}")
    print(f"b_minus = {moments.empirical_b_minus!r}")
    print(f"b_plus = {moments.empirical_b_plus!r}")
    try:
        value = detection_time_bound(
            lam,
            config.alpha,
            intensity,
            moments.variance,
            moments.empirical_b_minus,
            moments.empirical_b_plus,
        )
    except ConditionsViolated as err:
        print(f"conditions violated: {err}")
        return 0
    print(f"bound = {value!r}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
        if args.command == "audit":
            return _cmd_audit(config)
        if args.command == "replicate":
            return _cmd_replicate(config)
        if args.command == "calibrate":
            return _cmd_calibrate(config)
        if args.command == "oracle":
            return _cmd_oracle(config, args.moments_n)
        if args.command == "fpr":
            return _cmd_fpr(config)
        if args.command == "bound":
            return _cmd_bound(config, args.moments_n)
        raise InputError(f"unknown command {args.command!r}")
    except InvariantViolation as err:
        print(f"tokaudit: internal invariant violation: {err}", file=sys.stderr)
        return 2
    except (TokenAuditError, OSError) as err:
        print(f"tokaudit: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
