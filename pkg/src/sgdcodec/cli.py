"""Command line front end.

Subcommands: run (train + encode + account + artifacts), verify (inequality
and tail-bound suites), encode (manifest + epoch codes only), decode (check
epoch code files on disk against a deterministic rerun), report (print the
summaries of an artifact directory).  A flat key=value file can provide any
flag's default; explicit flags win.  SGDCODEC_OUT overrides the output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from fractions import Fraction
from typing import Optional, Sequence

from .epoch_codec import (
    ACCOUNTING,
    STRICT,
    SideInfo,
    decode_epoch,
    read_epoch_file,
)
from .harness import (
    ExperimentSpec,
    HoeffdingCheck,
    load_manifest,
    run_experiment,
    run_inequality_suite,
    verify_hoeffding,
)
from .model import FAMILIES, GeneratorSpec, MODEL_KINDS
from .numerics import DomainError, GridSpec
from .sgd_engine import RunConfig

OUT_ENV = "SGDCODEC_OUT"

_DEFAULTS = {
    "family": "one-hot",
    "n": "256",
    "dim": "4",
    "data_seed": "1",
    "margin": "1/2",
    "sigma": "1/2",
    "center_dist": "2",
    "feature_scale": "2",
    "batch_size": "16",
    "step_raw": "58982",
    "eps": "1/100",
    "progress_coeff": "20",
    "seed": "1",
    "max_epochs": "4",
    "model_kind": "logistic-linear",
    "hidden_width": "0",
    "scale": "16",
    "clip": "64",
    "g_bound": "",
    "ball_cap": "5000000",
    "replications": "1",
    "mode": ACCOUNTING,
}


def read_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in _DEFAULTS:
                raise DomainError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def _merge_values(args: argparse.Namespace) -> dict[str, str]:
    values = dict(_DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    return values


def build_spec(values: dict[str, str]) -> ExperimentSpec:
    n = int(values["n"])
    family = values["family"]
    dim = n if family == "one-hot" else int(values["dim"])
    generator = GeneratorSpec(
        family=family,
        n=n,
        dim=dim,
        seed=int(values["data_seed"]),
        margin=Fraction(values["margin"]),
        sigma=Fraction(values["sigma"]),
        center_dist=Fraction(values["center_dist"]),
        feature_scale=int(values["feature_scale"]),
    )
    grid = GridSpec(int(values["scale"]), int(values["clip"]))
    step_raw = int(values["step_raw"]) if values["step_raw"] else grid.unit // 4
    config = RunConfig(
        generator=generator,
        batch_size=int(values["batch_size"]),
        step_raw=step_raw,
        eps=Fraction(values["eps"]),
        progress_coeff=Fraction(values["progress_coeff"]),
        seed=int(values["seed"]),
        max_epochs=int(values["max_epochs"]),
        model_kind=values["model_kind"],
        hidden_width=int(values["hidden_width"]),
        grid=grid,
        g_bound=Fraction(values["g_bound"]) if values["g_bound"] else None,
        ball_cap=int(values["ball_cap"]),
    )
    return ExperimentSpec(
        config=config,
        replications=int(values["replications"]),
        mode=values["mode"],
    )


def _resolve_out(args: argparse.Namespace) -> Optional[str]:
    return getattr(args, "out", None) or os.environ.get(OUT_ENV)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value defaults file")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--margin")
    p.add_argument("--sigma")
    p.add_argument("--center-dist", dest="center_dist")
    p.add_argument("--feature-scale", dest="feature_scale", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--step-raw", dest="step_raw", type=int)
    p.add_argument("--eps")
    p.add_argument("--progress-coeff", dest="progress_coeff")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--model-kind", dest="model_kind", choices=MODEL_KINDS)
    p.add_argument("--hidden-width", dest="hidden_width", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--clip", type=int)
    p.add_argument("--g-bound", dest="g_bound")
    p.add_argument("--ball-cap", dest="ball_cap", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--mode", choices=(ACCOUNTING, STRICT))
    p.add_argument("--out", help="artifact directory")


def _print_run_result(result) -> None:
    for rep in result.replications:
        rpt = rep.report
        t_star = rpt.projected_epoch_bound
        acc = rep.run.final_accuracy
        print(
            f"rep {rep.index:02d}: epochs={rpt.epochs} good={rpt.good_epochs}"
            f"/{rpt.epochs} measured={rpt.total_measured_bits}"
            f" charged={rpt.total_charged_bits} baseline={rpt.total_baseline_bits}"
            f" savings={rpt.total_savings_bits}"
            f" t*={'-' if t_star is None else t_star}"
            f" terminated={rep.run.terminated}"
            f" acc={acc.numerator}/{acc.denominator}"
        )


def cmd_run(args: argparse.Namespace) -> int:
    spec = build_spec(_merge_values(args))
    outdir = _resolve_out(args)
    result = run_experiment(spec, outdir)
    _print_run_result(result)
    if outdir:
        print(f"artifacts written to {outdir}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    spec = build_spec(_merge_values(args))
    outdir = _resolve_out(args)
    if not outdir:
        print("encode requires --out or SGDCODEC_OUT", file=sys.stderr)
        return 2
    result = run_experiment(spec, outdir)
    total = sum(len(rep.codes) for rep in result.replications)
    print(f"{total} epoch code file(s) under {outdir}")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    """Reads epoch code files from disk and checks them against a rerun."""
    outdir = args.dir or _resolve_out(args)
    if not outdir:
        print("decode requires --dir or SGDCODEC_OUT", file=sys.stderr)
        return 2
    spec = load_manifest(os.path.join(outdir, "manifest.json"))
    result = run_experiment(spec, None)
    failures = 0
    for rep in result.replications:
        config = replace(spec.config, seed=spec.config.seed + rep.index)
        rep_dir = os.path.join(outdir, f"rep_{rep.index:02d}", "epochs")
        for trace in rep.run.completed_traces:
            path = os.path.join(rep_dir, f"epoch_{trace.epoch:03d}.epc")
            n, b, epoch, stream = read_epoch_file(path)
            if (n, b, epoch) != (trace.n, trace.batch_size, trace.epoch):
                print(f"{path}: header mismatch")
                failures += 1
                continue
            side = (
                SideInfo.strict(trace.checkpoints[-1])
                if spec.mode == STRICT
                else SideInfo.accounting(trace.checkpoints)
            )
            decoded = decode_epoch(stream, result.dataset, config, side)
            ok = decoded.order == trace.order
            failures += 0 if ok else 1
            print(f"rep {rep.index:02d} epoch {epoch}: {'ok' if ok else 'MISMATCH'}")
    return 0 if failures == 0 else 1


def cmd_report(args: argparse.Namespace) -> int:
    outdir = args.dir or _resolve_out(args)
    if not outdir:
        print("report requires --dir or SGDCODEC_OUT", file=sys.stderr)
        return 2
    manifest_path = os.path.join(outdir, "manifest.json")
    spec = load_manifest(manifest_path)
    print(f"manifest: {manifest_path} mode={spec.mode} replications={spec.replications}")
    found = False
    for r in range(spec.replications):
        path = os.path.join(outdir, f"rep_{r:02d}", "summary.json")
        if not os.path.exists(path):
            continue
        found = True
        with open(path, "r", encoding="ascii") as fh:
            summary = json.load(fh)
        print(
            f"rep {r:02d}: epochs={summary['epochs']}"
            f" good={summary['good_epochs']}/{summary['epochs']}"
            f" charged={summary['total_charged_bits']}"
            f" baseline={summary['total_baseline_bits']}"
            f" savings={summary['total_savings_bits']}"
            f" t*={summary['projected_epoch_bound']}"
            f" conservation={'ok' if summary['conservation_ok'] else 'VIOLATED'}"
        )
    if not found:
        result = run_experiment(spec, None)
        _print_run_result(result)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    suites = args.suites.split(",") if args.suites else ["inequalities", "hoeffding"]
    all_ok = True
    if "inequalities" in suites:
        for row in run_inequality_suite():
            print(row.line())
            all_ok = all_ok and row.passed
    if "hoeffding" in suites:
        for k in (64, 256):
            for delta in (Fraction(1, 10), Fraction(1, 5)):
                check = HoeffdingCheck(
                    population_size=1024,
                    population_ones=512,
                    sample_size=k,
                    delta=delta,
                    trials=args.trials,
                    seed=11,
                )
                res = verify_hoeffding(check)
                ok = res.ok_empirical and res.ok_exact
                all_ok = all_ok and ok
                print(
                    f"{'pass' if ok else 'FAIL'}  hypergeometric-tail: k={k}"
                    f" delta={delta} trials={check.trials}"
                    f" freq={float(res.empirical_freq):.3e}"
                    f" exact={float(res.exact_prob):.3e}"
                    f" bound={res.bound:.3e} sigma={res.sigma:.3e}"
                )
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgdcodec",
        description="Deterministic SGD with exact permutation compression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train, encode, account, write artifacts")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_enc = sub.add_parser("encode", help="write manifest and epoch code files")
    _add_config_flags(p_enc)
    p_enc.set_defaults(func=cmd_encode)

    p_dec = sub.add_parser("decode", help="decode epoch code files and verify")
    p_dec.add_argument("--dir", help="artifact directory")
    p_dec.set_defaults(func=cmd_decode)

    p_rep = sub.add_parser("report", help="print run summaries")
    p_rep.add_argument("--dir", help="artifact directory")
    p_rep.set_defaults(func=cmd_report)

    p_ver = sub.add_parser("verify", help="run statistical and inequality suites")
    p_ver.add_argument("--suites", help="comma list: inequalities,hoeffding")
    p_ver.add_argument("--trials", type=int, default=100_000)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
