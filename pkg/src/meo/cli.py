"""``meo <mode> --config <path> [--out <path>] [--seed N]``

Exit codes: 0 success, 1 a checked bound was violated, 2 bad usage or
configuration, 3 runtime failure (e.g. training diverged). Failures print a
single ``meo-error: <kind>: <message>`` line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import BENCH_HEADER, rows_to_csv, run_bench
from .checks import EQUIVALENCE_TOL, WITNESS_MIN_GAP, equivalence_cases, run_equivalence_case, run_gradcheck, run_witness
from .config import MODES, ConfigError, RunConfig, parse_config
from .cost_model import total_flops
from .expert_bank import Activation
from .toy import TrainingDiverged, run_train_toy

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

FLOPS_HEADER = ["variant", "level", "layers", "d_model", "d_ff", "seq_len", "vocab", "n_experts",
                "m_selected", "r", "backbone_flops", "expert_forward_flops", "gating_flops",
                "merging_flops", "mixing_flops", "bottleneck_flops", "total_flops"]
EQUIV_HEADER = ["case", "seed", "level", "renormalize", "activation", "placement", "s", "n", "m",
                "max_abs_gap", "bound", "passed"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meo", description="MoE vs MEO benchmarks, FLOPs reports and numerical checks.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON run configuration (see docs/config.md)")
    p.add_argument("--out", help="CSV output path; overrides output_path in the config")
    p.add_argument("--seed", type=int, help="override the config seed")
    return p


def flops_rows(cfg: RunConfig) -> list[list]:
    rows = []
    for variant in cfg.variants or (cfg.profile.variant,):
        for m in cfg.m_sweep:
            p = cfg.profile.with_(variant=variant, m_selected=m)
            r = total_flops(p).as_dict()
            rows.append([variant.value, p.level.value, p.layers, p.d_model, p.d_ff, p.seq_len, p.vocab,
                         p.n_experts, m, p.r] + [r[k] for k in FLOPS_HEADER[10:]])
    return rows


def format_flops_table(rows) -> str:
    cols = ["variant", "m_selected", "backbone_flops", "expert_forward_flops", "gating_flops",
            "merging_flops", "mixing_flops", "bottleneck_flops", "total_flops"]
    idx = [FLOPS_HEADER.index(c) for c in cols]
    cells = [cols] + [[str(r[i]) for i in idx[:2]] + [f"{r[i] / 1e9:.3f}G" for i in idx[2:]] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(cols))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


def equiv_rows(cfg: RunConfig) -> tuple[list[list], bool]:
    rows, ok = [], True
    for i, case in enumerate(equivalence_cases(cfg.equiv_count, cfg.seed)):
        r = run_equivalence_case(case)
        ok &= r["passed"]
        rows.append([f"sweep-{i}", case.seed, case.level.value, case.renormalize, case.activation.value,
                     "out", case.s, case.n, case.m, repr(r["max_abs_gap"]), f"<={EQUIVALENCE_TOL}", r["passed"]])
    relu = run_witness(Activation.RELU)
    ident = run_witness(Activation.IDENTITY)
    witness_ok = relu["gap_inside"] > WITNESS_MIN_GAP
    identity_ok = ident["gap_inside"] <= EQUIVALENCE_TOL
    ok &= witness_ok and identity_ok
    rows.append(["witness-relu", "", "sequence", True, "relu", "in", "", "", "",
                 repr(relu["gap_inside"]), f">{WITNESS_MIN_GAP}", witness_ok])
    rows.append(["witness-identity", "", "sequence", True, "identity", "in", "", "", "",
                 repr(ident["gap_inside"]), f"<={EQUIVALENCE_TOL}", identity_ok])
    return rows, ok


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def run(cfg: RunConfig) -> int:
    out = cfg.output_path
    if cfg.mode == "flops":
        rows = flops_rows(cfg)
        print(format_flops_table(rows))
        if out:
            Path(out).write_text(rows_to_csv(rows, FLOPS_HEADER))
        return EXIT_OK
    if cfg.mode == "bench":
        _emit(rows_to_csv(run_bench(cfg), BENCH_HEADER), out)
        return EXIT_OK
    if cfg.mode == "equiv":
        rows, ok = equiv_rows(cfg)
        _emit(rows_to_csv(rows, EQUIV_HEADER), out)
        if not ok:
            print("meo-error: bound: equivalence check failed", file=sys.stderr)
        return EXIT_OK if ok else EXIT_VIOLATION
    if cfg.mode == "gradcheck":
        rows = run_gradcheck(cfg.seed)
        table = [[r.method, r.placement, r.level, r.param, repr(r.max_rel_err), r.passed] for r in rows]
        _emit(rows_to_csv(table, ["method", "placement", "level", "param", "max_rel_err", "passed"]), out)
        if not all(r.passed for r in rows):
            print("meo-error: bound: gradient check failed", file=sys.stderr)
            return EXIT_VIOLATION
        return EXIT_OK
    result = run_train_toy(cfg)
    table = [[r.epoch, r.method, repr(r.loss), repr(r.accuracy)] for r in result.rows]
    _emit(rows_to_csv(table, ["epoch", "method", "loss", "accuracy"]), out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = parse_config(args.config, args.mode)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", f"must be >= 0, got {args.seed}")
            cfg = replace(cfg, seed=args.seed)
        if args.out:
            cfg = replace(cfg, output_path=args.out)
        return run(cfg)
    except ConfigError as exc:
        print(f"meo-error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"meo-error: diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"meo-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
