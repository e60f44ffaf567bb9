"""Command-line entry point: ``fedalt <command> --config cfg.json ...``.

Commands: ``generate`` (persist an instance and its data), ``run`` (train
one algorithm), ``sweep`` (phase transition or scaling), ``diagnose``
(convergence bounds) and ``stability``.  Exit status is 0 on success, 2 on a
configuration or input error and 3 on an infeasible instance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import warnings
from dataclasses import asdict, replace
from pathlib import Path

from ..exceptions import ConfigError, InfeasibleInstanceError, InputError
from ..serialize import dumps_models, load_instance, save_instance
from .config import load_config
from .experiments import (DIAGNOSTIC_COLUMNS, STABILITY_COLUMNS, make_instance, run_algorithm,
                          run_convergence_diagnostics, run_phase_transition_sweep, run_scaling_experiment,
                          run_stability_experiment, _row)
from .results import emit_results

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedalt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("generate", "persist an instance and its dataset"),
                        ("run", "train one algorithm on one instance"),
                        ("sweep", "phase-transition or scaling sweep"),
                        ("diagnose", "convergence diagnostics against closed-form oracles"),
                        ("stability", "empirical federated stability over client sizes")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="generate/run: the seed to use; other commands: offset added to every seed")
        p.add_argument("--out", default=None, help="output path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--no-timing", action="store_true", help="leave wall_ms empty for byte-stable output")
        p.add_argument("--strict-rounds", action="store_true",
                       help="warn when SoftFedAvg round counts are below the required ones")
        if name == "run":
            p.add_argument("--instance", default=None, help="instance file from `generate` to train on")
            p.add_argument("--models", default=None, help="also write the trained models to this path")
            p.add_argument("--algorithm", default=None, help="label of the algorithm to run (default: first)")
    return parser


def _u64(seed):
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    return seed


def _shift(config, seed):
    if seed is None:
        return config
    return replace(config, seeds=[(s + seed) % 2 ** 64 for s in config.seeds])


def _write_text(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _write_table(records, columns, out, fmt):
    if not records:
        raise InputError("refusing to write an empty table")
    if fmt == "json":
        _write_text(json.dumps({"columns": list(columns), "rows": records}, indent=1) + "\n", out)
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
    _write_text(buf.getvalue(), out)


def _emit(rows, args):
    if args.out is None:
        from .results import to_csv, to_json
        sys.stdout.write(to_csv(rows) if args.format == "csv" else to_json(rows))
    else:
        emit_results(rows, args.out, args.format)


def cmd_generate(config, args):
    seed = config.seeds[0] if args.seed is None else args.seed
    R2 = config.instance.R2_values()[0]
    inst, data = make_instance(config.instance, R2, seed)
    if args.out is None:
        from ..serialize import dumps_instance
        sys.stdout.write(dumps_instance(inst, data))
    else:
        save_instance(args.out, inst, data)


def cmd_run(config, args):
    seed = config.seeds[0] if args.seed is None else args.seed
    specs = config.algorithms
    if args.algorithm is not None:
        specs = [a for a in specs if a.label == args.algorithm]
        if not specs:
            raise ConfigError(f"no algorithm labelled {args.algorithm!r}")
    spec = specs[0]
    R2 = config.instance.R2_values()[0]
    if args.instance:
        inst, data = load_instance(args.instance)
        if data is None:
            raise InputError("instance file holds no dataset")
        R2 = inst.R2(config.instance.mode)
    else:
        inst, data = make_instance(config.instance, R2, seed)
    tic = time.perf_counter()
    out, lam, T, K_T = run_algorithm(spec, inst, data, R2, seed, args.strict_rounds, config.instance.mode)
    wall = None if args.no_timing else 1e3 * (time.perf_counter() - tic)
    _emit([_row(config, seed, inst, data, R2, spec, out, lam, T, K_T, wall)], args)
    if args.models:
        Path(args.models).write_text(dumps_models(out.local_models, out.global_model), encoding="utf-8",
                                     newline="\n")


def cmd_sweep(config, args):
    kw = dict(threads=args.threads, timing=not args.no_timing, strict_rounds=args.strict_rounds)
    if config.kind == "phase_transition":
        res = run_phase_transition_sweep(config, **kw)
        c = res.crossover
        if c is not None:
            print(f"crossover R2={c.R2_cross} bracket={c.bracket} ratio_to_m_over_N={c.ratio}", file=sys.stderr)
    elif config.kind == "scaling":
        res = run_scaling_experiment(config, **kw)
        for f in res.extra["fits"]:
            print(f"{f.algorithm}: slope={f.slope:.4f} stderr={f.stderr:.4f}", file=sys.stderr)
    else:
        raise ConfigError("sweep needs a phase_transition or scaling config")
    _emit(res.rows, args)


def cmd_diagnose(config, args):
    rows = run_convergence_diagnostics(config, threads=args.threads)
    recs = [{**{k: v for k, v in asdict(r).items() if k != "lam"}, "lambda": r.lam,
             "bound_satisfied": r.bound_satisfied} for r in rows]
    _write_table(recs, DIAGNOSTIC_COLUMNS, args.out, args.format)


def cmd_stability(config, args):
    rows, slope, se = run_stability_experiment(config, threads=args.threads)
    print(f"slope={slope:.4f} stderr={se:.4f}", file=sys.stderr)
    _write_table([asdict(r) for r in rows], STABILITY_COLUMNS, args.out, args.format)


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "diagnose": cmd_diagnose,
            "stability": cmd_stability}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _u64(args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        config = load_config(args.config)
        if args.command not in ("generate", "run"):
            config = _shift(config, args.seed)
        if args.strict_rounds:
            warnings.simplefilter("always")
        COMMANDS[args.command](config, args)
    except InfeasibleInstanceError as exc:
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, InputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
