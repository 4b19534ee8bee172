import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

import config
from app.channel import dump_channels, generate_channels
from app.errors import InputError, MfrisError
from app.harness import SweepSpec, SweepVariable, emit_csv, parse_values, run_sweep, run_trial
from app.scenario import (
    DespreadMode, Scheme, SystemConfig, UpdateRule, default_config, load_config, parse_enum, parse_flag, validate,
)
from app.training import optimize_amplification
from app.validation import run_validation

# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfris-est", description="MF-RIS channel estimation toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (KEY=VALUE)")
    common.add_argument("--out", help="output CSV path")
    common.add_argument("--seed", type=int, help="64-bit RNG seed")
    common.add_argument("--scheme", help="comma separated scheme tags")
    common.add_argument("--mode", help="despreading mode: ideal or full")
    common.add_argument("--fair-comparison", dest="fair_comparison", help="on or off")
    common.add_argument("--update", help="AO coordinate update: oracle or closed-form")
    common.add_argument("--independent-noise", dest="independent_noise", help="on or off")
    common.add_argument("--workers", type=int, default=config.WORKERS)

    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("optimize", parents=[common], help="print the amplification solution")
    sweep = verbs.add_parser("sweep", parents=[common], help="run a Monte Carlo sweep and write a CSV")
    sweep.add_argument("--var", required=True, choices=[v.value for v in SweepVariable])
    sweep.add_argument("--values", required=True, help="start:stop:step or a comma separated list")
    sweep.add_argument("--trials", type=int, default=config.DEFAULT_TRIALS)
    validate_verb = verbs.add_parser("validate", parents=[common], help="run the property suite")
    validate_verb.add_argument("--trials", type=int, default=config.DEFAULT_TRIALS)
    validate_verb.add_argument("--configs", type=int, default=100, help="random configurations per check")
    trial = verbs.add_parser("trial", parents=[common], help="run one block and dump the report")
    trial.add_argument("--dump-channels", dest="dump_channels", help="write the channel realization here")
    return parser


def parse_schemes(text: Optional[str]) -> Tuple[Scheme, ...]:
    if not text:
        return tuple(Scheme)
    return tuple(parse_enum(Scheme, part) for part in text.split(",") if part.strip())


def resolve_config(args: argparse.Namespace) -> SystemConfig:
    """Scenario file (or defaults) with command-line overrides applied."""
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode:
        overrides["despread_mode"] = parse_enum(DespreadMode, args.mode)
    if args.fair_comparison:
        overrides["fair_comparison"] = parse_flag(args.fair_comparison)
    if args.update:
        overrides["update_rule"] = parse_enum(UpdateRule, args.update)
    if args.independent_noise:
        overrides["independent_surface_noise"] = parse_flag(args.independent_noise)
    if args.scheme:
        overrides["scheme"] = parse_schemes(args.scheme)[0]
    return validate(replace(cfg, **overrides))


# --- Verb handlers ---

async def optimize_handler(args: argparse.Namespace) -> int:
    """Prints a_R, a_T, eps, iterations and the closed-form divergence as one CSV row."""
    cfg = resolve_config(args)
    solution = optimize_amplification(cfg)
    print(f"{solution.a_R!r},{solution.a_T!r},{solution.epsilon_value!r},"
          f"{solution.iterations},{solution.closed_form_divergence!r}")
    return 0


async def sweep_handler(args: argparse.Namespace) -> int:
    """Runs the sweep and writes the CSV plus its .meta companion."""
    cfg = resolve_config(args)
    variable = parse_enum(SweepVariable, args.var)
    spec = SweepSpec(
        variable=variable,
        values=parse_values(args.values),
        trials=args.trials,
        schemes=parse_schemes(args.scheme),
        base=cfg,
    )
    out = Path(args.out) if args.out else Path(config.OUTPUT_DIR) / f"sweep_{variable.value}.csv"
    logging.info(f"Starting {variable.value} sweep: {len(spec.values)} values, "
                 f"{len(spec.schemes)} schemes, {spec.trials} trials per point")
    result = await run_sweep(spec, workers=args.workers)
    emit_csv(result, out)
    print(str(out))
    return 0


async def validate_handler(args: argparse.Namespace) -> int:
    """Runs the property suite; exit status 1 when any property fails."""
    cfg = resolve_config(args)
    if args.trials < 2 or args.configs < 1:
        raise InputError("validate needs --trials >= 2 and --configs >= 1")
    results = await run_validation(cfg, args.trials, args.configs, args.workers)
    for result in results:
        print(result.as_line())
    return 0 if all(r.passed for r in results) else 1


async def trial_handler(args: argparse.Namespace) -> int:
    """One block per requested scheme, printed as key=value lines."""
    cfg = resolve_config(args)
    if args.dump_channels:
        dump_channels(generate_channels(cfg, np.random.default_rng(cfg.seed)), args.dump_channels)
    schemes = parse_schemes(args.scheme) if args.scheme else (cfg.scheme,)
    for scheme in schemes:
        report = run_trial(cfg, scheme, np.random.default_rng(cfg.seed))
        print(f"scheme={report.scheme.value}")
        print(f"a_R={report.a_R!r}")
        print(f"a_T={report.a_T!r}")
        print(f"eps_empirical={report.eps_empirical!r}")
        print(f"eps_empirical_normalized={report.eps_empirical_normalized!r}")
        print(f"eps_theory={report.eps_theory!r}")
        print(f"eps_trace={report.eps_trace!r}")
        print(f"eps_d={','.join(repr(x) for x in report.eps_d)}")
        print(f"eps_f={','.join(repr(x) for x in report.eps_f)}")
        print(f"unserved_cascade_mse={report.unserved_cascade_mse!r}")
        if report.degenerate is not None:
            print(f"degenerate={report.degenerate.active_side.value},eps_d={report.degenerate.eps_d!r},"
                  f"eps_f={report.degenerate.eps_f.value}")
    return 0


HANDLERS = {
    "optimize": optimize_handler,
    "sweep": sweep_handler,
    "validate": validate_handler,
    "trial": trial_handler,
}


async def dispatch(argv: List[str]) -> int:
    """Parses argv, runs the verb and converts failures to a one-line error record."""
    args = build_parser().parse_args(argv)
    try:
        return await HANDLERS[args.verb](args)
    except (MfrisError, OSError) as e:
        logging.error(f"{args.verb} failed: {e}")
        print(f"error,{type(e).__name__},{e}", file=sys.stderr)
        return 1
