#!/usr/bin/env python3
"""
qswitch command line

Usage:
    python -m src.cli reproduce-example
    python -m src.cli generate-mdp --n-states 2 --n-actions 2 --gamma 0.9 --seed 7 --out mdp.json
    python -m src.cli certify --config configs/iid_2x2.json
    python -m src.cli validate --config configs/iid_2x2.json --format csv

Exit codes: 0 ok, 1 bound or invariant violation, 2 config / model error, 3 budget error,
4 any other library error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv

from src.mdp.model import save_mdp
from src.pipeline.config import GeneratorSpec, load_experiment_config
from src.pipeline.controller import ExperimentController
from src.utils.errors import (
    BudgetExceededError,
    ConfigError,
    EnumerationCapError,
    InvariantViolationError,
    MdpValidationError,
    QSwitchError,
)
from src.utils.io import save_csv_safe, save_json_safe, to_json

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_ERROR = 4

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    """Root logging: stderr plus a file in the log directory"""
    level = logging.DEBUG if verbose else logging.INFO
    log_dir = Path(os.getenv("QSWITCH_LOG_DIR", "logs"))
    log_dir.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stderr),
            logging.FileHandler(log_dir / 'qswitch_cli.log', encoding='utf-8')
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='qswitch',
        description='Direct switching-system analysis of constant-step Q-learning',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug-level logging')
    parser.add_argument('--defaults', type=str, default=None, help='Library defaults (config.yaml)')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Override the master seed')
    common.add_argument('--out', type=str, default=None, help='Output directory (file for generate-mdp)')
    common.add_argument('--format', choices=['csv', 'json'], default=None,
                        help='Output format (default json; validate writes both)')

    with_config = argparse.ArgumentParser(add_help=False, parents=[common])
    with_config.add_argument('--config', type=str, required=True, help='Experiment config (JSON)')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('reproduce-example', parents=[common], help='Two-state example where rho(M) < rho_row')

    gen = sub.add_parser('generate-mdp', parents=[common], help='Seeded random MDP as JSON')
    gen.add_argument('--n-states', type=int, required=True)
    gen.add_argument('--n-actions', type=int, required=True)
    gen.add_argument('--gamma', type=float, required=True)
    gen.add_argument('--reward-scale', type=float, default=1.0)

    sub.add_parser('certify', parents=[with_config], help='JSR bracket and Lyapunov certificates')
    sub.add_parser('simulate', parents=[with_config], help='Monte-Carlo error curves')
    sub.add_parser('bound', parents=[with_config], help='Closed-form bound curves')
    sub.add_parser('validate', parents=[with_config], help='Identity gates and empirical-vs-bound check')
    return parser


def _write(df: pd.DataFrame, blob, out_dir: Path, stem: str, fmt: Optional[str]) -> Path:
    if fmt == 'csv':
        return save_csv_safe(df, out_dir / f"{stem}.csv")
    return save_json_safe(blob, out_dir / f"{stem}.json")


def _load(args):
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={'master_seed': args.seed})
    out_dir = Path(args.out) if args.out else Path(config.outputs.dir)
    return config, Path(args.config).parent, out_dir


def run_command(args, controller: ExperimentController) -> int:
    if args.command == 'reproduce-example':
        result = controller.reproduce_example()
        M = result['M']
        print(f"M = [[{M[0][0]:.4f}, {M[0][1]:.4f}], [{M[1][0]:.4f}, {M[1][1]:.4f}]]")
        print(f"rho(M)  = {result['rho_M']:.4f}")
        print(f"rho_row = {result['rho_row']:.4f}")
        print("PASS" if result['passed'] else "FAIL")
        if args.out:
            table = pd.DataFrame(
                [(k, v) for k, v in result.items() if isinstance(v, float)], columns=['quantity', 'value']
            )
            _write(table, result, Path(args.out), 'example', args.format)
        return EXIT_OK

    if args.command == 'generate-mdp':
        seed = 0 if args.seed is None else args.seed
        spec = GeneratorSpec(n_states=args.n_states, n_actions=args.n_actions, gamma=args.gamma,
                             reward_scale=args.reward_scale, seed=seed)
        mdp = controller.generate_mdp(spec)
        if args.out is None:
            sys.stdout.write(to_json(mdp.to_dict()))
        elif args.format == 'csv':
            rows = [
                (s, a, s_next, mdp.P[s, a, s_next], mdp.r[s, a, s_next])
                for s in range(mdp.n_states) for a in range(mdp.n_actions) for s_next in range(mdp.n_states)
            ]
            save_csv_safe(pd.DataFrame(rows, columns=['s', 'a', 's_next', 'P', 'r']), args.out)
        else:
            save_mdp(mdp, args.out)
        return EXIT_OK

    config, base_dir, out_dir = _load(args)
    prefix = config.outputs.prefix
    model = controller.build_model(config, base_dir)

    if args.command == 'certify':
        result = controller.certify(config, model)
        table = result.comparison_table()
        print(table.to_string(index=False))
        _write(table, result.to_dict(), out_dir, f"{prefix}_certificates", args.format)
        result.family.to_csv(out_dir / f"{prefix}_modes")
        return EXIT_OK

    if args.command == 'simulate':
        metrics = controller.simulate(config, model)
        df = metrics.to_dataframe()
        _write(df, {'rows': df.to_dict(orient='records')}, out_dir, f"{prefix}_simulation", args.format)
        return EXIT_OK

    if args.command == 'bound':
        certification = controller.certify(config, model)
        curves = controller.bound(config, model, certification)
        frames = [curve.to_dataframe().assign(kind=kind) for kind, curve in curves.items()]
        df = pd.concat(frames, ignore_index=True)[['kind', 'k', 'value']] if frames else \
            pd.DataFrame(columns=['kind', 'k', 'value'])
        blob = {kind: {**curve.to_dict(), 'values': curve.values.tolist()} for kind, curve in curves.items()}
        _write(df, blob, out_dir, f"{prefix}_bounds", args.format)
        return EXIT_OK

    if args.command == 'validate':
        report = controller.validate(config, model)
        if args.format in (None, 'csv'):
            save_csv_safe(report.table, out_dir / f"{prefix}_validation.csv")
        if args.format in (None, 'json'):
            save_json_safe(report.to_dict(), out_dir / f"{prefix}_validation.json")
        status = "VIOLATION" if report.violation else "OK"
        print(f"{status}: {len(report.table)} rows, se_slack={report.se_slack}")
        return EXIT_VIOLATION if report.violation else EXIT_OK

    raise ValueError(f"Unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        controller = ExperimentController(args.defaults, log_level='DEBUG' if args.verbose else None)
        return run_command(args, controller)
    except (ConfigError, MdpValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (BudgetExceededError, EnumerationCapError) as e:
        logger.error(f"Budget exceeded: {e}")
        return EXIT_BUDGET
    except InvariantViolationError as e:
        logger.error(f"Invariant violated: {e}")
        return EXIT_VIOLATION
    except QSwitchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
