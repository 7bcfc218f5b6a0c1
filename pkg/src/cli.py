# src/cli.py
"""
Command-line front-end.

    run <config>             Stage 1 once, Stage 2 per (variant, seed), then the report
    gradcheck [--scope S]    finite-difference gradient suites
    equiv                    cross-variant algebraic identities
    report <dir>             report tables of a finished run
    export-embeddings <dir>  encoder-output vectors and separation statistic
"""
import argparse
import logging
import sys
from typing import List, Optional

from app_components.report_render import failed_checks, render_check_table, render_report_summary, render_separation
from src.checks import SCOPES, run_equiv, run_gradcheck
from src.config import default_log_level, load_config
from src.errors import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_INCOMPLETE_RUN,
    EXIT_INVARIANT,
    EXIT_OK,
    ArtifactError,
    ConfigError,
    InvariantError,
    StructureError,
    ZipperError,
)
from src.reports import export_embeddings, validate_outputs, write_report
from src.runner import ExperimentRunner

logger = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single seed (replaces the config's seed list)")
    common.add_argument("--reference-hparams", dest="reference_hparams", action="store_true", help="r=32, alpha=64, top-k=8, lr=2e-5")
    common.add_argument("--hard-polarity", choices=["spec_on_one", "shared_on_one"], default=None)
    common.add_argument("--chunked", dest="chunked", action="store_true", default=None)
    common.add_argument("--no-chunked", dest="chunked", action="store_false")
    common.add_argument("--out", default=None, help="output directory (overrides output_dir and $ZIPPER_RUNS_DIR)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for Stage-2 cells")
    common.add_argument("--log-level", default=default_log_level(), help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="zipper", description="Language-routed LoRA adapters on a synthetic speech-LLM analogue.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="train and report one configuration")
    run.add_argument("config")

    grad = sub.add_parser("gradcheck", parents=[common], help="gradient suites against central finite differences")
    grad.add_argument("--scope", choices=list(SCOPES) + ["all"], default="all")
    grad.add_argument("--corrupt-op", default=None, help=argparse.SUPPRESS)

    equiv = sub.add_parser("equiv", parents=[common], help="cross-variant identities")
    equiv.add_argument("--n-seeds", type=int, default=50)

    report = sub.add_parser("report", parents=[common], help="report tables of a finished run")
    report.add_argument("run_dir")

    emb = sub.add_parser("export-embeddings", parents=[common], help="per-utterance encoder outputs")
    emb.add_argument("run_dir")
    return parser


# ---------------- Commands ----------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config).with_overrides(
        seed=args.seed, reference_hparams=args.reference_hparams, hard_polarity=args.hard_polarity,
        chunked=args.chunked,
    )
    out_dir = cfg.resolve_output_dir(args.out)
    logger.info("run %s -> %s", cfg.name, out_dir)
    ExperimentRunner(cfg, out_dir).run(workers=args.workers)
    tables = write_report(out_dir)
    problems = validate_outputs(out_dir)
    if problems:
        raise InvariantError("emitted tables do not match their schema:\n" + "\n".join(f"  - {p}" for p in problems))
    print(render_report_summary(tables))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rows = run_gradcheck(args.scope, seed=args.seed or 0, corrupt_op=args.corrupt_op)
    print(render_check_table(f"gradcheck ({args.scope})", rows))
    return EXIT_CHECK_FAILED if failed_checks(rows) else EXIT_OK


def cmd_equiv(args: argparse.Namespace) -> int:
    rows = run_equiv(n_seeds=args.n_seeds, base_seed=args.seed or 0, polarity=args.hard_polarity)
    print(render_check_table("equiv", rows))
    return EXIT_CHECK_FAILED if failed_checks(rows) else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    tables = write_report(args.run_dir)
    print(render_report_summary(tables))
    return EXIT_OK


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    print(render_separation(export_embeddings(args.run_dir)))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "gradcheck": cmd_gradcheck,
    "equiv": cmd_equiv,
    "report": cmd_report,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s - %(levelname)s - %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StructureError) as exc:
        logger.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except ArtifactError as exc:
        logger.error("%s", exc)
        return EXIT_INCOMPLETE_RUN
    except ZipperError as exc:
        logger.error("runtime invariant failed: %s", exc)
        return EXIT_INVARIANT
    except Exception:
        logger.exception("%s failed with an unexpected error", args.command)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
