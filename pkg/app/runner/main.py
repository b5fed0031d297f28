"""
Command line entry for Leaklab.

Every subcommand loads the same config document and runs the same runner;
the task subcommands only narrow the task set and apply flag overrides.
Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from app.config import TASK_DEFAULTS, TASK_NAMES, load_config
from app.errors import ConfigError, LeaklabError
from app.runner.runner import run, validate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def setup_logging(level: str) -> None:
    level = os.environ.get("LEAKLAB_LOG_LEVEL", level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="Config file (YAML or JSON); default $LEAKLAB_CONFIG or config.yaml")
    p.add_argument("--seed", type=int, default=None, help="Override master seed")
    p.add_argument("--out", default=None, help="Output directory for reports")
    p.add_argument("--jobs", type=int, default=None, help="Worker threads")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leaklab", description="Source coding over wiretapped links: exact leakage lab")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in TASK_NAMES:
        p = sub.add_parser(name, help=f"Run the {name} task")
        _common(p)
        if name in ("cipher", "region"):
            p.add_argument("--case", type=int, action="append", choices=range(1, 6), help="Cipher case (repeatable)")
            p.add_argument("--target", default=None, help="Security target, e.g. h=0.5 or h_x=0.3,h_y=0.2")
        if name == "leakage":
            p.add_argument("--layout", action="append", default=None,
                           help="Sweep this layout K:m_vx,m_cx,m_cy,m_vy instead of ks x alphas (repeatable)")
        if name == "cipher":
            p.add_argument("--layout", default=None, help="Row override K:m_vx,m_cx,m_cy,m_vy")
            p.add_argument("--variant", choices=("long", "composite"), default=None)
            p.add_argument("--independent-keys", action="store_true", help="Fresh full-width key per component")
        if name == "netsim":
            p.add_argument("--network", default=None, help="Network document (YAML or JSON)")
            p.add_argument("--combination", action="store_true", help="Mask with two common words")
    p = sub.add_parser("validate", help="Check the config and print diagnostics")
    _common(p)
    p = sub.add_parser("run", help="Run every task in the config")
    _common(p)
    return ap


def _apply_overrides(cfg: Dict[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.jobs is not None:
        cfg["jobs"] = max(1, int(args.jobs))
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.command in TASK_NAMES:
        block = copy.deepcopy(cfg["tasks"].get(args.command) or TASK_DEFAULTS[args.command])
        if getattr(args, "case", None):
            block["cases"] = list(args.case)
        if getattr(args, "target", None):
            block["target"] = args.target
        if getattr(args, "layout", None):
            if args.command == "leakage":
                block["layouts"] = list(args.layout)
            else:
                block["layout"] = args.layout
        if getattr(args, "variant", None):
            block["variant"] = args.variant
        if getattr(args, "independent_keys", False):
            block["independent_keys"] = True
        if getattr(args, "network", None):
            block["network"] = args.network
        if getattr(args, "combination", False):
            block["combination"] = True
        cfg["tasks"] = {args.command: block}
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        setup_logging("INFO")
        logger.error("Invalid config: %s", e)
        return EXIT_VALIDATION
    cfg = _apply_overrides(cfg, args)
    setup_logging(cfg["log_level"])

    diagnostics = validate(cfg)
    for d in diagnostics:
        print(f"[DIAG] {d}")
    if args.command == "validate":
        if not diagnostics:
            print("[OK] config is valid")
        return EXIT_VALIDATION if diagnostics else EXIT_OK
    if diagnostics:
        return EXIT_VALIDATION

    try:
        manifest = run(cfg)
    except OSError as e:
        logger.error("Cannot write reports: %s", e)
        return EXIT_RUNTIME
    except LeaklabError as e:
        logger.error("Run failed: %s", e)
        return EXIT_RUNTIME
    for t in manifest.tasks:
        print(f"[{t.status.upper()}] {t.name}: {len(t.rows)} rows" + (f" ({t.error})" if t.error else ""))
    print(f"[OUT] {manifest.out_dir}")
    return EXIT_OK if manifest.ok else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
