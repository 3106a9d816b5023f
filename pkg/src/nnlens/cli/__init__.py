"""Command-line driver: ``nnlens <subcommand> --config path [key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError, NnlensError
from .config import Config, load_config
from .pipeline import ORDER, STAGES, Workspace, run

SUBCOMMANDS = (*ORDER, "all")


def demo_config_path() -> Path:
    return Path(str(resources.files("nnlens") / "configs" / "demo.json"))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnlens", description="Extraction, probing, syntax evaluation and attribution.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides, e.g. attribute.method=cd")
    p.add_argument("--config", help="JSON config file ('demo' selects the shipped demo config)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--show-provenance", action="store_true", help="with --print-config, list where each value came from")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = demo_config_path() if args.config == "demo" else args.config
    try:
        cfg = load_config(path, args.overrides)
        if args.print_config:
            sys.stdout.write(cfg.to_json())
            if args.show_provenance:
                for key, source in sorted(cfg.provenance.items()):
                    sys.stdout.write(f"# {key}: {source}\n")
            return 0
        written = run(args.subcommand, cfg)
    except ConfigError as exc:
        print(f"nnlens: config error: {exc}", file=sys.stderr)
        return 2
    except NnlensError as exc:
        print(f"nnlens: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        logging.getLogger(__name__).info("wrote %s", path)
    return 0


__all__ = ["Config", "load_config", "main", "run", "Workspace", "STAGES", "SUBCOMMANDS", "demo_config_path"]
