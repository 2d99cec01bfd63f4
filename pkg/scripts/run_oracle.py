#!/usr/bin/env python3
"""Enumerate every pit strategy of the desk race and solve its NLP (10 to 18 minutes on one core).

Extra arguments are passed to the CLI, e.g. ``--jobs 4``.
"""
import sys
from pathlib import Path

from hybridmpc import cli

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(cli.main(["run-oracle", "--config", str(ROOT / "configs" / "desk.json"),
                       "--out", str(ROOT / "runs" / "oracle"), *sys.argv[1:]]))
