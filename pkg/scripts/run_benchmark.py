#!/usr/bin/env python3
"""Oracle vs RL vs hybrid controller at N = 5, 10 and the full race, then the traffic and critic studies.

Reuses runs/oracle/oracle.json when present (see run_oracle.py).
"""
import sys
from pathlib import Path

from hybridmpc import cli

ROOT = Path(__file__).resolve().parents[1]
CONFIG = str(ROOT / "configs" / "desk.json")
OUT = ROOT / "runs"


def main(extra):
    summary = OUT / "oracle" / "oracle.json"
    bench = ["benchmark", "--config", CONFIG, "--out", str(OUT / "benchmark"), *extra]
    if summary.is_file():
        bench += ["--oracle-summary", str(summary)]
    codes = [cli.main(bench),
             cli.main(["traffic-compare", "--config", CONFIG, "--out", str(OUT / "traffic"), *extra]),
             cli.main(["critic-trace", "--config", CONFIG, "--out", str(OUT / "critic"), *extra])]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
