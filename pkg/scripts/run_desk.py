#!/usr/bin/env python3
"""Run the full desk-scale pipeline (gen -> split -> verify -> train ->
correct -> report) with the bundled config.

Usage: python3 scripts/run_desk.py [path/to/config.cfg]
"""

import sys
from pathlib import Path

from proofloop.cli import main

if __name__ == "__main__":
    cfg = sys.argv[1] if len(sys.argv) > 1 else str(
        Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"
    )
    sys.exit(main(["bench", "-c", cfg]))
