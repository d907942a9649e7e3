#!/usr/bin/env python3
"""PDE-free deflation demo on the 1D Rastrigin function."""

import sys

from deflated_topopt import cli

if __name__ == "__main__":
    sys.exit(cli.main(["--preset", "rastrigin-demo",
                       "--out", "out/rastrigin_demo"] + sys.argv[1:]))
