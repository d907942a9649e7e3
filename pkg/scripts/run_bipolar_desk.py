#!/usr/bin/env python3
"""Desk-scale bipolar-plate deflation run; writes artifacts to out/bipolar_desk."""

import sys

from deflated_topopt import cli

if __name__ == "__main__":
    sys.exit(cli.main(["--preset", "bipolar-desk",
                       "--out", "out/bipolar_desk"] + sys.argv[1:]))
