#!/usr/bin/env python3
"""Desk-scale double-pipe deflation run; writes artifacts to out/double_pipe_desk."""

import sys

from deflated_topopt import cli

if __name__ == "__main__":
    sys.exit(cli.main(["--preset", "double-pipe-desk",
                       "--out", "out/double_pipe_desk"] + sys.argv[1:]))
