#!/usr/bin/env python3
"""Launcher for the figure renderer: report.py --spec figures.toml"""

import sys

from heatlab_report.cli import main

if __name__ == "__main__":
    sys.exit(main())
