#!/usr/bin/env python3
"""
Compliant insertion simulator
Run this script to use the command line interface, e.g.

    python run.py run configs/baseline.yaml --format markdown
"""

import sys

from insertion.main import main

if __name__ == "__main__":
    sys.exit(main())
