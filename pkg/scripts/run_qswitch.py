#!/usr/bin/env python3
"""
Run qswitch from a checkout without installing it

Usage:
    python scripts/run_qswitch.py reproduce-example
    python scripts/run_qswitch.py validate --config configs/iid_2x2.json

Examples:
    # Certificates for the i.i.d. 2x2 instance, as CSV
    python scripts/run_qswitch.py certify --config configs/iid_2x2.json --format csv

    # Markovian sampler, different master seed
    python scripts/run_qswitch.py validate --config configs/markov_2x2.json --seed 5
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.cli import main

if __name__ == '__main__':
    sys.exit(main())
